"""1D encoder-decoder CNN with skip connections, plus the derivative products the solvers need.

Gradients and vector-Jacobian products come from torch autograd; the test
suite checks both against finite differences and dense-matrix oracles.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container

WEIGHTS_KIND = b"WGHT"
WEIGHTS_VERSION = 1


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor.

    ``kind`` is ``"unet"`` for the encoder-decoder, ``"conv"`` for a single
    1-channel convolution and ``"dense"`` for an explicit d x d matrix (the last
    two exist for oracle tests and convex solver checks).
    """

    input_length: int = 601
    depth: int = 2
    base_channels: int = 16
    kernel_size: int = 5
    activation: str = "elu"
    dropout_rate: float = 0.1
    residual_output: bool = True
    kind: str = "unet"

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.kind not in ("unet", "conv", "dense"):
            raise ValueError(f"unknown kind {self.kind!r}")

    def channels(self, stage: int) -> int:
        return self.base_channels * 2**stage

    @property
    def padded_length(self) -> int:
        if self.kind != "unet":
            return self.input_length
        m = 2**self.depth
        return -(-self.input_length // m) * m


def _act(name: str) -> nn.Module:
    if name == "elu":
        return nn.ELU(alpha=1.0)
    if name == "identity":
        return nn.Identity()
    raise ValueError(f"unknown activation {name!r}")


def _conv(cin, cout, k, stride=1):
    return nn.Conv1d(cin, cout, k, stride=stride, padding=k // 2, padding_mode="reflect")


class _Block(nn.Sequential):
    def __init__(self, cin, cout, arch: ArchSpec):
        super().__init__(
            _conv(cin, cout, arch.kernel_size), _act(arch.activation),
            _conv(cout, cout, arch.kernel_size), _act(arch.activation),
            nn.Dropout(arch.dropout_rate),
        )


class UNet1d(nn.Module):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        k = arch.kernel_size
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        cin = 1
        for s in range(arch.depth):
            c = arch.channels(s)
            self.enc.append(_Block(cin, c, arch))
            self.down.append(nn.Sequential(_conv(c, c, k, stride=2), _act(arch.activation)))
            cin = c
        self.bottleneck = _Block(cin, arch.channels(arch.depth), arch)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for s in reversed(range(arch.depth)):
            c = arch.channels(s)
            self.up.append(nn.ConvTranspose1d(arch.channels(s + 1), c, 2, stride=2))
            self.dec.append(_Block(2 * c, c, arch))
        self.head = nn.Conv1d(arch.channels(0), 1, 1)

    def forward(self, x):
        n = x.shape[-1]
        pad = self.arch.padded_length - n
        h = x[:, None, :]
        if pad:
            h = nn.functional.pad(h, (0, pad), mode="reflect")
        skips = []
        for enc, down in zip(self.enc, self.down):
            h = enc(h)
            skips.append(h)
            h = down(h)
        h = self.bottleneck(h)
        for up, dec in zip(self.up, self.dec):
            h = dec(torch.cat([up(h), skips.pop()], dim=1))
        out = self.head(h)[:, 0, :n]
        return out + x if self.arch.residual_output else out


class SingleConv(nn.Module):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        self.conv = _conv(1, 1, arch.kernel_size)
        self.act = _act(arch.activation)

    def forward(self, x):
        out = self.act(self.conv(x[:, None, :]))[:, 0]
        return out + x if self.arch.residual_output else out


class DenseMap(nn.Module):
    """``x -> act(M x + b)``; with identity activation an explicit linear network."""

    def __init__(self, arch: ArchSpec):
        super().__init__()
        self.arch = arch
        n = arch.input_length
        self.weight = nn.Parameter(torch.zeros(n, n, dtype=torch.float64))
        self.bias = nn.Parameter(torch.zeros(n, dtype=torch.float64))
        self.act = _act(arch.activation)

    def forward(self, x):
        out = self.act(x @ self.weight.T + self.bias)
        return out + x if self.arch.residual_output else out


_BUILDERS = {"unet": UNet1d, "conv": SingleConv, "dense": DenseMap}


@dataclass
class NetworkParams:
    arch: ArchSpec
    module: nn.Module
    trained_noise_level: float | None = None

    @property
    def dtype(self) -> torch.dtype:
        return next(self.module.parameters()).dtype

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Parameters in layer order as float64 arrays."""
        return {k: v.detach().cpu().numpy().astype(np.float64) for k, v in self.module.state_dict().items()}

    def to(self, dtype: torch.dtype) -> "NetworkParams":
        mod = _BUILDERS[self.arch.kind](self.arch).to(dtype)
        mod.load_state_dict({k: v.to(dtype) for k, v in self.module.state_dict().items()})
        mod.eval()
        return NetworkParams(self.arch, mod, self.trained_noise_level)

    def copy(self) -> "NetworkParams":
        return self.to(self.dtype)

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.named_arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def init_params(arch: ArchSpec, seed: int = 0, dtype: torch.dtype = torch.float64) -> NetworkParams:
    """Fan-in scaled uniform init; the output layer starts at zero for residual nets."""
    gen = torch.Generator().manual_seed(int(seed))
    mod = _BUILDERS[arch.kind](arch).to(dtype)
    with torch.no_grad():
        for m in mod.modules():
            if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
                fan_in = m.weight.shape[1] * m.weight.shape[2]
                if isinstance(m, nn.ConvTranspose1d):
                    fan_in = m.weight.shape[0] * m.weight.shape[2] // 2
                bound = 1.0 / math.sqrt(fan_in)
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.uniform_(-bound, bound, generator=gen)
        if arch.residual_output:
            last = mod.head if arch.kind == "unet" else (mod.conv if arch.kind == "conv" else mod)
            last.weight.zero_()
            last.bias.zero_()
    mod.eval()
    return NetworkParams(arch, mod)


def dense_linear_params(M, residual_output: bool = False) -> NetworkParams:
    """Linear network ``x -> M x`` (plus ``x`` if residual)."""
    M = np.asarray(M, dtype=np.float64)
    arch = ArchSpec(input_length=M.shape[0], kind="dense", activation="identity", dropout_rate=0.0,
                    residual_output=residual_output)
    p = init_params(arch)
    with torch.no_grad():
        p.module.weight.copy_(torch.from_numpy(M))
    return p


def _as_batch(params: NetworkParams, x) -> tuple[torch.Tensor, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != params.arch.input_length:
        raise ShapeError(f"input length {arr.shape[-1]} != network input_length {params.arch.input_length}")
    return torch.as_tensor(arr, dtype=params.dtype), single


def _check_finite(params: NetworkParams, t: torch.Tensor, where: str, xb: torch.Tensor | None = None):
    if not torch.all(torch.isfinite(t)):
        layer = _locate_nonfinite(params, xb) if xb is not None else None
        raise NumericError(f"non-finite values in {where} (first at layer {layer})")


def _locate_nonfinite(params: NetworkParams, xb: torch.Tensor) -> int | None:
    """Index among the leaf layers (definition order) of the first non-finite output."""
    leaves = [m for m in params.module.modules() if not list(m.children())]
    bad = []

    def hook(idx):
        def fn(_m, _inp, out):
            if not bad and not torch.all(torch.isfinite(out)):
                bad.append(idx)
        return fn

    handles = [m.register_forward_hook(hook(i)) for i, m in enumerate(leaves)]
    try:
        with torch.no_grad():
            params.module(xb.detach())
    finally:
        for h in handles:
            h.remove()
    return bad[0] if bad else None


def _set_mode(params: NetworkParams, mode: str):
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    params.module.train(mode == "train")


def forward(params: NetworkParams, x, mode: str = "eval", dropout_seed: int | None = None) -> np.ndarray:
    """Network output; ``mode="train"`` enables dropout (masks drawn from ``dropout_seed`` if given)."""
    xb, single = _as_batch(params, x)
    _set_mode(params, mode)
    try:
        with torch.random.fork_rng(enabled=dropout_seed is not None), torch.no_grad():
            if dropout_seed is not None:
                torch.manual_seed(dropout_seed)
            out = params.module(xb)
    finally:
        params.module.eval()
    _check_finite(params, out, "forward", xb)
    out = out.double().numpy()
    return out[0] if single else out


def grad_params(params: NetworkParams, x, target, mode: str = "eval",
                dropout_seed: int | None = None) -> dict[str, np.ndarray]:
    """Gradient of ``sum ||Phi(x) - target||^2`` over the batch, per parameter.

    In train mode pass ``dropout_seed`` so the dropout mask is reproducible.
    """
    xb, _ = _as_batch(params, x)
    tb, _ = _as_batch(params, target)
    _set_mode(params, mode)
    params.module.zero_grad(set_to_none=True)
    try:
        with torch.random.fork_rng(enabled=dropout_seed is not None):
            if dropout_seed is not None:
                torch.manual_seed(dropout_seed)
            loss = ((params.module(xb) - tb) ** 2).sum()
        _check_finite(params, loss, "loss", xb)
        loss.backward()
    finally:
        params.module.eval()
    grads = {}
    for name, p in params.module.named_parameters():
        g = p.grad
        grads[name] = np.zeros(p.shape) if g is None else g.detach().double().numpy().copy()
    params.module.zero_grad(set_to_none=True)
    return grads


def output_and_vjp(params: NetworkParams, x, cotangent_fn):
    """Evaluate ``Phi(x)`` and ``DPhi(x)^T c`` where ``c = cotangent_fn(Phi(x))``.

    One forward and one backward pass; returns numpy arrays ``(Phi(x), vjp)``.
    """
    xb, single = _as_batch(params, x)
    xb.requires_grad_(True)
    params.module.eval()
    with torch.enable_grad():
        out = params.module(xb)
        _check_finite(params, out, "forward", xb)
        out_np = out.detach().double().numpy()
        cot = np.atleast_2d(cotangent_fn(out_np[0] if single else out_np))
        (g,) = torch.autograd.grad(out, xb, torch.as_tensor(cot, dtype=out.dtype))
    _check_finite(params, g, "vjp", xb)
    g = g.double().numpy()
    return (out_np[0], g[0]) if single else (out_np, g)


def vjp_input(params: NetworkParams, x, cotangent) -> np.ndarray:
    """``(DPhi(x))^T cotangent`` with dropout disabled."""
    cot = np.asarray(cotangent, dtype=np.float64)
    return output_and_vjp(params, x, lambda _: cot)[1]


def save_params(path, params: NetworkParams) -> Path:
    header = {"weights_version": WEIGHTS_VERSION, "arch": asdict(params.arch),
              "trained_noise_level": params.trained_noise_level, "layer_order": list(params.named_arrays())}
    write_container(path, WEIGHTS_KIND, header, params.named_arrays())
    return Path(path)


def load_params(path, expect_length: int | None = None, dtype: torch.dtype = torch.float64) -> NetworkParams:
    header, arrays = read_container(path, WEIGHTS_KIND)
    if header.get("weights_version") != WEIGHTS_VERSION:
        raise ValueError(f"{path}: weights version {header.get('weights_version')} unsupported")
    arch = ArchSpec(**header["arch"])
    if expect_length is not None and arch.input_length != expect_length:
        raise ShapeError(f"{path}: network expects d={arch.input_length}, caller needs d={expect_length}")
    mod = _BUILDERS[arch.kind](arch).to(dtype)
    expected = {k: tuple(v.shape) for k, v in mod.state_dict().items()}
    got = {k: tuple(v.shape) for k, v in arrays.items()}
    if expected != got:
        raise ShapeError(f"{path}: tensor shapes do not match the stored architecture")
    mod.load_state_dict({k: torch.as_tensor(v, dtype=dtype) for k, v in arrays.items()})
    mod.eval()
    return NetworkParams(arch, mod, header.get("trained_noise_level"))


def with_arch(arch: ArchSpec, **changes) -> ArchSpec:
    return replace(arch, **changes)

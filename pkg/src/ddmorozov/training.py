"""Perturbation-augmented training data and empirical-risk minimization for the learned penalty.

For every clean signal ``x_i`` and truncation level ``alpha_j`` the input
``S_alpha_j(A x_i + z_i)`` is paired with the target ``x_i``; ``j = 0`` pairs
``x_i`` with itself. The network is fitted so that ``Phi(x) - x`` is small on
clean signals and large on the truncated-SVD reconstructions.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import neural
from .container import read_container, write_container
from .signals import PRNG_ID, STREAM_NOISE, derive_seed, draw_noise
from .spectral import truncated_svd_many

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(j / 10 for j in range(1, 9))
TRAINSET_KIND = b"TSET"


class TrainingDivergence(FloatingPointError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class TrainingSet:
    clean: np.ndarray  # (N, d)
    inputs: np.ndarray  # (N * (J + 1), d); record k has target clean[index_i[k]]
    index_i: np.ndarray
    index_j: np.ndarray
    alpha: np.ndarray  # nan for j = 0
    noise_seed: np.ndarray  # per record
    noise_level: float
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return self.clean[self.index_i]

    def subset(self, clean_ids) -> "TrainingSet":
        """Records belonging to the given clean indices (renumbered from 0)."""
        clean_ids = np.asarray(clean_ids, dtype=np.int64)
        remap = -np.ones(self.clean.shape[0], dtype=np.int64)
        remap[clean_ids] = np.arange(clean_ids.size)
        keep = np.isin(self.index_i, clean_ids)
        return TrainingSet(self.clean[clean_ids], self.inputs[keep], remap[self.index_i[keep]], self.index_j[keep],
                           self.alpha[keep], self.noise_seed[keep], self.noise_level, dict(self.provenance))


def _exact_data(A, x) -> np.ndarray:
    # one fixed matrix-vector kernel, so regeneration reproduces records bit for bit
    return A @ x


def build_perturbations(clean, operator, svd, sigma: float, alphas=DEFAULT_ALPHAS, seed: int = 0,
                        share_noise: bool = True) -> TrainingSet:
    """Truncated-SVD reconstructions of noisy data for every clean signal and level.

    With ``share_noise`` one noise draw ``z_i`` serves all levels of sample ``i``;
    otherwise each ``(i, j)`` gets its own draw.
    """
    alphas = tuple(float(a) for a in alphas)
    if not alphas:
        raise ValueError("alphas must be non-empty")
    A = np.asarray(getattr(operator, "matrix", operator), dtype=np.float64)
    op_hash = getattr(operator, "hash", None)
    if svd.matrix_hash and op_hash and svd.matrix_hash != op_hash:
        raise ValueError("SVD factors were computed for a different operator")
    clean = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    n, d = clean.shape
    J = len(alphas)
    inputs = np.empty((n * (J + 1), d))
    idx_i = np.repeat(np.arange(n), J + 1)
    idx_j = np.tile(np.arange(J + 1), n)
    alpha_col = np.tile(np.array((np.nan,) + alphas), n)
    seeds = np.zeros(n * (J + 1), dtype=np.uint64)
    for i in range(n):
        base = i * (J + 1)
        inputs[base] = clean[i]
        data = _exact_data(A, clean[i])
        if share_noise:
            s = derive_seed(seed, STREAM_NOISE, i)
            y = data + draw_noise(data, sigma, s).values
            inputs[base + 1 : base + J + 1] = truncated_svd_many(svd, y, alphas)
            seeds[base + 1 : base + J + 1] = s
        else:
            for j, a in enumerate(alphas, start=1):
                s = derive_seed(seed, STREAM_NOISE, i * 1024 + j)
                y = data + draw_noise(data, sigma, s).values
                inputs[base + j] = truncated_svd_many(svd, y, (a,))[0]
                seeds[base + j] = s
    prov = {"operator_hash": op_hash or "", "prng": PRNG_ID, "seed": int(seed), "share_noise": bool(share_noise),
            "alphas": list(alphas)}
    return TrainingSet(clean, inputs, idx_i, idx_j, alpha_col, seeds.astype(np.int64), float(sigma), prov)


def regenerate_record(ts: TrainingSet, k: int, operator, svd) -> np.ndarray:
    """Recompute record ``k`` from its provenance (bitwise identical)."""
    i, j = int(ts.index_i[k]), int(ts.index_j[k])
    if j == 0:
        return ts.clean[i].copy()
    A = np.asarray(getattr(operator, "matrix", operator), dtype=np.float64)
    data = _exact_data(A, ts.clean[i])
    seed = int(np.uint64(np.int64(ts.noise_seed[k])))
    y = data + draw_noise(data, ts.noise_level, seed).values
    if ts.provenance.get("share_noise", True):
        alphas = tuple(ts.provenance["alphas"])
        return truncated_svd_many(svd, y, alphas)[j - 1]
    return truncated_svd_many(svd, y, (float(ts.alpha[k]),))[0]


def save_training_set(path, ts: TrainingSet) -> Path:
    header = {"noise_level": ts.noise_level, "provenance": ts.provenance, "d": int(ts.clean.shape[1])}
    write_container(path, TRAINSET_KIND, header, {
        "clean": ts.clean, "inputs": ts.inputs, "index_i": ts.index_i, "index_j": ts.index_j,
        "alpha": ts.alpha, "noise_seed": ts.noise_seed,
    })
    return Path(path)


def load_training_set(path) -> TrainingSet:
    header, a = read_container(path, TRAINSET_KIND)
    return TrainingSet(a["clean"], a["inputs"], a["index_i"], a["index_j"], a["alpha"], a["noise_seed"],
                       header["noise_level"], header["provenance"])


def per_record_errors(params: neural.NetworkParams, ts: TrainingSet, batch_size: int = 256) -> np.ndarray:
    """``||Phi(x_i + r_ij) - x_i||^2`` for every record, eval mode."""
    out = np.empty(len(ts))
    for start in range(0, len(ts), batch_size):
        sl = slice(start, start + batch_size)
        pred = neural.forward(params, ts.inputs[sl])
        diff = pred - ts.clean[ts.index_i[sl]]
        out[sl] = np.sum(diff * diff, axis=1)
    return out


def empirical_risk(params: neural.NetworkParams, ts: TrainingSet) -> float:
    """Sum of per-record squared errors, accumulated in record order."""
    if len(ts) == 0:
        return 0.0
    return math.fsum(per_record_errors(params, ts))


@dataclass
class TrainHyper:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    valid_fraction: float = 0.1
    patience: int = 20
    dtype: str = "float32"
    divergence_factor: float = 1e3


@dataclass
class TrainRun:
    params_out: neural.NetworkParams
    loss_trace: list
    valid_trace: list
    hyper: TrainHyper
    best_epoch: int = 0
    seconds: float = 0.0

    def write_loss_csv(self, path) -> Path:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "valid_loss"])
            for e, (tl, vl) in enumerate(zip(self.loss_trace, self.valid_trace)):
                w.writerow([e, repr(tl), repr(vl)])
        return Path(path)


def _split(n_clean: int, frac: float, seed: int):
    rng = np.random.default_rng([seed, 7])
    perm = rng.permutation(n_clean)
    n_val = int(round(frac * n_clean)) if n_clean > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _mean_loss(module, X, T, batch=256) -> float:
    module.eval()
    tot = 0.0
    with torch.no_grad():
        for s in range(0, X.shape[0], batch):
            tot += float(((module(X[s : s + batch]) - T[s : s + batch]) ** 2).sum())
    return tot / max(X.shape[0], 1)


def train(ts: TrainingSet, arch: neural.ArchSpec, hyper: TrainHyper | None = None,
          init: neural.NetworkParams | None = None) -> TrainRun:
    """Adam with cosine-decayed step, early stopping on the held-out clean indices.

    ``loss_trace[0]`` is the mean per-record risk before training; entry ``e``
    is the mean risk on the training records after epoch ``e`` (eval mode).
    """
    hyper = hyper or TrainHyper()
    t_start = time.time()
    dtype = getattr(torch, hyper.dtype)
    if ts.inputs.shape[1] != arch.input_length:
        raise neural.ShapeError(f"records have length {ts.inputs.shape[1]}, network expects {arch.input_length}")
    params = (init.to(dtype) if init is not None else neural.init_params(arch, hyper.seed, dtype))
    module = params.module
    train_ids, valid_ids = _split(ts.clean.shape[0], hyper.valid_fraction, hyper.seed)
    tr, va = ts.subset(train_ids), ts.subset(valid_ids)
    Xtr = torch.as_tensor(tr.inputs, dtype=dtype)
    Ttr = torch.as_tensor(tr.targets, dtype=dtype)
    Xva = torch.as_tensor(va.inputs, dtype=dtype)
    Tva = torch.as_tensor(va.targets, dtype=dtype)

    torch.manual_seed(hyper.seed)
    rng = np.random.default_rng([hyper.seed, 11])
    opt = torch.optim.Adam(module.parameters(), lr=hyper.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(hyper.epochs, 1))

    loss0 = _mean_loss(module, Xtr, Ttr)
    loss_trace = [loss0]
    valid_trace = [_mean_loss(module, Xva, Tva) if len(va) else float("nan")]
    best = (valid_trace[0] if len(va) else loss0, 0, {k: v.clone() for k, v in module.state_dict().items()})
    stale = 0
    for epoch in range(1, hyper.epochs + 1):
        module.train()
        perm = rng.permutation(Xtr.shape[0])
        for s in range(0, perm.size, hyper.batch_size):
            b = torch.as_tensor(perm[s : s + hyper.batch_size])
            opt.zero_grad()
            pred = module(Xtr[b])
            # per-record squared error, averaged over the batch
            loss = ((pred - Ttr[b]) ** 2).sum() / b.numel()
            loss.backward()
            opt.step()
        sched.step()
        tl = _mean_loss(module, Xtr, Ttr)
        vl = _mean_loss(module, Xva, Tva) if len(va) else float("nan")
        loss_trace.append(tl)
        valid_trace.append(vl)
        log.info("epoch %d train %.5f valid %.5f", epoch, tl, vl)
        if not math.isfinite(tl) or tl > hyper.divergence_factor * loss0:
            raise TrainingDivergence(f"training loss {tl:.3e} at epoch {epoch} exceeds "
                                     f"{hyper.divergence_factor:g} x initial {loss0:.3e}", loss_trace)
        score = vl if len(va) else tl
        if score < best[0]:
            best = (score, epoch, {k: v.clone() for k, v in module.state_dict().items()})
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best[1])
                break
    module.load_state_dict(best[2])
    module.eval()
    params.trained_noise_level = ts.noise_level
    return TrainRun(params, loss_trace, valid_trace, hyper, best[1], time.time() - t_start)


def hyper_dict(h: TrainHyper) -> dict:
    return asdict(h)

"""Block-type ground-truth signals, the relative Gaussian noise model, and dataset files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container

PRNG_ID = "numpy.Philox4x64/SeedSequence"

# stream tags keep independent random sequences apart for the same base seed
STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_NOISE = 2
STREAM_VALID = 3


def rng_for(seed: int, stream: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed on (seed, stream, index)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, stream: int, index: int) -> int:
    """A 64-bit seed for the (seed, stream, index) triple."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class Signal:
    values: np.ndarray
    t0: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("signal values must be a non-empty 1D array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)


class InfeasibleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BlockConfig:
    """Random piecewise-constant signals.

    The first plateau sits at zero; each of the K jumps moves to a new height
    drawn uniformly from ``height_range``. The result is multiplied by the sign
    of its largest-magnitude value and divided by its maximum, so it lies in
    [-1, 1] with maximum exactly 1.
    """

    d: int = 601
    dt: float = 0.1 / 600
    num_jumps_range: tuple[int, int] = (3, 10)
    height_range: tuple[float, float] = (-1.0, 1.0)
    min_plateau_width: int = 10
    seed: int = 0
    max_retries: int = 100

    def validate(self):
        lo, hi = self.num_jumps_range
        if lo < 1 or hi < lo:
            raise InfeasibleConfigError(f"bad num_jumps_range {self.num_jumps_range}")
        if self.min_plateau_width < 1:
            raise InfeasibleConfigError("min_plateau_width must be >= 1")
        if (hi + 1) * self.min_plateau_width > self.d:
            raise InfeasibleConfigError(
                f"{hi} jumps with plateaus of {self.min_plateau_width} samples do not fit in d={self.d}"
            )
        if self.height_range[1] < self.height_range[0]:
            raise InfeasibleConfigError("height_range is reversed")


def _jump_positions(rng: np.random.Generator, d: int, k: int, width: int) -> np.ndarray:
    # stars and bars: plateau lengths are width + a uniformly drawn composition of the slack
    slack = d - (k + 1) * width
    picks = np.sort(rng.choice(slack + k, size=k, replace=False)) - np.arange(k)
    return picks + width * np.arange(1, k + 1)


def block_values(config: BlockConfig, index: int, stream: int = STREAM_TRAIN) -> tuple[np.ndarray, int]:
    """Unscaled block signal and its jump count; may be non-positive everywhere."""
    rng = rng_for(config.seed, stream, index)
    lo, hi = config.num_jumps_range
    k = int(rng.integers(lo, hi + 1))
    pos = _jump_positions(rng, config.d, k, config.min_plateau_width)
    heights = rng.uniform(config.height_range[0], config.height_range[1], size=k)
    x = np.zeros(config.d)
    for p, h in zip(pos, heights):
        x[p:] = h
    return x, k


def generate_block_signal(config: BlockConfig, index: int, stream: int = STREAM_TRAIN) -> Signal:
    config.validate()
    for attempt in range(config.max_retries):
        # retries use fresh counters far away from any real sample index
        draw_index = index if attempt == 0 else (attempt << 40) + index
        x, _ = block_values(config, draw_index, stream)
        extreme = x[np.argmax(np.abs(x))]
        if extreme != 0:
            # heights are symmetric in law; orient so the largest magnitude is the maximum
            x = x * np.sign(extreme)
            return Signal(x / x.max(), 0.0, config.dt)
    raise InfeasibleConfigError(
        f"no nonzero signal after {config.max_retries} draws (height_range={config.height_range})"
    )


def generate_block_signals(config: BlockConfig, indices, stream: int = STREAM_TRAIN) -> np.ndarray:
    return np.stack([generate_block_signal(config, int(i), stream).values for i in indices])


@dataclass(frozen=True)
class NoiseDraw:
    values: np.ndarray
    sigma: float
    seed: int
    scale: float = 0.0


def noise_scale(clean_data, sigma: float) -> float:
    """Standard deviation ``sigma * mean(|A x|)``."""
    return float(sigma) * float(np.mean(np.abs(np.asarray(clean_data, dtype=np.float64))))


def draw_noise(clean_data, sigma: float, seed: int) -> NoiseDraw:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    data = np.asarray(clean_data, dtype=np.float64)
    s = noise_scale(data, sigma)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    z = rng.standard_normal(data.shape)
    return NoiseDraw(s * z, float(sigma), int(seed), s)


# --- dataset files ---------------------------------------------------------

DATASET_KIND = b"SIGS"


@dataclass
class SignalSet:
    values: np.ndarray  # (count, d)
    dt: float = 1.0
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> Signal:
        return Signal(self.values[i], self.t0, self.dt)


def save_signals(path, signals, dt: float | None = None, meta: dict | None = None, d: int | None = None) -> Path:
    """Persist a ``SignalSet`` or a list of ``Signal``s."""
    if isinstance(signals, SignalSet):
        values, dt, t0, meta = signals.values, signals.dt, signals.t0, {**signals.meta, **(meta or {})}
    else:
        signals = list(signals)
        if signals:
            values = np.stack([np.asarray(s, dtype=np.float64) for s in signals])
            dt = signals[0].dt if dt is None else dt
            t0 = signals[0].t0
        else:
            values = np.zeros((0, d or 0))
            t0 = 0.0
        meta = meta or {}
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    header = {
        "d": int(values.shape[1]),
        "count": int(values.shape[0]),
        "dt": float(dt if dt is not None else 1.0),
        "t0": float(t0),
        "prng": PRNG_ID,
        "meta": meta,
    }
    write_container(path, DATASET_KIND, header, {"values": values})
    return Path(path)


def load_signals(path) -> SignalSet:
    header, arrays = read_container(path, DATASET_KIND)
    values = arrays["values"]
    if values.shape != (header["count"], header["d"]):
        raise ValueError(f"{path}: payload shape {values.shape} disagrees with header")
    return SignalSet(values, header["dt"], header["t0"], header.get("meta", {}))


def export_csv(path, signals) -> Path:
    """One signal per row, full repr precision."""
    values = signals.values if isinstance(signals, SignalSet) else [np.asarray(s) for s in signals]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in values:
            w.writerow([repr(float(v)) for v in row])
    return Path(path)

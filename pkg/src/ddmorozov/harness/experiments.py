"""Experiment orchestration: artifact caching, test data, and the comparison / convergence / mismatch runs."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .. import neural, training
from ..forward_nsw import NswParams, OperatorModel, cached_operator
from ..regularizer import RegularizerSpec
from ..signals import (BlockConfig, PRNG_ID, STREAM_TEST, STREAM_TRAIN, derive_seed, draw_noise,
                       generate_block_signals)
from ..solvers import SolverConfig, morozov_solve_batch, tikhonov_solve_batch
from ..spectral import backprojection, truncated_svd_apply
from .report import ERROR_DEFINITION, ExperimentReport, svg_panels

log = logging.getLogger(__name__)

CACHE_ENV = "DDMOROZOV_CACHE"
NOISE_LEVELS = (0.005, 0.01, 0.05, 0.1, 0.15, 0.2)
METHODS = ("tikhonov-tv", "tikhonov-cnn", "tikhonov-tv+cnn", "morozov-tv", "morozov-cnn", "morozov-tv+cnn")
# test noise uses its own stream so test draws never coincide with training draws
STREAM_TEST_NOISE = 5


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "comparison"
    # data
    n_train: int = 200
    n_test: int = 50
    train_seed: int = 0
    test_seed: int = 1
    block: dict = field(default_factory=dict)  # BlockConfig overrides
    test_sigma: float = 0.1
    noise_levels: tuple = NOISE_LEVELS
    mismatch_levels: tuple = (0.1, 0.01, 0.2)
    alphas: tuple = training.DEFAULT_ALPHAS
    share_noise: bool = True
    delta_policy: str = "realized"  # or "expected": s * sqrt(d)
    # network and training
    arch: dict = field(default_factory=dict)  # ArchSpec overrides
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 20
    net_seed: int = 0
    # reconstruction
    methods: tuple = METHODS
    inits: tuple = ("network", "zero")
    init_alpha: float = 0.1
    lam_morozov: float = 0.01
    lam_tikhonov: float = 0.01
    alpha_tikhonov: float = 1.0
    max_iters: int = 500
    tikhonov_iters: int = 500
    objective_tol: float = 1e-7
    metric: str = "l2"
    # io
    output_dir: str = "results"
    cache_dir: str | None = None
    operator_cache: str | None = None
    nsw: dict = field(default_factory=dict)  # NswParams overrides

    def validate(self):
        if self.experiment not in ("comparison", "convergence", "noise_mismatch", "single"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}")
        if any(i not in ("network", "zero") for i in self.inits):
            raise ConfigError("inits must be 'network' or 'zero'")
        if self.delta_policy not in ("realized", "expected"):
            raise ConfigError("delta_policy must be 'realized' or 'expected'")
        if self.metric not in ERROR_DEFINITION:
            raise ConfigError(f"metric must be one of {sorted(ERROR_DEFINITION)}")
        if self.n_test < 1 or self.n_train < 2:
            raise ConfigError("need n_test >= 1 and n_train >= 2")
        try:
            NswParams(**self.nsw).validate()
            BlockConfig(**self.block).validate()
            neural.ArchSpec(**self.arch)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        conv = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**conv)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full_scale(cls, **kw) -> "ExperimentConfig":
        """Full-size sample counts with the deeper network (long-running)."""
        base = dict(n_train=5000, n_test=500, epochs=200, arch={"depth": 3}, max_iters=2000, tikhonov_iters=2000)
        base.update(kw)
        return cls(**base)


def _stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


class Artifacts:
    """Operator, SVD and trained networks, cached on disk under ``cache_dir``."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        root = config.cache_dir or os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "ddmorozov"
        self.cache_dir = Path(root)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._operator = None
        self._nets = {}

    @property
    def nsw(self) -> NswParams:
        return NswParams(**self.config.nsw)

    @property
    def operator(self) -> OperatorModel:
        if self._operator is None:
            path = self.config.operator_cache or self.cache_dir / f"operator_{_stable_hash(asdict(self.nsw))}.bin"
            self._operator = cached_operator(path, self.nsw)
        return self._operator

    @property
    def block(self) -> BlockConfig:
        base = {"d": self.nsw.d, "dt": self.nsw.dt}
        base.update(self.config.block)
        return BlockConfig(**base)

    @property
    def arch(self) -> neural.ArchSpec:
        return neural.ArchSpec(input_length=self.nsw.d, **self.config.arch)

    def hyper(self) -> training.TrainHyper:
        c = self.config
        return training.TrainHyper(epochs=c.epochs, batch_size=c.batch_size, learning_rate=c.learning_rate,
                                   seed=c.net_seed, patience=c.patience)

    def network_key(self, sigma: float) -> dict:
        c = self.config
        return {"sigma": float(sigma), "n_train": c.n_train, "train_seed": c.train_seed, "block": asdict(self.block),
                "alphas": list(c.alphas), "share_noise": c.share_noise, "arch": asdict(self.arch),
                "hyper": asdict(self.hyper()), "operator": self.operator.hash}

    def network_path(self, sigma: float) -> Path:
        return self.cache_dir / f"net_sigma{sigma:g}_{_stable_hash(self.network_key(sigma))}.bin"

    def training_clean(self) -> np.ndarray:
        return generate_block_signals(self.block, range(self.config.n_train), STREAM_TRAIN)

    def training_set(self, sigma: float) -> training.TrainingSet:
        op = self.operator
        return training.build_perturbations(self.training_clean(), op, op.svd, sigma, self.config.alphas,
                                            self.config.train_seed, self.config.share_noise)

    def network(self, sigma: float, train_if_missing: bool = True) -> neural.NetworkParams:
        key = float(sigma)
        if key in self._nets:
            return self._nets[key]
        path = self.network_path(sigma)
        if path.exists():
            net = neural.load_params(path, expect_length=self.nsw.d)
        elif not train_if_missing:
            raise MissingArtifactError(f"no trained network for sigma={sigma} at {path}")
        else:
            log.info("training network for sigma=%g (%s)", sigma, path.name)
            run = training.train(self.training_set(sigma), self.arch, self.hyper())
            net = run.params_out.to(neural.torch.float64)
            net.trained_noise_level = float(sigma)
            neural.save_params(path, net)
            run.write_loss_csv(path.with_suffix(".loss.csv"))
            (path.with_suffix(".json")).write_text(json.dumps(self.network_key(sigma), indent=2, default=str))
        # solver-side evaluation in single precision; weights stay float64 on disk
        net = net.to(neural.torch.float32)
        self._nets[key] = net
        return net


@dataclass
class TestSet:
    clean: np.ndarray
    data: np.ndarray  # noisy y_delta
    noise: np.ndarray
    delta: np.ndarray
    sigma: float
    seeds: list


def make_test_set(art: Artifacts, sigma: float, n: int | None = None) -> TestSet:
    c = art.config
    n = c.n_test if n is None else n
    # same block settings as training, but test_seed and the test stream
    clean = generate_block_signals(replace(art.block, seed=c.test_seed), range(n), STREAM_TEST)
    A = art.operator.matrix
    exact = clean @ A.T
    seeds = [derive_seed(c.test_seed, STREAM_TEST_NOISE, i) for i in range(n)]
    draws = [draw_noise(exact[i], sigma, seeds[i]) for i in range(n)]
    noise = np.stack([dr.values for dr in draws]) if n else np.zeros_like(exact)
    if c.delta_policy == "realized":
        delta = np.linalg.norm(noise, axis=1)
    else:
        delta = np.array([dr.scale * np.sqrt(exact.shape[1]) for dr in draws])
    return TestSet(clean, exact + noise, noise, delta, float(sigma), seeds)


def network_init(art: Artifacts, net: neural.NetworkParams, data: np.ndarray) -> np.ndarray:
    """Network applied to the truncated-SVD reconstruction of the data."""
    x_tsvd = truncated_svd_apply(art.operator.svd, data, art.config.init_alpha)
    return neural.forward(net, x_tsvd)


def _spec(method: str, net, lam: float) -> RegularizerSpec:
    tv = "tv" in method.split("-", 1)[1]
    cnn = "cnn" in method
    return RegularizerSpec(network=net if cnn else None, lam=lam if tv else 0.0, tv_enabled=tv)


def solve_method(art: Artifacts, method: str, net, test: TestSet, X0: np.ndarray):
    c = art.config
    op = art.operator
    if method.startswith("morozov"):
        spec = _spec(method, net, c.lam_morozov)
        cfg = SolverConfig(max_iters=c.max_iters, objective_tol=c.objective_tol)
        return morozov_solve_batch(op, test.data, test.delta, spec, X0, cfg)
    spec = _spec(method, net, c.lam_tikhonov)
    cfg = SolverConfig(max_iters=c.tikhonov_iters, objective_tol=c.objective_tol)
    alpha = c.alpha_tikhonov if "cnn" in method else 0.0
    return tikhonov_solve_batch(op, test.data, spec, X0, alpha, cfg)


def _record(report: ExperimentReport, method, init, train_level, test: TestSet, results):
    for i, r in enumerate(results):
        report.add(method, init, train_level, test.sigma, i, r.x, test.clean[i], r.iterations_used, r.converged,
                   r.residual[-1] if r.residual else float("nan"))


def _provenance(art: Artifacts, nets: dict) -> dict:
    return {"config": art.config.to_dict(), "operator_hash": art.operator.hash, "prng": PRNG_ID,
            "networks": {str(k): v.content_hash for k, v in nets.items()},
            "network_files": {str(k): art.network_path(k).name for k in nets}}


def run_comparison(config: ExperimentConfig, art: Artifacts | None = None) -> ExperimentReport:
    """Tikhonov/Morozov x TV/CNN/TV+CNN under network and zero initialization."""
    config.validate()
    art = art or Artifacts(config)
    t0 = time.time()
    sigma = config.test_sigma
    test = make_test_set(art, sigma)
    needs_net = any("cnn" in m for m in config.methods) or "network" in config.inits
    net = art.network(sigma) if needs_net else None
    report = ExperimentReport("comparison", config.metric, dt=art.nsw.dt)
    inits = {}
    if "network" in config.inits:
        inits["network"] = network_init(art, net, test.data)
        for i in range(len(test.clean)):
            report.add("init-guess", "network", sigma, sigma, i, inits["network"][i], test.clean[i])
    if "zero" in config.inits:
        inits["zero"] = np.zeros_like(test.clean)
    for init_name, X0 in inits.items():
        for method in config.methods:
            log.info("comparison: %s / %s init", method, init_name)
            _record(report, method, init_name, sigma, test, solve_method(art, method, net, test, X0))
    report.runtime = time.time() - t0
    report.provenance = _provenance(art, {sigma: net} if net is not None else {})
    return report


def run_convergence(config: ExperimentConfig, art: Artifacts | None = None,
                    method: str = "morozov-tv+cnn") -> ExperimentReport:
    """One network per noise level, evaluated on test data at the same level."""
    config.validate()
    art = art or Artifacts(config)
    t0 = time.time()
    report = ExperimentReport("convergence", config.metric, dt=art.nsw.dt)
    nets = {}
    for sigma in config.noise_levels:
        net = art.network(sigma)
        nets[sigma] = net
        test = make_test_set(art, sigma)
        X0 = network_init(art, net, test.data)
        log.info("convergence: sigma=%g", sigma)
        _record(report, method, "network", sigma, test, solve_method(art, method, net, test, X0))
    report.runtime = time.time() - t0
    report.provenance = _provenance(art, nets)
    return report


def convergence_curve(report: ExperimentReport, method: str = "morozov-tv+cnn"):
    stats = sorted((s for s in report.summary() if s["method"] == method), key=lambda s: s["test_level"])
    return (np.array([s["test_level"] for s in stats]), np.array([s["mean"] for s in stats]),
            np.array([s["std"] for s in stats]))


def monotone_fraction(means) -> float:
    """Fraction of adjacent (increasing noise) pairs whose mean error does not decrease."""
    means = np.asarray(means, dtype=float)
    if means.size < 2:
        return 1.0
    return float(np.mean(np.diff(means) >= 0))


def run_noise_mismatch(config: ExperimentConfig, art: Artifacts | None = None,
                       method: str = "morozov-tv+cnn") -> ExperimentReport:
    """Networks trained at several levels, all evaluated on the ``test_sigma`` test set."""
    config.validate()
    art = art or Artifacts(config)
    t0 = time.time()
    test = make_test_set(art, config.test_sigma)
    report = ExperimentReport("noise_mismatch", config.metric, dt=art.nsw.dt)
    nets = {}
    for level in config.mismatch_levels:
        net = art.network(level)
        nets[level] = net
        X0 = network_init(art, net, test.data)
        log.info("mismatch: network trained at %g", level)
        _record(report, method, "network", level, test, solve_method(art, method, net, test, X0))
    report.runtime = time.time() - t0
    report.provenance = _provenance(art, nets)
    return report


@dataclass
class SingleBundle:
    t: np.ndarray
    clean: np.ndarray
    y_delta: np.ndarray
    backprojection: np.ndarray
    tsvd: np.ndarray
    morozov: np.ndarray
    errors: dict
    files: dict = field(default_factory=dict)


def reconstruct_single(config: ExperimentConfig, art: Artifacts | None = None, sample: int = 0,
                       out_dir=None, tsvd_alpha: float = 0.1) -> SingleBundle:
    """Noisy data, backprojection, truncated SVD and DD-Morozov (TV+CNN) for one test signal."""
    config.validate()
    art = art or Artifacts(config)
    test = make_test_set(art, config.test_sigma, n=sample + 1)
    sub = TestSet(test.clean[sample:], test.data[sample:], test.noise[sample:], test.delta[sample:], test.sigma,
                  test.seeds[sample:])
    net = art.network(config.test_sigma)
    op = art.operator
    bp = backprojection(op, sub.data[0])
    tsvd = truncated_svd_apply(op.svd, sub.data[0], tsvd_alpha)
    X0 = network_init(art, net, sub.data)
    mor = solve_method(art, "morozov-tv+cnn", net, sub, X0)[0].x
    x = sub.clean[0]
    errors = {name: float(np.sqrt(art.nsw.dt) * np.linalg.norm(v - x)) for name, v in
              (("backprojection", bp), ("tsvd", tsvd), ("morozov", mor))}
    bundle = SingleBundle(art.nsw.grid, x, sub.data[0], bp, tsvd, mor, errors)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = {"t": bundle.t, "x_true": x, "y_delta": bundle.y_delta, "backprojection": bp,
                f"tsvd_alpha{tsvd_alpha:g}": tsvd, "dd_morozov": mor}
        csv_path = out / f"single_{sample}.csv"
        with open(csv_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in zip(*cols.values()):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        svg_path = svg_panels({"noisy data y_delta": bundle.y_delta, "backprojection A^T y_delta": bp,
                               f"truncated SVD (alpha={tsvd_alpha:g})": tsvd, "DD-Morozov (TV + CNN)": mor,
                               "ground truth": x}, bundle.t, out / f"single_{sample}.svg")
        bundle.files = {"csv": csv_path, "svg": svg_path}
    return bundle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddmorozov.signals import (BlockConfig, InfeasibleConfigError, Signal, SignalSet, block_values, draw_noise,
                               export_csv, generate_block_signal, generate_block_signals, load_signals,
                               noise_scale, save_signals)


@settings(max_examples=60, deadline=None)
@given(index=st.integers(0, 10**9), seed=st.integers(0, 2**63))
def test_block_signal_max_is_exactly_one(index, seed):
    s = generate_block_signal(BlockConfig(seed=seed), index)
    assert s.values.max() == 1.0
    assert s.values.min() >= -1.0


@settings(max_examples=40, deadline=None)
@given(index=st.integers(0, 10**6))
def test_plateaus_respect_min_width(index):
    cfg = BlockConfig(min_plateau_width=10)
    x, k = block_values(cfg, index)
    jumps = np.flatnonzero(np.diff(x) != 0) + 1
    edges = np.concatenate([[0], jumps, [cfg.d]])
    assert np.all(np.diff(edges) >= cfg.min_plateau_width)
    assert cfg.num_jumps_range[0] <= k <= cfg.num_jumps_range[1]


def test_requested_jump_count_gives_that_many_differences():
    cfg = BlockConfig(num_jumps_range=(5, 5), seed=3)
    for i in range(20):
        x, k = block_values(cfg, i)
        assert k == 5
        # a jump to an identical height would hide a difference; continuous heights make that measure zero
        assert np.count_nonzero(np.diff(x)) == 5


def test_generator_is_deterministic():
    cfg = BlockConfig(seed=7)
    a = generate_block_signal(cfg, 11).values
    b = generate_block_signal(cfg, 11).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate_block_signal(cfg, 12).values)


def test_zero_height_range_is_rejected():
    with pytest.raises(InfeasibleConfigError):
        generate_block_signal(BlockConfig(height_range=(0.0, 0.0), max_retries=3), 0)


def test_infeasible_jump_count_is_rejected():
    with pytest.raises(InfeasibleConfigError):
        BlockConfig(d=50, num_jumps_range=(3, 10), min_plateau_width=10).validate()
    with pytest.raises(InfeasibleConfigError):
        BlockConfig(num_jumps_range=(0, 3)).validate()


def test_signal_invariants():
    with pytest.raises(ValueError):
        Signal(np.zeros(0))
    with pytest.raises(ValueError):
        Signal(np.zeros(3), dt=0.0)
    s = Signal(np.arange(3.0), t0=1.0, dt=0.5)
    assert np.allclose(s.times, [1.0, 1.5, 2.0])
    assert np.array_equal(np.asarray(s), [0, 1, 2])


def test_noise_zero_sigma_gives_zero():
    d = draw_noise(np.ones(10), 0.0, 1)
    assert np.all(d.values == 0)


def test_noise_same_seed_identical():
    data = np.linspace(-1, 2, 50)
    assert draw_noise(data, 0.1, 5).values.tobytes() == draw_noise(data, 0.1, 5).values.tobytes()


def test_noise_scale_uses_mean_absolute_value():
    data = np.array([1.0, -3.0, 2.0, -2.0])
    assert noise_scale(data, 0.5) == pytest.approx(0.5 * 2.0)


def test_noise_monte_carlo_std_and_mean():
    data = np.full(100_000, -0.4)
    draw = draw_noise(data, 0.1, 2024)
    s = 0.1 * 0.4
    assert draw.scale == pytest.approx(s)
    assert np.std(draw.values) == pytest.approx(s, rel=0.01)
    assert abs(np.mean(draw.values)) < 5 * s / np.sqrt(draw.values.size)


def test_noise_coordinatewise_unbiased():
    # 10^5 draws of a 4-vector: each coordinate's mean is within 5 s / sqrt(n) of zero
    data = np.array([0.2, -0.1, 0.5, 0.0])
    s = noise_scale(data, 0.2)
    draws = np.stack([draw_noise(data, 0.2, k).values for k in range(100_000)])
    assert np.all(np.abs(draws.mean(axis=0)) < 5 * s / np.sqrt(draws.shape[0]))


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        draw_noise(np.ones(3), -0.1, 0)


def test_dataset_round_trip_bitwise(tmp_path):
    vals = generate_block_signals(BlockConfig(seed=1), range(10))
    path = save_signals(tmp_path / "s.bin", SignalSet(vals, dt=0.5, meta={"note": "x"}))
    out = load_signals(path)
    assert out.values.tobytes() == vals.tobytes()
    assert out.dt == 0.5 and out.meta["note"] == "x"
    assert out[3].values.tobytes() == vals[3].tobytes()


def test_dataset_from_signal_list(tmp_path):
    sigs = [generate_block_signal(BlockConfig(), i) for i in range(3)]
    out = load_signals(save_signals(tmp_path / "s.bin", sigs))
    assert len(out) == 3 and out.dt == sigs[0].dt


def test_empty_dataset(tmp_path):
    out = load_signals(save_signals(tmp_path / "e.bin", [], d=601))
    assert len(out) == 0 and out.values.shape == (0, 601)


@pytest.mark.slow
def test_full_size_dataset_round_trip(tmp_path):
    vals = generate_block_signals(BlockConfig(), range(5000))
    out = load_signals(save_signals(tmp_path / "big.bin", SignalSet(vals)))
    assert out.values.tobytes() == vals.tobytes()


def test_csv_export_full_precision(tmp_path):
    vals = generate_block_signals(BlockConfig(seed=2), range(2))
    p = export_csv(tmp_path / "s.csv", SignalSet(vals))
    back = np.loadtxt(p, delimiter=",")
    assert back.tobytes() == vals.tobytes()

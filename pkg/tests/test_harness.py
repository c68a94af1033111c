import json

import numpy as np
import pytest

from ddmorozov.harness import experiments as ex
from ddmorozov.harness.cli import EXIT_CONFIG, EXIT_OK, main
from ddmorozov.harness.report import (ERROR_DEFINITION, ExperimentReport, emit_report, format_text, read_csv,
                                      svg_lines, write_csv)
from ddmorozov.signals import load_signals
from ddmorozov.spectral import backprojection, truncated_svd_apply

TINY = dict(n_train=4, n_test=3, nsw={"d": 64}, block={"min_plateau_width": 5},
            arch={"depth": 1, "base_channels": 4}, epochs=1, batch_size=8, max_iters=5, tikhonov_iters=5,
            noise_levels=(0.05, 0.1), mismatch_levels=(0.1, 0.2))


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    cfg = ex.ExperimentConfig(cache_dir=str(root / "cache"), output_dir=str(root / "out"), **TINY)
    return cfg, ex.Artifacts(cfg)


# --- config -----------------------------------------------------------------------


def test_default_config_is_valid():
    ex.ExperimentConfig().validate()
    ex.ExperimentConfig.full_scale().validate()


@pytest.mark.parametrize("bad", [
    {"experiment": "nope"}, {"methods": ("morozov-l1",)}, {"inits": ("random",)}, {"metric": "linf"},
    {"delta_policy": "guess"}, {"n_test": 0}, {"nsw": {"c_inf": 0.5}}, {"block": {"num_jumps_range": (5, 2)}},
    {"arch": {"depth": 1, "bogus": 3}},
])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig(**bad).validate()


def test_config_json_round_trip(tmp_path):
    cfg = ex.ExperimentConfig(**TINY)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ex.ExperimentConfig.from_file(path) == cfg


def test_config_unknown_key_rejected():
    with pytest.raises(ex.ConfigError, match="unknown"):
        ex.ExperimentConfig.from_dict({"n_tests": 3})


def test_config_unreadable_file(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ex.ConfigError):
        ex.ExperimentConfig.from_file(tmp_path / "bad.json")


# --- reports ------------------------------------------------------------------------


def _report(rng, metric="l2"):
    rep = ExperimentReport("comparison", metric, dt=1 / 600)
    for m in ("morozov-tv", "tikhonov-tv"):
        for i in range(4):
            x = rng.standard_normal(20)
            rep.add(m, "zero", 0.1, 0.1, i, x + 0.1 * rng.standard_normal(20), x, iterations=7, converged=i % 2 == 0,
                    residual=0.3)
    return rep


def test_report_metrics_are_consistent(rng):
    rep = _report(rng)
    for r in rep.rows:
        assert r["error"] == r["error_l2"]
        assert r["error_l2"] == pytest.approx(np.sqrt(1 / 600) * r["error_euclid"], rel=1e-14)
        assert r["error_rms"] == pytest.approx(r["error_euclid"] / np.sqrt(20), rel=1e-14)


def test_report_csv_round_trip(rng, tmp_path):
    rep = _report(rng, metric="rms")
    rep.runtime = 1.25
    back = read_csv(write_csv(rep, tmp_path / "r.csv"))
    assert back.metric == "rms" and back.dt == rep.dt and back.runtime == 1.25
    assert len(back.rows) == len(rep.rows)
    for a, b in zip(rep.rows, back.rows):
        for k, v in a.items():
            if isinstance(v, float):
                assert b[k] == pytest.approx(v, rel=1e-15)
            else:
                assert b[k] == v
    assert back.summary() == rep.summary()


def test_report_header_states_error_definition(rng, tmp_path):
    text = write_csv(_report(rng), tmp_path / "r.csv").read_text()
    assert f"# error: {ERROR_DEFINITION['l2']}" in text


def test_empty_report(tmp_path):
    rep = ExperimentReport("comparison")
    files = emit_report(rep, tmp_path)
    assert "svg" not in files
    back = read_csv(files["csv"])
    assert back.rows == [] and back.summary() == []
    assert "mean +- std" in format_text(rep)


def test_svg_has_one_polyline_per_method(rng, tmp_path):
    files = emit_report(_report(rng), tmp_path)
    svg = files["svg"].read_text()
    assert svg.count("<polyline") == 2
    assert 'data-series="morozov-tv (zero)"' in svg


def test_svg_lines_log_axis(tmp_path):
    path = svg_lines({"a": ([0.01, 0.1, 1.0], [3.0, 2.0, 1.0])}, tmp_path / "a.svg", log_x=True)
    assert path.read_text().count("<polyline") == 1


def test_summary_statistics(rng):
    rep = _report(rng)
    s = rep.stat("morozov-tv", "zero")
    e = rep.errors("morozov-tv", "zero")
    assert s["n"] == 4
    assert s["mean"] == pytest.approx(e.mean())
    assert s["std"] == pytest.approx(e.std(ddof=1))


def test_monotone_fraction():
    assert ex.monotone_fraction([1.0]) == 1.0
    assert ex.monotone_fraction([1, 2, 2, 1]) == pytest.approx(2 / 3)


# --- experiments on a tiny problem --------------------------------------------------


def test_test_set_is_reproducible_and_disjoint_from_training(tiny):
    cfg, art = tiny
    a = ex.make_test_set(art, 0.1)
    b = ex.make_test_set(art, 0.1)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_allclose(a.delta, np.linalg.norm(a.noise, axis=1))
    train = art.training_clean()
    assert not any(np.array_equal(x, t) for x in a.clean for t in train)


def test_expected_delta_policy(tiny):
    cfg, art = tiny
    art2 = ex.Artifacts(ex.ExperimentConfig(**{**cfg.to_dict(), "delta_policy": "expected"}))
    ts = ex.make_test_set(art2, 0.1)
    scale = 0.1 * np.abs(ts.data - ts.noise).mean(axis=1)
    np.testing.assert_allclose(ts.delta, scale * np.sqrt(64), rtol=1e-12)


def test_network_cache_reused(tiny):
    cfg, art = tiny
    net = art.network(0.1)
    assert art.network_path(0.1).exists()
    fresh = ex.Artifacts(cfg)
    assert fresh.network(0.1, train_if_missing=False).content_hash == net.content_hash
    with pytest.raises(ex.MissingArtifactError):
        fresh.network(0.3, train_if_missing=False)


def test_comparison_smoke(tiny):
    cfg, art = tiny
    rep = ex.run_comparison(cfg, art)
    keys = {(r["method"], r["init"]) for r in rep.rows}
    assert keys == {("init-guess", "network")} | {(m, i) for m in ex.METHODS for i in ("network", "zero")}
    assert all(np.isfinite(r["error"]) for r in rep.rows)
    assert rep.provenance["operator_hash"] == art.operator.hash


def test_convergence_smoke(tiny):
    cfg, art = tiny
    rep = ex.run_convergence(cfg, art)
    levels, means, stds = ex.convergence_curve(rep)
    np.testing.assert_array_equal(levels, [0.05, 0.1])
    assert means.shape == stds.shape == (2,)


def test_mismatch_smoke(tiny):
    cfg, art = tiny
    rep = ex.run_noise_mismatch(cfg, art)
    assert {r["train_level"] for r in rep.rows} == {0.1, 0.2}
    assert {r["test_level"] for r in rep.rows} == {0.1}


def test_single_reconstruction(tiny, tmp_path):
    cfg, art = tiny
    b = ex.reconstruct_single(cfg, art, sample=1, out_dir=tmp_path)
    test = ex.make_test_set(art, cfg.test_sigma)
    np.testing.assert_array_equal(b.y_delta, test.data[1])
    np.testing.assert_allclose(b.backprojection, backprojection(art.operator, test.data[1]), rtol=1e-12)
    np.testing.assert_allclose(b.tsvd, truncated_svd_apply(art.operator.svd, test.data[1], 0.1), rtol=1e-12)
    assert set(b.errors) == {"backprojection", "tsvd", "morozov"}
    header = b.files["csv"].read_text().splitlines()[0]
    assert header.startswith("t,x_true,y_delta,backprojection")
    assert b.files["svg"].read_text().count("<polyline") == 5


# --- CLI ------------------------------------------------------------------------------


@pytest.fixture
def tiny_json(tmp_path, tiny):
    cfg, _ = tiny
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def test_cli_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n_tests": 1}))
    assert main(["benchmark", "--config", str(path)]) == EXIT_CONFIG
    assert "unknown config keys" in capsys.readouterr().err


def test_cli_infeasible_block_exit_code(tmp_path, tiny_json):
    cfg = json.loads(tiny_json.read_text())
    cfg["block"] = {"min_plateau_width": 50}
    tiny_json.write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(tiny_json)]) == EXIT_CONFIG


def test_cli_gen_data(tmp_path, tiny_json):
    out = tmp_path / "s.bin"
    assert main(["gen-data", "--config", str(tiny_json), "--count", "5", "--out", str(out), "--csv"]) == EXIT_OK
    sset = load_signals(out)
    assert len(sset) == 5 and sset.values.shape == (5, 64)
    assert out.with_suffix(".csv").exists()


def test_cli_build_operator(tmp_path, tiny_json, capsys):
    out = tmp_path / "op.bin"
    assert main(["build-operator", "--config", str(tiny_json), "--out", str(out), "--n-omega", "4096"]) == EXIT_OK
    assert out.exists()
    assert "decades" in capsys.readouterr().out


def test_cli_benchmark_writes_reports(tmp_path, tiny_json):
    out = tmp_path / "res"
    assert main(["benchmark", "--config", str(tiny_json), "-o", str(out), "--n-test", "2"]) == EXIT_OK
    rep = read_csv(out / "comparison.csv")
    assert {r["sample"] for r in rep.rows} == {0, 1}
    assert (out / "comparison.svg").exists() and (out / "comparison_provenance.json").exists()


def test_cli_missing_operator_file_exit_code(tmp_path, tiny_json):
    bogus = tmp_path / "op.bin"
    bogus.write_bytes(b"garbage")
    assert main(["reconstruct", "--config", str(tiny_json), "--operator-cache", str(bogus)]) == EXIT_CONFIG

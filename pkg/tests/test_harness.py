import json
import os

import numpy as np
import pytest

from distq.baseline import sine_spec, sqmlf_estimator
from distq.bounds import binomial_law, mse_lower_bound, pcrlb_binary
from distq.cli import main
from distq.errors import ArtifactIOError, ConfigurationError
from distq.fusion import constant_estimator, posterior_mean
from distq.harness import (
    CSV_HEADER,
    ExperimentConfig,
    ResultRow,
    Scenario,
    config_from_dict,
    emit_artifacts,
    load_config,
    read_rows,
    run_monte_carlo,
    sweep,
)
from distq.model import NoiseModel, PriorModel
from distq.net import init_mlp
from distq.quantizer import QuantizerSpec

PRIOR = PriorModel()
CLEAN = Scenario(PRIOR, NoiseModel.noiseless())


def tiny_config(tmp_path, **over):
    raw = {
        "schema_version": 1,
        "name": "tiny",
        "data": {"T": 600},
        "quantizer_training": {"epochs": 2},
        "fc_training": {"epochs": 2},
        "sweep": {"K_eval": [10, 50, 100, 250], "K_S": [10], "K_F": [20], "snr_db": [None]},
        "n_test_trials": 1000,
        "output_dir": str(tmp_path / "run"),
    }
    raw.update(over)
    return config_from_dict(raw)


def test_monte_carlo_oracle_pipeline_reaches_bound():
    K = 3
    law = binomial_law(lambda t: (1 + t) / 2, K)
    table = posterior_mean(law, PRIOR)
    spec = QuantizerSpec("binary", [lambda x: (1 + np.clip(x, -1, 1)) / 2])
    mc = run_monte_carlo(CLEAN, spec, table, K, 40_000, seed=1)
    assert abs(mc.mse - mse_lower_bound(law, PRIOR)) < 3 * mc.stderr


def test_monte_carlo_constant_estimator():
    mc = run_monte_carlo(CLEAN, sine_spec(), constant_estimator(0.0), 10, 20_000, seed=2)
    assert abs(mc.mse - 1 / 3) < 3 * mc.stderr


def test_standard_error_scaling():
    a = run_monte_carlo(CLEAN, sine_spec(), sqmlf_estimator, 20, 20_000, seed=3)
    b = run_monte_carlo(CLEAN, sine_spec(), sqmlf_estimator, 20, 40_000, seed=4)
    assert abs(b.stderr / a.stderr - 1 / np.sqrt(2)) < 0.2 / np.sqrt(2)


def test_monte_carlo_shape_checks():
    fc = init_mlp([2, 4, 1], ["relu", "tanh"], 0)
    with pytest.raises(ConfigurationError):
        run_monte_carlo(CLEAN, sine_spec(), fc, 10, 100, seed=0)


def test_sqmlf_pair_mse_decreases_with_K_and_respects_pcrlb():
    prev = None
    for K in (50, 100, 250, 500, 1000):
        mc = run_monte_carlo(CLEAN, sine_spec(), sqmlf_estimator, K, 20_000, seed=5)
        assert mc.mse >= pcrlb_binary(K) - 3 * mc.stderr
        if prev is not None:
            assert mc.mse <= prev.mse + 3 * np.hypot(mc.stderr, prev.stderr)
        prev = mc


def test_result_row_validation():
    with pytest.raises(ConfigurationError):
        ResultRow("binary", 1, 1, 1, 0.0, "accuracy", 0.1, 1, 0)
    with pytest.raises(ConfigurationError):
        ResultRow("binary", 1, 1, 1, 0.0, "loss", float("nan"), 1, 0)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown key"):
        config_from_dict({"schema_version": 1, "epochs": 3})
    with pytest.raises(ConfigurationError, match="unknown key"):
        config_from_dict({"schema_version": 1, "data": {"T": 5, "Mobs": 2}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"name": "x"})
    with pytest.raises(ConfigurationError):
        config_from_dict({"schema_version": 1, "sweep": {"K_eval": []}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"schema_version": 1, "scheme": "onehot", "bits": 2})  # sqmlf is binary only
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(p)
    a = tiny_config(tmp_path)
    b = config_from_dict({**a.to_dict(), "output_dir": "elsewhere", "workers": 3})
    assert a.config_hash() == b.config_hash()
    c = config_from_dict({**a.to_dict(), "seed": 1})
    assert a.config_hash() != c.config_hash()


def test_sweep_cardinality_resume_and_determinism(tmp_path):
    cfg = tiny_config(tmp_path)
    rows = sweep(cfg)
    assert len(rows) == 12
    assert {r.metric for r in rows} == {"empirical-mse", "sqmlf-mse", "pcrlb"}
    partial = tmp_path / "run" / f"sweep-{cfg.config_hash()}.csv"
    first = partial.read_bytes()
    # a rerun finds every row done and appends nothing
    assert len(sweep(cfg)) == 12 and partial.read_bytes() == first
    # simulate an interrupt: drop the last three rows and resume
    lines = first.decode().splitlines(keepends=True)
    partial.write_text("".join(lines[:-3]))
    resumed = sweep(cfg)
    assert len(resumed) == 12 and len({r.identity for r in resumed}) == 12
    # a fresh run of the same config reproduces the table byte for byte
    other = config_from_dict({**cfg.to_dict(), "output_dir": str(tmp_path / "again")})
    sweep(other)
    a = emit_artifacts(read_rows(partial), tmp_path / "a", tag=cfg.config_hash())[0].read_bytes()
    b = emit_artifacts(sweep(other), tmp_path / "b", tag=cfg.config_hash())[0].read_bytes()
    assert a == b


def test_sweep_records_failures(tmp_path, monkeypatch):
    from distq.harness import experiment

    def boom(*args, **kwargs):
        raise ConfigurationError("broken cell")

    monkeypatch.setattr(experiment, "trained_or_cached", boom)
    cfg = tiny_config(tmp_path)
    rows = sweep(cfg)
    assert len(rows) == 8  # sqmlf + pcrlb survive
    log = (tmp_path / "run" / "failures.jsonl").read_text().splitlines()
    assert len(log) == 1 and json.loads(log[0])["error"].startswith("configuration")


def _rows():
    return [
        ResultRow("pcrlb", 0, 0, K, float("inf"), "pcrlb", pcrlb_binary(K), 0, 0) for K in (10, 100)
    ] + [ResultRow("sqmlf", 0, 0, K, float("inf"), "sqmlf-mse", 1.1 * pcrlb_binary(K), 1000, 0) for K in (100, 10)]


def test_emit_artifacts(tmp_path):
    paths = emit_artifacts(_rows(), tmp_path)
    csv_path, png = paths
    text = csv_path.read_text().splitlines()
    assert text[0] == "scheme,K_S,K_F,K_eval,snr_db,metric,value,n_trials,seed"
    assert text[0].split(",") == CSV_HEADER
    assert len(text) == 5 and png.suffix == ".png" and png.stat().st_size > 0
    again = emit_artifacts(list(reversed(_rows())), tmp_path / "x")
    assert again[0].name == csv_path.name and again[0].read_bytes() == csv_path.read_bytes()
    assert [r.value for r in read_rows(csv_path)] == [r.value for r in read_rows(again[0])]


def test_emit_artifacts_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="empty metric selection"):
        emit_artifacts(_rows(), tmp_path, metrics=[])
    with pytest.raises(ConfigurationError):
        emit_artifacts(_rows(), tmp_path, metrics=["exact-bound"])
    assert not list(tmp_path.iterdir())
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ArtifactIOError):
        emit_artifacts(_rows(), blocker / "sub")


def test_plot_uses_log_axes(tmp_path, monkeypatch):
    import matplotlib.figure

    seen = {}
    orig = matplotlib.figure.Figure.savefig

    def spy(self, *a, **k):
        ax = self.axes[0]
        seen["scales"] = (ax.get_xscale(), ax.get_yscale())
        seen["labels"] = [line.get_label() for line in ax.get_lines()]
        return orig(self, *a, **k)

    monkeypatch.setattr(matplotlib.figure.Figure, "savefig", spy)
    emit_artifacts(_rows(), tmp_path)
    assert seen["scales"] == ("log", "log") and "PCRLB" in seen["labels"]


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(cfg.to_dict()))
    out = tmp_path / "trained"
    assert main(["train", "--config", str(cfg_path), "--out", str(out), "--K-S", "5", "--K-F", "5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert os.path.exists(report["quantizer"]) and os.path.exists(report["estimator"])
    assert main(["bound", "--quantizer", report["quantizer"], "--K", "3", "9"]) == 0
    lines = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
    assert [d["K"] for d in lines] == [3, 9] and lines[1]["exact_bound"] <= lines[0]["exact_bound"]
    assert main(["simulate", "--quantizer", report["quantizer"], "--estimator", report["estimator"], "--K", "5", "--trials", "500"]) == 0
    assert json.loads(capsys.readouterr().out)["n_trials"] == 500
    assert main(["sweep", "--config", str(cfg_path), "--out", str(tmp_path / "sw"), "--seed", "3"]) == 0
    produced = capsys.readouterr().out.split()
    assert any(p.endswith(".csv") for p in produced) and any(p.endswith(".png") for p in produced)
    csv_path = next(p for p in produced if p.endswith(".csv"))
    assert main(["plot", csv_path, "--out", str(tmp_path / "pl"), "--metrics", "pcrlb"]) == 0


def test_cli_error_categories(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "configuration"
    assert main(["train", "--stage", "2", "--out", str(tmp_path / "t")]) == 2
    assert main(["bound", "--K", "30", "--quantizer", "sine"]) == 0
    capsys.readouterr()
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["plot", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "configuration"

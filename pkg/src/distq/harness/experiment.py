"""Training pipelines, sweeps and result rows."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..baseline import sqmlf_reference_mse
from ..bounds import pcrlb_binary
from ..errors import ArtifactIOError, ConfigurationError, DistqError
from ..model import build_dataset_d1, build_dataset_d2, build_obs_grid
from ..net import init_mlp, load_mlp, save_mlp
from ..quantizer import QuantizerSpec, load_quantizer, save_quantizer
from ..training import exact_bound, train_fc, train_quantizer
from .config import ExperimentConfig
from .simulate import Scenario, run_monte_carlo

log = logging.getLogger(__name__)

CSV_HEADER = ["scheme", "K_S", "K_F", "K_eval", "snr_db", "metric", "value", "n_trials", "seed"]
METRICS = ("empirical-mse", "exact-bound", "pcrlb", "sqmlf-mse", "loss")


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    K_S: int
    K_F: int
    K_eval: int
    snr_db: float
    metric: str
    value: float
    n_trials: int
    seed: int

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.value):
            raise ConfigurationError(f"non-finite value in row {self}")

    @property
    def identity(self) -> tuple:
        return (self.scheme, self.K_S, self.K_F, self.K_eval, _fmt_snr(self.snr_db), self.metric, self.seed)

    def csv_fields(self) -> list[str]:
        return [
            self.scheme,
            str(self.K_S),
            str(self.K_F),
            str(self.K_eval),
            _fmt_snr(self.snr_db),
            self.metric,
            repr(float(self.value)),
            str(self.n_trials),
            str(self.seed),
        ]

    @classmethod
    def from_csv(cls, rec: dict) -> "ResultRow":
        return cls(
            rec["scheme"],
            int(rec["K_S"]),
            int(rec["K_F"]),
            int(rec["K_eval"]),
            _parse_snr(rec["snr_db"]),
            rec["metric"],
            float(rec["value"]),
            int(rec["n_trials"]),
            int(rec["seed"]),
        )


def _fmt_snr(snr) -> str:
    return "inf" if snr is None or snr == math.inf else repr(float(snr))


def _parse_snr(text) -> float:
    return math.inf if text == "inf" else float(text)


def _snr_value(snr) -> float:
    return math.inf if snr is None else float(snr)


# training ----------------------------------------------------------------------


def build_training_data(cfg: ExperimentConfig, snr_db, seed: int):
    prior = cfg.prior_model
    noise = cfg.noise(snr_db)
    if cfg.data.regime == "d1-empirical":
        return build_dataset_d1(prior, noise, cfg.data.T, cfg.data.M_obs, seed)
    return build_dataset_d2(prior, noise, cfg.data.T, build_obs_grid(cfg.data.W, cfg.data.M_grid), seed)


def initial_quantizer(cfg: ExperimentConfig, seed: int) -> QuantizerSpec:
    hidden = list(cfg.controller_hidden)
    if cfg.scheme == "onehot":
        L = 2**cfg.bits
        net = init_mlp([1] + hidden + [L], ["relu"] * len(hidden) + ["softmax"], seed)
        return QuantizerSpec("onehot", [net], cfg.bits)
    nets = [
        init_mlp([1] + hidden + [1], ["relu"] * len(hidden) + ["sigmoid"], seed + j)
        for j in range(cfg.bits)
    ]
    return QuantizerSpec(cfg.scheme, nets, cfg.bits)


def initial_estimator(cfg: ExperimentConfig, stat_dim: int, seed: int):
    hidden = list(cfg.estimator_hidden)
    return init_mlp([stat_dim] + hidden + [1], ["relu"] * len(hidden) + ["tanh"], seed)


def train_system(cfg: ExperimentConfig, K_S: int, K_F: int, snr_db, seed: int, stage: str = "both", quantizer=None):
    """Run stage 1 and/or stage 2. Returns (quantizer, estimator, losses)."""
    data = build_training_data(cfg, snr_db, seed)
    losses = {}
    if stage in ("1", "both") or quantizer is None:
        qcfg = cfg.stage_config("quantizer", K_S, seed)
        res = train_quantizer(qcfg, data, initial_quantizer(cfg, seed))
        quantizer = res.model
        losses["quantizer"] = res.epoch_losses
    fc = None
    if stage in ("2", "both"):
        fcfg = cfg.stage_config("fc", K_F, seed)
        res = train_fc(fcfg, data, quantizer, initial_estimator(cfg, quantizer.stat_dim, seed + 1000))
        fc = res.model
        losses["fc"] = res.epoch_losses
    return quantizer, fc, losses


def _cell_dir(cfg, K_S, K_F, snr_db, seed) -> Path:
    return Path(cfg.output_dir) / "checkpoints" / f"{cfg.scheme}{cfg.bits}-KS{K_S}-KF{K_F}-snr{_fmt_snr(snr_db)}-seed{seed}"


def trained_or_cached(cfg: ExperimentConfig, K_S, K_F, snr_db, seed):
    d = _cell_dir(cfg, K_S, K_F, snr_db, seed)
    qpath, fpath = d / "quantizer.json", d / "estimator.json"
    if qpath.exists() and fpath.exists():
        spec, _ = load_quantizer(qpath)
        fc, _ = load_mlp(fpath)
        return spec, fc
    spec, fc, _ = train_system(cfg, K_S, K_F, snr_db, seed)
    d.mkdir(parents=True, exist_ok=True)
    save_quantizer(spec, qpath, K_S=K_S, snr_db=_fmt_snr(snr_db), seed=seed)
    save_mlp(fc, fpath, {"kind": "estimator", "scheme": spec.scheme, "bits": spec.bits, "K_F": K_F, "seed": seed})
    return spec, fc


# sweep -------------------------------------------------------------------------


def _cells(cfg: ExperimentConfig):
    """Independent work units: one per (method, snr, K_S, K_F) group."""
    cells = []
    for snr in cfg.sweep.snr_db:
        if "proposed" in cfg.methods or "bound" in cfg.methods:
            for K_S in cfg.sweep.K_S:
                for K_F in cfg.sweep.K_F:
                    cells.append(("proposed", snr, K_S, K_F))
        if "sqmlf" in cfg.methods:
            cells.append(("sqmlf", snr, 0, 0))
        if "pcrlb" in cfg.methods:
            cells.append(("pcrlb", snr, 0, 0))
    return cells


def _cell_rows(cfg: ExperimentConfig, cell, done: frozenset) -> list[ResultRow]:
    method, snr, K_S, K_F = cell
    seed = cfg.seed
    snr_v = _snr_value(snr)
    scenario = Scenario(cfg.prior_model, cfg.noise(snr))
    rows = []
    scheme_tag = cfg.scheme if cfg.scheme == "binary" else f"{cfg.scheme}{cfg.bits}"

    def want(scheme, metric, K):
        return (scheme, K_S, K_F, K, _fmt_snr(snr_v), metric, seed) not in done

    if method == "pcrlb":
        for K in cfg.sweep.K_eval:
            # plotted against total bits for multi-bit schemes
            if want("pcrlb", "pcrlb", K):
                rows.append(ResultRow("pcrlb", 0, 0, K, snr_v, "pcrlb", pcrlb_binary(K), 0, seed))
        return rows
    if method == "sqmlf":
        for K in cfg.sweep.K_eval:
            if want("sqmlf", "sqmlf-mse", K):
                mse, _ = sqmlf_reference_mse(K, scenario.noise, max(cfg.n_test_trials, 1000), seed, cfg.prior_model)
                rows.append(ResultRow("sqmlf", 0, 0, K, snr_v, "sqmlf-mse", mse, max(cfg.n_test_trials, 1000), seed))
        return rows
    pending = [
        K
        for K in cfg.sweep.K_eval
        if ("proposed" in cfg.methods and want(scheme_tag, "empirical-mse", K))
        or ("bound" in cfg.methods and want(scheme_tag, "exact-bound", K))
    ]
    if not pending:
        return rows
    spec, fc = trained_or_cached(cfg, K_S, K_F, snr, seed)
    for K in pending:
        if "proposed" in cfg.methods and want(scheme_tag, "empirical-mse", K):
            mc = run_monte_carlo(scenario, spec, fc, K, cfg.n_test_trials, seed)
            rows.append(ResultRow(scheme_tag, K_S, K_F, K, snr_v, "empirical-mse", mc.mse, cfg.n_test_trials, seed))
        if "bound" in cfg.methods and want(scheme_tag, "exact-bound", K):
            b = exact_bound(spec, scenario.noise, K, cfg.prior_model)
            rows.append(ResultRow(scheme_tag, K_S, K_F, K, snr_v, "exact-bound", b, 0, seed))
    return rows


def read_rows(path) -> list[ResultRow]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigurationError(f"{path}: unexpected CSV header {reader.fieldnames}")
        return [ResultRow.from_csv(r) for r in reader]


class RowWriter:
    """Single writer that appends rows durably, one line at a time."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.write_text(",".join(CSV_HEADER) + "\n")

    def append(self, rows):
        with open(self.path, "a", newline="") as fh:
            for r in rows:
                fh.write(",".join(r.csv_fields()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def _run_cell(args):
    cfg, cell, done = args
    try:
        return cell, _cell_rows(cfg, cell, done), None
    except DistqError as exc:
        return cell, [], f"{exc.category}: {exc}"


def sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """Run every cell of the sweep; resumable from the incremental CSV.

    Failed cells are logged to ``failures.jsonl`` and the sweep continues.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    partial = out / f"sweep-{cfg.config_hash()}.csv"
    existing = read_rows(partial)
    done = frozenset(r.identity for r in existing)
    writer = RowWriter(partial)
    jobs = [(cfg, cell, done) for cell in _cells(cfg)]
    failures = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = pool.map(_run_cell, jobs)
            for cell, rows, err in results:
                writer.append(rows)
                if err:
                    failures.append((cell, err))
    else:
        for job in jobs:
            cell, rows, err = _run_cell(job)
            writer.append(rows)
            if err:
                failures.append((cell, err))
    if failures:
        with open(out / "failures.jsonl", "a") as fh:
            for cell, err in failures:
                log.warning("cell %s failed: %s", cell, err)
                fh.write(json.dumps({"cell": [str(c) for c in cell], "error": err}) + "\n")
    return read_rows(partial)


def sort_rows(rows) -> list[ResultRow]:
    return sorted(rows, key=lambda r: (r.scheme, r.metric, r.K_S, r.K_F, _snr_value(r.snr_db), r.K_eval, r.seed))


def rows_to_array(rows, metric, scheme=None):
    sel = [r for r in rows if r.metric == metric and (scheme is None or r.scheme == scheme)]
    return np.array([[r.K_eval, r.value] for r in sel]).reshape(-1, 2)


def emit_artifacts(rows, output_dir, metrics=None, tag=None) -> list[Path]:
    """Write the sorted CSV table and one log-log MSE-vs-K plot per SNR.

    ``tag`` (normally the config hash) names the files; without it the name
    is derived from the row content, so identical rows give identical names.
    """
    rows = list(rows)
    if metrics is not None:
        metrics = set(metrics)
        if not metrics:
            raise ConfigurationError("empty metric selection")
        rows = [r for r in rows if r.metric in metrics]
    if not rows:
        raise ConfigurationError("no rows selected for output")
    rows = sort_rows(rows)
    lines = [",".join(CSV_HEADER)] + [",".join(r.csv_fields()) for r in rows]
    text = "\n".join(lines) + "\n"
    if tag is None:
        tag = hashlib.sha256(text.encode()).hexdigest()[:12]
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"results-{tag}.csv"
        csv_path.write_text(text)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write artifacts to {out}: {exc}") from None
    written = [csv_path]
    for snr in sorted({_snr_value(r.snr_db) for r in rows}):
        written.append(_plot(rows, snr, out / f"mse-vs-K-{tag}-snr{_fmt_snr(snr)}.png"))
    return written


def _plot(rows, snr, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sel = [r for r in rows if _snr_value(r.snr_db) == snr and r.metric != "loss"]
    groups = {}
    for r in sel:
        groups.setdefault((r.scheme, r.metric, r.K_S, r.K_F), []).append((r.K_eval, r.value))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for (scheme, metric, K_S, K_F), pts in sorted(groups.items()):
        pts = sorted(pts)
        k, v = np.array(pts).T
        if metric == "pcrlb":
            ax.plot(k, v, "k--", label="PCRLB")
            continue
        label = scheme if metric == "sqmlf-mse" else f"{scheme} {metric} (K_S={K_S}, K_F={K_F})"
        ax.plot(k, v, "o-", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("number of sensors K")
    ax.set_ylabel("MSE")
    ax.set_title("noiseless" if snr == math.inf else f"SNR = {snr:g} dB")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=100, metadata={"Software": None})
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)
    return path


__all__ = [
    "CSV_HEADER",
    "METRICS",
    "ResultRow",
    "RowWriter",
    "read_rows",
    "sweep",
    "sort_rows",
    "emit_artifacts",
    "train_system",
    "trained_or_cached",
    "initial_quantizer",
    "initial_estimator",
    "build_training_data",
]

"""Command-line entry point: ``distq {train,bound,simulate,sweep,plot}``.

Errors are reported as one JSON object on stderr, e.g.
``{"error": "configuration", "message": "..."}``, with an exit code that
depends on the category.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .baseline import sine_spec, sqmlf_estimator
from .bounds import pcrlb_binary
from .errors import ConfigurationError, DistqError
from .harness.config import ExperimentConfig, config_from_dict, load_config
from .harness.experiment import emit_artifacts, read_rows, sweep, train_system
from .harness.simulate import Scenario, run_monte_carlo
from .net import load_mlp, save_mlp
from .quantizer import load_quantizer, save_quantizer
from .training import exact_bound

EXIT_CODES = {
    "configuration": 2,
    "contract": 3,
    "numeric-domain": 4,
    "degenerate-support": 4,
    "singularity": 4,
    "numerical-integrity": 4,
    "training-diverged": 5,
    "enumeration-size": 6,
    "io": 7,
}


def _snr(text):
    if text is None or text.lower() in ("inf", "none", "noiseless"):
        return None
    return float(text)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if changes:
        cfg = config_from_dict({**cfg.to_dict(), **changes})
    return cfg


def _load_quantizer(ref):
    if ref == "sine":
        return sine_spec()
    spec, _ = load_quantizer(ref)
    return spec


def cmd_train(args):
    cfg = _config(args)
    K_S = args.K_S or cfg.sweep.K_S[0]
    K_F = args.K_F or cfg.sweep.K_F[0]
    snr = _snr(args.snr) if args.snr is not None else cfg.sweep.snr_db[0]
    frozen = _load_quantizer(args.quantizer) if args.quantizer else None
    if args.stage == "2" and frozen is None:
        raise ConfigurationError("stage 2 needs --quantizer (a checkpoint or 'sine')")
    spec, fc, losses = train_system(cfg, K_S, K_F, snr, cfg.seed, stage=args.stage, quantizer=frozen)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"K_S": K_S, "K_F": K_F, "snr_db": snr, "seed": cfg.seed}
    if "quantizer" in losses:
        save_quantizer(spec, out / "quantizer.json", K_S=K_S, seed=cfg.seed)
        report["quantizer"] = str(out / "quantizer.json")
        report["quantizer_final_loss"] = losses["quantizer"][-1]
    if fc is not None:
        save_mlp(fc, out / "estimator.json", {"kind": "estimator", "scheme": spec.scheme, "bits": spec.bits, "K_F": K_F})
        report["estimator"] = str(out / "estimator.json")
        report["fc_final_loss"] = losses["fc"][-1]
    print(json.dumps(report))


def cmd_bound(args):
    cfg = _config(args)
    spec = _load_quantizer(args.quantizer)
    noise = cfg.noise(_snr(args.snr))
    for K in args.K:
        row = {"K": K, "exact_bound": exact_bound(spec, noise, K, cfg.prior_model)}
        if spec.scheme == "binary":
            row["pcrlb"] = pcrlb_binary(K)
        print(json.dumps(row))


def cmd_simulate(args):
    cfg = _config(args)
    spec = _load_quantizer(args.quantizer)
    if args.estimator == "sqmlf":
        fc = sqmlf_estimator
    else:
        fc, _ = load_mlp(args.estimator)
    scenario = Scenario(cfg.prior_model, cfg.noise(_snr(args.snr)))
    trials = args.trials or cfg.n_test_trials
    for K in args.K:
        mc = run_monte_carlo(scenario, spec, fc, K, trials, cfg.seed)
        print(json.dumps({"K": K, "mse": mc.mse, "stderr": mc.stderr, "n_trials": trials, "seed": cfg.seed}))


def cmd_sweep(args):
    cfg = _config(args)
    rows = sweep(cfg)
    for path in emit_artifacts(rows, cfg.output_dir, tag=cfg.config_hash()):
        print(path)


def cmd_plot(args):
    rows = read_rows(args.csv)
    out = args.out or str(Path(args.csv).parent)
    for path in emit_artifacts(rows, out, metrics=args.metrics, tag=args.tag):
        print(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distq", description="Learned probabilistic quantizers for distributed estimation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=False):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="seed override")
        if workers:
            sp.add_argument("--workers", type=int, help="parallel sweep cells")

    sp = sub.add_parser("train", help="train the quantizer (stage 1), the estimator (stage 2), or both")
    common(sp)
    sp.add_argument("--stage", choices=["1", "2", "both"], default="both")
    sp.add_argument("--K-S", dest="K_S", type=int, help="sensor count for stage 1")
    sp.add_argument("--K-F", dest="K_F", type=int, help="sensor count for stage 2")
    sp.add_argument("--snr", help="SNR in dB, or 'inf' for noiseless")
    sp.add_argument("--quantizer", help="frozen quantizer for stage 2 (checkpoint path or 'sine')")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("bound", help="exact MSE lower bound for a quantizer")
    common(sp)
    sp.add_argument("--quantizer", default="sine", help="checkpoint path or 'sine'")
    sp.add_argument("--K", type=int, nargs="+", required=True)
    sp.add_argument("--snr")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("simulate", help="Monte-Carlo MSE of a quantizer and estimator")
    common(sp)
    sp.add_argument("--quantizer", default="sine")
    sp.add_argument("--estimator", default="sqmlf", help="checkpoint path or 'sqmlf'")
    sp.add_argument("--K", type=int, nargs="+", required=True)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--snr")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="run a configured sweep and write CSV and plots")
    common(sp, workers=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plot", help="re-emit CSV and plots from a results CSV")
    sp.add_argument("csv")
    sp.add_argument("--out")
    sp.add_argument("--metrics", nargs="*")
    sp.add_argument("--tag")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DistqError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())

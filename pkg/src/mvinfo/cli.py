"""Command-line entry point: ``mvinfo <subcommand>``.

Exit codes: 0 success, 1 assertion or experiment failure, 2 usage or
configuration error.  Every JSON report carries a config hash; wall-clock
time only ever appears under its ``metadata`` key.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import experiments as ex
from . import info_exact as ie
from .errors import ConfigurationError, FormatError, MvInfoError
from .objectives import ESTIMATORS, estimate_mi
from .synthgen import atomic_write, make_discrete_system, read_batch, sample_continuous, write_batch
from .trainer import config_hash, encode, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _metadata() -> dict:
    return {"timestamp": datetime.now(timezone.utc).isoformat(), "version": __version__}


def _dump_json(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path, text: str) -> None:
    atomic_write(Path(path), text.encode())


def _emit_report(report: dict, out) -> None:
    report = {**report, "metadata": _metadata()}
    text = _dump_json(report)
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    return values


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def _load_config(path) -> ex.ExperimentConfig:
    return ex.ExperimentConfig() if path is None else ex.ExperimentConfig.load(path)


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------


def cmd_verify(args) -> int:
    results = ex.run_suite(args.suite, args.trials, args.seed)
    passed = all(r.passed for r in results)
    params = {"suite": args.suite, "trials": args.trials, "seed": args.seed}
    report = {
        "command": "verify",
        **params,
        "config_hash": config_hash(params),
        "passed": passed,
        "results": {r.suite: r.to_dict() for r in results},
    }
    _emit_report(report, args.out)
    for r in results:
        print(f"{r.suite}: {'PASS' if r.passed else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    mode = args.mode or cfg.data_mode
    if mode != cfg.data_mode:
        raise ConfigurationError(f"--mode {mode} disagrees with data_mode {cfg.data_mode!r} in the config")
    if mode == "continuous":
        write_batch(sample_continuous(cfg.data), args.out)
    else:
        table = make_discrete_system(cfg.data)
        _write_text(args.out, json.dumps(table.to_dict(), indent=1) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if cfg.data_mode != "continuous":
        raise ConfigurationError("training needs continuous data")
    data = read_batch(args.data) if args.data else sample_continuous(cfg.data)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = train(cfg.objective, cfg.schedule, data, seed)
    meta = {"config": cfg.to_dict(), "config_hash": run.config_hash, "seed": seed, "view": 1}
    atomic_write(out_dir / "checkpoint.mvm", ad.encode_model(run.encoders[0], meta))
    _write_text(out_dir / "history.csv", run.history_csv())
    report = {
        "command": "train",
        "config_hash": run.config_hash,
        "seed": seed,
        "epochs": len(run.epoch_losses),
        "initial_loss": run.epoch_losses[0] if run.epoch_losses else None,
        "final_loss": run.epoch_losses[-1] if run.epoch_losses else None,
        "checkpoint_digest": run.encoders[0].digest(),
    }
    _emit_report(report, out_dir / "train.json")
    print(f"checkpoint: {out_dir / 'checkpoint.mvm'}", file=sys.stderr)
    return EXIT_OK


def cmd_probe(args) -> int:
    raw = Path(args.checkpoint).read_bytes()
    encoder, meta = ad.decode_model(raw)
    data = read_batch(args.data)
    if data.v1.shape[1] != encoder.sizes[0]:
        raise ConfigurationError(
            f"checkpoint expects {encoder.sizes[0]}-dim views, data has {data.v1.shape[1]}"
        )
    reps = encode(encoder, data.v1)
    result = ex.probe_task(reps, data, args.task, args.seed)
    report = {
        "command": "probe",
        **json.loads(result.to_json()),
        "config_hash": meta.get("config_hash", config_hash({"checkpoint": encoder.digest()})),
    }
    _emit_report(report, args.out)
    if args.out:
        print(result.to_json())
    return EXIT_OK


def cmd_estimate_mi(args) -> int:
    if not -1.0 < args.rho_corr < 1.0:
        raise ConfigurationError("--rho-corr must lie strictly between -1 and 1")
    if args.dim < 1 or args.n < 64:
        raise ConfigurationError("--dim must be >= 1 and --n >= 64")
    rng = np.random.default_rng([args.seed, 11])
    x = rng.standard_normal((args.n, args.dim))
    y = args.rho_corr * x + np.sqrt(1.0 - args.rho_corr**2) * rng.standard_normal((args.n, args.dim))
    critic = ad.mlp_init((2 * args.dim, args.hidden, 1), "relu", [args.seed, 12])
    value = estimate_mi(
        args.estimator, x, y, critic,
        train_steps=args.steps, seed=[args.seed, 13], batch_size=args.batch_size, lr=args.lr,
    )
    params = {k: getattr(args, k) for k in ("estimator", "rho_corr", "dim", "n", "seed", "steps", "batch_size", "lr", "hidden")}
    report = {
        "command": "estimate-mi",
        **params,
        "config_hash": config_hash(params),
        "estimate": value,
        "true_mi": ie.gaussian_mi(args.rho_corr, args.dim),
    }
    if args.out:
        _emit_report(report, args.out)
    print(repr(value))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.values:
        raise UsageError("--values must list at least one value")
    cfg = _load_config(args.config)
    seeds = args.seeds if args.seeds is not None else list(cfg.seeds)
    text = ex.run_sweep(cfg, args.param, args.values, seeds)
    _write_text(args.out, text)
    return EXIT_OK


def cmd_report(args) -> int:
    summary = ex.summarize_sweep(Path(args.sweep).read_text())
    report = {"command": "report", "source": Path(args.sweep).name, **summary}
    hashes = summary["config_hashes"]
    report["config_hash"] = hashes[0] if len(hashes) == 1 else config_hash(hashes)
    _emit_report(report, args.out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvinfo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mvinfo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run exact information-theoretic verifier suites")
    v.add_argument("--suite", required=True, choices=(*ex.SUITES, "all"))
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="JSON report path (stdout if omitted)")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen", help="generate a dataset from a configuration")
    g.add_argument("--mode", choices=("continuous", "discrete"))
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train encoders; writes checkpoint, history and report")
    t.add_argument("--config")
    t.add_argument("--data", help=".mvb batch (generated from the config if omitted)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("probe", help="linear/ridge probe of a frozen view-1 encoder")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--task", required=True, choices=("shared", "nonshared", "regression"))
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_probe)

    e = sub.add_parser("estimate-mi", help="variational MI estimate on correlated Gaussians")
    e.add_argument("--estimator", required=True, choices=ESTIMATORS)
    e.add_argument("--rho-corr", type=float, default=0.8)
    e.add_argument("--dim", type=int, default=1)
    e.add_argument("--n", type=int, default=4096)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--steps", type=int, default=400)
    e.add_argument("--batch-size", type=int, default=256)
    e.add_argument("--lr", type=float, default=5e-3)
    e.add_argument("--hidden", type=int, default=32)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate_mi)

    s = sub.add_parser("sweep", help="train+probe over a parameter grid and seeds; writes CSV")
    s.add_argument("--param", required=True, choices=("lambda", "epochs"))
    s.add_argument("--values", required=True, type=_float_list)
    s.add_argument("--config")
    s.add_argument("--seeds", type=_int_list)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="seed-averaged summary of a sweep CSV")
    r.add_argument("--sweep", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mvinfo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, FormatError, OSError) as exc:
        print(f"mvinfo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MvInfoError as exc:
        print(f"mvinfo: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

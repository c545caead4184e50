"""Experiment orchestration shared by the command line and the acceptance suite.

Theorem suites draw seeded discrete systems and run the exact verifiers;
training experiments parse a flat JSON configuration, train, probe, and sweep
one parameter across seeds.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import info_exact as ie
from .errors import ConfigurationError
from .objectives import ObjectiveConfig
from .synthgen import (
    ContinuousSpec,
    DiscreteSystemSpec,
    MultiViewBatch,
    make_discrete_system,
    random_encoding,
    random_joint_table,
    sample_continuous,
)
from .trainer import Schedule, TrainRun, config_hash, encode, linear_probe, ridge_probe, train

SUITES = ("lemmas", "thm1", "thm2", "thm3", "dpi", "minimality")
TASKS = ("shared", "nonshared")
LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0, 10.0)

# desk-scale schedule used by the over-fitting experiments
CALIBRATED_SCHEDULE = Schedule(epochs=20)


# ----------------------------------------------------------------------------
# Theorem suites
# ----------------------------------------------------------------------------


def random_system_spec(rng: np.random.Generator, max_v1: int = 8) -> DiscreteSystemSpec:
    """Seeded shared-latent system with |V1| <= max_v1."""
    while True:
        s, p1, p2 = (int(x) for x in rng.integers(1, 5, size=3))
        if s * p1 <= max_v1 and s * p2 <= 8 and s * p1 >= 2:
            break
    return DiscreteSystemSpec(
        n_shared=s,
        n_private1=p1,
        n_private2=p2,
        t_card=int(rng.integers(2, 5)),
        coupling=float(rng.uniform(0.0, 1.0)),
        seed=int(rng.integers(2**31)),
    )


def _random_sizes(rng: np.random.Generator) -> tuple[int, int, int]:
    return tuple(int(x) for x in rng.integers(2, 6, size=3))


@dataclass
class SuiteResult:
    suite: str
    trials: int
    passed: bool
    max_residuals: dict[str, float]
    counts: dict[str, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _track(store: dict, key: str, value: float) -> None:
    store[key] = max(store.get(key, -math.inf), value)


def suite_lemmas(trials: int, seed: int) -> SuiteResult:
    """Chain-rule identity on generic tables; interaction identities on shared-latent systems."""
    rng = np.random.default_rng([seed, 101])
    worst: dict[str, float] = {}
    asserted = 0
    ok = True
    for _ in range(trials):
        table = random_joint_table(_random_sizes(rng), int(rng.integers(2**31)))
        enc = random_encoding(table.sizes[0], 1, rng)
        res = abs(ie.info_report(table, enc).chain_rule_residual())
        _track(worst, "lemma2_chain_rule", res)
        ok &= res <= ie.IDENTITY_TOL

        sys_table = make_discrete_system(random_system_spec(rng))
        refinements = ie.sufficient_refinements(sys_table, 1)
        rep = ie.verify_lemma1(sys_table, refinements[int(rng.integers(len(refinements)))])
        for k, v in rep.residuals.items():
            _track(worst, f"lemma1_{k}", v)
        if rep.asserted:
            asserted += 1
            ok &= bool(rep.passed)
    return SuiteResult("lemmas", trials, bool(ok), worst, {"lemma1_asserted": asserted})


def suite_thm1(trials: int, seed: int) -> SuiteResult:
    """Both decompositions over every enumerated sufficient refinement."""
    rng = np.random.default_rng([seed, 102])
    worst: dict[str, float] = {}
    ok = True
    checked = 0
    for _ in range(trials):
        table = make_discrete_system(random_system_spec(rng))
        for enc in ie.sufficient_refinements(table, 1):
            rep = ie.verify_theorem1(table, enc)
            q = rep.quantities
            for k, v in rep.residuals.items():
                _track(worst, k, v)
            _track(worst, "order_violation_v1_zsuf", q["I_zsuf_T"] - q["I_v1_T"])
            _track(worst, "order_violation_zsuf_zmin", q["I_zmin_T"] - q["I_zsuf_T"])
            ok &= bool(rep.asserted and rep.passed)
            checked += 1
    return SuiteResult("thm1", trials, bool(ok), worst, {"encodings_checked": checked})


def suite_thm2(trials: int, seed: int) -> SuiteResult:
    """Bayes error under the clamped bound; minimal partition has the loosest bound."""
    rng = np.random.default_rng([seed, 103])
    worst: dict[str, float] = {}
    ok = True
    for _ in range(trials):
        table = random_joint_table(_random_sizes(rng), int(rng.integers(2**31)))
        r = ie.verify_theorem2(table, random_encoding(table.sizes[0], 1, rng))
        _track(worst, "bound_violation", -r.slack)
        ok &= r.passed

        sys_table = make_discrete_system(random_system_spec(rng))
        refinements = ie.sufficient_refinements(sys_table, 1)
        b_min = ie.verify_theorem2(sys_table, ie.minimal_sufficient_partition(sys_table, 1)).bound
        for enc in refinements:
            r = ie.verify_theorem2(sys_table, enc)
            _track(worst, "bound_violation", -r.slack)
            _track(worst, "minimal_bound_order_violation", r.bound - b_min)
            ok &= r.passed and r.bound <= b_min + ie.ORDER_TOL
        res = ie.minimal_exponent_residual(sys_table)
        _track(worst, "minimal_exponent", res)
        ok &= res <= ie.IDENTITY_TOL
    return SuiteResult("thm2", trials, bool(ok), worst)


MC_REL_TOL = 0.03


def suite_thm3(trials: int, seed: int) -> SuiteResult:
    """Analytic and Monte-Carlo minimum squared error for each noise family."""
    rng = np.random.default_rng([seed, 104])
    worst: dict[str, float] = {}
    ok = True
    for _ in range(trials):
        var_T = float(rng.uniform(1.0, 4.0))
        var_eps = float(rng.uniform(0.1, 0.9)) * var_T
        for family in ie.NOISE_ALPHA:
            scn = ie.GaussianScenario(var_T, var_eps, family)
            r = ie.verify_theorem3(scn, 100_000, int(rng.integers(2**31)))
            _track(worst, f"{family}_analytic_rel", r.analytic_error(var_eps))
            _track(worst, f"{family}_mc_rel", r.mc_error(var_eps))
            ok &= r.analytic_error(var_eps) <= 1e-12 and r.mc_error(var_eps) <= MC_REL_TOL
    return SuiteResult("thm3", trials, bool(ok), worst, extra={"alpha": dict(ie.NOISE_ALPHA)})


def suite_dpi(trials: int, seed: int) -> SuiteResult:
    rng = np.random.default_rng([seed, 105])
    worst: dict[str, float] = {}
    ok = True
    for _ in range(trials):
        table = random_joint_table(_random_sizes(rng), int(rng.integers(2**31)))
        enc1 = random_encoding(table.sizes[0], 1, rng)
        enc2 = random_encoding(table.sizes[1], 2, rng)
        d = ie.verify_dpi(table, enc1, enc2)
        _track(worst, "slack_violation", -min(d.slack_a, d.slack_b))
        ok &= d.passed
    return SuiteResult("dpi", trials, bool(ok), worst)


def suite_minimality(trials: int, seed: int) -> SuiteResult:
    rng = np.random.default_rng([seed, 106])
    worst: dict[str, float] = {}
    ok = True
    for _ in range(trials):
        rep = ie.verify_minimality(make_discrete_system(random_system_spec(rng, max_v1=5)))
        _track(worst, "minimality_gap", rep.residuals["minimality_gap"])
        ok &= bool(rep.passed)
    return SuiteResult("minimality", trials, bool(ok), worst)


SUITE_RUNNERS = {
    "lemmas": suite_lemmas,
    "thm1": suite_thm1,
    "thm2": suite_thm2,
    "thm3": suite_thm3,
    "dpi": suite_dpi,
    "minimality": suite_minimality,
}


def run_suite(name: str, trials: int, seed: int) -> list[SuiteResult]:
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    names = SUITES if name == "all" else (name,)
    unknown = [n for n in names if n not in SUITE_RUNNERS]
    if unknown:
        raise ConfigurationError(f"unknown suite {unknown[0]!r}")
    return [SUITE_RUNNERS[n](trials, seed) for n in names]


# ----------------------------------------------------------------------------
# Experiment configuration
# ----------------------------------------------------------------------------

_OBJECTIVE_KEYS = {f.name for f in fields(ObjectiveConfig)}
_SCHEDULE_KEYS = {f.name for f in fields(Schedule)}
_CONTINUOUS_KEYS = {f.name for f in fields(ContinuousSpec)} - {"seed"}
_DISCRETE_KEYS = {f.name for f in fields(DiscreteSystemSpec)} - {"seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat JSON configuration.

    Keys: every ObjectiveConfig field, every Schedule field, ``data_mode``
    ("continuous" or "discrete"), the data-spec fields of that mode with
    ``data_seed`` for its seed, ``seeds`` (nonempty list) and ``out_dir``.
    """

    objective: ObjectiveConfig = ObjectiveConfig()
    schedule: Schedule = CALIBRATED_SCHEDULE
    data_mode: str = "continuous"
    data: ContinuousSpec | DiscreteSystemSpec = ContinuousSpec()
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "."

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("configuration must be a JSON object")
        mode = raw.get("data_mode", "continuous")
        if mode not in ("continuous", "discrete"):
            raise ConfigurationError(f"data_mode must be continuous or discrete, got {mode!r}")
        data_keys = _CONTINUOUS_KEYS if mode == "continuous" else _DISCRETE_KEYS
        allowed = _OBJECTIVE_KEYS | _SCHEDULE_KEYS | data_keys | {"data_mode", "data_seed", "seeds", "out_dir"}
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys for {mode} data: {unknown}")
        seeds = raw.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigurationError("seeds must be a nonempty list of integers")
        try:
            objective = ObjectiveConfig(**{k: raw[k] for k in _OBJECTIVE_KEYS if k in raw})
            sched_fields = {k: raw[k] for k in _SCHEDULE_KEYS if k in raw}
            schedule = replace(CALIBRATED_SCHEDULE, **sched_fields)
            spec_fields = {k: raw[k] for k in data_keys if k in raw}
            spec_fields["seed"] = raw.get("data_seed", 0)
            data = (ContinuousSpec if mode == "continuous" else DiscreteSystemSpec)(**spec_fields)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        return cls(objective, schedule, mode, data, tuple(seeds), str(raw.get("out_dir", ".")))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = {**asdict(self.objective), **asdict(self.schedule)}
        spec = asdict(self.data)
        d["data_seed"] = spec.pop("seed")
        d.update(spec)
        d.update(data_mode=self.data_mode, seeds=list(self.seeds), out_dir=self.out_dir)
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())


# ----------------------------------------------------------------------------
# Training experiments
# ----------------------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get("MVINFO_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"MVINFO_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"MVINFO_THREADS must be a positive integer, got {raw!r}")
    return n


def probe_task(reps: np.ndarray, data: MultiViewBatch, task: str, seed: int):
    if task == "shared":
        return linear_probe(reps, data.t_shared, seed=seed, task=task)
    if task == "nonshared":
        return linear_probe(reps, data.t_nonshared, seed=seed, task=task)
    if task == "regression":
        return ridge_probe(reps, data.t_reg, seed=seed, task=task)
    raise ConfigurationError(f"unknown probe task {task!r}")


def train_and_probe(
    objective: ObjectiveConfig,
    schedule: Schedule,
    data: MultiViewBatch,
    seed: int,
    tasks=TASKS,
) -> tuple[TrainRun, dict[str, float]]:
    """Train on both views, then probe the frozen view-1 encoder."""
    run = train(objective, schedule, data, seed)
    reps = encode(run.encoders[0], data.v1)
    return run, {t: probe_task(reps, data, t, seed).value for t in tasks}


def _sweep_cell(args) -> list[tuple]:
    param, value, seed, objective, schedule, spec = args
    if param == "lambda":
        objective = replace(objective, lambda1=value, lambda2=value)
    else:
        schedule = replace(schedule, epochs=int(value))
    data = sample_continuous(spec)
    _, acc = train_and_probe(objective, schedule, data, seed)
    return [(value, seed, task, "accuracy", acc[task]) for task in TASKS]


SWEEP_HEADER = ("param_value", "seed", "task", "metric", "value", "config_hash")


def run_sweep(config: ExperimentConfig, param: str, values, seeds, workers: int | None = None) -> str:
    """Train and probe every (value, seed) cell; CSV rows sorted by (value, seed, task)."""
    if param not in ("lambda", "epochs"):
        raise ConfigurationError(f"sweep parameter must be lambda or epochs, got {param!r}")
    values = [float(v) for v in values]
    if len(values) < 2:
        raise ConfigurationError("a sweep needs at least 2 values")
    if len(seeds) < 3:
        raise ConfigurationError("a sweep needs at least 3 seeds")
    if param == "epochs" and any(v != int(v) or v < 0 for v in values):
        raise ConfigurationError("epoch values must be non-negative integers")
    if config.data_mode != "continuous":
        raise ConfigurationError("sweeps train on continuous data")
    cells = [
        (param, v, int(s), config.objective, config.schedule, config.data)
        for v in values for s in seeds
    ]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    rows = sorted((r for cell in results for r in cell), key=lambda r: (r[0], r[1], r[2]))
    h = config_hash({"config": config.to_dict(), "param": param, "values": values, "seeds": list(seeds)})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for value, seed, task, metric, acc in rows:
        w.writerow([repr(value), seed, task, metric, repr(float(acc)), h])
    return buf.getvalue()


def summarize_sweep(csv_text: str) -> dict:
    """Seed-averaged accuracy per (param value, task) and where each task peaks."""
    reader = csv.DictReader(io.StringIO(csv_text))
    missing = set(SWEEP_HEADER[:5]) - set(reader.fieldnames or ())
    if missing:
        raise ConfigurationError(f"sweep CSV lacks columns {sorted(missing)}")
    cells: dict[tuple[str, float], list[float]] = {}
    hashes = set()
    for row in reader:
        cells.setdefault((row["task"], float(row["param_value"])), []).append(float(row["value"]))
        hashes.add(row.get("config_hash", ""))
    summary: dict = {"config_hashes": sorted(hashes), "tasks": {}}
    for task in sorted({t for t, _ in cells}):
        grid = sorted(v for t, v in cells if t == task)
        stats = []
        for v in grid:
            xs = cells[(task, v)]
            sd = statistics.stdev(xs) if len(xs) > 1 else 0.0
            stats.append({"param_value": v, "mean": statistics.fmean(xs), "std": sd, "n": len(xs)})
        best = max(range(len(stats)), key=lambda i: stats[i]["mean"])
        summary["tasks"][task] = {
            "cells": stats,
            "argmax": grid[best],
            "interior_peak": 0 < best < len(grid) - 1,
        }
    return summary


def _grid_cell(args) -> tuple:
    reg, lam, seed, schedule, spec = args
    objective = ObjectiveConfig(reg=reg, lambda1=lam, lambda2=lam)
    _, acc = train_and_probe(objective, schedule, sample_continuous(spec), seed)
    return (reg, lam, seed, acc["shared"], acc["nonshared"])


def overfit_grid(
    cells,
    seeds,
    spec: ContinuousSpec = ContinuousSpec(),
    schedule: Schedule = CALIBRATED_SCHEDULE,
    workers: int | None = None,
) -> dict[tuple[str, float], list[tuple[float, float]]]:
    """SimCLR with each (reg, lambda) cell over ``seeds``.

    Returns {(reg, lambda): [(shared_acc, nonshared_acc) per seed]}, seeds in
    the order given.
    """
    jobs = [(reg, float(lam), int(s), schedule, spec) for reg, lam in cells for s in seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_grid_cell, jobs))
    else:
        results = [_grid_cell(j) for j in jobs]
    out: dict[tuple[str, float], list[tuple[float, float]]] = {}
    for reg, lam, _, a_s, a_n in results:
        out.setdefault((reg, lam), []).append((a_s, a_n))
    return out

"""Training loop for multi-view objectives and frozen-representation probes."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams
from .errors import ConfigurationError, ContractError, ValidationError
from .objectives import Heads, ObjectiveConfig, combined_loss, ema_update
from .synthgen import MultiViewBatch


@dataclass(frozen=True)
class Schedule:
    epochs: int = 50
    batch_size: int = 256
    lr: float = 3e-3
    optimizer: str = "adam"
    hidden: int = 64
    rep_dim: int = 16

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 2")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")


@dataclass
class TrainRun:
    config_hash: str
    epoch_losses: list[float]
    encoders: tuple[MlpParams, MlpParams]
    heads: Heads
    wall_time: float = 0.0

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(self.epoch_losses):
            w.writerow([i + 1, repr(float(loss))])
        return buf.getvalue()


def fnv1a64(data: bytes) -> str:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def config_hash(obj) -> str:
    """FNV-1a 64 of canonical JSON (sorted keys, no whitespace)."""
    return fnv1a64(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode())


def build_models(
    config: ObjectiveConfig, schedule: Schedule, dim_view: int, n_classes: int, seed: int
) -> tuple[tuple[MlpParams, MlpParams], Heads]:
    """Encoders and every head the configuration needs, seeded per network."""
    enc_sizes = (dim_view, schedule.hidden, schedule.rep_dim)
    f1 = ad.mlp_init(enc_sizes, "tanh", [seed, 1])
    f2 = ad.mlp_init(enc_sizes, "tanh", [seed, 2])
    heads = Heads()
    if config.reg == "rc":
        dec_sizes = tuple(reversed(enc_sizes))
        heads.decoder1 = ad.mlp_init(dec_sizes, "tanh", [seed, 3])
        heads.decoder2 = ad.mlp_init(dec_sizes, "tanh", [seed, 4])
    if config.base == "byol":
        heads.predictor = ad.mlp_init(
            (schedule.rep_dim, schedule.hidden, schedule.rep_dim), "tanh", [seed, 5]
        )
        heads.target1 = f1.copy()
        heads.target2 = f2.copy()
    if config.base == "supervised":
        heads.classifier = ad.mlp_init((schedule.rep_dim, n_classes), "identity", [seed, 6])
    return (f1, f2), heads


def train(
    config: ObjectiveConfig,
    schedule: Schedule,
    data: MultiViewBatch,
    seed: int = 0,
) -> TrainRun:
    """Minimize the combined objective with seeded shuffling.

    BYOL target networks follow their online encoders by EMA once per step,
    after the optimizer update.
    """
    if data.n == 0:
        raise ContractError("training data is empty")
    if schedule.batch_size > data.n:
        raise ContractError(f"batch size {schedule.batch_size} exceeds {data.n} samples")
    start = time.perf_counter()
    n_classes = int(data.t_shared.max()) + 1
    encoders, heads = build_models(config, schedule, data.v1.shape[1], n_classes, seed)
    params = [p for net in (*encoders, *heads.trainable()) for p in net.parameters()]
    state = ad.AdamState.for_params(params)
    rng = np.random.default_rng([seed, 7])
    v1 = np.asarray(data.v1, dtype=np.float64)
    v2 = np.asarray(data.v2, dtype=np.float64)
    labels = np.asarray(data.t_shared)
    bs = schedule.batch_size
    losses = []
    for _ in range(schedule.epochs):
        order = rng.permutation(data.n)
        total, steps = 0.0, 0
        for lo in range(0, data.n - bs + 1, bs):
            idx = order[lo:lo + bs]
            with ad.Tape() as tape:
                loss = combined_loss(config, (v1[idx], v2[idx], labels[idx]), encoders, heads, rng)
            grads = ad.backward(tape, loss, params)
            if schedule.optimizer == "adam":
                ad.adam_step(state, params, grads, schedule.lr)
            else:
                ad.sgd_step(params, grads, schedule.lr)
            if config.base == "byol":
                ema_update(heads.target1, encoders[0], config.ema_decay)
                ema_update(heads.target2, encoders[1], config.ema_decay)
            total += loss.item()
            steps += 1
        losses.append(total / steps)
    h = config_hash({"objective": config.to_dict(), "schedule": asdict(schedule), "seed": seed})
    return TrainRun(h, losses, encoders, heads, time.perf_counter() - start)


def encode(encoder: MlpParams, v) -> np.ndarray:
    """Frozen forward pass; never records a tape."""
    return ad.mlp_forward(encoder, np.asarray(v, dtype=np.float64)).data


# ----------------------------------------------------------------------------
# Probes
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    task: str
    metric: str
    value: float
    n_eval: int
    seed: int
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.metric == "accuracy" and not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"accuracy {self.value} outside [0, 1]")
        if self.metric == "mse" and self.value < 0:
            raise ValidationError(f"negative mse {self.value}")

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        return json.dumps(d, sort_keys=True)


def stratified_split(labels, train_frac: float, seed) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(train_frac * len(idx)))
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return [(x - mu) / sd for x in (train, *others)]


def fit_logistic(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_iter: int = 5000,
    tol: float = 1e-6,
    l2: float = 1e-4,
) -> tuple[np.ndarray, int]:
    """Multinomial logistic regression by full-batch gradient descent.

    ``x`` gets an appended bias column.  Step size is 1/L for the
    smoothness constant L of the mean cross-entropy plus the ridge term.
    Returns (weights, iterations used).
    """
    n = len(x)
    xb = np.hstack([x, np.ones((n, 1))])
    onehot = np.eye(n_classes)[y]
    lip = 0.5 * np.linalg.eigvalsh(xb.T @ xb / n).max() + l2
    step = 1.0 / lip
    w = np.zeros((xb.shape[1], n_classes))
    for it in range(1, max_iter + 1):
        logits = xb @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = xb.T @ (p - onehot) / n + l2 * w
        if np.linalg.norm(grad) < tol:
            return w, it
        w -= step * grad
    return w, max_iter


def linear_probe(reps, labels, train_frac: float = 0.8, seed=0, task: str = "probe") -> ProbeResult:
    """Held-out accuracy of a linear classifier on frozen representations."""
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    tr, te = stratified_split(labels, train_frac, seed)
    classes = np.unique(labels[tr])
    if len(classes) < 2:
        raise ValidationError("training split has a single class; cannot stratify a probe")
    remap = {c: i for i, c in enumerate(classes)}
    ytr = np.array([remap[c] for c in labels[tr]])
    xtr, xte = _standardize(reps[tr], reps[te])
    w, iters = fit_logistic(xtr, ytr, len(classes))
    pred = classes[np.argmax(np.hstack([xte, np.ones((len(xte), 1))]) @ w, axis=1)]
    acc = float(np.mean(pred == labels[te])) if len(te) else 0.0
    return ProbeResult(task, "accuracy", acc, int(len(te)), int(seed), {"iterations": iters})


def ridge_fit(x: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    """Closed-form ridge with an unpenalized intercept; returns (coef, intercept)."""
    mx, my = x.mean(axis=0), y.mean()
    xc = x - mx
    gram = xc.T @ xc + l2 * np.eye(x.shape[1])
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise np.linalg.LinAlgError(
            "normal matrix is singular; use l2 > 0 for rank-deficient representations"
        )
    coef = np.linalg.solve(gram, xc.T @ (y - my))
    return coef, float(my - mx @ coef)


def ridge_probe(reps, targets, l2: float = 1e-3, train_frac: float = 0.8, seed=0, task: str = "regression") -> ProbeResult:
    """Held-out mean squared error of ridge regression on frozen representations."""
    if l2 < 0:
        raise ValidationError("l2 must be non-negative")
    reps = np.asarray(reps, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(reps))
    k = int(round(train_frac * len(reps)))
    tr, te = np.sort(perm[:k]), np.sort(perm[k:])
    coef, icpt = ridge_fit(reps[tr], targets[tr], l2)
    resid = targets[te] - (reps[te] @ coef + icpt)
    return ProbeResult(task, "mse", float(np.mean(resid**2)), int(len(te)), int(seed), {"coef": coef.tolist(), "intercept": icpt})

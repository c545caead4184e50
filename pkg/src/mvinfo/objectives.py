"""Training objectives and variational mutual-information estimators.

Base objectives (SimCLR's NT-Xent, BYOL, Barlow Twins, supervised
cross-entropy) raise I(z1, z2); the regularizers add the per-view terms

* ``rc``    reconstruction error ||v - mu(z)||^2 (minimized),
* ``lbe``   the InfoNCE-style uniformity value with scale ``rho`` on
            reparameterized representations (maximized),
* ``mibip`` ||f1(v1) - f2(v2)||^2, which removes non-shared information
            (minimized),

combined as ``base + lambda1 * term(view 1) + lambda2 * term(view 2)`` with
signs chosen so that minimizing the total is the intended optimization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams, Tensor
from .errors import ConfigurationError, ContractError, DomainError, ShapeError

BASES = ("simclr", "byol", "barlowtwins", "supervised")
REGS = ("none", "rc", "lbe", "mibip")
ESTIMATORS = ("infonce", "nwj", "mine")


@dataclass(frozen=True)
class ObjectiveConfig:
    base: str = "simclr"
    reg: str = "none"
    lambda1: float = 1.0
    lambda2: float = 1.0
    tau: float = 0.5
    sigma: float = 0.1
    rho: float = 0.05
    ema_decay: float = 0.99
    bt_off_diag: float = 0.005

    def __post_init__(self):
        if self.base not in BASES:
            raise ConfigurationError(f"unknown base objective {self.base!r}; expected {BASES}")
        if self.reg not in REGS:
            raise ConfigurationError(f"unknown regularizer {self.reg!r}; expected {REGS}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("lambda1 and lambda2 must be non-negative")
        if not (self.tau > 0 and self.sigma > 0 and self.rho > 0):
            raise ConfigurationError("tau, sigma and rho must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ConfigurationError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.bt_off_diag < 0:
            raise ConfigurationError("bt_off_diag must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# Base objectives
# ----------------------------------------------------------------------------


def _pair_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} must match (n x d)")


def nt_xent(z1: Tensor, z2: Tensor, tau: float = 0.5) -> Tensor:
    """Normalized-temperature cross entropy over the 2n anchors of a batch."""
    _pair_shapes("nt_xent", z1, z2)
    n = z1.shape[0]
    if n < 2:
        raise ContractError("nt_xent needs at least 2 pairs (no negatives otherwise)")
    z = ad.l2_normalize_rows(ad.concat_rows([z1, z2]))
    logits = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / tau)
    targets = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    return ad.softmax_log_loss(logits, targets, exclude_diagonal=True)


def byol_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of 2 - 2 cos(pred_i, target_i); no gradient reaches ``target``."""
    _pair_shapes("byol_loss", pred, target)
    p = ad.l2_normalize_rows(pred)
    t = ad.detach(ad.l2_normalize_rows(ad.detach(target)))
    cos = ad.sum(ad.hadamard(p, t), axis=1)
    return ad.add(ad.scale(ad.mean(cos), -2.0), Tensor(2.0))


def ema_update(target: MlpParams, online: MlpParams, decay: float) -> None:
    """In-place target <- decay * target + (1 - decay) * online."""
    for t, o in zip(target.parameters(), online.parameters()):
        if t.shape != o.shape:
            raise ShapeError(f"ema_update: {t.shape} vs {o.shape}")
        t.data[...] = decay * t.data + (1.0 - decay) * o.data


def barlow_twins(z1: Tensor, z2: Tensor, off_diag_weight: float = 0.005) -> Tensor:
    """Cross-correlation loss sum_d (C_dd - 1)^2 + w sum_{d != e} C_de^2."""
    _pair_shapes("barlow_twins", z1, z2)
    n, d = z1.shape
    if n < 2:
        raise ContractError("barlow_twins needs at least 2 rows")
    for z in (z1, z2):
        if np.any(z.data.std(axis=0) < 1e-8):
            warnings.warn("zero-variance column in Barlow Twins input", RuntimeWarning, stacklevel=2)
    a = ad.per_column_standardize(z1)
    b = ad.per_column_standardize(z2)
    c = ad.scale(ad.matmul(ad.transpose(a), b), 1.0 / n)
    on = ad.sum(ad.square(ad.sub(ad.diag(c), Tensor(np.ones((d, 1))))))
    off = ad.sum(ad.square(ad.hadamard(c, Tensor(1.0 - np.eye(d)))))
    return ad.add(on, ad.scale(off, off_diag_weight))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return ad.softmax_log_loss(logits, labels)


# ----------------------------------------------------------------------------
# Regularizers
# ----------------------------------------------------------------------------


def rc_loss(v, z: Tensor, decoder: MlpParams) -> Tensor:
    """Mean squared reconstruction error sum_j (v - mu(z))_j^2 over samples."""
    v = ad.as_tensor(v)
    recon = ad.mlp_forward(decoder, z)
    if recon.shape != v.shape:
        raise ShapeError(f"rc_loss: decoder output {recon.shape} vs input {v.shape}")
    return ad.scale(ad.sum(ad.square(ad.sub(v, recon))), 1.0 / v.shape[0])


def reparameterize(fv: Tensor, sigma: float, seed) -> Tensor:
    """z = fv + sigma * eps with eps ~ N(0, I) from ``seed`` (int or Generator)."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ad.add(fv, Tensor(sigma * rng.standard_normal(fv.shape)))


def lbe_loss(z: Tensor, fv: Tensor, rho: float = 0.05) -> Tensor:
    """-(1/n) sum_k ln sum_l exp(-rho ||z_l - fv_k||^2); larger is more spread."""
    _pair_shapes("lbe_loss", z, fv)
    d = ad.pairwise_sq_dists(fv, z)
    return ad.scale(ad.mean(ad.logsumexp_rows(ad.scale(d, -rho))), -1.0)


def mibip_loss(f1v1: Tensor, f2v2: Tensor) -> Tensor:
    """Mean over rows of ||f1(v1) - f2(v2)||^2."""
    _pair_shapes("mibip_loss", f1v1, f2v2)
    return ad.scale(ad.sum(ad.square(ad.sub(f1v1, f2v2))), 1.0 / f1v1.shape[0])


# ----------------------------------------------------------------------------
# Mutual information estimators
# ----------------------------------------------------------------------------


def critic_scores(critic: MlpParams, x, y) -> Tensor:
    """Score matrix S[i, j] = h(x_i, y_j) from a critic on concatenated pairs."""
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    n = x.shape[0]
    out = ad.mlp_forward(critic, ad.pair_concat(x, y))
    return ad.reshape(out, (n, y.shape[0]))


def infonce_bound(scores: Tensor) -> Tensor:
    n = scores.shape[0]
    return ad.add(ad.scale(ad.softmax_log_loss(scores, np.arange(n)), -1.0), Tensor(math.log(n)))


def _off_diagonal_logmeanexp(scores: Tensor, shift: float = 0.0) -> Tensor:
    n = scores.shape[0]
    mask = np.zeros((n, n))
    np.fill_diagonal(mask, -np.inf)
    flat = ad.reshape(ad.add(scores, Tensor(mask)), (1, n * n))
    return ad.add(ad.reshape(ad.logsumexp_rows(flat), ()), Tensor(shift - math.log(n * (n - 1))))


def nwj_bound(scores: Tensor) -> Tensor:
    """E_p[h] - E_{p(x)p(y)}[exp(h - 1)], marginal pairs taken off-diagonal."""
    joint = ad.mean(ad.diag(scores))
    return ad.sub(joint, ad.exp(_off_diagonal_logmeanexp(scores, -1.0)))


def mine_bound(scores: Tensor) -> Tensor:
    """E_p[h] - ln E_{p(x)p(y)}[exp h] without moving-average correction."""
    return ad.sub(ad.mean(ad.diag(scores)), _off_diagonal_logmeanexp(scores))


BOUNDS = {"infonce": infonce_bound, "nwj": nwj_bound, "mine": mine_bound}


def estimate_mi(
    estimator: str,
    x,
    y,
    critic: MlpParams,
    train_steps: int = 1000,
    seed=0,
    batch_size: int = 256,
    lr: float = 1e-3,
    eval_batches: int = 8,
) -> float:
    """Train ``critic`` to maximize a lower bound and return its estimate (nats).

    The returned value is the bound averaged over ``eval_batches`` fresh
    batches of ``batch_size`` paired rows after training.
    """
    if estimator not in BOUNDS:
        raise DomainError(f"unknown estimator {estimator!r}; expected {ESTIMATORS}")
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    n = len(x)
    if n < 64 or len(y) != n:
        raise ContractError(f"estimate_mi needs >= 64 paired samples, got {n}")
    if critic.sizes[0] != x.shape[1] + y.shape[1] or critic.sizes[-1] != 1:
        raise ShapeError(f"critic sizes {critic.sizes} do not fit x{x.shape} / y{y.shape}")
    bound = BOUNDS[estimator]
    bs = min(batch_size, n)
    rng = np.random.default_rng(seed)
    params = critic.parameters()
    state = ad.AdamState.for_params(params)
    for _ in range(train_steps):
        idx = rng.choice(n, bs, replace=False)
        with ad.Tape() as tape:
            value = bound(critic_scores(critic, x[idx], y[idx]))
            loss = ad.scale(value, -1.0)
        ad.adam_step(state, params, ad.backward(tape, loss, params), lr)
    total = 0.0
    for _ in range(eval_batches):
        idx = rng.choice(n, bs, replace=False)
        total += bound(critic_scores(critic, x[idx], y[idx])).item()
    return total / eval_batches


# ----------------------------------------------------------------------------
# Combined objective
# ----------------------------------------------------------------------------


@dataclass
class Heads:
    """Auxiliary networks an objective may need."""

    decoder1: MlpParams | None = None
    decoder2: MlpParams | None = None
    predictor: MlpParams | None = None
    target1: MlpParams | None = None
    target2: MlpParams | None = None
    classifier: MlpParams | None = None
    extra: dict = field(default_factory=dict)

    def trainable(self) -> list[MlpParams]:
        return [h for h in (self.decoder1, self.decoder2, self.predictor, self.classifier) if h is not None]


def check_heads(config: ObjectiveConfig, heads: Heads) -> None:
    needed = []
    if config.reg == "rc":
        needed += ["decoder1", "decoder2"]
    if config.base == "byol":
        needed += ["predictor", "target1", "target2"]
    if config.base == "supervised":
        needed += ["classifier"]
    for name in needed:
        if getattr(heads, name) is None:
            raise ConfigurationError(
                f"{config.base}+{config.reg} needs head {name!r}, which is missing"
            )


def base_loss(config: ObjectiveConfig, v1, v2, z1: Tensor, z2: Tensor, heads: Heads, labels=None) -> Tensor:
    if config.base == "simclr":
        return nt_xent(z1, z2, config.tau)
    if config.base == "barlowtwins":
        return barlow_twins(z1, z2, config.bt_off_diag)
    if config.base == "byol":
        t1 = ad.mlp_forward(heads.target1, v1)
        t2 = ad.mlp_forward(heads.target2, v2)
        p1 = ad.mlp_forward(heads.predictor, z1)
        p2 = ad.mlp_forward(heads.predictor, z2)
        return ad.add(byol_loss(p1, t2), byol_loss(p2, t1))
    if labels is None:
        raise ConfigurationError("supervised base needs t_shared labels")
    ce1 = cross_entropy(ad.mlp_forward(heads.classifier, z1), labels)
    ce2 = cross_entropy(ad.mlp_forward(heads.classifier, z2), labels)
    return ad.scale(ad.add(ce1, ce2), 0.5)


def reg_terms(config: ObjectiveConfig, v1, v2, z1: Tensor, z2: Tensor, heads: Heads, rng) -> list[Tensor]:
    """Per-view regularizer terms, already signed for minimization.

    LBE perturbs the raw encoder output, so the fixed noise scale sigma is
    measured against the representation's own scale.  MIB/IP compares the
    L2-normalized representations that the contrastive bases compare; on raw
    outputs the squared distance could be shrunk by rescaling alone.
    """
    if config.reg == "none":
        return []
    if config.reg == "rc":
        return [rc_loss(v1, z1, heads.decoder1), rc_loss(v2, z2, heads.decoder2)]
    if config.reg == "lbe":
        out = []
        for z in (z1, z2):
            noisy = reparameterize(z, config.sigma, rng)
            out.append(ad.scale(lbe_loss(noisy, z, config.rho), -1.0))
        return out
    u1, u2 = ad.l2_normalize_rows(z1), ad.l2_normalize_rows(z2)
    half = ad.scale(mibip_loss(u1, u2), 0.5)
    return [half, half]


def combined_loss(
    config: ObjectiveConfig,
    batch_views,
    encoders: tuple[MlpParams, MlpParams],
    heads: Heads,
    rng=None,
) -> Tensor:
    """base + lambda1 * reg(view 1) + lambda2 * reg(view 2).

    ``batch_views`` is ``(v1, v2)`` or ``(v1, v2, t_shared)``.  ``rng``
    drives the LBE reparameterization noise.
    """
    check_heads(config, heads)
    v1, v2 = ad.as_tensor(batch_views[0]), ad.as_tensor(batch_views[1])
    labels = batch_views[2] if len(batch_views) > 2 else None
    z1 = ad.mlp_forward(encoders[0], v1)
    z2 = ad.mlp_forward(encoders[1], v2)
    loss = base_loss(config, v1, v2, z1, z2, heads, labels)
    lambdas = (config.lambda1, config.lambda2)
    if config.reg != "none" and any(lambdas):
        rng = rng if rng is not None else np.random.default_rng(0)
        for lam, term in zip(lambdas, reg_terms(config, v1, v2, z1, z2, heads, rng)):
            if lam:
                loss = ad.add(loss, ad.scale(term, lam))
    return loss

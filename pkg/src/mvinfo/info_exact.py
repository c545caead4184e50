"""Exact information quantities on small discrete multi-view systems.

Everything here works on a finite joint distribution p(v1, v2, T) and on
deterministic encodings z = f(v) given as partitions of one view's
alphabet.  All logarithms are natural (nats) and ``0 ln 0 = 0``.

Interaction information uses McGill's sign convention::

    I(x, y, c) = I(x, y) - I(x, y | c)

which may be negative.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    CapacityError,
    DomainError,
    EncodingError,
    PreconditionError,
    ValidationError,
)

MAX_ALPHABET = 8
MAX_ENUMERATION = 6

NORM_TOL = 1e-12
ROW_TOL = 1e-10
SUFFICIENCY_TOL = 1e-10
IDENTITY_TOL = 1e-10
ORDER_TOL = 1e-12


# ----------------------------------------------------------------------------
# Data types
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JointTable:
    """Exact joint distribution over ``(v1, v2, T)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ValidationError(f"joint table must have 3 axes, got shape {p.shape}")
        for n in p.shape:
            if not 1 <= n <= MAX_ALPHABET:
                raise ValidationError(
                    f"alphabet sizes must lie in [1, {MAX_ALPHABET}], got {p.shape}"
                )
        if not np.all(np.isfinite(p)):
            raise ValidationError("joint table contains non-finite entries")
        if np.any(p < 0):
            raise ValidationError(f"negative probability {p.min():.3g} in joint table")
        total = p.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise ValidationError(f"joint table sums to {total!r}, expected 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.probs.shape)

    def __eq__(self, other):
        if not isinstance(other, JointTable):
            return NotImplemented
        return self.sizes == other.sizes and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash((self.sizes, self.probs.tobytes()))

    @classmethod
    def from_dict(cls, data: dict) -> "JointTable":
        sizes = [int(n) for n in data["sizes"]]
        flat = np.asarray(data["probs"], dtype=np.float64)
        if len(sizes) != 3 or flat.size != math.prod(sizes):
            raise ValidationError(
                f"fixture declares sizes {sizes} but carries {flat.size} probabilities"
            )
        return cls(flat.reshape(sizes))

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "probs": self.probs.ravel().tolist()}

    @classmethod
    def load(cls, path) -> "JointTable":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


@dataclass(frozen=True)
class Encoding:
    """Deterministic encoding z = f(v) of view 1 or 2 as a partition.

    ``assignment[i]`` is the class of source symbol ``i``.  Class ids must be
    exactly ``0..K-1`` with every class used.
    """

    target_view: int
    assignment: tuple[int, ...]
    K: int = field(init=False)

    def __post_init__(self):
        if self.target_view not in (1, 2):
            raise EncodingError(f"target_view must be 1 or 2, got {self.target_view}")
        a = tuple(int(c) for c in self.assignment)
        if not a:
            raise EncodingError("assignment must cover a non-empty alphabet")
        K = max(a) + 1
        if min(a) < 0 or set(a) != set(range(K)):
            raise EncodingError(f"class ids {sorted(set(a))} are not contiguous from 0")
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "K", K)

    @property
    def n_source(self) -> int:
        return len(self.assignment)

    @classmethod
    def identity(cls, n: int, view: int = 1) -> "Encoding":
        return cls(view, tuple(range(n)))

    @classmethod
    def constant(cls, n: int, view: int = 1) -> "Encoding":
        return cls(view, (0,) * n)

    @classmethod
    def from_labels(cls, labels: Sequence, view: int = 1) -> "Encoding":
        """Relabel arbitrary hashable labels to ids in order of first use."""
        ids: dict = {}
        return cls(view, tuple(ids.setdefault(x, len(ids)) for x in labels))

    def blocks(self) -> list[tuple[int, ...]]:
        out: list[list[int]] = [[] for _ in range(self.K)]
        for i, c in enumerate(self.assignment):
            out[c].append(i)
        return [tuple(b) for b in out]

    def onehot(self) -> np.ndarray:
        m = np.zeros((self.n_source, self.K))
        m[np.arange(self.n_source), self.assignment] = 1.0
        return m

    def refines(self, coarser: "Encoding") -> bool:
        """True if every class of ``self`` sits inside one class of ``coarser``."""
        if self.n_source != coarser.n_source:
            return False
        image: dict[int, int] = {}
        for c, d in zip(self.assignment, coarser.assignment):
            if image.setdefault(c, d) != d:
                return False
        return True


@dataclass(frozen=True)
class InfoReport:
    """Entropies and informations of a system under one encoding (nats)."""

    H_v1: float
    H_v2: float
    H_T: float
    H_T_given_z: float
    I_v1v2: float
    I_z_v1: float
    I_z_v2: float
    I_z_T: float
    I_z_T_given_v2: float
    I_z_v2_T: float
    I_v1_T: float
    I_v1_T_given_v2: float
    I_v1_v2_T: float

    def chain_rule_residual(self) -> float:
        """H(T|z) - [H(T) - I(z,T|v2) - I(z,v2,T)]."""
        return self.H_T_given_z - (self.H_T - self.I_z_T_given_v2 - self.I_z_v2_T)

    def to_dict(self, bits: bool = False) -> dict:
        scale = 1.0 / math.log(2) if bits else 1.0
        return {k: v * scale for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class GaussianScenario:
    var_T: float
    var_eps: float
    noise_family: str = "gaussian"

    def __post_init__(self):
        if self.noise_family not in NOISE_ALPHA:
            raise DomainError(
                f"unknown noise family {self.noise_family!r}; "
                f"expected one of {sorted(NOISE_ALPHA)}"
            )
        if not (self.var_T > 0 and self.var_eps > 0):
            raise DomainError("variances must be positive")
        if self.var_eps > self.var_T:
            raise DomainError(f"var_eps={self.var_eps} exceeds var_T={self.var_T}")


# ----------------------------------------------------------------------------
# Core summation machinery
# ----------------------------------------------------------------------------


def entropy(p) -> float:
    """Shannon entropy of an array of probabilities (any shape), in nats."""
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mutual_information(pxy) -> float:
    """I(x, y) of a 2-axis joint table."""
    pxy = np.asarray(pxy, dtype=np.float64)
    return entropy(pxy.sum(1)) + entropy(pxy.sum(0)) - entropy(pxy)


class _Dist:
    """Named-axis joint distribution with cached marginal entropies."""

    def __init__(self, p: np.ndarray, names: Sequence[str]):
        self.p = p
        self.names = tuple(names)
        self._cache: dict[frozenset, float] = {}

    def H(self, *names: str) -> float:
        key = frozenset(names)
        if key not in self._cache:
            drop = tuple(i for i, n in enumerate(self.names) if n not in key)
            self._cache[key] = entropy(self.p.sum(axis=drop) if drop else self.p)
        return self._cache[key]

    def I(self, a: str, b: str, given: str | None = None) -> float:
        if given is None:
            return self.H(a) + self.H(b) - self.H(a, b)
        c = given
        return self.H(a, c) + self.H(b, c) - self.H(a, b, c) - self.H(c)

    def II(self, a: str, b: str, c: str) -> float:
        return self.I(a, b) - self.I(a, b, c)


def _check_encoding(table: JointTable, enc: Encoding) -> None:
    n = table.sizes[enc.target_view - 1]
    if enc.n_source != n:
        raise EncodingError(
            f"encoding covers {enc.n_source} symbols but view {enc.target_view} "
            f"has {n}"
        )


def _dist(table: JointTable, **encodings: Encoding) -> _Dist:
    """Joint over (v1, v2, t) extended with one axis per named encoding."""
    p = table.probs
    names = ["v1", "v2", "t"]
    for name, enc in encodings.items():
        _check_encoding(table, enc)
        src = enc.target_view - 1
        shape = [1] * p.ndim + [enc.K]
        shape[src] = enc.n_source
        p = p[..., None] * enc.onehot().reshape(shape)
        names.append(name)
    return _Dist(p, names)


# ----------------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------------


def apply_encoding(table: JointTable, enc: Encoding) -> JointTable:
    """Pushforward of ``table`` with the encoded view replaced by z."""
    _check_encoding(table, enc)
    axis = enc.target_view - 1
    moved = np.moveaxis(table.probs, axis, -1)
    pushed = np.moveaxis(moved @ enc.onehot(), -1, axis)
    return JointTable(pushed)


def info_report(table: JointTable, enc: Encoding) -> InfoReport:
    """All report quantities by exact summation.

    ``z`` is the encoding of whichever view ``enc`` targets; the remaining
    quantities always refer to the literal v1, v2 and T.
    """
    d = _dist(table, z=enc)
    return InfoReport(
        H_v1=d.H("v1"),
        H_v2=d.H("v2"),
        H_T=d.H("t"),
        H_T_given_z=d.H("t", "z") - d.H("z"),
        I_v1v2=d.I("v1", "v2"),
        I_z_v1=d.I("z", "v1"),
        I_z_v2=d.I("z", "v2"),
        I_z_T=d.I("z", "t"),
        I_z_T_given_v2=d.I("z", "t", "v2"),
        I_z_v2_T=d.II("z", "v2", "t"),
        I_v1_T=d.I("v1", "t"),
        I_v1_T_given_v2=d.I("v1", "t", "v2"),
        I_v1_v2_T=d.II("v1", "v2", "t"),
    )


def minimal_sufficient_partition(table: JointTable, view: int = 1) -> Encoding:
    """Likelihood partition of ``view`` with respect to the other view.

    Symbols share a class iff their conditional rows p(other | symbol) agree
    within 1e-10 per entry.  Zero-mass symbols get one dedicated class.
    """
    if view not in (1, 2):
        raise EncodingError(f"view must be 1 or 2, got {view}")
    pv = table.probs.sum(axis=2)
    if view == 2:
        pv = pv.T
    mass = pv.sum(axis=1)
    reps: list[np.ndarray | None] = []
    labels = []
    zero_class = None
    for i, m in enumerate(mass):
        if m <= 0:
            if zero_class is None:
                zero_class = len(reps)
                reps.append(None)
            labels.append(zero_class)
            continue
        row = pv[i] / m
        for j, r in enumerate(reps):
            if r is not None and np.max(np.abs(row - r)) <= ROW_TOL:
                labels.append(j)
                break
        else:
            reps.append(row)
            labels.append(len(reps) - 1)
    return Encoding(view, tuple(labels))


def check_sufficiency(table: JointTable, enc: Encoding) -> float:
    """Sufficiency slack I(v1,v2) - I(z,other view), in nats."""
    d = _dist(table, z=enc)
    other = "v2" if enc.target_view == 1 else "v1"
    return d.I("v1", "v2") - d.I("z", other)


def is_sufficient(table: JointTable, enc: Encoding) -> bool:
    return check_sufficiency(table, enc) <= SUFFICIENCY_TOL


def set_partitions(n: int) -> Iterator[tuple[int, ...]]:
    """All set partitions of ``range(n)`` as restricted growth strings."""
    if n == 0:
        yield ()
        return

    def grow(prefix: list[int], top: int):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for c in range(top + 2):
            prefix.append(c)
            yield from grow(prefix, max(top, c))
            prefix.pop()

    yield from grow([0], 0)


def sufficient_refinements(table: JointTable, view: int = 1) -> list[Encoding]:
    """Every partition refining the likelihood partition of ``view``.

    All of these are sufficient; the first entry is the likelihood partition
    itself and the last the identity.
    """
    zmin = minimal_sufficient_partition(table, view)
    blocks = zmin.blocks()
    per_block = [list(set_partitions(len(b))) for b in blocks]
    out = []
    for combo in itertools.product(*per_block):
        labels = [None] * zmin.n_source
        for b, (block, rgs) in enumerate(zip(blocks, combo)):
            for sym, sub in zip(block, rgs):
                labels[sym] = (b, sub)
        out.append(Encoding.from_labels(labels, view))
    out.sort(key=lambda e: e.K)
    return out


def assumption_slack(table: JointTable, view: int = 1) -> float:
    """I(z_min, v_view | v_other), assumed zero for minimal representations."""
    zmin = minimal_sufficient_partition(table, view)
    d = _dist(table, z=zmin)
    own, other = ("v1", "v2") if view == 1 else ("v2", "v1")
    return d.I("z", own, other)


@dataclass
class VerifierReport:
    """Residuals of one verifier run.

    ``asserted`` is False when the preconditions of the identities are not
    met exactly (e.g. a generic table violating the shared-latent
    assumption); ``passed`` is then None and the residuals are informative
    only.
    """

    name: str
    quantities: dict[str, float]
    residuals: dict[str, float]
    checks: dict[str, bool]
    asserted: bool = True

    @property
    def passed(self) -> bool | None:
        if not self.asserted:
            return None
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "asserted": self.asserted,
            "passed": self.passed,
            "quantities": self.quantities,
            "residuals": self.residuals,
            "checks": self.checks,
        }


def verify_minimality(table: JointTable) -> VerifierReport:
    """Enumerate all partitions of V1 and confirm the likelihood partition is minimal."""
    n1 = table.sizes[0]
    if n1 > MAX_ENUMERATION:
        raise CapacityError(
            f"|V1|={n1} exceeds the enumeration bound {MAX_ENUMERATION}"
        )
    zmin = minimal_sufficient_partition(table, 1)
    d_min = _dist(table, z=zmin)
    i_min = d_min.I("z", "v1")
    best = math.inf
    n_sufficient = 0
    n_total = 0
    for rgs in set_partitions(n1):
        n_total += 1
        enc = Encoding(1, rgs)
        if is_sufficient(table, enc):
            n_sufficient += 1
            best = min(best, _dist(table, z=enc).I("z", "v1"))
    gap = i_min - best
    residual = d_min.I("z", "v1", "v2")
    return VerifierReport(
        name="minimality",
        quantities={
            "n_partitions": n_total,
            "n_sufficient": n_sufficient,
            "K_min": zmin.K,
            "I_zmin_v1": i_min,
            "min_sufficient_I_z_v1": best,
            "assumption_residual": residual,
        },
        residuals={"minimality_gap": gap},
        checks={"likelihood_partition_is_minimal": gap <= IDENTITY_TOL},
    )


class DpiSlack(NamedTuple):
    slack_a: float
    slack_b: float

    @property
    def passed(self) -> bool:
        return self.slack_a >= -ORDER_TOL and self.slack_b >= -ORDER_TOL


def verify_dpi(table: JointTable, enc1: Encoding, enc2: Encoding) -> DpiSlack:
    """Slacks of I(v1,v2) >= I(v1,z2) >= I(z1,z2)."""
    if enc1.target_view != 1 or enc2.target_view != 2:
        raise EncodingError("verify_dpi needs enc1 on view 1 and enc2 on view 2")
    d = _dist(table, z1=enc1, z2=enc2)
    i_v1_z2 = d.I("v1", "z2")
    return DpiSlack(d.I("v1", "v2") - i_v1_z2, i_v1_z2 - d.I("z1", "z2"))


def verify_lemma1(table: JointTable, enc_suf: Encoding | None = None) -> VerifierReport:
    """Interaction-information invariance for sufficient encodings of view 1."""
    if enc_suf is None:
        enc_suf = Encoding.identity(table.sizes[0], 1)
    suf_slack = check_sufficiency(table, enc_suf)
    if suf_slack > SUFFICIENCY_TOL:
        raise PreconditionError(
            f"encoding is not sufficient (slack {suf_slack:.3e} nats)"
        )
    zmin = minimal_sufficient_partition(table, 1)
    d = _dist(table, zmin=zmin, zsuf=enc_suf)
    ref = d.II("v1", "v2", "t")
    q = {
        "I_v1_v2_T": ref,
        "I_zmin_v2_T": d.II("zmin", "v2", "t"),
        "I_zsuf_v2_T": d.II("zsuf", "v2", "t"),
        "I_zmin_T_given_v2": d.I("zmin", "t", "v2"),
        "assumption_slack": d.I("zmin", "v1", "v2"),
    }
    r = {
        "zmin_interaction": abs(q["I_zmin_v2_T"] - ref),
        "zsuf_interaction": abs(q["I_zsuf_v2_T"] - ref),
        "zmin_conditional": abs(q["I_zmin_T_given_v2"]),
    }
    return VerifierReport(
        name="lemma1",
        quantities=q,
        residuals=r,
        checks={k: v <= IDENTITY_TOL for k, v in r.items()},
        asserted=q["assumption_slack"] <= IDENTITY_TOL,
    )


def verify_theorem1(table: JointTable, enc_suf: Encoding) -> VerifierReport:
    """Decomposition of task information for minimal vs sufficient encodings."""
    if enc_suf.target_view != 1:
        raise EncodingError("verify_theorem1 expects an encoding of view 1")
    suf_slack = check_sufficiency(table, enc_suf)
    if suf_slack > SUFFICIENCY_TOL:
        raise PreconditionError(
            f"encoding is not sufficient (slack {suf_slack:.3e} nats)"
        )
    zmin = minimal_sufficient_partition(table, 1)
    d = _dist(table, zmin=zmin, zsuf=enc_suf)
    i_v1_t = d.I("v1", "t")
    i_min_t = d.I("zmin", "t")
    i_suf_t = d.I("zsuf", "t")
    gap_v1 = d.I("v1", "t", "v2")
    gap_suf = d.I("zsuf", "t", "v2")
    q = {
        "I_v1_T": i_v1_t,
        "I_zsuf_T": i_suf_t,
        "I_zmin_T": i_min_t,
        "I_v1_T_given_v2": gap_v1,
        "I_zsuf_T_given_v2": gap_suf,
        "assumption_slack": d.I("zmin", "v1", "v2"),
    }
    r = {
        "v1_decomposition": abs(i_v1_t - i_min_t - gap_v1),
        "zsuf_decomposition": abs(i_suf_t - i_min_t - gap_suf),
    }
    checks = {k: v <= IDENTITY_TOL for k, v in r.items()}
    checks["order_v1_ge_zsuf"] = i_v1_t >= i_suf_t - ORDER_TOL
    checks["order_zsuf_ge_zmin"] = i_suf_t >= i_min_t - ORDER_TOL
    return VerifierReport(
        name="theorem1",
        quantities=q,
        residuals=r,
        checks=checks,
        asserted=q["assumption_slack"] <= IDENTITY_TOL,
    )


def bayes_error(joint_z_T) -> float:
    """Bayes error 1 - sum_z max_t p(z, t) of a 2-axis joint table."""
    p = np.asarray(joint_z_T, dtype=np.float64)
    if p.ndim != 2:
        raise ValidationError(f"expected a 2-axis table, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValidationError("joint (z, T) table is not a probability distribution")
    return float(1.0 - p.max(axis=1).sum())


def gamma_threshold(x: float, t_card: int) -> float:
    """Clamp ``x`` into the attainable Bayes-error range [0, 1 - 1/|T|]."""
    if t_card < 2:
        raise DomainError(f"t_card must be >= 2, got {t_card}")
    return min(max(x, 0.0), 1.0 - 1.0 / t_card)


class Theorem2Result(NamedTuple):
    P_e: float
    bound: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.slack >= -ORDER_TOL


def bayes_bound_exponent(table: JointTable, enc: Encoding) -> float:
    """H(T) - I(z,T|v2) - I(z,v2,T), the exponent of the error bound."""
    d = _dist(table, z=enc)
    return d.H("t") - d.I("z", "t", "v2") - d.II("z", "v2", "t")


def verify_theorem2(table: JointTable, enc: Encoding) -> Theorem2Result:
    """Compare the exact Bayes error of z against its entropy bound.

    For |T| = 1 the Bayes error is identically zero and the bound is taken as 0.
    """
    t_card = table.sizes[2]
    pzt = apply_encoding(table, enc).probs.sum(axis=2 - enc.target_view)
    p_e = bayes_error(pzt)
    exponent = bayes_bound_exponent(table, enc)
    raw = 1.0 - math.exp(-exponent)
    bound = gamma_threshold(raw, t_card) if t_card >= 2 else 0.0
    return Theorem2Result(p_e, bound, bound - p_e)


def minimal_exponent_residual(table: JointTable) -> float:
    """|exponent(z_min) - (H(T) - I(v1,v2,T))|; zero under the minimality assumption."""
    zmin = minimal_sufficient_partition(table, 1)
    d = _dist(table)
    return abs(bayes_bound_exponent(table, zmin) - (d.H("t") - d.II("v1", "v2", "t")))


# ----------------------------------------------------------------------------
# Continuous scalar regression (additive noise)
# ----------------------------------------------------------------------------

NOISE_ALPHA = {
    "uniform": 1.0 / 12.0,
    "laplace": 1.0 / (2.0 * math.e**2),
    "gaussian": 1.0 / (2.0 * math.pi * math.e),
}


def noise_entropy(family: str, variance: float) -> float:
    """Differential entropy (nats) of zero-mean noise with the given variance."""
    if family == "uniform":
        return math.log(math.sqrt(12.0 * variance))
    if family == "laplace":
        return 1.0 + math.log(2.0 * math.sqrt(variance / 2.0))
    if family == "gaussian":
        return 0.5 * math.log(2.0 * math.pi * math.e * variance)
    raise DomainError(f"unknown noise family {family!r}")


def _sample_noise(rng: np.random.Generator, family: str, variance: float, n: int):
    if family == "uniform":
        half = math.sqrt(3.0 * variance)
        return rng.uniform(-half, half, n)
    if family == "laplace":
        return rng.laplace(0.0, math.sqrt(variance / 2.0), n)
    return rng.normal(0.0, math.sqrt(variance), n)


class Theorem3Result(NamedTuple):
    R_e_analytic: float
    R_e_mc: float
    alpha: float

    def analytic_error(self, var_eps: float) -> float:
        return abs(self.R_e_analytic - var_eps) / var_eps

    def mc_error(self, var_eps: float) -> float:
        return abs(self.R_e_mc - var_eps) / var_eps


def verify_theorem3(scn: GaussianScenario, n_samples: int = 100_000, seed=0) -> Theorem3Result:
    """Minimum squared error of T = z + eps against alpha * exp(2 H(T|z)).

    z is Gaussian with variance var_T - var_eps so that Var(T) = var_T; the
    conditional mean E[T|z] = z is exact because eps is zero-mean and
    independent of z.
    """
    if n_samples < 10_000:
        raise DomainError(f"n_samples must be >= 1e4, got {n_samples}")
    alpha = NOISE_ALPHA[scn.noise_family]
    h_cond = noise_entropy(scn.noise_family, scn.var_eps)
    r_analytic = alpha * math.exp(2.0 * h_cond)
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, math.sqrt(scn.var_T - scn.var_eps), n_samples)
    t = z + _sample_noise(rng, scn.noise_family, scn.var_eps, n_samples)
    r_mc = float(np.mean((t - z) ** 2))
    return Theorem3Result(r_analytic, r_mc, alpha)


def gaussian_mi(correlation: float, dims: int = 1) -> float:
    """MI of ``dims`` independent bivariate Gaussian pairs with given correlation."""
    if not abs(correlation) < 1:
        raise DomainError(f"|correlation| must be < 1, got {correlation}")
    if dims < 1:
        raise DomainError(f"dims must be >= 1, got {dims}")
    return -0.5 * dims * math.log1p(-correlation * correlation)

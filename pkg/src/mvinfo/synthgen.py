"""Synthetic multi-view systems.

Two generators live here:

* :func:`make_discrete_system` builds exact joint tables with a shared latent
  ``s`` visible in both views, so that the minimal sufficient encoding of
  either view is exactly ``s``.
* :func:`sample_continuous` draws paired continuous views from shared and
  private Gaussian latents through fixed tanh mixing, with labels for a
  shared task, a non-shared task, and a regression target.

Batches persist to the ``.mvb`` binary format via :func:`write_batch` /
:func:`read_batch`.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import CapacityError, FormatError, ValidationError
from .info_exact import Encoding, JointTable

# ----------------------------------------------------------------------------
# Discrete shared-latent systems
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteSystemSpec:
    n_shared: int = 2
    n_private1: int = 2
    n_private2: int = 2
    t_card: int = 2
    coupling: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_shared", "n_private1", "n_private2", "t_card"):
            v = getattr(self, name)
            if not 1 <= v <= 4:
                raise CapacityError(f"{name}={v} outside [1, 4]")
        if self.n_shared * self.n_private1 > 8 or self.n_shared * self.n_private2 > 8:
            raise CapacityError(
                "per-view alphabet n_shared * n_private exceeds 8 "
                f"({self.n_shared}x{self.n_private1}, {self.n_shared}x{self.n_private2})"
            )
        if not 0.0 <= self.coupling <= 1.0:
            raise ValidationError(f"coupling must lie in [0, 1], got {self.coupling}")


def _dirichlet(rng: np.random.Generator, k: int, size=None) -> np.ndarray:
    # floor keeps every cell strictly positive so all rows are well defined
    p = rng.dirichlet(np.ones(k), size=size) + 0.02
    return p / p.sum(axis=-1, keepdims=True)


def make_discrete_system(spec: DiscreteSystemSpec) -> JointTable:
    """Joint table of v1 = (s, n1), v2 = (s, n2) and T.

    p(s, n1, n2, T) = p(s) p(n1|s) p(n2|s) p(T|s, n1) with
    p(T|s, n1) = (1 - coupling) q_s(T) + coupling r_{s,n1}(T), so T depends on
    the view-1 private latent only through ``coupling``.  Symbol index of v1
    is ``s * n_private1 + n1`` (and likewise for v2).
    """
    rng = np.random.default_rng(spec.seed)
    S, P1, P2, NT = spec.n_shared, spec.n_private1, spec.n_private2, spec.t_card
    p_s = _dirichlet(rng, S)
    p_n1 = _dirichlet(rng, P1, size=S)
    p_n2 = _dirichlet(rng, P2, size=S)
    q = _dirichlet(rng, NT, size=S)
    r = _dirichlet(rng, NT, size=(S, P1))
    c = spec.coupling
    p_t = (1.0 - c) * q[:, None, :] + c * r  # (S, P1, NT)

    joint = (
        p_s[:, None, None, None]
        * p_n1[:, :, None, None]
        * p_n2[:, None, :, None]
        * p_t[:, :, None, :]
    )  # (S, P1, P2, NT)
    probs = np.zeros((S * P1, S * P2, NT))
    for s in range(S):
        probs[s * P1:(s + 1) * P1, s * P2:(s + 1) * P2, :] = joint[s]
    probs /= probs.sum()
    return JointTable(probs)


def shared_latent_encoding(spec: DiscreteSystemSpec, view: int = 1) -> Encoding:
    """Encoding that maps each view symbol to its shared latent ``s``."""
    private = spec.n_private1 if view == 1 else spec.n_private2
    return Encoding(view, tuple(i // private for i in range(spec.n_shared * private)))


def random_joint_table(sizes, seed) -> JointTable:
    """Generic (not shared-latent) table with Dirichlet(1) entries."""
    rng = np.random.default_rng(seed)
    n = math.prod(sizes)
    return JointTable(rng.dirichlet(np.ones(n)).reshape(sizes))


def random_encoding(n: int, view: int, rng: np.random.Generator) -> Encoding:
    """Uniformly random labelling of ``n`` symbols into at most ``n`` classes."""
    k = int(rng.integers(1, n + 1))
    return Encoding.from_labels(rng.integers(0, k, size=n).tolist(), view)


# ----------------------------------------------------------------------------
# Continuous multi-view batches
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousSpec:
    dim_shared: int = 8
    dim_private: int = 8
    dim_view: int = 32
    n_samples: int = 10_000
    noise_std: float = 0.05
    classes_shared: int = 2
    classes_nonshared: int = 2
    seed: int = 0
    symmetric: bool = False

    def __post_init__(self):
        if self.dim_shared < 1 or self.dim_private < 0:
            raise ValidationError("dim_shared must be >= 1 and dim_private >= 0")
        if self.dim_view < self.dim_shared + self.dim_private:
            raise ValidationError(
                f"dim_view={self.dim_view} < dim_shared + dim_private="
                f"{self.dim_shared + self.dim_private}"
            )
        if self.n_samples < 0:
            raise ValidationError("n_samples must be >= 0")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if self.classes_shared < 2 or self.classes_nonshared < 2:
            raise ValidationError("label cardinalities must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ContinuousSpec":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class MultiViewBatch:
    v1: np.ndarray
    v2: np.ndarray
    t_shared: np.ndarray
    t_nonshared: np.ndarray
    t_reg: np.ndarray
    latents: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.v1)
        if self.v2.shape != self.v1.shape:
            raise ValidationError(f"view shapes differ: {self.v1.shape} vs {self.v2.shape}")
        for name in ("t_shared", "t_nonshared", "t_reg"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    @property
    def n(self) -> int:
        return len(self.v1)

    def subset(self, idx) -> "MultiViewBatch":
        lat = None if self.latents is None else tuple(x[idx] for x in self.latents)
        return MultiViewBatch(
            self.v1[idx], self.v2[idx], self.t_shared[idx],
            self.t_nonshared[idx], self.t_reg[idx], lat, dict(self.spec),
        )


def _quantile_bins(x: np.ndarray, k: int) -> np.ndarray:
    # equal-mass bins of a standard normal projection
    edges = [NormalDist().inv_cdf(i / k) for i in range(1, k)]
    return np.searchsorted(np.asarray(edges), x).astype(np.int32)


@dataclass(frozen=True)
class _Mixing:
    A1: np.ndarray
    A2: np.ndarray
    w_shared: np.ndarray
    w_private: np.ndarray


# gain keeps tanh mildly nonlinear while raw views stay linearly probeable
MIX_GAIN = 0.7


def _mixing(spec: ContinuousSpec) -> _Mixing:
    rng = np.random.default_rng([spec.seed, 0])
    k = spec.dim_shared + spec.dim_private
    scale = MIX_GAIN / math.sqrt(k)
    A1 = rng.normal(0.0, scale, (spec.dim_view, k))
    A2 = A1.copy() if spec.symmetric else rng.normal(0.0, scale, (spec.dim_view, k))
    w_s = rng.normal(size=spec.dim_shared)
    w_s /= np.linalg.norm(w_s)
    w_p = rng.normal(size=max(spec.dim_private, 1))[: spec.dim_private]
    if spec.dim_private:
        w_p /= np.linalg.norm(w_p)
    return _Mixing(A1, A2, w_s, w_p)


def sample_continuous(spec: ContinuousSpec, start: int = 0, stop: int | None = None) -> MultiViewBatch:
    """Draw rows ``start:stop`` of the batch defined by ``spec``.

    Row i depends only on (seed, i), so disjoint ranges can be generated
    independently and concatenated.
    """
    stop = spec.n_samples if stop is None else stop
    if not 0 <= start <= stop <= spec.n_samples:
        raise ValidationError(f"row range [{start}, {stop}) outside [0, {spec.n_samples})")
    mix = _mixing(spec)
    ds, dp, dv = spec.dim_shared, spec.dim_private, spec.dim_view
    width = 2 * ds + 2 * dp + 2 * dv + 1
    rows = np.empty((stop - start, width))
    for i in range(start, stop):
        rows[i - start] = np.random.default_rng([spec.seed, 1, i]).standard_normal(width)
    s = rows[:, :ds]
    n1 = rows[:, ds:ds + dp]
    n2 = rows[:, ds + dp:ds + 2 * dp]
    eta1 = rows[:, ds + 2 * dp:ds + 2 * dp + dv] * spec.noise_std
    eta2 = rows[:, ds + 2 * dp + dv:ds + 2 * dp + 2 * dv] * spec.noise_std
    spare = rows[:, -1]

    v1 = np.tanh(np.hstack([s, n1]) @ mix.A1.T) + eta1
    v2 = np.tanh(np.hstack([s, n2]) @ mix.A2.T) + eta2
    proj_s = s @ mix.w_shared
    # an empty private space leaves the non-shared label driven by a latent no view sees
    proj_p = n1 @ mix.w_private if dp else spare
    t_reg = (proj_s + proj_p) / math.sqrt(2.0)
    # stored precision is float32; generating at it keeps .mvb round trips exact
    return MultiViewBatch(
        v1=v1.astype(np.float32),
        v2=v2.astype(np.float32),
        t_shared=_quantile_bins(proj_s, spec.classes_shared),
        t_nonshared=_quantile_bins(proj_p, spec.classes_nonshared),
        t_reg=t_reg.astype(np.float32),
        latents=(s, n1, n2),
        spec=spec.to_dict(),
    )


# ----------------------------------------------------------------------------
# .mvb binary format
# ----------------------------------------------------------------------------

MVB_MAGIC = b"MVBATCH1"
_HEADER = struct.Struct("<III")
N_LABEL_KINDS = 2


def atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_batch(batch: MultiViewBatch) -> bytes:
    n, d = batch.v1.shape if batch.v1.ndim == 2 else (0, 0)
    if n == 0 and batch.spec:
        d = int(batch.spec.get("dim_view", 0))
    parts = [
        MVB_MAGIC,
        _HEADER.pack(n, d, N_LABEL_KINDS),
        np.ascontiguousarray(batch.v1, dtype="<f4").tobytes(),
        np.ascontiguousarray(batch.v2, dtype="<f4").tobytes(),
        np.ascontiguousarray(batch.t_reg, dtype="<f4").tobytes(),
        np.ascontiguousarray(batch.t_shared, dtype="<i4").tobytes(),
        np.ascontiguousarray(batch.t_nonshared, dtype="<i4").tobytes(),
        json.dumps(batch.spec, sort_keys=True).encode(),
    ]
    return b"".join(parts)


def decode_batch(raw: bytes) -> MultiViewBatch:
    head = len(MVB_MAGIC) + _HEADER.size
    if len(raw) < head:
        raise FormatError(f"truncated header: expected {head} bytes, got {len(raw)}")
    if raw[:8] != MVB_MAGIC:
        raise FormatError(f"bad magic {raw[:8]!r}, expected {MVB_MAGIC!r}")
    n, d, kinds = _HEADER.unpack_from(raw, 8)
    if kinds != N_LABEL_KINDS:
        raise FormatError(f"unsupported label kind count {kinds}")
    body = 4 * (2 * n * d + n + kinds * n)
    if len(raw) < head + body:
        raise FormatError(
            f"truncated payload: expected at least {head + body} bytes, got {len(raw)}"
        )
    off = head

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += 4 * count
        return arr

    v1 = take(n * d, "<f4").reshape(n, d)
    v2 = take(n * d, "<f4").reshape(n, d)
    t_reg = take(n, "<f4")
    t_shared = take(n, "<i4")
    t_nonshared = take(n, "<i4")
    try:
        spec = json.loads(raw[off:].decode()) if off < len(raw) else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt JSON trailer: {exc}") from None
    return MultiViewBatch(v1, v2, t_shared, t_nonshared, t_reg, None, spec)


def write_batch(batch: MultiViewBatch, path) -> None:
    """Write ``batch`` as float32/int32 little-endian arrays plus a JSON trailer."""
    atomic_write(Path(path), encode_batch(batch))


def read_batch(path) -> MultiViewBatch:
    return decode_batch(Path(path).read_bytes())

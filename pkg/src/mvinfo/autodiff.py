"""A small dense reverse-mode autodiff engine on float64 numpy arrays.

Operations executed inside an active :class:`Tape` are recorded in
execution order, which is already a topological order; :func:`backward`
walks the tape once in reverse.  Outside a tape the same functions compute
plain values, which is how frozen encoders are evaluated.

    >>> w = Tensor(np.ones((3, 1)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = mean(square(matmul(Tensor(np.eye(3)), w)))
    >>> (gw,) = backward(tape, loss, [w])

Broadcasting is deliberately limited to adding a ``(1, m)`` row vector to an
``(n, m)`` matrix.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, FormatError, ShapeError

EPS = 1e-12
STANDARDIZE_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.grad_fn: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------------------
# Tape
# ----------------------------------------------------------------------------

_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations; single-owner, single use."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False


def _node(data, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.grad_fn = grad_fn
        tape.nodes.append(out)
    return out


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors that do not influence the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("tape already used for a backward pass")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(p), np.zeros_like(p.data)) for p in wrt]


# ----------------------------------------------------------------------------
# Primitives
# ----------------------------------------------------------------------------


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> bool:
    """Check shapes for add/sub; return True if ``b`` is a broadcast row."""
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim == 2 and b.shape == (1, a.shape[1]):
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row = _binary_shapes("add", a, b)

    def grad_fn(g):
        return g, (g.sum(axis=0, keepdims=True) if row else g)

    return _node(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    row = _binary_shapes("sub", a, b)

    def grad_fn(g):
        return g, -(g.sum(axis=0, keepdims=True) if row else g)

    return _node(a.data - b.data, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("hadamard", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def identity(a: Tensor) -> Tensor:
    return a


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    """Natural log with inputs clamped below at 1e-12."""
    x = np.maximum(a.data, EPS)
    return _node(np.log(x), (a,), lambda g: (g * (a.data > EPS) / x,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    """Sum of all entries, or along ``axis`` keeping that dimension."""
    if axis is None:
        return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    out = a.data.sum(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, g / n),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    cols = {p.shape[1:] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: trailing shapes {sorted(cols)} differ")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def grad_fn(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, grad_fn)


def detach(a: Tensor) -> Tensor:
    """Value of ``a`` cut from the graph (stop-gradient)."""
    return Tensor(a.data)


def l2_normalize_rows(a: Tensor) -> Tensor:
    norm = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    safe = np.maximum(norm, EPS)
    y = a.data / safe
    live = norm > EPS

    def grad_fn(g):
        proj = np.sum(y * g, axis=1, keepdims=True)
        return (np.where(live, (g - y * proj) / safe, g / safe),)

    return _node(y, (a,), grad_fn)


def per_column_standardize(a: Tensor, eps: float = STANDARDIZE_EPS) -> Tensor:
    """Batch standardization of each column with biased variance + eps."""
    mu = a.data.mean(axis=0, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=0, keepdims=True) + eps)
    y = xc * inv

    def grad_fn(g):
        gm = g.mean(axis=0, keepdims=True)
        gy = (g * y).mean(axis=0, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, (a,), grad_fn)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a 2-D tensor, shape (n, 1)."""
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    soft = e / s
    return _node(m + np.log(s), (a,), lambda g: (g * soft,))


def softmax_log_loss(logits: Tensor, targets, exclude_diagonal: bool = False) -> Tensor:
    """Mean over rows of -log softmax(logits_i)[targets_i].

    With ``exclude_diagonal`` the entry (i, i) is removed from row i's
    normalizer, as NT-Xent requires.
    """
    z = logits.data
    n = z.shape[0]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"softmax_log_loss: {targets.shape} targets for {n} rows")
    if exclude_diagonal:
        if z.shape[0] != z.shape[1]:
            raise ShapeError("exclude_diagonal needs square logits")
        z = z.copy()
        np.fill_diagonal(z, -np.inf)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    logp = z[np.arange(n), targets] - (m[:, 0] + np.log(s[:, 0]))
    soft = e / s

    def grad_fn(g):
        gz = soft.copy()
        gz[np.arange(n), targets] -= 1.0
        return (gz * (g / n),)

    return _node(np.asarray(-logp.mean()), (logits,), grad_fn)


def pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    """D[k, l] = ||a_k - b_l||^2."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sq_dists: shapes {a.shape} and {b.shape}")
    an = np.sum(a.data**2, axis=1)
    bn = np.sum(b.data**2, axis=1)
    d = np.maximum(an[:, None] + bn[None, :] - 2.0 * (a.data @ b.data.T), 0.0)

    def grad_fn(g):
        ga = 2.0 * (g.sum(axis=1, keepdims=True) * a.data - g @ b.data)
        gb = 2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data)
        return ga, gb

    return _node(d, (a, b), grad_fn)


def pair_concat(x: Tensor, y: Tensor) -> Tensor:
    """Rows [x_i, y_j] for all (i, j), row index i * n_y + j."""
    nx, dx = x.shape
    ny, dy = y.shape
    out = np.concatenate(
        [np.repeat(x.data, ny, axis=0), np.tile(y.data, (nx, 1))], axis=1
    )

    def grad_fn(g):
        gx = g[:, :dx].reshape(nx, ny, dx).sum(axis=1)
        gy = g[:, dx:].reshape(nx, ny, dy).sum(axis=0)
        return gx, gy

    return _node(out, (x, y), grad_fn)


def diag(a: Tensor) -> Tensor:
    """Diagonal of a square matrix as an (n, 1) column."""
    n = a.shape[0]

    def grad_fn(g):
        out = np.zeros(a.shape)
        out[np.arange(n), np.arange(n)] = g[:, 0]
        return (out,)

    return _node(np.diag(a.data).reshape(n, 1).copy(), (a,), grad_fn)


ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": identity}


# ----------------------------------------------------------------------------
# MLP
# ----------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Fully connected network; the activation sits between layers only."""

    sizes: tuple[int, ...]
    activation: str
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            tuple(self.sizes),
            self.activation,
            [Tensor(w.data.copy(), True) for w in self.weights],
            [Tensor(b.data.copy(), True) for b in self.biases],
        )

    def state_bytes(self) -> bytes:
        return b"".join(t.data.astype("<f8").tobytes() for t in self.parameters())

    def digest(self) -> str:
        return hashlib.sha256(self.state_bytes()).hexdigest()


def mlp_init(sizes: Sequence[int], activation: str = "tanh", seed=0) -> MlpParams:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"invalid layer sizes {sizes}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    params = MlpParams(sizes, activation)
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.weights.append(Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), True))
        params.biases.append(Tensor(np.zeros((1, fan_out)), True))
    return params


def mlp_forward(params: MlpParams, x) -> Tensor:
    h = as_tensor(x)
    if h.ndim != 2 or h.shape[1] != params.sizes[0]:
        raise ShapeError(f"mlp_forward: input {h.shape} for layer sizes {params.sizes}")
    act = ACTIVATIONS[params.activation]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add(matmul(h, w), b)
        if i < last:
            h = act(h)
    return h


# ----------------------------------------------------------------------------
# Optimizers
# ----------------------------------------------------------------------------


def _check_grads(params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} for parameter {p.shape}")


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    _check_grads(params, grads)
    for p, g in zip(params, grads):
        p.data -= lr * g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    state: AdamState,
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    _check_grads(params, grads)
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        p.data -= lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)


# ----------------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------------

MODEL_MAGIC = b"MVMODEL1"


def encode_model(params: MlpParams, meta: dict | None = None) -> bytes:
    """Serialize: magic, u32 layer count, u32 dims, f64 blobs, JSON trailer."""
    n_layers = len(params.weights)
    head = MODEL_MAGIC + struct.pack(f"<I{n_layers + 1}I", n_layers, *params.sizes)
    trailer = {"activation": params.activation, **(meta or {})}
    return head + params.state_bytes() + json.dumps(trailer, sort_keys=True).encode()


def decode_model(raw: bytes) -> tuple[MlpParams, dict]:
    if raw[:8] != MODEL_MAGIC:
        raise FormatError(f"bad magic {raw[:8]!r}, expected {MODEL_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError("truncated model header")
    (n_layers,) = struct.unpack_from("<I", raw, 8)
    off = 12 + 4 * (n_layers + 1)
    if len(raw) < off:
        raise FormatError("truncated model header")
    sizes = struct.unpack_from(f"<{n_layers + 1}I", raw, 12)
    n_params = int(np.sum([i * o + o for i, o in zip(sizes[:-1], sizes[1:])]))
    if len(raw) < off + 8 * n_params:
        raise FormatError(
            f"truncated parameters: expected {off + 8 * n_params} bytes, got {len(raw)}"
        )
    blob = np.frombuffer(raw, dtype="<f8", count=n_params, offset=off)
    try:
        meta = json.loads(raw[off + 8 * n_params:].decode() or "{}")
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt JSON trailer: {exc}") from None
    params = MlpParams(tuple(sizes), meta.get("activation", "tanh"))
    pos = 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        params.weights.append(Tensor(blob[pos:pos + i * o].reshape(i, o).copy(), True))
        pos += i * o
        params.biases.append(Tensor(blob[pos:pos + o].reshape(1, o).copy(), True))
        pos += o
    return params, meta

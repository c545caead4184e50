"""Randomized gradient-check cases: every autodiff primitive and every loss.

Each case maps an rng to ``(arrays, build)``; ``build`` takes one Tensor per
array and returns a scalar Tensor.  Non-scalar outputs are contracted with a
fixed random weight so the whole Jacobian is exercised.
"""

import numpy as np

from mvinfo import autodiff as ad
from mvinfo import objectives as ob
from mvinfo.autodiff import MlpParams, Tensor


def _dims(rng, lo=2, hi=5):
    return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))


def _proj(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.sum(ad.hadamard(out, Tensor(w)))


def _unary(op, sample=None):
    def case(rng):
        n, d = _dims(rng)
        x = sample(rng, (n, d)) if sample else rng.normal(size=(n, d))
        w = rng.normal(size=(n, d))
        return [x], lambda a: _proj(op(a), w)
    return case


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 2.0, size=shape)


def case_add(rng):
    n, d = _dims(rng)
    row = bool(rng.integers(2))
    a, b = rng.normal(size=(n, d)), rng.normal(size=(1 if row else n, d))
    w = rng.normal(size=(n, d))
    return [a, b], lambda x, y: _proj(ad.add(x, y), w)


def case_sub(rng):
    n, d = _dims(rng)
    row = bool(rng.integers(2))
    a, b = rng.normal(size=(n, d)), rng.normal(size=(1 if row else n, d))
    w = rng.normal(size=(n, d))
    return [a, b], lambda x, y: _proj(ad.sub(x, y), w)


def case_scale(rng):
    n, d = _dims(rng)
    c = float(rng.normal())
    w = rng.normal(size=(n, d))
    return [rng.normal(size=(n, d))], lambda x: _proj(ad.scale(x, c), w)


def case_hadamard(rng):
    n, d = _dims(rng)
    w = rng.normal(size=(n, d))
    return [rng.normal(size=(n, d)), rng.normal(size=(n, d))], lambda x, y: _proj(ad.hadamard(x, y), w)


def case_matmul(rng):
    n, k = _dims(rng)
    m = int(rng.integers(1, 5))
    w = rng.normal(size=(n, m))
    return [rng.normal(size=(n, k)), rng.normal(size=(k, m))], lambda x, y: _proj(ad.matmul(x, y), w)


def case_transpose(rng):
    n, d = _dims(rng)
    w = rng.normal(size=(d, n))
    return [rng.normal(size=(n, d))], lambda x: _proj(ad.transpose(x), w)


def case_reshape(rng):
    n, d = _dims(rng)
    w = rng.normal(size=(d, n))
    return [rng.normal(size=(n, d))], lambda x: _proj(ad.reshape(x, (d, n)), w)


def case_sum(rng):
    n, d = _dims(rng)
    axis = [None, 0, 1][int(rng.integers(3))]
    shape = {None: (), 0: (1, d), 1: (n, 1)}[axis]
    w = rng.normal(size=shape)
    return [rng.normal(size=(n, d))], lambda x: _proj(ad.sum(x, axis=axis), w)


def case_mean(rng):
    n, d = _dims(rng)
    return [rng.normal(size=(n, d))], lambda x: ad.scale(ad.mean(x), 3.0)


def case_concat_rows(rng):
    d = int(rng.integers(2, 5))
    rows = [int(r) for r in rng.integers(1, 4, size=int(rng.integers(2, 4)))]
    w = rng.normal(size=(sum(rows), d))
    arrays = [rng.normal(size=(r, d)) for r in rows]
    return arrays, lambda *xs: _proj(ad.concat_rows(xs), w)


def case_per_column_standardize(rng):
    n, d = int(rng.integers(3, 7)), int(rng.integers(2, 5))
    w = rng.normal(size=(n, d))
    return [rng.normal(size=(n, d))], lambda x: _proj(ad.per_column_standardize(x), w)


def case_logsumexp_rows(rng):
    n, d = _dims(rng)
    w = rng.normal(size=(n, 1))
    return [rng.normal(size=(n, d))], lambda x: _proj(ad.logsumexp_rows(x), w)


def case_softmax_log_loss(rng):
    n = int(rng.integers(2, 6))
    square = bool(rng.integers(2))
    m = n if square else int(rng.integers(2, 6))
    targets = rng.integers(0, m, size=n)
    if square:
        # the diagonal is excluded, so targets must lie off it
        targets = (np.arange(n) + rng.integers(1, n, size=n)) % n
    return [rng.normal(size=(n, m))], lambda x: ad.softmax_log_loss(x, targets, exclude_diagonal=square)


def case_pairwise_sq_dists(rng):
    n, d = _dims(rng)
    m = int(rng.integers(2, 6))
    w = rng.normal(size=(n, m))
    return [rng.normal(size=(n, d)), rng.normal(size=(m, d))], lambda x, y: _proj(ad.pairwise_sq_dists(x, y), w)


def case_pair_concat(rng):
    n, dx = _dims(rng)
    m, dy = _dims(rng)
    w = rng.normal(size=(n * m, dx + dy))
    return [rng.normal(size=(n, dx)), rng.normal(size=(m, dy))], lambda x, y: _proj(ad.pair_concat(x, y), w)


def case_diag(rng):
    n = int(rng.integers(2, 6))
    w = rng.normal(size=(n, 1))
    return [rng.normal(size=(n, n))], lambda x: _proj(ad.diag(x), w)


def case_mlp_forward(rng):
    sizes = tuple(int(s) for s in rng.integers(2, 5, size=int(rng.integers(2, 4))))
    act = ["tanh", "relu", "identity"][int(rng.integers(3))]
    n = int(rng.integers(2, 5))
    init = ad.mlp_init(sizes, act, int(rng.integers(1000)))
    arrays = [rng.normal(size=(n, sizes[0]))] + [p.data + 0.1 * rng.normal(size=p.shape) for p in init.parameters()]
    w = rng.normal(size=(n, sizes[-1]))

    def build(x, *ps):
        net = MlpParams(sizes, act, list(ps[0::2]), list(ps[1::2]))
        return _proj(ad.mlp_forward(net, x), w)

    return arrays, build


def _pair(rng, lo=2):
    n, d = int(rng.integers(lo, 6)), int(rng.integers(2, 5))
    return n, d, rng.normal(size=(n, d)), rng.normal(size=(n, d))


def case_nt_xent(rng):
    _, _, a, b = _pair(rng)
    tau = float(rng.uniform(0.2, 1.0))
    return [a, b], lambda x, y: ob.nt_xent(x, y, tau)


def case_byol_loss(rng):
    _, _, a, b = _pair(rng)
    # the target is detached, so only the prediction is a differentiable input
    return [a], lambda x: ob.byol_loss(x, Tensor(b))


def case_barlow_twins(rng):
    n, d = int(rng.integers(3, 7)), int(rng.integers(2, 4))
    off = float(rng.uniform(0.0, 0.1))
    return [rng.normal(size=(n, d)), rng.normal(size=(n, d))], lambda x, y: ob.barlow_twins(x, y, off)


def case_cross_entropy(rng):
    n, k = _dims(rng)
    labels = rng.integers(0, k, size=n)
    return [rng.normal(size=(n, k))], lambda x: ob.cross_entropy(x, labels)


def case_rc_loss(rng):
    n, d = _dims(rng)
    dv = int(rng.integers(2, 5))
    dec = ad.mlp_init((d, 3, dv), "tanh", int(rng.integers(1000)))
    v = rng.normal(size=(n, dv))
    arrays = [rng.normal(size=(n, d))] + [p.data + 0.1 * rng.normal(size=p.shape) for p in dec.parameters()]

    def build(z, *ps):
        net = MlpParams(dec.sizes, "tanh", list(ps[0::2]), list(ps[1::2]))
        return ob.rc_loss(v, z, net)

    return arrays, build


def case_reparameterize(rng):
    n, d = _dims(rng)
    seed = int(rng.integers(1000))
    w = rng.normal(size=(n, d))
    return [rng.normal(size=(n, d))], lambda x: _proj(ob.reparameterize(x, 0.1, seed), w)


def case_lbe_loss(rng):
    _, _, a, b = _pair(rng, lo=1)
    rho = float(rng.uniform(0.05, 1.0))
    return [a, b], lambda z, fv: ob.lbe_loss(z, fv, rho)


def case_mibip_loss(rng):
    _, _, a, b = _pair(rng)
    return [a, b], lambda x, y: ob.mibip_loss(x, y)


def _scores(rng):
    n = int(rng.integers(2, 6))
    return [rng.normal(size=(n, n))]


def case_infonce_bound(rng):
    return _scores(rng), ob.infonce_bound


def case_nwj_bound(rng):
    return _scores(rng), ob.nwj_bound


def case_mine_bound(rng):
    return _scores(rng), ob.mine_bound


def case_critic_scores(rng):
    n, dx = _dims(rng)
    dy = int(rng.integers(1, 4))
    critic = ad.mlp_init((dx + dy, 4, 1), "relu", int(rng.integers(1000)))
    arrays = [rng.normal(size=(n, dx)), rng.normal(size=(n, dy))] + [p.data + 0.1 * rng.normal(size=p.shape) for p in critic.parameters()]
    w = rng.normal(size=(n, n))

    def build(x, y, *ps):
        net = MlpParams(critic.sizes, "relu", list(ps[0::2]), list(ps[1::2]))
        return _proj(ob.critic_scores(net, x, y), w)

    return arrays, build


PRIMITIVES = {
    "add": case_add,
    "sub": case_sub,
    "scale": case_scale,
    "hadamard": case_hadamard,
    "matmul": case_matmul,
    "transpose": case_transpose,
    "reshape": case_reshape,
    "relu": _unary(ad.relu, _away_from_zero),
    "tanh": _unary(ad.tanh),
    "identity": _unary(ad.identity),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, lambda rng, s: rng.uniform(0.5, 3.0, size=s)),
    "square": _unary(ad.square),
    "sum": case_sum,
    "mean": case_mean,
    "concat_rows": case_concat_rows,
    "l2_normalize_rows": _unary(ad.l2_normalize_rows),
    "per_column_standardize": case_per_column_standardize,
    "logsumexp_rows": case_logsumexp_rows,
    "softmax_log_loss": case_softmax_log_loss,
    "pairwise_sq_dists": case_pairwise_sq_dists,
    "pair_concat": case_pair_concat,
    "diag": case_diag,
    "mlp_forward": case_mlp_forward,
}


LOSSES = {
    "nt_xent": case_nt_xent,
    "byol_loss": case_byol_loss,
    "barlow_twins": case_barlow_twins,
    "cross_entropy": case_cross_entropy,
    "rc_loss": case_rc_loss,
    "reparameterize": case_reparameterize,
    "lbe_loss": case_lbe_loss,
    "mibip_loss": case_mibip_loss,
    "infonce_bound": case_infonce_bound,
    "nwj_bound": case_nwj_bound,
    "mine_bound": case_mine_bound,
    "critic_scores": case_critic_scores,
}

ALL_CASES = {**PRIMITIVES, **LOSSES}

"""Central finite differences, independent of the tape."""

import numpy as np

from mvinfo import autodiff as ad

STEP = 1e-5


def numeric_grads(fn, arrays, step=STEP):
    """d fn(*arrays) / d arrays by central differences; fn returns a float."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + step
            hi = fn(*arrays)
            a[i] = orig - step
            lo = fn(*arrays)
            a[i] = orig
            g[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def tape_grads(build, arrays):
    leaves = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        loss = build(*leaves)
    return ad.backward(tape, loss, leaves)


def relative_error(a, b) -> float:
    """Norm-wise relative error, robust to gradients that vanish entrywise."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check(build, arrays, step=STEP) -> float:
    """Max relative error between tape and finite-difference gradients."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    analytic = tape_grads(build, arrays)

    def value(*xs):
        return build(*[ad.Tensor(x) for x in xs]).item()

    numeric = numeric_grads(value, arrays, step)
    return max(relative_error(g, n) for g, n in zip(analytic, numeric))

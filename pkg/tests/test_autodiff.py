import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import fd
from gradcases import ALL_CASES
from mvinfo import autodiff as ad
from mvinfo.autodiff import Tensor
from mvinfo.errors import ContractError, FormatError, ShapeError

N_SHAPES = 50
FD_TOL = 1e-5


@pytest.mark.parametrize("name", sorted(ALL_CASES))
def test_finite_difference(name):
    worst = 0.0
    for i in range(N_SHAPES):
        arrays, build = ALL_CASES[name](np.random.default_rng([i, 7]))
        worst = max(worst, fd.check(build, arrays))
    assert worst <= FD_TOL


def grads_of(build, *arrays):
    return fd.tape_grads(build, [np.asarray(a, dtype=np.float64) for a in arrays])


def test_matmul_gradient_example():
    a = np.arange(6.0).reshape(2, 3)
    b = np.array([[1.0], [-1.0], [2.0]])
    ga, gb = grads_of(lambda x, y: ad.sum(ad.matmul(x, y)), a, b)
    np.testing.assert_array_equal(ga, np.tile(b.T, (2, 1)))
    np.testing.assert_array_equal(gb, a.sum(axis=0, keepdims=True).T)


def test_relu_negative_input_has_zero_grad():
    (g,) = grads_of(lambda x: ad.sum(ad.relu(x)), [[-1.0, -0.5, 2.0]])
    np.testing.assert_array_equal(g, [[0.0, 0.0, 1.0]])


def test_l2_normalize_one_hot():
    x = np.array([[0.0, 3.0, 0.0]])
    assert ad.l2_normalize_rows(Tensor(x)).data.tolist() == [[0.0, 1.0, 0.0]]
    # moving along the row direction leaves the normalized row unchanged
    (g,) = grads_of(lambda t: ad.sum(ad.hadamard(ad.l2_normalize_rows(t), Tensor(x / 3))), x)
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_square_gradient():
    (g,) = grads_of(lambda x: ad.sum(ad.square(x)), [[3.0]])
    assert g[0, 0] == 6.0


def test_tanh_sum_at_zero():
    (g,) = grads_of(lambda x: ad.sum(ad.tanh(x)), np.zeros((2, 3)))
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones((2, 2)), True)
    with ad.Tape() as tape:
        y = ad.square(x)
    with pytest.raises(ContractError):
        ad.backward(tape, y, [x])


def test_tape_single_use():
    x = Tensor(np.ones((1, 1)), True)
    with ad.Tape() as tape:
        y = ad.sum(ad.square(x))
    ad.backward(tape, y, [x])
    with pytest.raises(ContractError):
        ad.backward(tape, y, [x])


def test_unused_parameter_gets_zero_grad():
    x, unused = Tensor(np.ones((1, 2)), True), Tensor(np.ones((3, 3)), True)
    with ad.Tape() as tape:
        y = ad.sum(x)
    _, g = ad.backward(tape, y, [x, unused])
    np.testing.assert_array_equal(g, np.zeros((3, 3)))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.hadamard(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_no_tape_records_nothing():
    x = Tensor(np.ones((2, 2)), True)
    y = ad.square(x)
    assert y.parents == ()


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=5), elements=st.floats(-3, 3)))
def test_sum_of_squares_grad_is_twice_input(x):
    (g,) = grads_of(lambda t: ad.sum(ad.square(t)), x)
    np.testing.assert_allclose(g, 2 * x, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_logsumexp_matches_numpy(x):
    out = ad.logsumexp_rows(Tensor(x)).data[:, 0]
    np.testing.assert_allclose(out, np.log(np.exp(x).sum(axis=1)), rtol=1e-12)


# -- MLP ---------------------------------------------------------------------------


def pure_python_mlp(sizes, weights, biases, x, act):
    """List-based forward pass, written without numpy."""
    h = [list(row) for row in x]
    for layer, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for row in h:
            z = [sum(row[i] * w[i][j] for i in range(len(row))) + b[0][j] for j in range(len(b[0]))]
            if layer < len(weights) - 1:
                z = [act(v) for v in z]
            out.append(z)
        h = out
    return h


def test_mlp_forward_matches_independent_reimplementation():
    net = ad.mlp_init((3, 4, 2), "tanh", seed=5)
    x = [[0.5, -1.0, 2.0], [0.0, 0.25, -0.75]]
    expected = pure_python_mlp(
        net.sizes, [w.data.tolist() for w in net.weights], [b.data.tolist() for b in net.biases], x, math.tanh
    )
    np.testing.assert_allclose(ad.mlp_forward(net, np.array(x)).data, expected, rtol=1e-13, atol=1e-15)


def test_mlp_init_is_seeded():
    assert ad.mlp_init((4, 3, 2), seed=1).digest() == ad.mlp_init((4, 3, 2), seed=1).digest()
    assert ad.mlp_init((4, 3, 2), seed=1).digest() != ad.mlp_init((4, 3, 2), seed=2).digest()


def test_mlp_input_shape_checked():
    with pytest.raises(ShapeError):
        ad.mlp_forward(ad.mlp_init((3, 2)), np.ones((2, 4)))
    with pytest.raises(ShapeError):
        ad.mlp_init((3,))


def test_model_round_trip():
    net = ad.mlp_init((5, 7, 3), "relu", seed=9)
    raw = ad.encode_model(net, {"note": "x"})
    back, meta = ad.decode_model(raw)
    assert back.sizes == (5, 7, 3) and back.activation == "relu"
    assert back.digest() == net.digest()
    assert meta["note"] == "x"
    with pytest.raises(FormatError):
        ad.decode_model(raw[:40])
    with pytest.raises(FormatError):
        ad.decode_model(b"NOTMODEL" + raw[8:])


# -- optimizers ----------------------------------------------------------------------


def test_sgd_step_example():
    x = Tensor(np.array([[1.0]]), True)
    with ad.Tape() as tape:
        loss = ad.sum(ad.square(x))
    ad.sgd_step([x], ad.backward(tape, loss, [x]), lr=0.1)
    assert x.data[0, 0] == pytest.approx(0.8, abs=1e-15)


def test_adam_first_step_is_lr():
    x = Tensor(np.array([[1.0, -2.0]]), True)
    state = ad.AdamState.for_params([x])
    ad.adam_step(state, [x], [np.array([[0.3, -5.0]])], lr=0.01)
    np.testing.assert_allclose(x.data, [[0.99, -1.99]], atol=1e-9)


def test_sgd_on_convex_quadratic_is_monotone():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 3))
    b = rng.normal(size=(6, 1))
    w = Tensor(np.zeros((3, 1)), True)
    losses = []
    for _ in range(200):
        with ad.Tape() as tape:
            loss = ad.mean(ad.square(ad.sub(ad.matmul(Tensor(a), w), Tensor(b))))
        losses.append(loss.item())
        ad.sgd_step([w], ad.backward(tape, loss, [w]), lr=0.05)
    assert all(l2 <= l1 + 1e-15 for l1, l2 in zip(losses, losses[1:]))


def test_optimizer_shape_check():
    x = Tensor(np.ones((2, 2)), True)
    with pytest.raises(ShapeError):
        ad.sgd_step([x], [np.ones((2, 3))], 0.1)

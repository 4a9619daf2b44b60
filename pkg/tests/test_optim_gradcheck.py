import numpy as np
import pytest

from dpc.blocks import MLP
from dpc.errors import ContractError, DimensionError
from dpc.gradcheck import grad_check
from dpc.optim import Adam
from dpc.tensor import Graph, Parameter, gelu, reduce_sum_squares

# two Adam steps, lr 1e-3, constant g = 2 from theta = 1, unrolled by hand
TWO_STEP_THETA = 0.99800000001


def test_zero_gradient_leaves_parameters():
    p = Parameter("p", [[1.5, -2.0]])
    opt = Adam([p])
    for _ in range(5):
        opt.step({"p": np.zeros((1, 2))})
    assert p.value.tolist() == [[1.5, -2.0]]


def test_first_step_closed_form():
    p = Parameter("p", [[0.0]])
    Adam([p], lr=0.001).step({"p": np.array([[1.0]])})
    assert abs(p.value[0, 0] + 0.001) < 1e-9


def test_two_steps_match_recurrence():
    p = Parameter("p", [[1.0]])
    opt = Adam([p], lr=0.001)
    for _ in range(2):
        opt.step({"p": np.array([[2.0]])})
    assert abs(p.value[0, 0] - TWO_STEP_THETA) < 1e-12


def test_recurrence_against_independent_loop():
    rng = np.random.default_rng(3)
    p = Parameter("p", rng.normal(size=(2, 2)))
    theta = p.value.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    opt = Adam([p], lr=0.01)
    for k in range(1, 8):
        g = rng.normal(size=(2, 2))
        opt.step({"p": g})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    np.testing.assert_allclose(p.value, theta, rtol=0, atol=1e-14)


def test_gradient_shape_mismatch():
    p = Parameter("p", [[0.0]])
    with pytest.raises(DimensionError):
        Adam([p]).step({"p": np.zeros((2, 1))})


def test_frozen_parameter_ignored():
    p = Parameter("p", [[1.0]], trainable=False)
    Adam([p]).step({"p": np.array([[1.0]])})
    assert p.value[0, 0] == 1.0


def test_gradcheck_quadratic():
    w = Parameter("w", [[3.0]])
    rep = grad_check(lambda g: reduce_sum_squares(g.param(w)), [w], step=1e-6, tol=1e-5)
    assert rep.passed and rep.checked == 1


def test_gradcheck_zero_tol_fails():
    w = Parameter("w", [[0.7, -0.3]])
    rep = grad_check(lambda g: reduce_sum_squares(gelu(g.param(w))), [w], tol=0.0)
    assert not rep.passed


def test_gradcheck_mlp():
    net = MLP("net", [4, 6, 6, 2], "gelu", np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(4, 3))
    rep = grad_check(lambda g: reduce_sum_squares(net(g.constant(x))), net.parameters(), tol=1e-5)
    assert rep.passed, rep.errors


def test_gradcheck_subsample_and_determinism_contract():
    net = MLP("net", [3, 5, 1], "gelu", np.random.default_rng(0))
    x = np.ones((3, 2))
    rep = grad_check(lambda g: reduce_sum_squares(net(g.constant(x))), net.parameters(),
                     max_entries=7)
    assert rep.checked == 7
    state = {"n": 0}

    def flaky(g: Graph):
        state["n"] += 1
        return g.constant([[float(state["n"])]])

    with pytest.raises(ContractError):
        grad_check(flaky, [])

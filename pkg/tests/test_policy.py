import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpc.dynamics import NeuralSSM, SSMConfig
from dpc.errors import ConfigError, DimensionError
from dpc.gradcheck import grad_check
from dpc.penalties import penalty_lower, penalty_upper
from dpc.plant import ControlScaling, Scenarios
from dpc.policy import (
    Bounds,
    ClosedLoopModel,
    FeatureLayout,
    LossWeights,
    PolicyConfig,
    PolicyNet,
    assemble_features,
    closed_loop_rollout,
    economic_loss,
    policy_apply_receding,
    scenario_bounds,
    scenario_features,
    train_policy,
)
from dpc.tensor import Graph, slice_rows

N_Y, N_U, N_D = 2, 3, 1
SCALING = ControlScaling(np.array([30.0, 0.0, 0.0]), np.array([60.0, 0.05, 0.05]))


def _scenarios(B, N, n_past=3, seed=0):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(18, 20, size=(N * N_Y, B))
    return Scenarios(
        Y_p=rng.uniform(17, 23, size=(n_past * N_Y, B)),
        Y_lo=lo,
        Y_hi=lo + 3.0,
        U_lo=np.tile(SCALING.u_min, N)[:, None] * np.ones((1, B)),
        U_hi=np.tile(SCALING.u_max, N)[:, None] * np.ones((1, B)),
        D_f=rng.normal(5, 3, size=(N * N_D, B)),
        u_prev=np.zeros((N_U, B)),
    )


def _closed_loop(N=4, n_past=3, hidden=(8, 8), seed=0):
    ssm = NeuralSSM(N_Y, N_U, N_D, SSMConfig(n_x=4, n_past=n_past, observer_hidden=[8],
                                             input_hidden=[6], dist_hidden=[4]), seed=seed)
    ssm.set_normalization([20.0, 20.0], [2.0, 2.0], [5.0], [3.0])
    layout = FeatureLayout.build(["y_past", "y_lower", "d"], N_Y, N_D, n_past, N)
    pol = PolicyNet(layout, N_U, N, list(hidden), seed=seed + 1)
    pol.fit_normalization(scenario_features(_scenarios(64, N, n_past, seed=99), layout))
    return ClosedLoopModel(pol, ssm)


# -- penalties -----------------------------------------------------------------

def test_penalty_examples():
    g = Graph()
    assert penalty_upper(g.constant([[2.0]]), g.constant([[1.5]])).item() == 0.5
    assert penalty_lower(g.constant([[1.0]]), g.constant([[1.0]])).item() == 0.0
    assert penalty_upper(g.constant([[20.0], [26.0]]), g.constant([[25.0], [25.0]])).data == [0.0, 1.0]


def test_penalty_smooth_variants_and_errors():
    g = Graph()
    x = g.constant([[3.0]])
    assert penalty_upper(x, 1.0, "softplus").item() == pytest.approx(np.log1p(np.exp(2.0)))
    assert penalty_lower(x, 1.0, "gelu").item() < 0.0  # gelu dips below zero on the feasible side
    with pytest.raises(ConfigError):
        penalty_upper(x, 1.0, "elu")
    with pytest.raises(DimensionError):
        penalty_upper(g.constant(np.ones((3, 2))), g.constant(np.ones((2, 1))))


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100))
def test_relu_penalty_zero_iff_feasible(x, ub):
    g = Graph()
    p = penalty_upper(g.constant([[x]]), g.constant([[ub]])).item()
    assert (p == 0.0) == (x <= ub)
    assert p >= 0.0


# -- economic loss -------------------------------------------------------------

def _bounds(n, y_lo=-1e3, y_hi=1e3, u_lo=-10.0, u_hi=10.0, rows_y=1, rows_u=1):
    return Bounds(np.full((rows_y, n), y_lo), np.full((rows_y, n), y_hi),
                  np.full((rows_u, n), u_lo), np.full((rows_u, n), u_hi))


def test_economic_loss_zero_point():
    g = Graph()
    loss = economic_loss(g.constant([[0.0]]), g.constant([[21.0]]), _bounds(1, 20, 22), LossWeights(),
                         np.zeros((1, 1)), 1)
    assert loss.item() == 0.0


def test_economic_loss_hand_values():
    g = Graph()
    w = LossWeights(Q_umin=1.0, Q_du=1.0, Q_y=10.0, Q_u=1.0)
    base = economic_loss(g.constant([[2.0]]), g.constant([[24.0]]), _bounds(1, 20, 25), w, 0.0, 1)
    assert base.item() == 8.0
    viol = economic_loss(g.constant([[2.0]]), g.constant([[26.0]]), _bounds(1, 20, 25), w, 0.0, 1)
    assert viol.item() == 18.0


def test_economic_loss_control_bound_and_averaging():
    g = Graph()
    w = LossWeights(Q_umin=0.0, Q_du=0.0, Q_y=0.0, Q_u=2.0)
    U = g.constant([[1.5, 0.5], [0.5, -0.5]])  # n_u=1, N=2, two scenarios
    Y = g.constant(np.full((2, 2), 21.0))
    b = _bounds(2, 20, 22, 0.0, 1.0, rows_y=2, rows_u=2)
    # violations 0.5 and 0.5 squared, weight 2, divided by n*N = 4
    assert economic_loss(U, Y, b, w, 0.0, 1).item() == 0.25


def test_bounds_reject_misordered():
    with pytest.raises(ConfigError):
        Bounds(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))


def test_scenario_bounds_margin_and_normalization():
    s = _scenarios(3, 2)
    b = scenario_bounds(s, SCALING, margin=0.3)
    np.testing.assert_allclose(b.Y_lo, s.Y_lo + 0.3)
    np.testing.assert_allclose(b.Y_hi, s.Y_hi - 0.3)
    assert np.allclose(b.U_lo, 0.0) and np.allclose(b.U_hi, 1.0)
    tight = scenario_bounds(s, SCALING, margin=10.0)
    np.testing.assert_allclose(tight.Y_lo, tight.Y_hi)


# -- features ------------------------------------------------------------------

def test_feature_dimensioning():
    ref = FeatureLayout.build(["y_past", "y_lower", "d"], 6, 1, 32, 32)
    assert ref.size == 416
    assert [r for _, r in ref.segments] == [192, 192, 32]
    assert FeatureLayout.build(["y_past", "y_lower", "d"], 3, 1, 16, 16).size == 112


def test_single_segment_is_identity():
    layout = FeatureLayout((("d", 4),))
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(assemble_features({"d": x}, layout), x)


def test_permuted_layout_permutes_blocks():
    rng = np.random.default_rng(1)
    parts = {"y_past": rng.normal(size=(6, 2)), "y_lower": rng.normal(size=(4, 2)),
             "d": rng.normal(size=(2, 2))}
    a = assemble_features(parts, FeatureLayout.build(["y_past", "y_lower", "d"], 2, 1, 3, 2))
    b = assemble_features(parts, FeatureLayout.build(["d", "y_past", "y_lower"], 2, 1, 3, 2))
    assert np.array_equal(b, np.vstack([a[10:12], a[0:6], a[6:10]]))


def test_feature_errors():
    layout = FeatureLayout.build(["y_past", "d"], 2, 1, 3, 2)
    with pytest.raises(DimensionError):
        assemble_features({"y_past": np.ones((6, 1))}, layout)
    with pytest.raises(DimensionError):
        assemble_features({"y_past": np.ones((5, 1)), "d": np.ones((2, 1))}, layout)
    with pytest.raises(ConfigError):
        PolicyConfig(features=["y_past", "humidity"]).validate()


# -- closed loop ---------------------------------------------------------------

def test_constant_policy_rollout():
    cl = _closed_loop(N=3)
    for p in cl.policy.parameters():
        p.value[...] = 0.0
    b_L = np.linspace(0.1, 0.9, 9)[:, None]
    cl.policy.net.layers[-1].b.value[...] = b_L
    s = _scenarios(4, 3)
    U_f, Y_f = closed_loop_rollout(cl, s)
    assert np.array_equal(U_f.value, np.tile(b_L, (1, 4)))
    expected = cl.model.predict(s.Y_p, np.tile(b_L, (1, 4)), s.D_f)
    assert np.array_equal(Y_f.value, expected)


def test_full_loop_gradient_two_zones():
    cl = _closed_loop(N=4)
    s = _scenarios(6, 4, seed=3)
    params = cl.policy.parameters() + cl.model.parameters()

    def loss(g):
        return cl.loss(s, SCALING, LossWeights(), g, "softplus", 0.2)

    rep = grad_check(loss, params, step=1e-5, tol=1e-4, max_entries=50, seed=1)
    assert rep.passed, rep.errors


def test_training_moves_only_the_policy():
    cl = _closed_loop(N=3)
    ssm_before = cl.model.snapshot()
    pol_before = cl.policy.snapshot()
    s = _scenarios(32, 3, seed=4)
    g = Graph()
    grads = g.backward(cl.loss(s, SCALING, LossWeights(), g))
    assert any(np.abs(grads[p.name]).max() > 0 for p in cl.policy.parameters())
    train_policy(cl, s, s, SCALING, LossWeights(), PolicyConfig(updates=3, batch_size=8, eval_every=1))
    assert all(np.array_equal(v, cl.model.snapshot()[k]) for k, v in ssm_before.items())
    assert any(not np.array_equal(v, cl.policy.snapshot()[k]) for k, v in pol_before.items())


def test_zero_updates_returns_initial_policy():
    cl = _closed_loop(N=3)
    before = cl.policy.snapshot()
    s = _scenarios(8, 3)
    hist = train_policy(cl, s, s, SCALING, LossWeights(), PolicyConfig(updates=0))
    assert hist.updates == [0]
    assert all(np.array_equal(v, cl.policy.snapshot()[k]) for k, v in before.items())


def test_energy_only_loss_pulls_controls_to_zero():
    cl = _closed_loop(N=3, seed=5)
    for p in cl.policy.parameters():
        p.value[...] *= 0.1
    cl.policy.net.layers[-1].b.value[...] = 0.8
    s = _scenarios(64, 3, seed=6)
    w = LossWeights(Q_umin=1.0, Q_du=0.0, Q_y=0.0, Q_u=0.0)
    norm0 = np.linalg.norm(closed_loop_rollout(cl, s)[0].value)
    hist = train_policy(cl, s, s, SCALING, w,
                        PolicyConfig(updates=60, batch_size=32, lr=0.01, eval_every=10))
    norm1 = np.linalg.norm(closed_loop_rollout(cl, s)[0].value)
    assert hist.dev_loss[-1] < 0.1 * hist.dev_loss[0]
    assert norm1 < 0.3 * norm0
    assert all(b <= a for a, b in zip(hist.best_dev, hist.best_dev[1:]))


def test_receding_horizon_application():
    cl = _closed_loop(N=1)
    s = _scenarios(5, 1)
    full = cl.policy.trajectory(s).value
    assert np.array_equal(policy_apply_receding(cl.policy, s), full)
    cl4 = _closed_loop(N=4)
    s4 = _scenarios(5, 4)
    first = policy_apply_receding(cl4.policy, s4)
    assert np.array_equal(first, slice_rows(cl4.policy.trajectory(s4), 0, N_U).value)
    assert np.array_equal(first, policy_apply_receding(cl4.policy, s4))


def test_closed_loop_dimension_checks():
    cl = _closed_loop(N=3)
    with pytest.raises(DimensionError):
        cl.rollout(_scenarios(2, 4), Graph())
    ssm = NeuralSSM(N_Y, N_U, N_D, SSMConfig(n_x=4, n_past=5))
    with pytest.raises(DimensionError):
        ClosedLoopModel(cl.policy, ssm)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpc.errors import ContractError, DimensionError, NonFiniteError, RowIndexError
from dpc.gradcheck import grad_check
from dpc.tensor import (
    Graph,
    Parameter,
    add,
    concat_rows,
    gelu,
    hadamard,
    matmul,
    reduce_mean,
    reduce_sum,
    reduce_sum_squares,
    relu,
    row_softmax,
    scale,
    sigmoid,
    slice_rows,
    softplus,
    split_rows,
    sub,
)

# exact x * Phi(x) at x = 1 from math.erf, frozen
GELU_ONE_EXACT = 0.8413447460685429


def test_matmul_identity():
    g = Graph()
    out = matmul(g.constant(np.eye(2)), g.constant([[3.0], [4.0]]))
    assert out.data == [3.0, 4.0]


def test_matmul_direct():
    g = Graph()
    out = g.constant([[1.0, 2.0], [3.0, 4.0]]) @ g.constant([[1.0], [1.0]])
    assert out.numpy().tolist() == [[3.0], [7.0]]


def test_matmul_shape_mismatch():
    g = Graph()
    with pytest.raises(DimensionError):
        matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 1))))


def test_add_sub_identities():
    g = Graph()
    a = g.constant([[1.0, 2.0]])
    assert add(a, g.constant([[0.0, 0.0]])).data == [1.0, 2.0]
    assert sub(a, a).data == [0.0, 0.0]


def test_column_broadcast():
    g = Graph()
    x = g.constant(np.arange(6.0).reshape(2, 3))
    out = add(x, g.constant([[10.0], [20.0]]))
    assert out.numpy().tolist() == [[10, 11, 12], [23, 24, 25]]
    with pytest.raises(DimensionError):
        add(x, g.constant(np.ones((3, 1))))


def test_concat_and_slice():
    g = Graph()
    assert concat_rows([g.constant([[1.0]]), g.constant([[2.0]])]).data == [1.0, 2.0]
    t = g.constant([[1.0], [2.0], [3.0]])
    assert concat_rows([t]).data == t.data
    assert slice_rows(t, 0, 1).data == [1.0]
    assert slice_rows(t, 0, 3).data == t.data
    with pytest.raises(RowIndexError):
        slice_rows(t, 2, 2)


def test_slice_gradient_is_indicator():
    w = Parameter("w", np.arange(5.0).reshape(5, 1))
    g = Graph()
    grads = g.backward(reduce_sum(slice_rows(g.param(w), 1, 3)))
    assert grads["w"].ravel().tolist() == [0.0, 1.0, 1.0, 1.0, 0.0]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-1e6, 1e6)),
       st.integers(1, 5))
def test_split_concat_roundtrip(values, cut):
    g = Graph()
    t = g.constant(values)
    parts = split_rows(t, [cut, 6 - cut])
    assert np.array_equal(concat_rows(parts).value, values)


def test_activation_values():
    g = Graph()
    assert relu(g.constant([[-1.0], [2.0]])).data == [0.0, 2.0]
    assert gelu(g.constant([[0.0]])).item() == 0.0
    assert abs(gelu(g.constant([[1.0]])).item() - GELU_ONE_EXACT) < 1e-4
    assert sigmoid(g.constant([[0.0]])).item() == 0.5
    assert softplus(g.constant([[0.0]])).item() == pytest.approx(math.log(2.0), abs=1e-15)


def test_sigmoid_softplus_extremes_are_finite():
    g = Graph()
    x = g.constant([[-800.0], [800.0]])
    assert sigmoid(x).data == [0.0, 1.0]
    sp = softplus(x).data
    assert sp[0] == 0.0 and sp[1] == 800.0


def test_nonfinite_input_rejected():
    g = Graph()
    with pytest.raises(NonFiniteError):
        relu(g.constant([[float("nan")]]))


def test_reductions():
    g = Graph()
    assert reduce_sum_squares(g.constant([[3.0, 4.0]])).item() == 25.0
    assert reduce_mean(g.constant([[2.0, 2.0], [2.0, 2.0]])).item() == 2.0


def test_sum_squares_gradient():
    w = Parameter("w", [[1.0, -2.0]])
    g = Graph()
    assert g.backward(reduce_sum_squares(g.param(w)))["w"].tolist() == [[2.0, -4.0]]


def test_backward_scalar_and_unused_param():
    w = Parameter("w", [[1.0]])
    unused = Parameter("u", np.ones((2, 3)))
    g = Graph()
    g.register([unused])
    grads = g.backward(reduce_sum_squares(g.param(w)))
    assert grads["w"].tolist() == [[2.0]]
    assert grads["u"].shape == (2, 3) and not grads["u"].any()


def test_backward_contracts():
    g = Graph()
    with pytest.raises(ContractError):
        g.backward(g.constant(np.ones((2, 1))))
    with pytest.raises(ContractError):
        Graph().backward(reduce_sum(g.constant([[1.0]])))


def test_parameter_leaf_is_shared():
    w = Parameter("w", [[3.0]])
    g = Graph()
    loss = reduce_sum(hadamard(g.param(w), g.param(w)))
    assert g.backward(loss)["w"].tolist() == [[6.0]]
    with pytest.raises(ContractError):
        g.param(Parameter("w", [[1.0]]))


def test_operator_sugar():
    g = Graph()
    a, b = g.constant([[2.0]]), g.constant([[3.0]])
    assert (a * b).item() == 6.0
    assert (2.0 * a).item() == 4.0
    assert (-a).item() == -2.0
    assert (1.0 - a).item() == -1.0


# -- finite-difference checks of every op ------------------------------------

def _params(seed, *shapes):
    rng = np.random.default_rng(seed)
    return [Parameter(f"p{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]


OPS = {
    "matmul": (lambda g, a, b: reduce_sum(matmul(a, b)), [(3, 2), (2, 4)]),
    "add": (lambda g, a, b: reduce_sum_squares(add(a, b)), [(4, 3), (4, 1)]),
    "sub": (lambda g, a, b: reduce_sum_squares(sub(a, b)), [(4, 3), (1, 1)]),
    "hadamard": (lambda g, a, b: reduce_sum_squares(hadamard(a, b)), [(4, 3), (4, 3)]),
    "scale": (lambda g, a: reduce_sum_squares(scale(a, -1.7)), [(3, 3)]),
    "concat": (lambda g, a, b: reduce_sum_squares(concat_rows([a, b])), [(2, 3), (1, 3)]),
    "slice": (lambda g, a: reduce_sum_squares(slice_rows(a, 1, 2)), [(4, 2)]),
    "gelu": (lambda g, a: reduce_sum_squares(gelu(a)), [(3, 4)]),
    "sigmoid": (lambda g, a: reduce_sum_squares(sigmoid(a)), [(3, 4)]),
    "softplus": (lambda g, a: reduce_sum_squares(softplus(a)), [(3, 4)]),
    "relu": (lambda g, a: reduce_sum_squares(relu(a)), [(3, 4)]),
    "row_softmax": (lambda g, a, b: reduce_sum(hadamard(row_softmax(a), b)), [(3, 4), (3, 4)]),
    "mean": (lambda g, a: reduce_mean(hadamard(a, a)), [(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    fn, shapes = OPS[name]
    params = _params(len(name), *shapes)
    rep = grad_check(lambda g: fn(g, *(g.param(p) for p in params)), params, step=1e-6, tol=1e-5)
    assert rep.passed, rep.errors


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gelu_chain_gradient_property(seed):
    params = _params(seed, (3, 2), (2, 3))
    rep = grad_check(lambda g: reduce_sum_squares(gelu(matmul(g.param(params[0]),
                                                              g.param(params[1])))),
                     params, tol=1e-5)
    assert rep.passed, rep.errors

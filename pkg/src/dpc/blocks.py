"""Parametrized maps shared by the state-space model and the control law."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    ACTIVATIONS,
    Parameter,
    Tensor,
    hadamard,
    matmul,
    row_softmax,
    scale,
    sigmoid,
    add,
)

INIT_SCHEMES = ("uniform-fan-in", "zeros")


def init_params(shape: tuple[int, int], scheme: str = "uniform-fan-in", seed=0,
                fan_in: int | None = None) -> np.ndarray:
    """Initial values for a weight matrix.

    ``uniform-fan-in`` draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in
    defaults to ``shape[1]``. ``seed`` may be an int or a ``np.random.Generator``.
    """
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme != "uniform-fan-in":
        raise ConfigError(f"unknown init scheme {scheme!r}", key="init")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(fan_in or shape[1])
    return rng.uniform(-bound, bound, size=shape)


class LinearMap:
    """``W x + b`` with the bias broadcast across batch columns."""

    def __init__(self, name: str, n_in: int, n_out: int, rng=None, bias: bool = True,
                 scheme: str = "uniform-fan-in"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.W = Parameter(f"{name}.W", init_params((n_out, n_in), scheme, rng))
        b = init_params((n_out, 1), scheme, rng, fan_in=n_in) if bias else np.zeros((n_out, 1))
        self.b = Parameter(f"{name}.b", b, trainable=bias)

    def __call__(self, x: Tensor) -> Tensor:
        if x.rows != self.n_in:
            raise DimensionError(f"{self.W.name}: expected {self.n_in} input rows, got {x.rows}")
        g = x.graph
        y = matmul(g.param(self.W), x)
        if self.b.trainable:
            y = add(y, g.param(self.b))
        return y

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b] if self.b.trainable else [self.W]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class MLP:
    """Hidden layers ``h = act(W h + b)`` followed by an affine output layer."""

    def __init__(self, name: str, sizes: Sequence[int], activation: str = "gelu", rng=None,
                 scheme: str = "uniform-fan-in"):
        if len(sizes) < 2:
            raise ConfigError("an MLP needs at least input and output sizes", key=name)
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}", key=name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.sizes = list(sizes)
        self.activation = activation
        self.layers = [
            LinearMap(f"{name}.{i}", sizes[i], sizes[i + 1], rng, scheme=scheme)
            for i in range(len(sizes) - 1)
        ]

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = x
        for layer in self.layers[:-1]:
            h = act(layer(h))
        return self.layers[-1](h)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def param_count(self) -> int:
        return sum(layer.n_out * layer.n_in + layer.n_out for layer in self.layers)


def mlp_forward(net: MLP, xi: Tensor) -> Tensor:
    return net(xi)


def mlp_param_count(net: MLP) -> int:
    return net.param_count()


class StableDynamicsMap:
    """Linear state map whose matrix is stable by construction.

    Row ``i`` of ``A`` is ``lam_i * softmax(M_i)`` with
    ``lam_i = lam_min + (lam_max - lam_min) * sigmoid(s_i)``. Entries are
    positive and each row sums to ``lam_i``, so the spectral radius is bounded
    by the largest row sum, which is below ``lam_max``.
    """

    def __init__(self, name: str, n: int, lam_min: float = 0.8, lam_max: float = 0.99, rng=None,
                 scheme: str = "uniform-fan-in"):
        if not (0.0 <= lam_min < lam_max < 1.0):
            raise ConfigError(
                f"need 0 <= lam_min < lam_max < 1, got [{lam_min}, {lam_max}]", key=name
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.n = n
        self.lam_min, self.lam_max = float(lam_min), float(lam_max)
        self.M = Parameter(f"{name}.M", init_params((n, n), scheme, rng))
        self.s = Parameter(f"{name}.s", np.zeros((n, 1)))

    def matrix(self, graph) -> Tensor:
        """``A`` recorded on ``graph`` (differentiable in ``M`` and ``s``)."""
        lam = add(scale(sigmoid(graph.param(self.s)), self.lam_max - self.lam_min), self.lam_min)
        return hadamard(row_softmax(graph.param(self.M)), lam)

    def materialize(self) -> np.ndarray:
        z = np.exp(self.M.value - self.M.value.max(axis=1, keepdims=True))
        sm = z / z.sum(axis=1, keepdims=True)
        lam = self.lam_min + (self.lam_max - self.lam_min) * 0.5 * (1.0 + np.tanh(0.5 * self.s.value))
        return sm * lam

    def __call__(self, x: Tensor) -> Tensor:
        if x.rows != self.n:
            raise DimensionError(f"{self.name}: expected {self.n} rows, got {x.rows}")
        return matmul(self.matrix(x.graph), x)

    def parameters(self) -> list[Parameter]:
        return [self.M, self.s]

    def param_count(self) -> int:
        return self.n * self.n + self.n


def stable_a_materialize(m: StableDynamicsMap) -> np.ndarray:
    return m.materialize()


def spectral_radius(A, iters: int = 10000, tol: float = 1e-13, seed: int = 0) -> tuple[float, bool]:
    """Power-iteration estimate of the largest eigenvalue magnitude.

    Iterates ``x <- A x / ||A x||_inf`` from a positive start vector and
    returns ``(estimate, converged)``. For nonnegative ``A`` the estimate never
    exceeds the largest row sum.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"spectral_radius needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    x = np.random.default_rng(seed).uniform(0.5, 1.5, size=n)
    x /= np.abs(x).max()
    rho = 0.0
    for _ in range(iters):
        y = A @ x
        new = float(np.abs(y).max())
        if new == 0.0:
            return 0.0, True
        x = y / new
        if abs(new - rho) <= tol * max(1.0, new):
            return new, True
        rho = new
    return rho, False


def iter_parameters(*blocks) -> Iterator[Parameter]:
    for b in blocks:
        yield from b.parameters()

"""Inequality-constraint penalties ``max(0, x - upper)`` and ``max(0, lower - x)``.

The ``max(0, .)`` can be swapped for a smooth activation (gelu, softplus);
relu is the exact penalty and is zero on the feasible set.
"""

from __future__ import annotations

from .errors import ConfigError, DimensionError
from .tensor import ACTIVATIONS, Tensor, _graph_of, _lift, sub

PENALTY_ACTIVATIONS = ("relu", "gelu", "softplus")


def _activation(name: str):
    if name not in PENALTY_ACTIVATIONS:
        raise ConfigError(f"unknown penalty activation {name!r}", key="loss.penalty")
    return ACTIVATIONS[name]


def _check(x: Tensor, bound: Tensor) -> None:
    if x.shape != bound.shape and bound.shape != (x.rows, 1) and bound.shape != (1, 1):
        raise DimensionError(f"penalty: value {x.shape} vs bound {bound.shape}")


def penalty_upper(x, upper, activation: str = "relu") -> Tensor:
    graph = _graph_of(x, upper)
    x, upper = _lift(x, graph), _lift(upper, graph)
    _check(x, upper)
    return _activation(activation)(sub(x, upper))


def penalty_lower(x, lower, activation: str = "relu") -> Tensor:
    graph = _graph_of(x, lower)
    x, lower = _lift(x, graph), _lift(lower, graph)
    _check(x, lower)
    return _activation(activation)(sub(lower, x))

"""Finite-difference gradient checking for graph-building functions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Graph, Parameter, Tensor


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    checked: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def _evaluate(f: Callable[[Graph], Tensor]) -> float:
    g = Graph()
    return f(g).item()


def grad_check(
    f: Callable[[Graph], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-6,
    tol: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``Graph.backward`` with central differences.

    ``f`` receives a fresh graph, reads the parameters through ``graph.param``
    and returns a scalar loss. The error for a parameter is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over the
    checked entries. ``max_entries`` limits the total number of perturbed
    entries (sampled uniformly with ``seed``). Passing requires ``error < tol``.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    f0, f1 = _evaluate(f), _evaluate(f)
    if f0 != f1:
        raise ContractError("f is not deterministic: two evaluations differ")

    g = Graph()
    g.register(params)
    grads = g.backward(f(g))

    index = [(k, j) for k, p in enumerate(params) for j in range(p.size)]
    if max_entries is not None and max_entries < len(index):
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(index), size=max_entries, replace=False))
        index = [index[i] for i in pick]

    analytic: dict[str, list[float]] = {}
    numeric: dict[str, list[float]] = {}
    for k, j in index:
        p = params[k]
        flat = p.value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        fp = _evaluate(f)
        flat[j] = orig - step
        fm = _evaluate(f)
        flat[j] = orig
        numeric.setdefault(p.name, []).append((fp - fm) / (2.0 * step))
        analytic.setdefault(p.name, []).append(grads[p.name].reshape(-1)[j])

    errors = {}
    for name in analytic:
        a, n = np.array(analytic[name]), np.array(numeric[name])
        denom = max(np.abs(a).max(), np.abs(n).max())
        diff = np.abs(a - n).max()
        errors[name] = 0.0 if diff == 0.0 else float(diff / denom) if denom > 0 else float("inf")
    return GradCheckReport(errors=errors, tol=tol, checked=len(index))

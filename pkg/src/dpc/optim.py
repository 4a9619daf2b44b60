"""Adam optimizer over :class:`~dpc.tensor.Parameter` objects."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError
from .tensor import Parameter


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam.

    Parameters missing from ``grads`` in a step are treated as having zero
    gradient, so their moments still decay.
    """

    def __init__(self, params: Iterable[Parameter], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for p in self.params:
            self.state.m[p.name] = np.zeros(p.shape)
            self.state.v[p.name] = np.zeros(p.shape)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        st = self.state
        for p in self.params:
            g = grads.get(p.name)
            if g is not None and np.shape(g) != p.shape:
                raise DimensionError(
                    f"adam: gradient for {p.name} has shape {np.shape(g)}, parameter {p.shape}"
                )
        st.step += 1
        bc1 = 1.0 - st.beta1**st.step
        bc2 = 1.0 - st.beta2**st.step
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                g = np.zeros(p.shape)
            m, v = st.m[p.name], st.v[p.name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            p.value -= st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)

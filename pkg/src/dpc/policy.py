"""Explicit neural control law trained through the frozen learned model.

The law maps a feature vector (past outputs, comfort-bound preview, ambient
forecast) to a whole control trajectory ``U_f = [u_t; ...; u_{t+N-1}]`` in
normalized actuator units. Training rolls the frozen state-space model over
the horizon and minimizes an economic loss with penalty terms for output
and actuator bounds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .blocks import MLP
from .dynamics import NeuralSSM
from .errors import ConfigError, DimensionError, TrainingError
from .optim import Adam
from .penalties import PENALTY_ACTIVATIONS, penalty_lower, penalty_upper
from .plant import ControlScaling, Scenarios
from .tensor import (
    Graph,
    Parameter,
    Tensor,
    add,
    concat_rows,
    reduce_sum_squares,
    scale,
    slice_rows,
    sub,
)

log = logging.getLogger(__name__)

FEATURE_SOURCES = ("y_past", "y_lower", "y_upper", "d")


@dataclass
class LossWeights:
    Q_umin: float = 1.0
    Q_du: float = 1.0
    Q_y: float = 50.0
    Q_u: float = 50.0

    def validate(self) -> None:
        for k in ("Q_umin", "Q_du", "Q_y", "Q_u"):
            if getattr(self, k) < 0:
                raise ConfigError("weight must be nonnegative", key=f"loss.{k}")


@dataclass
class PolicyConfig:
    hidden: list[int] = field(default_factory=lambda: [166, 166, 166])
    activation: str = "gelu"
    features: list[str] = field(default_factory=lambda: ["y_past", "y_lower", "d"])
    updates: int = 1000
    batch_size: int = 300
    lr: float = 0.001
    eval_every: int = 10
    dev_scenarios: int = 1000
    penalty: str = "relu"
    comfort_margin: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if not self.features:
            raise ConfigError("need at least one feature segment", key="policy.features")
        for f in self.features:
            if f not in FEATURE_SOURCES:
                raise ConfigError(f"unknown feature {f!r}; choose from {FEATURE_SOURCES}",
                                  key="policy.features")
        if len(set(self.features)) != len(self.features):
            raise ConfigError("duplicate feature segment", key="policy.features")
        if self.penalty not in PENALTY_ACTIVATIONS:
            raise ConfigError(f"must be one of {PENALTY_ACTIVATIONS}", key="loss.penalty")
        if self.updates < 0:
            raise ConfigError("must be nonnegative", key="policy.updates")
        if self.batch_size < 1 or self.eval_every < 1 or self.dev_scenarios < 1:
            raise ConfigError("must be positive", key="policy.batch_size")
        if self.comfort_margin < 0:
            raise ConfigError("must be nonnegative", key="loss.comfort_margin")


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered ``(name, rows)`` segments of the feature vector."""

    segments: tuple[tuple[str, int], ...]

    @classmethod
    def build(cls, names: Sequence[str], n_y: int, n_d: int, n_past: int, horizon: int):
        rows = {"y_past": n_past * n_y, "y_lower": horizon * n_y,
                "y_upper": horizon * n_y, "d": horizon * n_d}
        return cls(tuple((n, rows[n]) for n in names))

    @property
    def size(self) -> int:
        return sum(r for _, r in self.segments)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.segments]

    def extent(self, name: str) -> tuple[int, int]:
        start = 0
        for n, r in self.segments:
            if n == name:
                return start, start + r
            start += r
        raise KeyError(name)


def assemble_features(parts: Mapping[str, np.ndarray], layout: FeatureLayout) -> np.ndarray:
    """Row-concatenate named ``(rows, batch)`` arrays in layout order."""
    blocks = []
    for name, rows in layout.segments:
        if name not in parts:
            raise DimensionError(f"feature segment {name!r} missing")
        a = np.asarray(parts[name], dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] != rows:
            raise DimensionError(f"feature segment {name!r}: layout says {rows} rows, got {a.shape[0]}")
        blocks.append(a)
    return np.vstack(blocks)


def scenario_features(s: Scenarios, layout: FeatureLayout) -> np.ndarray:
    return assemble_features({"y_past": s.Y_p, "y_lower": s.Y_lo, "y_upper": s.Y_hi, "d": s.D_f},
                             layout)


class PolicyNet:
    """MLP from standardized features to a stacked normalized control trajectory."""

    def __init__(self, layout: FeatureLayout, n_u: int, horizon: int, hidden: Sequence[int],
                 activation: str = "gelu", seed: int = 0):
        self.layout = layout
        self.n_u, self.horizon = n_u, horizon
        self.net = MLP("pi", [layout.size, *hidden, horizon * n_u], activation,
                       np.random.default_rng(seed))
        self.feat_mean = np.zeros(layout.size)
        self.feat_std = np.ones(layout.size)

    def parameters(self) -> list[Parameter]:
        return self.net.parameters()

    def param_count(self) -> int:
        return self.net.param_count()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_snapshot(self, snap: Mapping[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.value[...] = snap[p.name]

    def fit_normalization(self, features: np.ndarray) -> None:
        """Per-row standardization stats from a ``(n_features, B)`` sample."""
        self.feat_mean = features.mean(axis=1)
        std = features.std(axis=1)
        self.feat_std = np.where(std > 1e-9, std, 1.0)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feat_mean[:, None]) / self.feat_std[:, None]

    def __call__(self, xi: Tensor) -> Tensor:
        """``U_f`` for already standardized features."""
        return self.net(xi)

    def trajectory(self, s: Scenarios, graph: Graph | None = None) -> Tensor:
        g = graph if graph is not None else Graph()
        return self(g.constant(self.standardize(scenario_features(s, self.layout))))


def policy_apply_receding(policy: PolicyNet, s: Scenarios) -> np.ndarray:
    """First control of the planned trajectory, ``(n_u, B)`` normalized."""
    return slice_rows(policy.trajectory(s), 0, policy.n_u).numpy()


@dataclass
class Bounds:
    """Stacked horizon bounds; outputs in degC, controls normalized."""

    Y_lo: np.ndarray
    Y_hi: np.ndarray
    U_lo: np.ndarray
    U_hi: np.ndarray

    def __post_init__(self):
        if np.any(self.Y_lo > self.Y_hi) or np.any(self.U_lo > self.U_hi):
            raise ConfigError("lower bound above upper bound", key="bounds")


def scenario_bounds(s: Scenarios, scaling: ControlScaling, margin: float = 0.0) -> Bounds:
    """Loss bounds for a scenario batch.

    ``margin`` tightens the comfort band symmetrically (never past its midpoint).
    """
    reps = s.U_lo.shape[0] // len(scaling.u_min)
    lo_u = np.tile(scaling.u_min, reps)[:, None]
    span = np.tile(scaling.span, reps)[:, None]
    half = 0.5 * (s.Y_hi - s.Y_lo)
    m = np.minimum(margin, half)
    return Bounds(s.Y_lo + m, s.Y_hi - m, (s.U_lo - lo_u) / span, (s.U_hi - lo_u) / span)


def economic_loss(U_f: Tensor, Y_f: Tensor, bounds: Bounds, weights: LossWeights, u_prev,
                  n_u: int, activation: str = "relu") -> Tensor:
    """Energy, smoothness and bound-penalty terms averaged over batch and horizon.

    ``u_prev`` is the control preceding the horizon, ``(n_u, B)`` or broadcastable.
    """
    weights.validate()
    g = U_f.graph
    n = U_f.cols
    N = U_f.rows // n_u
    if U_f.rows != N * n_u or Y_f.cols != n:
        raise DimensionError(f"economic_loss: U_f {U_f.shape} vs Y_f {Y_f.shape}, n_u={n_u}")
    u_prev = np.broadcast_to(np.asarray(u_prev, dtype=np.float64).reshape(-1, 1)
                             if np.ndim(u_prev) < 2 else u_prev, (n_u, n))
    shifted = concat_rows([g.constant(u_prev)] + ([slice_rows(U_f, 0, (N - 1) * n_u)] if N > 1 else []))
    total = scale(reduce_sum_squares(U_f), weights.Q_umin)
    total = add(total, scale(reduce_sum_squares(sub(U_f, shifted)), weights.Q_du))
    pens_y = add(reduce_sum_squares(penalty_lower(Y_f, bounds.Y_lo, activation)),
                 reduce_sum_squares(penalty_upper(Y_f, bounds.Y_hi, activation)))
    pens_u = add(reduce_sum_squares(penalty_lower(U_f, bounds.U_lo, activation)),
                 reduce_sum_squares(penalty_upper(U_f, bounds.U_hi, activation)))
    total = add(total, scale(pens_y, weights.Q_y))
    total = add(total, scale(pens_u, weights.Q_u))
    return scale(total, 1.0 / (n * N))


class ClosedLoopModel:
    """Control law composed with a frozen state-space model over ``horizon`` steps."""

    def __init__(self, policy: PolicyNet, model: NeuralSSM):
        if policy.n_u != model.n_u:
            raise DimensionError(f"policy emits {policy.n_u} controls, model takes {model.n_u}")
        if "y_past" in policy.layout.names and policy.layout.extent("y_past")[1] - \
                policy.layout.extent("y_past")[0] != model.n_past * model.n_y:
            raise DimensionError("policy past-output window does not match the model observer")
        self.policy = policy
        self.model = model
        self.horizon = policy.horizon

    def rollout(self, s: Scenarios, graph: Graph) -> tuple[Tensor, Tensor]:
        """``(U_f, Y_f)`` on ``graph``; ``U_f`` normalized, ``Y_f`` in degC."""
        if s.D_f.shape[0] != self.horizon * self.model.n_d:
            raise DimensionError(
                f"scenario carries {s.D_f.shape[0] // self.model.n_d} disturbance steps, "
                f"horizon is {self.horizon}"
            )
        U_f = self.policy.trajectory(s, graph)
        Y_f = self.model.rollout(graph.constant(s.Y_p), U_f, graph.constant(s.D_f))
        return U_f, Y_f

    def loss(self, s: Scenarios, scaling: ControlScaling, weights: LossWeights, graph: Graph,
             activation: str = "relu", margin: float = 0.0) -> Tensor:
        U_f, Y_f = self.rollout(s, graph)
        return economic_loss(U_f, Y_f, scenario_bounds(s, scaling, margin), weights, s.u_prev,
                             self.policy.n_u, activation)


def closed_loop_rollout(cl: ClosedLoopModel, s: Scenarios, graph: Graph | None = None):
    return cl.rollout(s, graph if graph is not None else Graph())


@dataclass
class PolicyHistory:
    updates: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)
    best_dev: list[float] = field(default_factory=list)
    best_update: int = 0

    def as_dict(self) -> dict:
        return {"updates": self.updates, "train_loss": self.train_loss, "dev_loss": self.dev_loss,
                "best_dev": self.best_dev, "best_update": self.best_update}


def _dev_loss(cl, dev, scaling, weights, cfg) -> float:
    return cl.loss(dev, scaling, weights, Graph(), cfg.penalty, cfg.comfort_margin).item()


def train_policy(cl: ClosedLoopModel, train: Scenarios, dev: Scenarios, scaling: ControlScaling,
                 weights: LossWeights, cfg: PolicyConfig) -> PolicyHistory:
    """Adam on the closed-loop economic loss; only policy parameters move.

    Each update draws ``cfg.batch_size`` scenarios from ``train`` with a seeded
    generator; the dev loss is checked every ``cfg.eval_every`` updates and the
    best policy is restored at the end.
    """
    cfg.validate()
    weights.validate()
    rng = np.random.default_rng(cfg.seed)
    if dev.size > cfg.dev_scenarios:
        dev = dev.subset(np.sort(rng.choice(dev.size, cfg.dev_scenarios, replace=False)))
    opt = Adam(cl.policy.parameters(), lr=cfg.lr)
    hist = PolicyHistory()
    best = _dev_loss(cl, dev, scaling, weights, cfg)
    best_snap = cl.policy.snapshot()
    hist.updates.append(0)
    hist.dev_loss.append(best)
    hist.best_dev.append(best)
    hist.train_loss.append(float("nan"))
    batch = min(cfg.batch_size, train.size)
    for it in range(1, cfg.updates + 1):
        cols = np.sort(rng.choice(train.size, batch, replace=False))
        g = Graph()
        loss = cl.loss(train.subset(cols), scaling, weights, g, cfg.penalty, cfg.comfort_margin)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError("non-finite closed-loop loss", it)
        grads = g.backward(loss)
        opt.step(grads)
        if it % cfg.eval_every == 0 or it == cfg.updates:
            dl = _dev_loss(cl, dev, scaling, weights, cfg)
            if not np.isfinite(dl):
                raise TrainingError("non-finite dev loss", it)
            if dl < best:
                best, best_snap, hist.best_update = dl, cl.policy.snapshot(), it
            hist.updates.append(it)
            hist.train_loss.append(value)
            hist.dev_loss.append(dl)
            hist.best_dev.append(best)
            log.info("policy update %d train %.5f dev %.5f", it, value, dl)
    cl.policy.load_snapshot(best_snap)
    return hist

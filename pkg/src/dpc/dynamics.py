"""Block-structured neural state-space model and its identification.

    x_t     = f_o([y_{t-Np+1}; ...; y_t])
    x_{t+1} = f_x(x_t) + f_u(u_t) + f_d(d_t)
    y_{t+1} = f_y(x_{t+1})

Outputs and disturbances enter in engineering units and are standardized
with fixed statistics stored on the model; controls enter already normalized
to the actuator box (see :class:`dpc.plant.ControlScaling`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .blocks import MLP, LinearMap, StableDynamicsMap
from .errors import ConfigError, ContractError, DimensionError, TrainingError
from .optim import Adam
from .penalties import penalty_lower, penalty_upper
from .plant import SysIdWindows
from .tensor import (
    Graph,
    Parameter,
    Tensor,
    add,
    concat_rows,
    hadamard,
    reduce_mean,
    scale,
    slice_rows,
    sub,
)

log = logging.getLogger(__name__)

STATE_MAPS = ("stable", "linear", "mlp")


@dataclass
class SSMConfig:
    n_x: int = 9
    n_past: int = 16
    state_map: str = "stable"
    lam_min: float = 0.8
    lam_max: float = 0.99
    observer_hidden: list[int] = field(default_factory=lambda: [64, 64])
    input_hidden: list[int] = field(default_factory=lambda: [32])
    dist_hidden: list[int] = field(default_factory=lambda: [16])
    state_hidden: list[int] = field(default_factory=lambda: [32])
    activation: str = "gelu"

    def validate(self) -> None:
        if self.n_x < 1:
            raise ConfigError("must be positive", key="ssm.n_x")
        if self.n_past < 1:
            raise ConfigError("must be positive", key="ssm.n_past")
        if self.state_map not in STATE_MAPS:
            raise ConfigError(f"must be one of {STATE_MAPS}", key="ssm.state_map")
        if not 0.0 <= self.lam_min < self.lam_max < 1.0:
            raise ConfigError("need 0 <= lam_min < lam_max < 1", key="ssm.lam_min")


@dataclass
class SysIdConfig:
    horizon: int = 16
    epochs: int = 300
    batch_size: int = 128
    lr: float = 0.003
    w_fit: float = 1.0
    w_smooth: float = 0.0
    w_influence: float = 1.0
    influence_bound: float | None = None  # None: 3x std of standardized output increments
    patience: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("must be at least 1", key="ssm.horizon")
        if self.epochs < 0:
            raise ConfigError("must be nonnegative", key="ssm.epochs")
        if self.batch_size < 1:
            raise ConfigError("must be positive", key="ssm.batch_size")
        for k in ("w_fit", "w_smooth", "w_influence"):
            if getattr(self, k) < 0:
                raise ConfigError("must be nonnegative", key=f"ssm.{k}")
        if self.influence_bound is not None and self.influence_bound <= 0:
            raise ConfigError("must be positive", key="ssm.influence_bound")


class NeuralSSM:
    def __init__(self, n_y: int, n_u: int, n_d: int, cfg: SSMConfig | None = None, seed: int = 0):
        cfg = cfg or SSMConfig()
        cfg.validate()
        self.cfg = cfg
        self.n_y, self.n_u, self.n_d, self.n_x = n_y, n_u, n_d, cfg.n_x
        self.n_past = cfg.n_past
        rng = np.random.default_rng(seed)
        act = cfg.activation
        self.f_o = MLP("f_o", [cfg.n_past * n_y, *cfg.observer_hidden, cfg.n_x], act, rng)
        if cfg.state_map == "stable":
            self.f_x = StableDynamicsMap("f_x", cfg.n_x, cfg.lam_min, cfg.lam_max, rng)
        elif cfg.state_map == "linear":
            self.f_x = LinearMap("f_x", cfg.n_x, cfg.n_x, rng, bias=False)
        else:
            self.f_x = MLP("f_x", [cfg.n_x, *cfg.state_hidden, cfg.n_x], act, rng)
        self.f_u = MLP("f_u", [n_u, *cfg.input_hidden, cfg.n_x], act, rng)
        self.f_d = MLP("f_d", [n_d, *cfg.dist_hidden, cfg.n_x], act, rng)
        self.f_y = LinearMap("f_y", cfg.n_x, n_y, rng, bias=False)
        self.y_mean, self.y_std = np.zeros(n_y), np.ones(n_y)
        self.d_mean, self.d_std = np.zeros(n_d), np.ones(n_d)

    # -- bookkeeping -------------------------------------------------------

    @property
    def blocks(self) -> dict:
        return {"f_o": self.f_o, "f_x": self.f_x, "f_u": self.f_u, "f_d": self.f_d, "f_y": self.f_y}

    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks.values() for p in b.parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.value[...] = snap[p.name]

    def set_normalization(self, y_mean, y_std, d_mean, d_std) -> None:
        self.y_mean = np.asarray(y_mean, dtype=np.float64).reshape(self.n_y)
        self.y_std = np.asarray(y_std, dtype=np.float64).reshape(self.n_y)
        self.d_mean = np.asarray(d_mean, dtype=np.float64).reshape(self.n_d)
        self.d_std = np.asarray(d_std, dtype=np.float64).reshape(self.n_d)

    def fit_normalization(self, y: np.ndarray, d: np.ndarray) -> None:
        """Standardization statistics from (T, n_y) outputs and (T, n_d) disturbances."""
        self.set_normalization(y.mean(0), y.std(0), d.mean(0), np.maximum(d.std(0), 1e-12))

    def _standardize(self, t: Tensor, mean: np.ndarray, std: np.ndarray) -> Tensor:
        reps = t.rows // len(mean)
        return hadamard(sub(t, np.tile(mean, reps)[:, None]), np.tile(1.0 / std, reps)[:, None])

    def _destandardize(self, t: Tensor) -> Tensor:
        reps = t.rows // self.n_y
        return add(hadamard(t, np.tile(self.y_std, reps)[:, None]),
                   np.tile(self.y_mean, reps)[:, None])

    # -- model equations ---------------------------------------------------

    def estimate_initial_state(self, Y_p: Tensor) -> Tensor:
        if Y_p.rows != self.n_past * self.n_y:
            raise DimensionError(
                f"observer expects {self.n_past}x{self.n_y}={self.n_past * self.n_y} rows, got {Y_p.rows}"
            )
        return self.f_o(self._standardize(Y_p, self.y_mean, self.y_std))

    def _step_norm(self, x: Tensor, u: Tensor, d: Tensor):
        """One step; returns the next state, f_u(u), f_d(d) and standardized output."""
        if u.rows != self.n_u or d.rows != self.n_d or x.rows != self.n_x:
            raise DimensionError(
                f"ssm_step: x {x.shape}, u {u.shape}, d {d.shape} for n_x={self.n_x}, "
                f"n_u={self.n_u}, n_d={self.n_d}"
            )
        fu = self.f_u(u)
        fd = self.f_d(self._standardize(d, self.d_mean, self.d_std))
        x_next = add(add(self.f_x(x), fu), fd)
        return x_next, fu, fd, self.f_y(x_next)

    def step(self, x: Tensor, u: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
        """``(x_{t+1}, y_{t+1})`` with ``y`` in engineering units."""
        x_next, _, _, yn = self._step_norm(x, u, d)
        return x_next, self._destandardize(yn)

    def rollout_terms(self, Y_p: Tensor, U_f: Tensor, D_f: Tensor) -> dict[str, list[Tensor]]:
        """Per-step states, input/disturbance contributions and standardized outputs."""
        if U_f.rows % self.n_u or D_f.rows % self.n_d:
            raise DimensionError(f"rollout: U_f {U_f.shape} / D_f {D_f.shape} not whole steps")
        N = U_f.rows // self.n_u
        if D_f.rows // self.n_d != N:
            raise DimensionError(
                f"rollout: {N} control steps but {D_f.rows // self.n_d} disturbance steps"
            )
        x = self.estimate_initial_state(Y_p)
        terms = {"x": [x], "fu": [], "fd": [], "yn": []}
        for k in range(N):
            u = slice_rows(U_f, k * self.n_u, self.n_u)
            d = slice_rows(D_f, k * self.n_d, self.n_d)
            x, fu, fd, yn = self._step_norm(x, u, d)
            for key, v in (("x", x), ("fu", fu), ("fd", fd), ("yn", yn)):
                terms[key].append(v)
        return terms

    def rollout(self, Y_p: Tensor, U_f: Tensor, D_f: Tensor) -> Tensor:
        """Stacked predictions ``[y_{t+1}; ...; y_{t+N}]`` in engineering units."""
        return self._destandardize(concat_rows(self.rollout_terms(Y_p, U_f, D_f)["yn"]))

    def predict(self, Y_p: np.ndarray, U_f: np.ndarray, D_f: np.ndarray) -> np.ndarray:
        """Numpy convenience wrapper around :meth:`rollout`."""
        g = Graph()
        return self.rollout(g.constant(Y_p), g.constant(U_f), g.constant(D_f)).numpy()


def estimate_initial_state(model: NeuralSSM, Y_p: Tensor) -> Tensor:
    return model.estimate_initial_state(Y_p)


def ssm_step(model: NeuralSSM, x: Tensor, u: Tensor, d: Tensor):
    return model.step(x, u, d)


def ssm_rollout(model: NeuralSSM, Y_p: Tensor, U_f: Tensor, D_f: Tensor) -> Tensor:
    return model.rollout(Y_p, U_f, D_f)


def default_influence_bound(y: np.ndarray) -> float:
    """3x the largest per-channel std of standardized one-step output increments."""
    dy = np.diff((y - y.mean(0)) / y.std(0), axis=0)
    return float(3.0 * dy.std(0).max())


def sysid_loss(model: NeuralSSM, batch: SysIdWindows, cfg: SysIdConfig, graph: Graph | None = None,
               influence_bound: float | None = None):
    """Open-loop N-step fit plus influence-bound and smoothing penalties.

    The fit term is the mean squared error of standardized outputs over all
    horizon steps, channels and windows. Returns ``(loss, parts)`` where
    ``parts`` maps term names to floats.
    """
    if batch.size == 0:
        raise ContractError("sysid_loss: empty batch")
    g = graph if graph is not None else Graph()
    g.register(model.parameters())
    terms = model.rollout_terms(g.constant(batch.Y_p), g.constant(batch.U_f), g.constant(batch.D_f))
    reps = batch.Y_f.shape[0] // model.n_y
    target = (batch.Y_f - np.tile(model.y_mean, reps)[:, None]) / np.tile(model.y_std, reps)[:, None]
    fit = reduce_mean(_square(sub(concat_rows(terms["yn"]), target)))
    loss = scale(fit, cfg.w_fit)
    parts = {"fit": fit.item()}
    if cfg.w_influence > 0:
        b = influence_bound if influence_bound is not None else cfg.influence_bound
        if b is None:
            raise ConfigError("influence bound unset; call default_influence_bound", key="ssm.influence_bound")
        contrib = concat_rows(terms["fu"] + terms["fd"])
        pen = add(reduce_mean(_square(penalty_upper(contrib, b))),
                  reduce_mean(_square(penalty_lower(contrib, -b))))
        loss = add(loss, scale(pen, cfg.w_influence))
        parts["influence"] = pen.item()
    if cfg.w_smooth > 0:
        xs = terms["x"]
        dx = concat_rows([sub(xs[k + 1], xs[k]) for k in range(len(xs) - 1)])
        sm = reduce_mean(_square(dx))
        loss = add(loss, scale(sm, cfg.w_smooth))
        parts["smooth"] = sm.item()
    return loss, parts


def _square(t: Tensor) -> Tensor:
    return hadamard(t, t)


def open_loop_nmse(model: NeuralSSM, windows: SysIdWindows, chunk: int = 4096) -> float:
    """Mean over output channels of N-step MSE divided by the target variance."""
    preds = [model.predict(windows.Y_p[:, i:i + chunk], windows.U_f[:, i:i + chunk],
                           windows.D_f[:, i:i + chunk])
             for i in range(0, windows.size, chunk)]
    pred = np.hstack(preds)
    n_y = model.n_y
    err = (pred - windows.Y_f).reshape(-1, n_y, windows.size)
    tgt = windows.Y_f.reshape(-1, n_y, windows.size)
    mse = (err**2).mean(axis=(0, 2))
    var = tgt.var(axis=(0, 2))
    return float(np.mean(mse / var))


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    dev_metric: list[float] = field(default_factory=list)
    best_dev: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def as_dict(self) -> dict:
        return {"train_loss": self.train_loss, "dev_metric": self.dev_metric,
                "best_dev": self.best_dev, "best_epoch": self.best_epoch}


def train_ssm(model: NeuralSSM, train: SysIdWindows, dev: SysIdWindows, cfg: SysIdConfig,
              influence_bound: float | None = None) -> TrainHistory:
    """Adam on :func:`sysid_loss`; keeps the parameters with the best dev nMSE.

    Minibatches are drawn by a seeded permutation each epoch, so the result is
    reproducible for a fixed ``cfg.seed``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    hist = TrainHistory()
    best = open_loop_nmse(model, dev)
    best_snap = model.snapshot()
    stale = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(train.size)
        losses = []
        for i in range(0, train.size, cfg.batch_size):
            g = Graph()
            loss, _ = sysid_loss(model, train.subset(perm[i:i + cfg.batch_size]), cfg, g,
                                 influence_bound)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError("non-finite system-identification loss", epoch)
            opt.step(g.backward(loss))
            losses.append(value)
        dev_nmse = open_loop_nmse(model, dev)
        if not np.isfinite(dev_nmse):
            raise TrainingError("non-finite dev nMSE", epoch)
        hist.train_loss.append(float(np.mean(losses)))
        hist.dev_metric.append(dev_nmse)
        if dev_nmse < best:
            best, best_snap, hist.best_epoch, stale = dev_nmse, model.snapshot(), epoch, 0
        else:
            stale += 1
        hist.best_dev.append(best)
        log.info("ssm epoch %d train %.5f dev nMSE %.5f", epoch, hist.train_loss[-1], dev_nmse)
        if cfg.patience is not None and stale >= cfg.patience:
            break
    model.load_snapshot(best_snap)
    return hist

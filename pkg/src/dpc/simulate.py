"""Receding-horizon closed-loop evaluation on the learned model or the RC plant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import NeuralSSM
from .errors import ConfigError
from .plant import (
    ControlScaling,
    CtrlDataset,
    PlantState,
    RCBuildingModel,
    Scenarios,
    heat_flows,
)
from .policy import PolicyNet, policy_apply_receding
from .tensor import Graph

PLANTS = ("nominal", "true")


@dataclass
class ScenarioConfig:
    split: str = "test"
    offset: int = 0  # samples after the split start
    days: float = 7.0
    T_init: float = 21.0
    warmup_u: float = 0.5  # normalized control held during the past window

    def validate(self) -> None:
        if self.days <= 0:
            raise ConfigError("must be positive", key="run.sim_days")
        if self.offset < 0:
            raise ConfigError("must be nonnegative", key="run.sim_offset")
        if not 0.0 <= self.warmup_u <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="run.sim_warmup_u")


class TruePlant:
    def __init__(self, model: RCBuildingModel):
        self.model = model
        self.state: PlantState | None = None

    def reset(self, T_init: float) -> np.ndarray:
        self.state = PlantState(np.full(self.model.n_x, float(T_init)))
        return self.model.C @ self.state.x

    def step(self, u: np.ndarray, d: np.ndarray) -> np.ndarray:
        from .plant import plant_step

        self.state, y = plant_step(self.model, self.state, u[0], u[1:], float(d[0]))
        return y


class NominalPlant:
    """The learned model used as the simulator.

    The latent state is estimated once from the initial past-output window and
    then propagated by the model's own state equation.
    """

    def __init__(self, model: NeuralSSM):
        self.model = model
        self.x: np.ndarray | None = None

    def init_from(self, Y_p: np.ndarray) -> None:
        g = Graph()
        self.x = self.model.estimate_initial_state(g.constant(Y_p.reshape(-1, 1))).numpy()

    def step(self, u_n: np.ndarray, d: np.ndarray) -> np.ndarray:
        g = Graph()
        x, y = self.model.step(g.constant(self.x), g.constant(u_n.reshape(-1, 1)),
                               g.constant(np.asarray(d, dtype=np.float64).reshape(-1, 1)))
        self.x = x.numpy()
        return y.numpy()[:, 0]


class BangBang:
    """Thermostat: full flow in zones below next step's lower bound, max supply if any is on."""

    def __call__(self, y: np.ndarray, y_lo_next: np.ndarray, n_u: int) -> np.ndarray:
        on = (y < y_lo_next).astype(np.float64)
        u = np.zeros(n_u)
        u[1:] = on
        u[0] = 1.0 if on.any() else 0.0
        return u


@dataclass
class Trajectory:
    t: np.ndarray
    u: np.ndarray  # applied engineering controls (T, n_u)
    u_n: np.ndarray  # applied normalized controls
    y: np.ndarray  # outputs after each step (T, n_y)
    y_lo: np.ndarray
    y_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    d: np.ndarray
    q: np.ndarray  # radiator heat (W) per zone during each step
    Ts: float


def evaluate(traj: Trajectory) -> dict:
    """Comfort, actuator, energy and smoothness metrics of a trajectory."""
    v = np.maximum(traj.y_lo - traj.y, 0.0) + np.maximum(traj.y - traj.y_hi, 0.0)
    viol = v > 0
    tol = 1e-12
    act = (traj.u < traj.u_lo - tol) | (traj.u > traj.u_hi + tol)
    du = np.diff(traj.u_n, axis=0)
    return {
        "steps": int(len(traj.t)),
        "violation_rate": float(viol.mean()),
        "mean_violation": float(v[viol].mean()) if viol.any() else 0.0,
        "max_violation": float(v.max()),
        "actuator_violations": int(act.sum()),
        "energy_proxy": float(np.sum(traj.u_n**2)),
        "heat_J": float(np.sum(traj.q) * traj.Ts),
        "smoothness": float(np.sum(du**2)),
    }


def _forecast(series: np.ndarray, t: int, offset: int, horizon: int) -> np.ndarray:
    return series[t + offset: t + offset + horizon].reshape(-1, 1)


def closed_loop(controller: str, plant: str, data: CtrlDataset, scaling: ControlScaling,
                rc: RCBuildingModel, ssm: NeuralSSM, policy: PolicyNet | None,
                scen: ScenarioConfig, horizon: int) -> Trajectory:
    """Simulate ``controller`` ("policy" or "bangbang") on ``plant`` ("nominal" or "true").

    The past-output window comes from the RC plant started at a uniform
    ``T_init`` and held at ``warmup_u`` for ``n_past`` steps; the nominal
    model estimates its initial state from the same window. Controls are
    clamped to the actuator bounds before they are applied and logged.
    """
    scen.validate()
    if plant not in PLANTS:
        raise ConfigError(f"plant must be one of {PLANTS}", key="plant")
    if controller == "policy" and policy is None:
        raise ConfigError("policy controller needs a policy", key="policy")
    n_past, n_u = ssm.n_past, len(scaling.u_min)
    steps = int(round(scen.days * 86400.0 / data.Ts))
    start, stop = data.splits[scen.split]
    t0 = start + scen.offset + n_past - 1
    if t0 + steps + horizon > stop:
        raise ConfigError(
            f"disturbance/bound forecast needs samples up to {t0 + steps + horizon}, "
            f"split {scen.split!r} ends at {stop}", key="run.sim_days")

    true = TruePlant(rc)
    hist = [true.reset(scen.T_init)]
    u_warm = scaling.denormalize(np.full(n_u, scen.warmup_u))
    for k in range(n_past - 1):
        hist.append(true.step(u_warm, data.d[t0 - n_past + 1 + k]))
    nominal = None
    if plant == "nominal":
        nominal = NominalPlant(ssm)
        nominal.init_from(np.concatenate(hist))

    bb = BangBang()
    rec = {k: [] for k in ("u", "u_n", "y", "q")}
    u_prev = np.zeros((n_u, 1))
    for k in range(steps):
        t = t0 + k
        y_now = hist[-1]
        lo_n = scaling.normalize(data.u_lo[t])
        hi_n = scaling.normalize(data.u_hi[t])
        if controller == "policy":
            s = Scenarios(
                Y_p=np.concatenate(hist[-n_past:]).reshape(-1, 1),
                Y_lo=_forecast(data.y_lo, t, 1, horizon),
                Y_hi=_forecast(data.y_hi, t, 1, horizon),
                U_lo=_forecast(data.u_lo, t, 0, horizon),
                U_hi=_forecast(data.u_hi, t, 0, horizon),
                D_f=_forecast(data.d, t, 0, horizon),
                u_prev=u_prev,
            )
            u_n = policy_apply_receding(policy, s)[:, 0]
        elif controller == "bangbang":
            u_n = bb(y_now, data.y_lo[t + 1], n_u)
        else:
            raise ConfigError(f"unknown controller {controller!r}", key="controller")
        u_n = np.clip(u_n, lo_n, hi_n)
        u = np.clip(scaling.denormalize(u_n), data.u_lo[t], data.u_hi[t])
        q = heat_flows(rc, u[0], u[1:], y_now)
        if nominal is not None:
            y_next = nominal.step(u_n, data.d[t])
        else:
            y_next = true.step(u, data.d[t])
        hist.append(y_next)
        u_prev = u_n.reshape(-1, 1)
        rec["u"].append(u)
        rec["u_n"].append(u_n)
        rec["y"].append(y_next)
        rec["q"].append(q)

    idx = np.arange(t0, t0 + steps)
    return Trajectory(
        t=idx, u=np.array(rec["u"]), u_n=np.array(rec["u_n"]), y=np.array(rec["y"]),
        y_lo=data.y_lo[idx + 1], y_hi=data.y_hi[idx + 1], u_lo=data.u_lo[idx],
        u_hi=data.u_hi[idx], d=data.d[idx], q=np.array(rec["q"]), Ts=data.Ts,
    )

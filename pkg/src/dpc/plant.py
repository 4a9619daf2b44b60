"""Multi-zone RC-network building emulator and training-data generation.

Each zone has three thermal nodes: air, exterior wall and floor/internal mass.
Air nodes of neighbouring zones are coupled in a ring, every node loses heat
to the ambient, and each zone gets a radiator whose heat input is the
convective flow ``q = m_dot * cp * (T_supply - T_air)``.

State order is ``[air_0..air_{n-1}, wall_0.., floor_0..]``. Controls are
``[T_supply, m_dot_0, .., m_dot_{n-1}]`` in degC and kg/s; the only
disturbance is ambient temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError

DAY_S = 86400.0

# per-zone size multipliers, cycled; make zones heterogeneous
ZONE_SIZES = (1.0, 0.75, 1.25, 0.9, 1.1, 0.8)


@dataclass
class PlantConfig:
    n_zones: int = 3
    Ts: float = 900.0
    days: int = 90
    cp: float = 4186.0
    supply_range: tuple[float, float] = (30.0, 60.0)
    flow_max: float = 0.06
    # capacitances J/K
    C_air: float = 1.5e6
    C_wall: float = 8.0e6
    C_floor: float = 6.0e6
    # conductances W/K
    UA_air_wall: float = 250.0
    UA_air_floor: float = 300.0
    UA_wall_amb: float = 100.0
    UA_air_amb: float = 80.0
    UA_floor_amb: float = 20.0
    UA_zone: float = 60.0
    # ambient temperature synthesis
    ambient_mean: float = 5.0
    ambient_amplitude: float = 5.0
    ambient_noise_std: float = 1.5
    ambient_noise_tau_h: float = 3.0
    # excitation: flow random-walk step as a fraction of flow_max
    flow_step: float = 0.05
    init_temp_range: tuple[float, float] = (15.0, 25.0)
    # comfort schedule for the control dataset (degC)
    lower_night: tuple[float, float] = (16.0, 18.0)
    lower_day: tuple[float, float] = (19.0, 21.0)
    band: tuple[float, float] = (3.0, 5.0)
    day_start_h: float = 7.0
    day_end_h: float = 22.0

    def validate(self) -> None:
        def ordered(key, pair, lo=None):
            a, b = pair
            if not a <= b:
                raise ConfigError(f"range must be ordered, got [{a}, {b}]", key=f"plant.{key}")
            if lo is not None and a < lo:
                raise ConfigError(f"range must start at or above {lo}", key=f"plant.{key}")

        if self.n_zones < 1:
            raise ConfigError("need at least one zone", key="plant.n_zones")
        for key in ("Ts", "days", "cp", "flow_max", "C_air", "C_wall", "C_floor"):
            if getattr(self, key) <= 0:
                raise ConfigError("must be positive", key=f"plant.{key}")
        for key in ("UA_air_wall", "UA_air_floor", "UA_wall_amb", "UA_air_amb",
                    "UA_floor_amb", "UA_zone", "ambient_noise_std", "flow_step"):
            if getattr(self, key) < 0:
                raise ConfigError("must be nonnegative", key=f"plant.{key}")
        if self.UA_wall_amb + self.UA_air_amb + self.UA_floor_amb <= 0:
            raise ConfigError("the envelope needs a path to ambient", key="plant.UA_air_amb")
        ordered("supply_range", self.supply_range)
        if self.supply_range[0] == self.supply_range[1]:
            raise ConfigError("range must have positive width", key="plant.supply_range")
        ordered("init_temp_range", self.init_temp_range)
        ordered("lower_night", self.lower_night)
        ordered("lower_day", self.lower_day)
        ordered("band", self.band, lo=0.0)
        if not 0 <= self.day_start_h < self.day_end_h <= 24:
            raise ConfigError("need 0 <= day_start_h < day_end_h <= 24", key="plant.day_start_h")
        if (DAY_S / self.Ts) != int(DAY_S / self.Ts):
            raise ConfigError("a day must be a whole number of samples", key="plant.Ts")

    @property
    def steps_per_day(self) -> int:
        return int(round(DAY_S / self.Ts))

    @property
    def n_u(self) -> int:
        return self.n_zones + 1

    @property
    def u_min(self) -> np.ndarray:
        return np.array([self.supply_range[0]] + [0.0] * self.n_zones)

    @property
    def u_max(self) -> np.ndarray:
        return np.array([self.supply_range[1]] + [self.flow_max] * self.n_zones)


@dataclass
class ControlScaling:
    """Affine map between engineering controls and the unit box [0, 1]."""

    u_min: np.ndarray
    u_max: np.ndarray

    @classmethod
    def from_config(cls, cfg: PlantConfig) -> "ControlScaling":
        return cls(cfg.u_min, cfg.u_max)

    @property
    def span(self) -> np.ndarray:
        return self.u_max - self.u_min

    def normalize(self, u: np.ndarray) -> np.ndarray:
        """Engineering units to normalized; works on (..., n_u) arrays."""
        return (np.asarray(u) - self.u_min) / self.span

    def denormalize(self, un: np.ndarray) -> np.ndarray:
        return self.u_min + np.asarray(un) * self.span


@dataclass
class RCBuildingModel:
    n_zones: int
    A: np.ndarray  # (n_x, n_x) discrete-time transition
    B_q: np.ndarray  # (n_x, n_zones), per watt of zone heat
    E: np.ndarray  # (n_x,), per degC ambient
    C: np.ndarray  # (n_zones, n_x) air-node selector
    cp: float
    supply_range: tuple[float, float]
    flow_max: float
    Ts: float

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    def fixed_point(self, T_amb: float) -> np.ndarray:
        """Zero-flow equilibrium ``(I - A)^-1 E T_amb``."""
        return np.linalg.solve(np.eye(self.n_x) - self.A, self.E * T_amb)

    def output(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x


def build_rc_model(cfg: PlantConfig) -> RCBuildingModel:
    """Assemble the continuous RC network and discretize it exactly (ZOH)."""
    cfg.validate()
    n = cfg.n_zones
    nx = 3 * n
    air, wall, floor = np.arange(n), np.arange(n, 2 * n), np.arange(2 * n, 3 * n)
    sizes = np.array([ZONE_SIZES[i % len(ZONE_SIZES)] for i in range(n)])

    cap = np.concatenate([cfg.C_air * sizes, cfg.C_wall * sizes, cfg.C_floor * sizes])
    K = np.zeros((nx, nx))  # conductance Laplacian
    g_amb = np.zeros(nx)

    def link(i, j, ua):
        K[i, i] += ua
        K[j, j] += ua
        K[i, j] -= ua
        K[j, i] -= ua

    for z in range(n):
        s = sizes[z]
        link(air[z], wall[z], cfg.UA_air_wall * s)
        link(air[z], floor[z], cfg.UA_air_floor * s)
        g_amb[wall[z]] += cfg.UA_wall_amb * s
        g_amb[air[z]] += cfg.UA_air_amb * s
        g_amb[floor[z]] += cfg.UA_floor_amb * s
    if n == 2:
        link(air[0], air[1], cfg.UA_zone)
    elif n > 2:
        for z in range(n):
            link(air[z], air[(z + 1) % n], cfg.UA_zone)
    K += np.diag(g_amb)

    Ac = -K / cap[:, None]
    Bc = np.zeros((nx, n + 1))
    Bc[air, np.arange(n)] = 1.0 / cap[air]
    Bc[:, n] = g_amb / cap

    aug = np.zeros((nx + n + 1, nx + n + 1))
    aug[:nx, :nx] = Ac
    aug[:nx, nx:] = Bc
    Phi = expm(aug * cfg.Ts)
    A, Bd = Phi[:nx, :nx], Phi[:nx, nx:]

    C = np.zeros((n, nx))
    C[np.arange(n), air] = 1.0
    return RCBuildingModel(
        n_zones=n, A=A, B_q=Bd[:, :n], E=Bd[:, n], C=C, cp=cfg.cp,
        supply_range=tuple(cfg.supply_range), flow_max=cfg.flow_max, Ts=cfg.Ts,
    )


def time_constants_h(model: RCBuildingModel) -> np.ndarray:
    """Modal time constants in hours, slowest first."""
    lam = np.abs(np.linalg.eigvals(model.A))
    return np.sort(-model.Ts / np.log(lam) / 3600.0)[::-1]


@dataclass
class PlantState:
    x: np.ndarray
    k: int = 0
    saturated: bool = False


def heat_flows(model: RCBuildingModel, T_sup: float, flows: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Convective radiator heat per zone (W)."""
    return np.asarray(flows) * model.cp * (T_sup - np.asarray(y))


def clamp_controls(model: RCBuildingModel, T_sup: float, flows) -> tuple[float, np.ndarray, bool]:
    flows = np.asarray(flows, dtype=np.float64)
    lo, hi = model.supply_range
    T_c = min(max(float(T_sup), lo), hi)
    f_c = np.clip(flows, 0.0, model.flow_max)
    return T_c, f_c, bool(T_c != T_sup or np.any(f_c != flows))


def plant_step(model: RCBuildingModel, state: PlantState, T_sup: float, flows, T_amb: float):
    """Advance one sample; returns ``(new_state, zone_temperatures)``.

    Out-of-range actuation is clamped and flagged on ``new_state.saturated``.
    """
    T_sup, flows, sat = clamp_controls(model, T_sup, flows)
    y = model.C @ state.x
    q = heat_flows(model, T_sup, flows, y)
    x_next = model.A @ state.x + model.B_q @ q + model.E * T_amb
    return PlantState(x_next, state.k + 1, sat), model.C @ x_next


def synth_disturbance(days: int, Ts: float = 900.0, seed=0, mean: float = 5.0,
                      amplitude: float = 5.0, noise_std: float = 1.5,
                      noise_tau_h: float = 3.0) -> np.ndarray:
    """Ambient temperature: daily sinusoid plus first-order filtered noise.

    The sinusoid bottoms out at 03:00 and peaks at 15:00.
    """
    steps = int(round(days * DAY_S / Ts))
    hours = np.arange(steps) * Ts / 3600.0
    base = mean - amplitude * np.cos(2.0 * np.pi * (hours - 3.0) / 24.0)
    if noise_std == 0:
        return base
    rng = np.random.default_rng(seed)
    a = np.exp(-Ts / (noise_tau_h * 3600.0))
    w = rng.standard_normal(steps) * noise_std * np.sqrt(1.0 - a * a)
    e = np.empty(steps)
    e[0] = rng.standard_normal() * noise_std
    for k in range(1, steps):
        e[k] = a * e[k - 1] + w[k]
    return base + e


def _ambient(cfg: PlantConfig, days: int, seed) -> np.ndarray:
    return synth_disturbance(days, cfg.Ts, seed, cfg.ambient_mean, cfg.ambient_amplitude,
                             cfg.ambient_noise_std, cfg.ambient_noise_tau_h)


def random_excitation(cfg: PlantConfig, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Controls (steps, n_u): reflected random-walk flows, uniform supply temperature."""
    n = cfg.n_zones
    u = np.empty((steps, n + 1))
    u[:, 0] = rng.uniform(*cfg.supply_range, size=steps)
    f = rng.uniform(0.0, cfg.flow_max, size=n)
    dw = rng.standard_normal((steps, n)) * cfg.flow_step * cfg.flow_max
    for k in range(steps):
        u[k, 1:] = f
        f = f + dw[k]
        f = np.where(f < 0.0, -f, f)
        f = np.where(f > cfg.flow_max, 2.0 * cfg.flow_max - f, f)
        f = np.clip(f, 0.0, cfg.flow_max)
    return u


def simulate_open_loop(model: RCBuildingModel, x0: np.ndarray, u: np.ndarray,
                       d: np.ndarray) -> np.ndarray:
    """Zone temperatures ``y_k`` for k = 0..T-1 (y_0 from ``x0``)."""
    state = PlantState(np.array(x0, dtype=np.float64))
    y = np.empty((len(u), model.n_zones))
    for k in range(len(u)):
        y[k] = model.C @ state.x
        state, _ = plant_step(model, state, u[k, 0], u[k, 1:], d[k])
    return y


def chronological_splits(length: int, parts: int = 3) -> list[tuple[int, int]]:
    """Contiguous, disjoint ``[start, stop)`` ranges of (nearly) equal length."""
    edges = [round(i * length / parts) for i in range(parts + 1)]
    return [(edges[i], edges[i + 1]) for i in range(parts)]


def window_anchors(start: int, stop: int, n_past: int, horizon: int) -> np.ndarray:
    """Anchor times ``t`` whose past window and horizon fit inside ``[start, stop)``."""
    return np.arange(start + n_past - 1, stop - horizon)


def _stack(series: np.ndarray, anchors: np.ndarray, offset: int, length: int) -> np.ndarray:
    """Column-batched windows ``series[t+offset : t+offset+length]`` -> (length*dim, B)."""
    idx = anchors[:, None] + offset + np.arange(length)[None, :]
    w = series[idx]  # (B, length, dim)
    return w.reshape(len(anchors), -1).T.copy()


@dataclass
class SysIdWindows:
    Y_p: np.ndarray  # (n_past*n_y, B) degC
    U_f: np.ndarray  # (N*n_u, B) normalized controls
    D_f: np.ndarray  # (N*n_d, B)
    Y_f: np.ndarray  # (N*n_y, B) targets

    @property
    def size(self) -> int:
        return self.Y_p.shape[1]

    def subset(self, cols) -> "SysIdWindows":
        return SysIdWindows(self.Y_p[:, cols], self.U_f[:, cols], self.D_f[:, cols],
                            self.Y_f[:, cols])


@dataclass
class SysIdDataset:
    """Operation data: rows are samples ``k`` with ``u_k`` applied between ``y_k`` and ``y_{k+1}``."""

    Ts: float
    u: np.ndarray  # (T, n_u) engineering units
    d: np.ndarray  # (T, n_d)
    y: np.ndarray  # (T, n_y)
    splits: dict[str, tuple[int, int]]
    seed: int = 0

    @property
    def length(self) -> int:
        return len(self.y)

    def windows(self, split: str, n_past: int, horizon: int, scaling: ControlScaling) -> SysIdWindows:
        start, stop = self.splits[split]
        t = window_anchors(start, stop, n_past, horizon)
        un = scaling.normalize(self.u)
        return SysIdWindows(
            Y_p=_stack(self.y, t, -n_past + 1, n_past),
            U_f=_stack(un, t, 0, horizon),
            D_f=_stack(self.d, t, 0, horizon),
            Y_f=_stack(self.y, t, 1, horizon),
        )


def _seeds(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_sysid_dataset(model: RCBuildingModel, cfg: PlantConfig, days: int | None = None,
                           seed: int = 0) -> SysIdDataset:
    """Excite the plant open loop and record ``(u, d, y)`` with train/dev/test thirds."""
    days = cfg.days if days is None else days
    steps = days * cfg.steps_per_day
    r_amb, r_exc, r_init = _seeds(seed, 3)
    d = _ambient(cfg, days, r_amb)[:, None]
    u = random_excitation(cfg, steps, r_exc)
    x0 = r_init.uniform(*cfg.init_temp_range, size=model.n_x)
    y = simulate_open_loop(model, x0, u, d[:, 0])
    splits = dict(zip(("train", "dev", "test"), chronological_splits(steps)))
    return SysIdDataset(cfg.Ts, u, d, y, splits, seed)


@dataclass
class Scenarios:
    """Column-batched control-learning windows (one column per scenario)."""

    Y_p: np.ndarray  # (n_past*n_y, B) past outputs
    Y_lo: np.ndarray  # (N*n_y, B) bounds on y_{t+1..t+N}
    Y_hi: np.ndarray
    U_lo: np.ndarray  # (N*n_u, B) engineering bounds on u_{t..t+N-1}
    U_hi: np.ndarray
    D_f: np.ndarray  # (N*n_d, B)
    u_prev: np.ndarray  # (n_u, B) normalized control before the horizon

    @property
    def size(self) -> int:
        return self.Y_p.shape[1]

    def subset(self, cols) -> "Scenarios":
        return Scenarios(*(getattr(self, f)[:, cols] for f in
                           ("Y_p", "Y_lo", "Y_hi", "U_lo", "U_hi", "D_f", "u_prev")))


@dataclass
class CtrlDataset:
    """Synthetic control-learning series: sampled outputs, bounds and ambient forecast."""

    Ts: float
    y: np.ndarray  # (T, n_y) sampled past-output trajectories
    y_lo: np.ndarray  # (T, n_y)
    y_hi: np.ndarray
    u_lo: np.ndarray  # (T, n_u) engineering units
    u_hi: np.ndarray
    d: np.ndarray  # (T, n_d)
    splits: dict[str, tuple[int, int]]
    seed: int = 0

    @property
    def length(self) -> int:
        return len(self.y)

    def windows(self, split: str, n_past: int, horizon: int) -> Scenarios:
        start, stop = self.splits[split]
        t = window_anchors(start, stop, n_past, horizon)
        return self.windows_at(t, n_past, horizon)

    def windows_at(self, t: np.ndarray, n_past: int, horizon: int) -> Scenarios:
        t = np.asarray(t)
        return Scenarios(
            Y_p=_stack(self.y, t, -n_past + 1, n_past),
            Y_lo=_stack(self.y_lo, t, 1, horizon),
            Y_hi=_stack(self.y_hi, t, 1, horizon),
            U_lo=_stack(self.u_lo, t, 0, horizon),
            U_hi=_stack(self.u_hi, t, 0, horizon),
            D_f=_stack(self.d, t, 0, horizon),
            u_prev=np.zeros((self.u_lo.shape[1], len(t))),
        )


def comfort_schedule(cfg: PlantConfig, days: int, rng: np.random.Generator):
    """Daily square-wave lower bounds with per-day, per-zone random levels.

    Returns ``(y_lo, y_hi)`` of shape ``(days*steps_per_day, n_zones)``. Only
    the lower bound drops at night; the upper bound stays at the higher of the
    day's two lower levels plus a sampled band width.
    """
    spd, n = cfg.steps_per_day, cfg.n_zones
    night = rng.uniform(*cfg.lower_night, size=(days, n))
    day = rng.uniform(*cfg.lower_day, size=(days, n))
    band = rng.uniform(*cfg.band, size=(days, n))
    hours = np.arange(spd) * cfg.Ts / 3600.0
    is_day = (hours >= cfg.day_start_h) & (hours < cfg.day_end_h)
    lo = np.where(is_day[None, :, None], day[:, None, :], night[:, None, :])
    hi = np.broadcast_to((np.maximum(day, night) + band)[:, None, :], lo.shape)
    return lo.reshape(days * spd, n), hi.reshape(days * spd, n).copy()


def generate_ctrl_dataset(model: RCBuildingModel, cfg: PlantConfig, days: int | None = None,
                          seed: int = 0) -> CtrlDataset:
    """Sampled outputs, comfort bounds, actuator bounds and ambient forecast.

    Past outputs come from a plant rollout started at random envelope
    temperatures and driven by an independent excitation sequence.
    """
    cfg.validate()
    days = cfg.days if days is None else days
    steps = days * cfg.steps_per_day
    r_amb, r_exc, r_init, r_bounds = _seeds(seed, 4)
    d = _ambient(cfg, days, r_amb)[:, None]
    u = random_excitation(cfg, steps, r_exc)
    x0 = r_init.uniform(*cfg.init_temp_range, size=model.n_x)
    y = simulate_open_loop(model, x0, u, d[:, 0])
    y_lo, y_hi = comfort_schedule(cfg, days, r_bounds)
    u_lo = np.tile(cfg.u_min, (steps, 1))
    u_hi = np.tile(cfg.u_max, (steps, 1))
    splits = dict(zip(("train", "dev", "test"), chronological_splits(steps)))
    return CtrlDataset(cfg.Ts, y, y_lo, y_hi, u_lo, u_hi, d, splits, seed)

"""Run configuration: one JSON document with sections for every pipeline step.

Sections are ``plant``, ``ssm``, ``policy``, ``loss``, ``optimizer`` and
``run``. Unknown keys are rejected so a typo cannot silently fall back to a
default. Missing keys take the desk-scale defaults below.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .dynamics import SSMConfig, SysIdConfig
from .errors import ConfigError
from .plant import PlantConfig
from .policy import LossWeights, PolicyConfig
from .simulate import ScenarioConfig

SECTIONS = ("plant", "ssm", "policy", "loss", "optimizer", "run")


@dataclass
class SSMTrainSection:
    epochs: int = 100
    batch_size: int = 128
    w_fit: float = 1.0
    w_smooth: float = 0.0
    w_influence: float = 1.0
    influence_bound: float | None = None
    patience: int | None = None


@dataclass
class LossSection:
    Q_umin: float = 1.0
    Q_du: float = 1.0
    Q_y: float = 50.0
    Q_u: float = 50.0
    penalty: str = "relu"
    comfort_margin: float = 0.3


@dataclass
class OptimizerSection:
    ssm_lr: float = 0.003
    policy_lr: float = 0.001


@dataclass
class RunSection:
    seed: int = 0
    horizon: int = 16
    out: str | None = None
    sim_split: str = "test"
    sim_offset: int = 0
    sim_days: float = 7.0
    sim_T_init: float = 21.0
    sim_warmup_u: float = 0.5


# keys of the ``ssm`` section that belong to the architecture
_SSM_ARCH = tuple(f.name for f in fields(SSMConfig))
_SSM_TRAIN = tuple(f.name for f in fields(SSMTrainSection))
_POLICY_KEYS = ("hidden", "activation", "features", "updates", "batch_size", "eval_every",
                "dev_scenarios")


def _coerce(value: Any, default: Any) -> Any:
    # JSON has no tuples; restore them where the default is one
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _fill(obj, values: Mapping[str, Any], section: str, allowed: tuple[str, ...]) -> None:
    for key, value in values.items():
        if key not in allowed:
            raise ConfigError("unknown key", key=f"{section}.{key}")
        setattr(obj, key, _coerce(value, getattr(obj, key)))


@dataclass
class RunConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    ssm: SSMConfig = field(default_factory=SSMConfig)
    ssm_train: SSMTrainSection = field(default_factory=SSMTrainSection)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    run: RunSection = field(default_factory=RunSection)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError("config must be a JSON object")
        cfg = cls()
        for section, values in doc.items():
            if section not in SECTIONS:
                raise ConfigError("unknown section", key=section)
            if not isinstance(values, Mapping):
                raise ConfigError("section must be an object", key=section)
            if section == "ssm":
                _fill(cfg.ssm, {k: v for k, v in values.items() if k not in _SSM_TRAIN},
                      "ssm", _SSM_ARCH)
                _fill(cfg.ssm_train, {k: v for k, v in values.items() if k in _SSM_TRAIN},
                      "ssm", _SSM_TRAIN)
            elif section == "policy":
                _fill(cfg.policy, values, "policy", _POLICY_KEYS)
            else:
                target = getattr(cfg, section)
                _fill(target, values, section, tuple(f.name for f in fields(target)))
        cfg.sync()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def sync(self) -> None:
        """Copy shared settings into the per-step configs."""
        self.policy.lr = self.optimizer.policy_lr
        self.policy.penalty = self.loss.penalty
        self.policy.comfort_margin = self.loss.comfort_margin
        self.policy.seed = self.run.seed

    def to_dict(self) -> dict:
        self.sync()
        ssm = asdict(self.ssm)
        ssm.update(asdict(self.ssm_train))
        policy = {k: copy.deepcopy(getattr(self.policy, k)) for k in _POLICY_KEYS}
        return {
            "plant": asdict(self.plant),
            "ssm": ssm,
            "policy": policy,
            "loss": asdict(self.loss),
            "optimizer": asdict(self.optimizer),
            "run": asdict(self.run),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self, sections: tuple[str, ...] = SECTIONS) -> str:
        """SHA-256 over the canonical JSON of the given sections."""
        doc = self.to_dict()
        blob = json.dumps({k: doc[k] for k in sections}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # derived per-step configs

    def seeds(self) -> dict[str, int]:
        s = self.run.seed
        return {"ssm": s, "policy": s, "sysid_data": s + 1, "ctrl_data": s + 2}

    def sysid_config(self) -> SysIdConfig:
        t = self.ssm_train
        return SysIdConfig(horizon=self.run.horizon, epochs=t.epochs, batch_size=t.batch_size,
                           lr=self.optimizer.ssm_lr, w_fit=t.w_fit, w_smooth=t.w_smooth,
                           w_influence=t.w_influence, influence_bound=t.influence_bound,
                           patience=t.patience, seed=self.seeds()["ssm"])

    def policy_config(self) -> PolicyConfig:
        self.sync()
        return copy.deepcopy(self.policy)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.loss.Q_umin, self.loss.Q_du, self.loss.Q_y, self.loss.Q_u)

    def scenario(self) -> ScenarioConfig:
        r = self.run
        return ScenarioConfig(split=r.sim_split, offset=r.sim_offset, days=r.sim_days,
                              T_init=r.sim_T_init, warmup_u=r.sim_warmup_u)

    def validate(self) -> None:
        """Check every section and the dimensions they share."""
        self.sync()
        self.plant.validate()
        self.ssm.validate()
        self.sysid_config().validate()
        self.policy_config().validate()
        self.loss_weights().validate()
        self.scenario().validate()
        if self.optimizer.ssm_lr <= 0:
            raise ConfigError("must be positive", key="optimizer.ssm_lr")
        if self.optimizer.policy_lr <= 0:
            raise ConfigError("must be positive", key="optimizer.policy_lr")
        if self.run.horizon < 1:
            raise ConfigError("must be at least 1", key="run.horizon")
        if self.run.sim_split not in ("train", "dev", "test"):
            raise ConfigError("must be train, dev or test", key="run.sim_split")
        if any(h < 1 for h in self.policy.hidden):
            raise ConfigError("layer widths must be positive", key="policy.hidden")
        # every split must hold at least one window
        third = self.plant.days * self.plant.steps_per_day // 3
        if third < self.ssm.n_past + self.run.horizon:
            raise ConfigError(
                f"a split of {third} samples cannot hold n_past + horizon = "
                f"{self.ssm.n_past + self.run.horizon}", key="plant.days")


def desk_config() -> RunConfig:
    """Three zones, horizon 16: the default used by the tests and the CLI."""
    return RunConfig()


def reference_config() -> RunConfig:
    """Six zones, horizon 32 and a 100-100-100 policy, matching the published dimensioning."""
    cfg = RunConfig()
    cfg.plant.n_zones = 6
    cfg.ssm.n_past = 32
    cfg.ssm.n_x = 18
    cfg.run.horizon = 32
    cfg.policy.hidden = [100, 100, 100]
    cfg.sync()
    return cfg

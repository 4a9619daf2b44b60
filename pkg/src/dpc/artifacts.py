"""On-disk formats: JSON checkpoints/reports/manifests and CSV time series.

Floats are written with ``repr`` so a save/load cycle reproduces every
parameter bit for bit. All JSON is dumped with sorted keys; anything that
varies between identical runs (timestamps, wall-clock) goes only into
manifest files.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .dynamics import NeuralSSM, SSMConfig
from .errors import ConfigError
from .plant import CtrlDataset, SysIdDataset
from .policy import FeatureLayout, PolicyNet
from .simulate import Trajectory

CHECKPOINT_FORMAT = 1


def _clean(obj: Any) -> Any:
    # NaN and Inf are not JSON; store them as null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.floating):
        return _clean(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True, allow_nan=False) + "\n")
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc


def write_manifest(path: str | Path, **entries) -> Path:
    """Manifest next to an artifact; the only place wall-clock data is kept."""
    entries.setdefault("created_utc", time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    return write_json(path, entries)


# -- parameter blocks --------------------------------------------------------

def _pack(snap: Mapping[str, np.ndarray]) -> dict:
    return {name: {"shape": list(v.shape), "data": v.ravel().tolist()}
            for name, v in sorted(snap.items())}


def _unpack(blocks: Mapping[str, Any], path: Path) -> dict[str, np.ndarray]:
    out = {}
    for name, b in blocks.items():
        data = np.array(b["data"], dtype=np.float64)
        if data.size != int(np.prod(b["shape"])):
            raise ConfigError(f"{path}: block {name} has {data.size} values for shape {b['shape']}",
                              key="checkpoint")
        out[name] = data.reshape(b["shape"])
    return out


def _load_params(target, blocks: dict[str, np.ndarray], path: Path) -> None:
    for p in target.parameters():
        if p.name not in blocks:
            raise ConfigError(f"{path}: missing block {p.name}", key="checkpoint")
        if blocks[p.name].shape != p.value.shape:
            raise ConfigError(
                f"{path}: block {p.name} has shape {blocks[p.name].shape}, model expects "
                f"{p.value.shape}", key="checkpoint")
    target.load_snapshot(blocks)


def _check_kind(doc: Mapping, kind: str, path: Path) -> None:
    if doc.get("kind") != kind or doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {kind} checkpoint (format {CHECKPOINT_FORMAT})",
                          key="checkpoint")


def save_ssm(path: str | Path, model: NeuralSSM, config_hash: str) -> Path:
    return write_json(path, {
        "kind": "ssm",
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash,
        "dims": {"n_y": model.n_y, "n_u": model.n_u, "n_d": model.n_d},
        "ssm": {k: getattr(model.cfg, k) for k in SSMConfig.__dataclass_fields__},
        "normalization": {"y_mean": model.y_mean, "y_std": model.y_std,
                          "d_mean": model.d_mean, "d_std": model.d_std},
        "blocks": _pack(model.snapshot()),
    })


def load_ssm(path: str | Path) -> tuple[NeuralSSM, dict]:
    path = Path(path)
    doc = read_json(path)
    _check_kind(doc, "ssm", path)
    dims = doc["dims"]
    model = NeuralSSM(dims["n_y"], dims["n_u"], dims["n_d"], SSMConfig(**doc["ssm"]))
    n = doc["normalization"]
    model.set_normalization(n["y_mean"], n["y_std"], n["d_mean"], n["d_std"])
    _load_params(model, _unpack(doc["blocks"], path), path)
    return model, doc


def save_policy(path: str | Path, policy: PolicyNet, activation: str, hidden: Sequence[int],
                config_hash: str, ssm_hash: str, u_min, u_max) -> Path:
    return write_json(path, {
        "kind": "policy",
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash,
        "ssm_config_hash": ssm_hash,
        "layout": [[name, rows] for name, rows in policy.layout.segments],
        "n_u": policy.n_u,
        "horizon": policy.horizon,
        "hidden": list(hidden),
        "activation": activation,
        "control_range": {"u_min": u_min, "u_max": u_max},
        "normalization": {"feat_mean": policy.feat_mean, "feat_std": policy.feat_std},
        "blocks": _pack(policy.snapshot()),
    })


def load_policy(path: str | Path) -> tuple[PolicyNet, dict]:
    path = Path(path)
    doc = read_json(path)
    _check_kind(doc, "policy", path)
    layout = FeatureLayout(tuple((name, int(rows)) for name, rows in doc["layout"]))
    policy = PolicyNet(layout, doc["n_u"], doc["horizon"], doc["hidden"], doc["activation"])
    n = doc["normalization"]
    policy.feat_mean = np.array(n["feat_mean"], dtype=np.float64)
    policy.feat_std = np.array(n["feat_std"], dtype=np.float64)
    _load_params(policy, _unpack(doc["blocks"], path), path)
    return policy, doc


# -- CSV time series ---------------------------------------------------------

def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack(columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    return path


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh))
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc.strerror}") from exc
    except StopIteration:
        raise ConfigError(f"{path} is empty", key="data") from None
    table = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    return header, table


def _columns(header: list[str], table: np.ndarray, prefix: str) -> np.ndarray:
    idx = [i for i, h in enumerate(header) if h.startswith(prefix)]
    return table[:, idx]


def sysid_header(n_u: int, n_d: int, n_y: int) -> list[str]:
    return (["time"] + [f"u_{i}" for i in range(n_u)] + [f"d_{i}" for i in range(n_d)]
            + [f"y_{i}" for i in range(n_y)])


def ctrl_header(n_y: int, n_u: int, n_d: int) -> list[str]:
    return (["time"] + [f"y_{i}" for i in range(n_y)] + [f"ylo_{i}" for i in range(n_y)]
            + [f"yhi_{i}" for i in range(n_y)] + [f"ulo_{i}" for i in range(n_u)]
            + [f"uhi_{i}" for i in range(n_u)] + [f"d_{i}" for i in range(n_d)])


def write_sysid_csv(path: str | Path, ds: SysIdDataset) -> Path:
    t = np.arange(ds.length) * ds.Ts
    header = sysid_header(ds.u.shape[1], ds.d.shape[1], ds.y.shape[1])
    return _write_csv(Path(path), header, [t, ds.u, ds.d, ds.y])


def read_sysid_csv(path: str | Path, manifest: Mapping) -> SysIdDataset:
    header, table = _read_csv(Path(path))
    splits = {k: tuple(v) for k, v in manifest["splits"].items()}
    return SysIdDataset(manifest["Ts"], _columns(header, table, "u_"), _columns(header, table, "d_"),
                        _columns(header, table, "y_"), splits, manifest["seed"])


def write_ctrl_csv(path: str | Path, ds: CtrlDataset) -> Path:
    t = np.arange(ds.length) * ds.Ts
    header = ctrl_header(ds.y.shape[1], ds.u_lo.shape[1], ds.d.shape[1])
    return _write_csv(Path(path), header, [t, ds.y, ds.y_lo, ds.y_hi, ds.u_lo, ds.u_hi, ds.d])


def read_ctrl_csv(path: str | Path, manifest: Mapping) -> CtrlDataset:
    header, table = _read_csv(Path(path))
    splits = {k: tuple(v) for k, v in manifest["splits"].items()}
    cols = {p: _columns(header, table, p) for p in ("y_", "ylo_", "yhi_", "ulo_", "uhi_", "d_")}
    return CtrlDataset(manifest["Ts"], cols["y_"], cols["ylo_"], cols["yhi_"], cols["ulo_"],
                       cols["uhi_"], cols["d_"], splits, manifest["seed"])


def write_trajectory_csv(path: str | Path, traj: Trajectory) -> Path:
    n_u, n_y = traj.u.shape[1], traj.y.shape[1]
    header = (["time"] + [f"u_{i}" for i in range(n_u)] + [f"y_{i}" for i in range(n_y)]
              + [f"ylo_{i}" for i in range(n_y)] + [f"yhi_{i}" for i in range(n_y)]
              + [f"d_{i}" for i in range(traj.d.shape[1])] + [f"q_{i}" for i in range(n_y)])
    return _write_csv(Path(path), header,
                      [traj.t * traj.Ts, traj.u, traj.y, traj.y_lo, traj.y_hi, traj.d, traj.q])

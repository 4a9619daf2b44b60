"""Command line entry point for the two-step pipeline and its evaluation.

    dpc generate-data   sys-id and control datasets (CSV + manifests)
    dpc train-ssm       identify the state-space model
    dpc train-policy    learn the control law through the frozen model
    dpc simulate        closed-loop runs on the learned model and the RC plant
    dpc eval-report     aggregate simulate reports (mean and spread)

Exit status is 0 on success, 2 for invalid configuration or inputs and 1 for
any other failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import artifacts
from .config import RunConfig, desk_config, reference_config
from .dynamics import NeuralSSM, default_influence_bound, open_loop_nmse, train_ssm
from .errors import ConfigError, DimensionError
from .plant import (
    ControlScaling,
    build_rc_model,
    generate_ctrl_dataset,
    generate_sysid_dataset,
)
from .policy import ClosedLoopModel, FeatureLayout, PolicyNet, scenario_features, train_policy
from .simulate import PLANTS, closed_loop, evaluate

log = logging.getLogger("dpc")

OUT_ENV = "DPC_OUT"
CONTROLLERS = ("policy", "bangbang")
PRESETS = {"desk": desk_config, "reference": reference_config}


# -- shared helpers ------------------------------------------------------------

def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else PRESETS[args.preset]()
    if args.seed is not None:
        cfg.run.seed = args.seed
    cfg.sync()
    cfg.validate()
    return cfg


def out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.run.out or os.environ.get(OUT_ENV) or "runs")


def _data_dir(args, out: Path) -> Path:
    return Path(args.data) if args.data else out / "data"


def _load_dataset(kind: str, data_dir: Path, cfg: RunConfig):
    manifest = artifacts.read_json(data_dir / f"{kind}.manifest.json")
    if manifest.get("plant_hash") != cfg.config_hash(("plant",)):
        raise ConfigError(f"{data_dir}/{kind}.csv was generated with a different plant section",
                          key="plant")
    want = cfg.seeds()[f"{kind}_data"]
    if manifest.get("seed") != want:
        raise ConfigError(f"{data_dir}/{kind}.csv has seed {manifest.get('seed')}, "
                          f"config derives {want}", key="run.seed")
    reader = artifacts.read_sysid_csv if kind == "sysid" else artifacts.read_ctrl_csv
    return reader(data_dir / f"{kind}.csv", manifest)


def _check_ssm(doc: dict, cfg: RunConfig, path) -> None:
    dims = doc["dims"]
    want = {"n_y": cfg.plant.n_zones, "n_u": cfg.plant.n_u, "n_d": 1}
    for k, v in want.items():
        if dims[k] != v:
            raise DimensionError(f"{path}: checkpoint has {k}={dims[k]}, config implies {v}")


def _check_policy(doc: dict, ssm: NeuralSSM, cfg: RunConfig, path) -> None:
    layout = FeatureLayout(tuple((n, int(r)) for n, r in doc["layout"]))
    if doc["n_u"] != ssm.n_u:
        raise DimensionError(f"{path}: policy emits {doc['n_u']} controls, model takes {ssm.n_u}")
    if "y_past" in layout.names and layout.extent("y_past")[1] - layout.extent("y_past")[0] \
            != ssm.n_past * ssm.n_y:
        raise DimensionError(f"{path}: past-output segment does not match the model's window "
                             f"{ssm.n_past}x{ssm.n_y}")
    scaling = ControlScaling.from_config(cfg.plant)
    rng = doc["control_range"]
    if not (np.array_equal(rng["u_min"], scaling.u_min) and np.array_equal(rng["u_max"], scaling.u_max)):
        raise ConfigError(f"{path}: actuator range differs from the plant section", key="plant")


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


# -- commands --------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    cfg = load_config(args)
    out = _data_dir(args, out_dir(args, cfg))
    rc = build_rc_model(cfg.plant)
    seeds = cfg.seeds()
    plant_hash = cfg.config_hash(("plant",))
    t0 = time.perf_counter()
    sysid = generate_sysid_dataset(rc, cfg.plant, seed=seeds["sysid_data"])
    ctrl = generate_ctrl_dataset(rc, cfg.plant, seed=seeds["ctrl_data"])
    elapsed = time.perf_counter() - t0
    for kind, ds, writer in (("sysid", sysid, artifacts.write_sysid_csv),
                             ("ctrl", ctrl, artifacts.write_ctrl_csv)):
        path = writer(out / f"{kind}.csv", ds)
        artifacts.write_manifest(out / f"{kind}.manifest.json", kind=kind, seed=ds.seed,
                                 plant_hash=plant_hash, config_hash=cfg.config_hash(),
                                 Ts=ds.Ts, rows=ds.length, splits=ds.splits,
                                 wall_clock_s=elapsed)
        print(f"wrote {path} ({ds.length} rows)")
    return 0


def cmd_train_ssm(args) -> int:
    cfg = load_config(args)
    out = out_dir(args, cfg)
    data = _load_dataset("sysid", _data_dir(args, out), cfg)
    scaling = ControlScaling.from_config(cfg.plant)
    n_past, horizon = cfg.ssm.n_past, cfg.run.horizon
    model = NeuralSSM(data.y.shape[1], data.u.shape[1], data.d.shape[1], cfg.ssm,
                      seed=cfg.seeds()["ssm"])
    a, b = data.splits["train"]
    model.fit_normalization(data.y[a:b], data.d[a:b])
    sid = cfg.sysid_config()
    bound = sid.influence_bound or default_influence_bound(data.y[a:b])
    t0 = time.perf_counter()
    hist = train_ssm(model, data.windows("train", n_past, horizon, scaling),
                     data.windows("dev", n_past, horizon, scaling), sid, influence_bound=bound)
    elapsed = time.perf_counter() - t0
    test_nmse = open_loop_nmse(model, data.windows("test", n_past, horizon, scaling))
    ckpt = artifacts.save_ssm(out / "ssm" / "ssm.json", model, cfg.config_hash())
    artifacts.write_json(out / "ssm" / "history.json",
                         {**hist.as_dict(), "influence_bound": bound, "test_nmse": test_nmse})
    artifacts.write_manifest(out / "ssm" / "ssm.manifest.json", seed=cfg.run.seed,
                             config_hash=cfg.config_hash(), wall_clock_s=elapsed)
    print(f"wrote {ckpt}; test open-loop nMSE {test_nmse:.4f}; {elapsed:.1f} s")
    return 0


def cmd_train_policy(args) -> int:
    cfg = load_config(args)
    out = out_dir(args, cfg)
    ssm_path = Path(args.ssm or out / "ssm" / "ssm.json")
    ssm, ssm_doc = artifacts.load_ssm(ssm_path)
    _check_ssm(ssm_doc, cfg, ssm_path)
    data = _load_dataset("ctrl", _data_dir(args, out), cfg)
    pc = cfg.policy_config()
    n_past, horizon = ssm.n_past, cfg.run.horizon
    layout = FeatureLayout.build(pc.features, ssm.n_y, ssm.n_d, n_past, horizon)
    policy = PolicyNet(layout, ssm.n_u, horizon, pc.hidden, pc.activation, seed=cfg.seeds()["policy"])
    train = data.windows("train", n_past, horizon)
    dev = data.windows("dev", n_past, horizon)
    policy.fit_normalization(scenario_features(train, layout))
    scaling = ControlScaling.from_config(cfg.plant)
    t0 = time.perf_counter()
    hist = train_policy(ClosedLoopModel(policy, ssm), train, dev, scaling, cfg.loss_weights(), pc)
    elapsed = time.perf_counter() - t0
    ckpt = artifacts.save_policy(out / "policy" / "policy.json", policy, pc.activation, pc.hidden,
                                 cfg.config_hash(), ssm_doc["config_hash"], scaling.u_min,
                                 scaling.u_max)
    artifacts.write_json(out / "policy" / "history.json", hist.as_dict())
    artifacts.write_manifest(out / "policy" / "policy.manifest.json", seed=cfg.run.seed,
                             config_hash=cfg.config_hash(), updates=pc.updates,
                             param_count=policy.param_count(), wall_clock_s=elapsed)
    print(f"wrote {ckpt}; {policy.param_count()} parameters, {pc.updates} updates, "
          f"best dev loss {min(hist.best_dev):.5f}; {elapsed:.1f} s")
    return 0


def run_simulation(cfg: RunConfig, ssm: NeuralSSM, policy: PolicyNet, data,
                   plants: Sequence[str]) -> tuple[dict, dict]:
    """Policy and bang-bang baseline on each plant; returns ``(report, trajectories)``."""
    rc = build_rc_model(cfg.plant)
    scaling = ControlScaling.from_config(cfg.plant)
    scen = cfg.scenario()
    results, trajs = {}, {}
    for plant in plants:
        results[plant] = {}
        for ctrl in CONTROLLERS:
            traj = closed_loop(ctrl, plant, data, scaling, rc, ssm, policy, scen, policy.horizon)
            trajs[(plant, ctrl)] = traj
            results[plant][ctrl] = evaluate(traj)
    report = {"config_hash": cfg.config_hash(), "seed": cfg.run.seed,
              "scenario": {"split": scen.split, "offset": scen.offset, "days": scen.days,
                           "T_init": scen.T_init, "warmup_u": scen.warmup_u},
              "results": results}
    if set(PLANTS) <= set(plants):
        report["mismatch_gap"] = {
            ctrl: {m: results["true"][ctrl][m] - results["nominal"][ctrl][m]
                   for m in ("violation_rate", "mean_violation", "energy_proxy")}
            for ctrl in CONTROLLERS}
    return report, trajs


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = out_dir(args, cfg)
    ssm_path = Path(args.ssm or out / "ssm" / "ssm.json")
    pol_path = Path(args.policy or out / "policy" / "policy.json")
    ssm, ssm_doc = artifacts.load_ssm(ssm_path)
    _check_ssm(ssm_doc, cfg, ssm_path)
    policy, pol_doc = artifacts.load_policy(pol_path)
    _check_policy(pol_doc, ssm, cfg, pol_path)
    data = _load_dataset("ctrl", _data_dir(args, out), cfg)
    plants = PLANTS if args.plant == "both" else (args.plant,)
    t0 = time.perf_counter()
    report, trajs = run_simulation(cfg, ssm, policy, data, plants)
    elapsed = time.perf_counter() - t0
    sim = out / "sim"
    for (plant, ctrl), traj in trajs.items():
        artifacts.write_trajectory_csv(sim / f"traj_{plant}_{ctrl}.csv", traj)
    path = artifacts.write_json(sim / "report.json", report)
    timings = {"simulate_s": elapsed}
    pol_manifest = pol_path.with_name("policy.manifest.json")
    if pol_manifest.exists():
        timings["policy_training_s"] = artifacts.read_json(pol_manifest).get("wall_clock_s")
    artifacts.write_manifest(sim / "report.manifest.json", seed=cfg.run.seed,
                             config_hash=cfg.config_hash(), timings=timings)
    print(format_report(report))
    print(f"wrote {path}")
    return 0


def format_report(report: dict) -> str:
    metrics = ("violation_rate", "mean_violation", "max_violation", "actuator_violations",
               "energy_proxy")
    rows = [["plant", "controller", *metrics]]
    for plant, per in report["results"].items():
        for ctrl, m in per.items():
            rows.append([plant, ctrl, *(f"{m[k]:.4g}" for k in metrics)])
    text = _table(rows)
    gap = report.get("mismatch_gap")
    if gap:
        g = gap["policy"]["violation_rate"]
        text += f"\nmismatch gap (true - nominal) policy violation rate: {g:+.4f}"
    return text


def aggregate_reports(reports: Sequence[dict]) -> list[dict]:
    """Mean and population std of every (plant, controller, metric) across reports."""
    if not reports:
        raise ConfigError("need at least one report", key="reports")
    keys = []
    for plant, per in reports[0]["results"].items():
        for ctrl, m in per.items():
            keys.extend((plant, ctrl, k) for k in m)
    rows = []
    for plant, ctrl, k in keys:
        try:
            vals = np.array([r["results"][plant][ctrl][k] for r in reports], dtype=np.float64)
        except KeyError as exc:
            raise ConfigError(f"reports disagree: missing {plant}/{ctrl}/{k}", key="reports") from exc
        rows.append({"plant": plant, "controller": ctrl, "metric": k, "n": len(vals),
                     "mean": float(vals.mean()), "std": float(vals.std())})
    return rows


def cmd_eval_report(args) -> int:
    reports = [artifacts.read_json(p) for p in args.reports]
    rows = aggregate_reports(reports)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["plant", "controller", "metric", "n", "mean", "std"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "mean": repr(r["mean"]), "std": repr(r["std"])})
    out = Path(args.out) if args.out else Path(args.reports[0]).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(buf.getvalue())
    table = [["plant", "controller", "metric", "mean", "std"]]
    table += [[r["plant"], r["controller"], r["metric"], f"{r['mean']:.6g}", f"{r['std']:.3g}"]
              for r in rows]
    print(_table(table))
    for p in args.reports:
        mp = Path(p).with_name("report.manifest.json")
        if mp.exists():
            print(f"timings {p}: {artifacts.read_json(mp).get('timings')}")
    print(f"wrote {out / 'summary.csv'}")
    return 0


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                       help="defaults used when --config is absent")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--out", help=f"output directory (else run.out, ${OUT_ENV}, ./runs)")
        if data:
            p.add_argument("--data", help="dataset directory (default OUT/data)")
        return p

    common(sub.add_parser("generate-data", help="write both datasets")).set_defaults(
        func=cmd_generate_data)
    common(sub.add_parser("train-ssm", help="identify the model")).set_defaults(func=cmd_train_ssm)
    p = common(sub.add_parser("train-policy", help="learn the control law"))
    p.add_argument("--ssm", help="model checkpoint (default OUT/ssm/ssm.json)")
    p.set_defaults(func=cmd_train_policy)
    p = common(sub.add_parser("simulate", help="closed-loop evaluation"))
    p.add_argument("--ssm", help="model checkpoint (default OUT/ssm/ssm.json)")
    p.add_argument("--policy", help="policy checkpoint (default OUT/policy/policy.json)")
    p.add_argument("--plant", choices=(*PLANTS, "both"), default="both")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("eval-report", help="aggregate simulate reports")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--out", help="directory for summary.csv (default: first report's)")
    p.set_defaults(func=cmd_eval_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: simulate, train, sweep, report.

Exit codes: 0 ok, 2 configuration error, 3 infeasible run, 4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .learn import TrainingDiverged
from .network import LINK_PRESETS
from .partition import placement_csv
from .policy import Controller, GreedyDPPController, Infeasible, RandomController, baseline, build_candidates
from .sim import MetricsReport, run_episode

log = logging.getLogger("edgesplit")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 2, 3, 4

SWEEP_PARAMS = ("V", "lambda", "bandwidth")
SWEEP_COLUMNS = ["param", "value", "seed", "controller", "scenario", "p50", "p95", "p99", "mean_energy",
                 "mean_acc_penalty", "mean_Q", "max_Q", "mean_g", "verdict", "completions", "failed_final",
                 "residual", "config_hash"]
REPORT_COLUMNS = ["scenario", "controller", "runs", "p50", "p95", "p99", "mean_energy", "mean_Q",
                  "p95_reduction_vs_cloud"]

SCHEMA = {
    "slots_*.csv": {
        "comment": "first line '# config_hash=<hash> seed=<seed>'",
        "columns": {
            "slot": "slot index t",
            "Q": "backlog at the start of the slot (requests)",
            "V": "performance weight used this slot",
            "B_mbps": "link bandwidth (Mbit/s)",
            "latency_s": "plan latency at the reference sequence length (s)",
            "energy_J": "plan edge energy at the reference length (J)",
            "acc_penalty": "quantization accuracy penalty at the reference length",
            "drift": "drift estimate Q*(lambda - mu)",
            "reward": "-(V*drift + g)",
            "plan_id": "10-hex-digit plan digest",
            "failures": "transfer failures sampled this slot",
            "mu": "realized service (requests per second, including dropped requests)",
            "served": "backlog removed this slot (requests)",
            "arrivals": "requests arriving during the slot",
        },
    },
    "metrics_*.json": {"fields": list(MetricsReport.__dataclass_fields__)},
    "plan_*.csv": {"columns": {"layer": "1-based layer", "h<h>": "head placement, 0 edge, 1 cloud", "ffn": "0 edge, 1 cloud, 2 split"}},
    "sweep.csv": {"columns": SWEEP_COLUMNS},
    "report.csv": {"columns": REPORT_COLUMNS},
    "curve.csv": {"columns": ["episode", "mean_reward", "mean_Q", "clip_fraction", "loss_perf", "loss_stab",
                              "tau", "eval_reward"]},
}


def experiment_hash(cfg: RunConfig) -> str:
    """Hash of the configuration with run coordinates (controller, scenario, seed) removed."""
    d = cfg.model_dump(mode="json", exclude={"seed", "out_dir", "workers", "controller", "scenario"})
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def make_controller(name: str, cfg: RunConfig, ecfg) -> Controller:
    spec = ecfg.spec
    if name in ("dpp", "cost-greedy"):
        cands = build_candidates(spec, ecfg.device, cfg.granularity)
        return GreedyDPPController(cands, use_drift=(name == "dpp"))
    if name == "random":
        return RandomController()
    if name.startswith("learned:"):
        from .training import LearnedController, load_checkpoint, policy_from_checkpoint
        ck = load_checkpoint(name.split(":", 1)[1], ecfg)
        return LearnedController(policy_from_checkpoint(ck), greedy=True)
    try:
        return baseline(name, spec)
    except KeyError:
        raise ConfigError(f"unknown controller {name!r}") from None


def write_schema(out: Path) -> None:
    (out / "schema.json").write_text(json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_one(cfg: RunConfig, controller: str, seed: int, out: Path | None):
    ecfg = cfg.episode_config(seed)
    ctrl = make_controller(controller, cfg, ecfg)
    ch = cfg.config_hash()
    short = "learned" if controller.startswith("learned:") else controller.replace(":", "-")
    tag = f"{short}_{ecfg.scenario.name or 'custom'}_s{seed}"
    log_path = out / f"slots_{tag}.csv" if out else None
    res = run_episode(ecfg, ctrl, rng_seed=seed, log_path=log_path, config_hash=ch,
                      experiment_hash=experiment_hash(cfg))
    if out:
        res.metrics.log_path = log_path.name
        (out / f"metrics_{tag}.json").write_text(res.metrics.to_json() + "\n", encoding="utf-8")
        if res.plans:
            counts = Counter(r["plan_id"] for r in res.rows)
            top = max(counts, key=lambda k: (counts[k], k))
            (out / f"plan_{tag}.csv").write_text(placement_csv(res.plans[top]), encoding="utf-8")
    return res


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_schema(out)
    (out / "config.json").write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    controller = args.controller or cfg.controller
    code = EXIT_OK
    for r in range(cfg.seeds):
        seed = cfg.seed + r
        try:
            res = _run_one(cfg, controller, seed, out)
        except Infeasible as exc:
            print(f"infeasible: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        m = res.metrics
        print(json.dumps({"controller": m.controller, "seed": seed, "p95": m.p95, "mean_Q": m.mean_Q,
                          "verdict": m.verdict}))
        if m.verdict == "infeasible":
            print(f"infeasible: {m.diagnostic}", file=sys.stderr)
            code = EXIT_INFEASIBLE
    return code


def cmd_train(args) -> int:
    from .training import train, load_checkpoint, LearnedController
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_schema(out)
    ecfg = cfg.episode_config()
    tcfg = cfg.train_config()
    resume = load_checkpoint(args.resume, ecfg) if args.resume else None
    ck_path = out / "checkpoint.json"
    try:
        res = train(ecfg, tcfg, seed=cfg.seed, scenarios=cfg.train_scenarios(), curve_path=out / "curve.csv",
                    checkpoint_path=ck_path, resume=resume)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; last good checkpoint at {ck_path}", file=sys.stderr)
        return EXIT_DIVERGED
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    ev = run_episode(ecfg, LearnedController(res.policy, greedy=True), rng_seed=cfg.seed,
                     log_path=out / "slots_learned_eval.csv", config_hash=cfg.config_hash(),
                     experiment_hash=experiment_hash(cfg))
    ev.metrics.log_path = "slots_learned_eval.csv"
    (out / "metrics_learned_eval.json").write_text(ev.metrics.to_json() + "\n", encoding="utf-8")
    print(json.dumps({"episodes": len(res.curve), "updates": res.updates, "best_eval": res.best_eval,
                      "eval_p95": ev.metrics.p95, "verdict": ev.metrics.verdict}))
    return EXIT_OK


def _sweep_cell(job):
    doc, param, value, seed, controller = job
    cfg = RunConfig.model_validate(doc)
    res = _run_one(cfg, controller, seed, None)
    m = res.metrics
    row = {"param": param, "value": value, "seed": seed, "controller": controller, "scenario": m.scenario,
           "config_hash": cfg.config_hash()}
    for c in SWEEP_COLUMNS:
        if c not in row:
            row[c] = getattr(m, c)
    return row


def _apply_sweep(cfg: RunConfig, param: str, value: float) -> RunConfig:
    if param == "V":
        return cfg.model_copy(update={"lyapunov": cfg.lyapunov.model_copy(update={"V_fixed": value})})
    if param == "lambda":
        return cfg.model_copy(update={"workload": cfg.workload.model_copy(update={"lam": value})})
    sc = cfg.scenario
    base = LINK_PRESETS.get(sc.name)
    upd = {"name": "static", "B_mbps": value}
    if base is not None:
        upd.update(latency_ms=base.l_n * 1e3, jitter_ms=base.jitter * 1e3, loss=base.loss)
    return cfg.model_copy(update={"scenario": sc.model_copy(update=upd)})


def _parse_values(raw: list[str]) -> list[float]:
    vals = []
    for item in raw:
        for tok in item.split(","):
            tok = tok.strip()
            if tok:
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ConfigError(f"sweep value {tok!r} is not a number") from None
    if not vals:
        raise ConfigError("sweep needs at least one value")
    return vals


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set)
    values = _parse_values(args.values)
    controller = args.controller or cfg.controller
    jobs = []
    for v in values:
        cell = _apply_sweep(cfg, args.param, v)
        RunConfig.model_validate(cell.model_dump())
        for r in range(cfg.seeds):
            jobs.append((cell.model_dump(mode="json"), args.param, v, cfg.seed + r, controller))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_schema(out)
    workers = args.workers or cfg.workers
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                rows = list(pool.map(_sweep_cell, jobs))
        else:
            rows = [_sweep_cell(j) for j in jobs]
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# experiment_hash={experiment_hash(cfg)} seed={cfg.seed}\n")
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else ("" if v is None else v)) for k, v in row.items()})
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_INFEASIBLE if any(r["verdict"] == "infeasible" for r in rows) else EXIT_OK


def build_report(metrics: list[dict], force: bool = False) -> list[dict]:
    """Per (scenario, controller) percentiles averaged over runs, with P95 reduction vs cloud-only."""
    hashes = {m.get("experiment_hash") for m in metrics}
    if len(hashes) > 1 and not force:
        raise ConfigError(f"runs come from {len(hashes)} different experiment configurations; use --force")
    groups: dict[tuple[str, str], list[dict]] = {}
    for m in metrics:
        groups.setdefault((m["scenario"], m["controller"]), []).append(m)

    def avg(ms, k):
        xs = [m[k] for m in ms if m.get(k) is not None]
        return float(np.mean(xs)) if xs else None

    rows = []
    for (sc, ctrl), ms in sorted(groups.items()):
        rows.append({"scenario": sc, "controller": ctrl, "runs": len(ms), "p50": avg(ms, "p50"),
                     "p95": avg(ms, "p95"), "p99": avg(ms, "p99"), "mean_energy": avg(ms, "mean_energy"),
                     "mean_Q": avg(ms, "mean_Q"), "p95_reduction_vs_cloud": None})
    cloud = {r["scenario"]: r["p95"] for r in rows if r["controller"] == "cloud-only"}
    for r in rows:
        ref = cloud.get(r["scenario"])
        if ref and r["p95"] is not None:
            r["p95_reduction_vs_cloud"] = 1.0 - r["p95"] / ref
    return rows


def cmd_report(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("metrics_*.json"))
    if not files:
        raise ConfigError(f"no metrics_*.json files under {src}")
    metrics = [json.loads(f.read_text(encoding="utf-8")) for f in files]
    rows = build_report(metrics, args.force)
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    buf = []
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else ("" if v is None else v)) for k, v in r.items()})
    fmt = lambda v: "-" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v))
    buf.append("  ".join(f"{c:>12}" for c in REPORT_COLUMNS))
    for r in rows:
        buf.append("  ".join(f"{fmt(r[c]):>12}" for c in REPORT_COLUMNS))
    print("\n".join(buf))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgesplit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="dotted-path override, e.g. workload.lam=4 (repeatable)")
        sp.add_argument("--out", help="output directory (default: out_dir from the config)")

    s = sub.add_parser("simulate", help="run episodes and write slot logs and metrics")
    common(s, config_required=True)
    s.add_argument("--controller", help="dpp, cost-greedy, edge-only, cloud-only, layer-split[:l], random, "
                                        "learned:<checkpoint>")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train the learned policy")
    common(t, config_required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("sweep", help="grid of runs over one parameter")
    common(w, config_required=True)
    w.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    w.add_argument("--values", nargs="+", required=True, help="comma- or space-separated numbers")
    w.add_argument("--controller")
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize metrics_*.json files in a directory")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out")
    r.add_argument("--force", action="store_true", help="aggregate runs from different configurations")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

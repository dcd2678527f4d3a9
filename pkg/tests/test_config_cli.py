import csv
import json

import pytest

from edgesplit.cli import (
    EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, build_report, experiment_hash, main,
)
from edgesplit.config import ConfigError, RunConfig, apply_overrides, load_config
from edgesplit.cost import CostModel, transfer_time
from edgesplit.network import LINK_PRESETS
from edgesplit.partition import cloud_only
from edgesplit.workload import build_model_spec


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


SHORT = {"episode": {"T_max": 60}, "workload": {"lam": 2.0}}


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(l for l in fh if not l.startswith("#")))


def test_schema_roundtrip(tmp_path):
    cfg = RunConfig()
    back = load_config(write_cfg(tmp_path, cfg.model_dump(mode="json")))
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert back.canonical_json() == cfg.canonical_json()


def test_overrides():
    doc = apply_overrides({"workload": {"lam": 1}}, ["workload.lam=7.5", "scenario.name=4g", "seed=3"])
    assert doc == {"workload": {"lam": 7.5}, "scenario": {"name": "4g"}, "seed": 3}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    cfg = load_config(None, ["lyapunov.V_fixed=2"])
    assert cfg.episode_config().lyap.V_fixed == 2


def test_config_errors(tmp_path):
    for doc in ({"train": {"gamma": 1.5}}, {"bogus": 1}, {"model": "gpt5"}, {"scenario": {"name": "mars"}},
                {"lyapunov": {"V_min": 5, "V_max": 1}}):
        with pytest.raises(ConfigError):
            load_config(write_cfg(tmp_path, doc))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_hash_ignores_seed_and_output():
    a = RunConfig()
    assert a.config_hash() == RunConfig(seed=9, out_dir="x", workers=4).config_hash()
    assert a.config_hash() != RunConfig(workload={"lam": 9}).config_hash()
    assert experiment_hash(a) == experiment_hash(RunConfig(controller="cloud-only", scenario={"name": "4g"}))


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    bad = write_cfg(tmp_path, {"train": {"gamma": 1.5}})
    assert main(["train", "--config", bad, "--out", str(tmp_path)]) == EXIT_CONFIG
    big = write_cfg(tmp_path, {"model": "llama-13b", **SHORT}, "big.json")
    assert main(["simulate", "--config", big, "--controller", "edge-only", "--out", str(tmp_path / "b")]) \
        == EXIT_INFEASIBLE
    assert main(["simulate", "--config", big, "--controller", "oracle", "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_simulate_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {**SHORT, "scenario": {"name": "var"}})
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--seed", "11"]) == EXIT_OK
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert {"schema.json", "config.json", "slots_dpp_var_s11.csv", "metrics_dpp_var_s11.json",
            "plan_dpp_var_s11.csv"} <= set(names)
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n
    m = json.loads((outs[0] / "metrics_dpp_var_s11.json").read_text())
    assert m["seed"] == 11 and m["config_hash"] and m["experiment_hash"]
    assert (outs[0] / "slots_dpp_var_s11.csv").read_text().startswith(f"# config_hash={m['config_hash']} seed=11")


def test_cloud_only_p95_above_lower_bound(tmp_path):
    cfg = write_cfg(tmp_path, {"episode": {"T_max": 200}, "workload": {"lam": 0.5}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--controller", "cloud-only", "--out", str(out)]) == EXIT_OK
    m = json.loads((out / "metrics_cloud-only_wifi_s0.json").read_text())
    spec = build_model_spec("gpt2-1.5b")
    rc = load_config(cfg)
    n_min = rc.workload.seq_len.n_min
    cm = CostModel(spec, rc.device_profile())
    upload = transfer_time(n_min * spec.d_model * 2, LINK_PRESETS["wifi"])
    compute = cm.evaluate(cloud_only(spec), n_min, LINK_PRESETS["wifi"]).T_comp_c
    assert m["p95"] > upload + compute


def test_sweep_rows_and_errors(tmp_path):
    cfg = write_cfg(tmp_path, {**SHORT, "seeds": 2})
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--param", "V", "--values", "0.1,1", "10", "--out", str(out)]) == EXIT_OK
    text = (out / "sweep.csv").read_text()
    assert text.startswith("# experiment_hash=")
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 3 * 2
    assert [float(r["value"]) for r in rows] == [0.1, 0.1, 1, 1, 10, 10]
    assert main(["sweep", "--config", cfg, "--param", "V", "--values", ",", "--out", str(out)]) == EXIT_CONFIG
    assert main(["sweep", "--config", cfg, "--param", "V", "--values", "abc", "--out", str(out)]) == EXIT_CONFIG


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = write_cfg(tmp_path, SHORT)
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sweep", "--config", cfg, "--param", "bandwidth", "--values", "10", "50"]
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b), "--workers", "2"]) == EXIT_OK
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_lambda_sweep_agrees_with_probe(tmp_path):
    from edgesplit.policy import baseline
    from edgesplit.sim import stability_probe
    cfg_path = write_cfg(tmp_path, {"episode": {"T_max": 300}, "controller": "cloud-only"})
    out = tmp_path / "lam"
    grid = [2.0, 6.0, 12.0, 20.0]
    assert main(["sweep", "--config", cfg_path, "--param", "lambda", "--values", *map(str, grid),
                 "--out", str(out)]) == EXIT_OK
    verdicts = {float(r["value"]): r["verdict"] for r in read_rows(out / "sweep.csv")}
    rc = load_config(cfg_path)
    best = stability_probe(lambda c: baseline("cloud-only", c.spec), rc.episode_config(), grid, seed=0)
    stable = [v for v in grid if verdicts[v] == "stable"]
    assert best == (max(stable) if stable else None)


def test_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SHORT)
    out = tmp_path / "r"
    for ctrl in ("cloud-only", "dpp"):
        assert main(["simulate", "--config", cfg, "--controller", ctrl, "--out", str(out)]) == EXIT_OK
    assert main(["report", "--in", str(out)]) == EXIT_OK
    rows = read_rows(out / "report.csv")
    assert len(rows) == 2
    by = {r["controller"]: r for r in rows}
    assert float(by["cloud-only"]["p95_reduction_vs_cloud"]) == 0.0
    assert float(by["dpp"]["p95_reduction_vs_cloud"]) == 1 - float(by["dpp"]["p95"]) / float(by["cloud-only"]["p95"])
    first = (out / "report.csv").read_bytes()
    assert main(["report", "--in", str(out)]) == EXIT_OK
    assert (out / "report.csv").read_bytes() == first


def test_report_refuses_mixed_configs():
    ms = [{"scenario": "wifi", "controller": "dpp", "p50": 1.0, "p95": 1.0, "p99": 1.0, "mean_energy": 1.0,
           "mean_Q": 0.0, "experiment_hash": h} for h in ("a", "b")]
    with pytest.raises(ConfigError):
        build_report(ms)
    assert build_report(ms, force=True)[0]["runs"] == 2


def test_report_empty_dir(tmp_path):
    assert main(["report", "--in", str(tmp_path)]) == EXIT_CONFIG


def test_train_command(tmp_path):
    cfg = write_cfg(tmp_path, {"model": "toy", "episode": {"T_max": 10},
                               "train": {"episodes": 3, "warmup_episodes": 1, "update_every": 10, "eval_every": 0,
                                         "hidden": 8, "d_enc": 8, "d_e": 4}})
    out = tmp_path / "t"
    assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert len(read_rows(out / "curve.csv")) == 3
    assert (out / "checkpoint.json").exists() and (out / "metrics_learned_eval.json").exists()
    sim = tmp_path / "s"
    assert main(["simulate", "--config", cfg, "--controller", f"learned:{out / 'checkpoint.json'}",
                 "--out", str(sim)]) == EXIT_OK
    assert main(["train", "--config", cfg, "--out", str(out), "--resume", str(out / "checkpoint.json"),
                 "--set", "train.episodes=5"]) == EXIT_OK
    assert len(read_rows(out / "curve.csv")) == 2

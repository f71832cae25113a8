import json
import math

import pytest

from pinchflow.cli import int_list, main
from pinchflow.config import ConfigError, effective, load_flow_config, parse_override, preset
from pinchflow.harness import expand_sweep, resolve

FAST = ["--preset", "equator", "--set", "mesh.nodes=48", "--set", "stepper.t_max=0.02",
        "--set", "output_dt=0.005"]


def test_int_list():
    assert int_list("5..8") == [5, 6, 7, 8]
    assert int_list("2,3") == [2, 3]


def test_verify_algebra_exit_zero(tmp_path, capsys):
    out = tmp_path / "alg.csv"
    assert main(["verify-algebra", "--n", "5", "--ell", "2", "--samples", "500", "--seed", "7",
                 "--out", str(out)]) == 0
    assert "seed 7" in capsys.readouterr().out
    assert out.read_text().startswith("name,n,ell,samples,violations,min_margin")


def test_exact_extinction(capsys):
    code = main(["exact", "--family", "geodesic-sphere", "--phi0", "1.0471975512", "--n", "8",
                 "--expect-extinction", str(math.log(2) / 8)])
    rep = json.loads(capsys.readouterr().out)
    assert code == 0 and rep["terminal"] == "extinction"
    assert rep["extinction_time"] == pytest.approx(math.log(2) / 8, rel=1e-6)


def test_exact_check_failure_exit_one():
    assert main(["exact", "--phi0", "1.0471975512", "--expect-extinction", "0.2"]) == 1


def test_poincare_reports_gamma(capsys):
    main(["poincare", "--budget", "5000"])
    rep = json.loads(capsys.readouterr().out)
    assert rep["gamma"] > 0 and rep["checks"]["consistent"] and rep["seed"] == 0


def test_schema_errors_exit_two(tmp_path, capsys):
    assert main(["flow", "--preset", "nope"]) == 2
    assert main(["flow", "--preset", "equator", "--set", "mesh.bogus=1"]) == 2
    assert main(["flow", "--preset", "equator", "--set", "ambient.n=\"eight\""]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["flow", "--config", str(bad)]) == 2
    assert main(["no-such-command"]) == 2
    capsys.readouterr()


def test_flow_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["flow", *FAST, "--out", str(a)]) == 0
    assert main(["flow", *FAST, "--out", str(b)]) == 0
    rep = json.loads(capsys.readouterr().out.splitlines()[0])
    assert rep["reason"] == "long-time" and rep["terminated"] is False
    for name in ("effective-config.json", "series.csv", "events.jsonl", "report.json", "snapshots/snap-0000.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    head = (a / "series.csv").read_text().splitlines()
    assert head[0] == "# series-version: 1"
    assert "t,maxH,minH,minRho,area,supQ,cylDecayRatio,weightedDecay,cylRatioN1,gradRatio,hessRatio,codimFsigma" \
        in head[4]


def test_effective_config_round_trips(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["flow", *FAST, "--out", str(a)])
    main(["flow", "--config", str(a / "effective-config.json"), "--out", str(b)])
    capsys.readouterr()
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    assert (a / "effective-config.json").read_bytes() == (b / "effective-config.json").read_bytes()


def test_print_config_materializes_defaults(capsys):
    assert main(["flow", "--preset", "dumbbell-n8", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["surgery"]["tau"] == 0.15 and cfg["mesh"]["refine_at"] == 0.025
    assert cfg["pinching"]["alpha"] == 0.01


def test_report(tmp_path, capsys):
    run = tmp_path / "r"
    main(["flow", *FAST, "--out", str(run)])
    capsys.readouterr()
    out = tmp_path / "rep.json"
    assert main(["report", "--series", str(run / "series.csv"), "--events", str(run / "events.jsonl"),
                 "--points", "3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["area_nonincreasing"] and rep["events"]["surgeries"] == 0
    assert len(rep["plot"]["t"]) == 3


def test_sweep_parallel(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PINCHFLOW_WORKERS", "2")
    spec = {"preset": "equator", "base": {"stepper": {"t_max": 0.01}, "output_dt": 0.005},
            "grid": {"mesh.nodes": [32, 40]}}
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(spec))
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "sw")]) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "run,mesh.nodes,exit,reason,terminated,n_surgeries"
    assert lines[1].startswith("0,32,0,long-time") and lines[2].startswith("1,40,0,long-time")
    capsys.readouterr()


def test_config_helpers():
    assert parse_override("mesh.nodes=64") == ("mesh.nodes", 64)
    assert parse_override("initial.kind=dumbbell") == ("initial.kind", "dumbbell")
    with pytest.raises(ConfigError):
        parse_override("nokey")
    with pytest.raises(ConfigError):
        load_flow_config({"surgery": {"epsilon": 0.5}})
    with pytest.raises(ConfigError):
        expand_sweep({"grid": {"mesh.nodes": []}})
    cfg = resolve("dumbbell-n8", None, [("seed", 3)])
    assert cfg.seed == 3 and load_flow_config(effective(cfg)) == cfg
    assert set(preset("clifford")) >= {"initial", "ambient"}

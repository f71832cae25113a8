"""Flow runs and sweeps: build the initial state, evolve, write the artifacts."""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import profile as pf
from .config import ConfigError, FlowConfig, effective, load_flow_config, merge, preset, set_path
from .records import SERIES_COLUMNS, json_line, to_dict, write_series
from .surgery import SurgeryRejected, event_checks, run_with_surgery

EXIT_OK, EXIT_CHECK, EXIT_SCHEMA, EXIT_NUMERIC = 0, 1, 2, 3
ABORTS = {"resolution-limit", "step-cap", "surgery-cap", "degenerate-neck"}


def build_state(cfg: FlowConfig) -> pf.ProfileState:
    a, ic, m = cfg.ambient, cfg.initial, cfg.mesh
    nodes = m.nodes
    if ic.kind == "geodesic-sphere":
        st = pf.build_geodesic_sphere(ic.phi, a.n, a.K, nodes)
    elif ic.kind == "clifford":
        st = pf.build_clifford(ic.phi, a.n, a.K, nodes)
    elif ic.kind == "perturbed-sphere":
        st = pf.build_perturbed_sphere(ic.amplitude, ic.mode, a.n, a.K, nodes, ic.phi0)
    elif ic.kind == "dumbbell":
        st = pf.build_dumbbell(ic.neck_ratio, ic.separation, a.n, a.K, nodes, m.ds, ic.bulb, ic.slope)
    else:
        raise ConfigError(f"initial.kind: unknown kind {ic.kind!r}")
    if ic.require_pinched:
        pf.check_pinched(st, cfg.pinching.params(a.n))
    return st


def resolve(preset_name: str | None, config: dict | None, overrides=()) -> FlowConfig:
    data = preset(preset_name) if preset_name else {}
    if config:
        data = merge(data, config)
    for k, v in overrides:
        set_path(data, k, v)
    return load_flow_config(data)


def running_max(series, keys=("gradRatio", "hessRatio", "codimFsigma", "cylDecayRatio", "supQ")) -> dict:
    out = {}
    for k in keys:
        vals = [getattr(r, k) for r in series if math.isfinite(getattr(r, k))]
        out[k] = max(vals) if vals else math.nan
    return out


def _snap(out: Path | None, idx: int, state, params) -> None:
    if out is None:
        return
    d = out / "snapshots"
    d.mkdir(exist_ok=True)
    pf.write_snapshot(d / f"snap-{idx:04d}.json", state, params)


def run_flow(cfg: FlowConfig, out: Path | None = None) -> tuple[int, dict]:
    """Run one flow; returns (exit code, report)."""
    params = cfg.pinching.params(cfg.ambient.n)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective-config.json").write_text(json.dumps(effective(cfg), indent=2, sort_keys=True) + "\n")
    try:
        state = build_state(cfg)
    except pf.NotPinchedError as e:
        raise ConfigError(str(e)) from None
    snaps = [0]
    if cfg.snapshots:
        _snap(out, 0, state, params)
    report = {"n": cfg.ambient.n, "K": cfg.ambient.K, "seed": cfg.seed, "initial": cfg.initial.kind}
    checks: dict = {}
    events = []
    try:
        if cfg.with_surgery:
            def on_event(ev, st):
                if cfg.snapshots and st.components:
                    _snap(out, len(snaps), st, params)
                    snaps.append(len(snaps))

            res = run_with_surgery(state, params, cfg.surgery, cfg.mesh, cfg.stepper,
                                   cfg.pinching.sigma, cfg.output_dt, on_event=on_event)
            events = res.events
            series, final, reason = res.series, res.state, res.reason
            report.update(terminated=res.terminated, n_surgeries=res.n_surgeries,
                          classifications=res.classifications(), flags=res.flags)
            per = [event_checks(e, cfg.surgery, cfg.ambient.K) for e in events]
            for name in ("area_decrease", "q_cap", "h_window"):
                vals = [p[name] for p in per if name in p]
                checks[name] = all(vals)
            checks["discards_classified"] = all(cls in ("Sn", "S1xSnm1") for e in events for _, cls in e.discarded)
        else:
            ev = pf.evolve(state, cfg.stepper.t_max, params, cfg.mesh, cfg.stepper, cfg.pinching.sigma,
                           cfg.output_dt)
            series, final, reason = ev.series, ev.state, ev.reason
            report.update(terminated=False, n_surgeries=0, classifications={}, flags=[reason])
            if reason == "resolution-limit":
                reason = "resolution-limit-reached"
    except SurgeryRejected as e:
        report.update(reason="surgery-rejected", error=str(e))
        _write(out, report, [], events, cfg)
        return EXIT_CHECK, report
    except pf.ProfileError as e:
        report.update(reason="numerical-abort", error=str(e))
        _write(out, report, [], events, cfg)
        return EXIT_NUMERIC, report
    report["reason"] = reason
    report["final_t"] = final.t
    report["components"] = [pf.ARC if c.is_arc else pf.LOOP for c in final.components]
    report["running_max"] = running_max(series)
    report["checks"] = checks
    if cfg.snapshots and final.components:
        _snap(out, len(snaps), final, params)
    _write(out, report, series, events, cfg)
    if reason in ABORTS:
        return EXIT_NUMERIC, report
    return (EXIT_OK if all(checks.values()) else EXIT_CHECK), report


def _write(out, report, series, events, cfg) -> None:
    if out is None:
        return
    if series:
        write_series(out / "series.csv", series, {"n": cfg.ambient.n, "K": cfg.ambient.K, "seed": cfg.seed})
    with open(out / "events.jsonl", "w") as fh:
        for e in events:
            d = to_dict(e)
            d["checks"] = event_checks(e, cfg.surgery, cfg.ambient.K)
            fh.write(json_line(d) + "\n")
    (out / "report.json").write_text(json_line(report) + "\n")


# -------------------------------------------------------------------- sweeps

def expand_sweep(spec: dict) -> list[tuple[dict, dict]]:
    """(assignment, config dict) for the cartesian product of the grid."""
    unknown = sorted(set(spec) - {"preset", "base", "grid"})
    if unknown:
        raise ConfigError(f"sweep: unknown key(s) {', '.join(unknown)}")
    base = preset(spec["preset"]) if spec.get("preset") else {}
    base = merge(base, spec.get("base", {}))
    grid = spec.get("grid", {})
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        raise ConfigError("sweep.grid: expected an object of non-empty lists")
    keys = sorted(grid)
    runs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        d = json.loads(json.dumps(base))
        assign = dict(zip(keys, combo))
        for k, v in assign.items():
            set_path(d, k, v)
        load_flow_config(d)  # validate early
        runs.append((assign, d))
    return runs


def _sweep_worker(args):
    idx, assign, data, out = args
    cfg = load_flow_config(data)
    sub = Path(out) / f"run-{idx:03d}" if out else None
    try:
        code, rep = run_flow(cfg, sub)
    except ConfigError as e:
        code, rep = EXIT_SCHEMA, {"reason": "config-error", "error": str(e)}
    return idx, assign, code, rep


def workers() -> int:
    v = os.environ.get("PINCHFLOW_WORKERS")
    if v:
        try:
            return max(1, int(v))
        except ValueError:
            raise ConfigError("PINCHFLOW_WORKERS must be an integer") from None
    return max(1, min(4, os.cpu_count() or 1))


def run_sweep(spec: dict, out: Path | None) -> tuple[int, list]:
    runs = expand_sweep(spec)
    jobs = [(i, a, d, str(out) if out else None) for i, (a, d) in enumerate(runs)]
    nw = workers()
    if nw == 1 or len(jobs) == 1:
        results = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(_sweep_worker, jobs))
    results.sort(key=lambda r: r[0])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        keys = sorted({k for _, a, _, _ in results for k in a})
        lines = [",".join(["run"] + keys + ["exit", "reason", "terminated", "n_surgeries"])]
        for i, a, code, rep in results:
            lines.append(",".join([str(i)] + [str(a.get(k, "")) for k in keys]
                                  + [str(code), str(rep.get("reason", "")), str(rep.get("terminated", "")),
                                     str(rep.get("n_surgeries", ""))]))
        (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    worst = max((c for _, _, c, _ in results), default=0)
    return worst, results


# -------------------------------------------------------------------- report

def summarize_series(rows: list[dict], points: int = 200) -> dict:
    """Plot-ready aggregates of a series CSV (rows from records.read_series)."""
    if not rows:
        raise ConfigError("series is empty")
    out = {"rows": len(rows), "t_final": rows[-1]["t"], "running_max": {}, "final": {}}
    for k in SERIES_COLUMNS[1:]:
        vals = np.array([r[k] for r in rows])
        fin = vals[np.isfinite(vals)]
        out["running_max"][k] = float(fin.max()) if len(fin) else math.nan
        out["final"][k] = float(vals[-1])
    idx = np.unique(np.linspace(0, len(rows) - 1, min(points, len(rows))).round().astype(int))
    out["plot"] = {k: [rows[i][k] for i in idx] for k in SERIES_COLUMNS}
    w = [r["weightedDecay"] for r in rows if math.isfinite(r["weightedDecay"])]
    out["weighted_decay_nonincreasing"] = all(b <= 1.05 * a for a, b in zip(w, w[1:]))
    ar = [r["area"] for r in rows if math.isfinite(r["area"])]
    out["area_nonincreasing"] = all(b <= a * (1 + 1e-9) for a, b in zip(ar, ar[1:]))
    return out

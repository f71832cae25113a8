"""Command line entry point: ``pinchflow <subcommand> ...``.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .algebra import AmbientSphere, ValidationError, probe_sharpness, run_inequality_suite
from .config import ConfigError, effective, parse_override
from .exact import CliffordEmbedding, CliffordTorus, GeodesicSphere, evolve_exact
from .harness import (EXIT_CHECK, EXIT_NUMERIC, EXIT_OK, EXIT_SCHEMA, resolve, run_flow, run_sweep,
                      summarize_series)
from .pinching import default_eta, poincare_inf
from .records import fmt, json_line, read_series



def int_list(text: str) -> list[int]:
    """'5..8' or '5,6,8' or '7'."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _load_json(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d


# ------------------------------------------------------------- subcommands

def cmd_verify_algebra(a) -> int:
    rows = []
    for n in a.n:
        for ell in a.ell:
            rows.extend(run_inequality_suite(n, ell, a.samples, a.seed, a.tol))
    ok = True
    print(f"# seed {a.seed}, {a.samples} samples per inequality, tolerance {a.tol:g}")
    print(f"{'inequality':<8} {'n':>2} {'ell':>3} {'violations':>10} {'min_margin':>14}  result")
    for r in rows:
        good = r.violations == 0
        ok &= good
        print(f"{r.name:<8} {r.n:>2} {r.ell:>3} {r.violations:>10} {fmt(r.min_margin):>14}  {'pass' if good else 'FAIL'}")
    if a.probe:
        p = probe_sharpness("LiLi", max(a.n), max(a.ell), a.probe, a.seed)
        good = p.min_margin <= 1e-3
        ok &= good
        print(f"LiLi sharpness probe: min margin {fmt(p.min_margin)} after {p.evaluations} evaluations  "
              f"{'pass' if good else 'FAIL'}")
    if a.out:
        with open(a.out, "w") as fh:
            fh.write("name,n,ell,samples,violations,min_margin\n")
            for r in rows:
                fh.write(f"{r.name},{r.n},{r.ell},{r.samples},{r.violations},{fmt(r.min_margin)}\n")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_poincare(a) -> int:
    eta = default_eta(a.n) if a.eta is None else a.eta
    res = poincare_inf(a.n, a.alpha, eta, a.K, a.budget, a.seed)
    consistent = res.empty or res.consistency_min >= -1e-12
    enough = res.empty or res.gamma >= a.gamma_min
    rep = {"n": a.n, "alpha": a.alpha, "eta": eta, "K": a.K, "budget": a.budget, "seed": a.seed,
           "gamma": res.gamma, "feasible": res.feasible, "evaluated": res.evaluated, "empty": res.empty,
           "consistency_min": res.consistency_min, "gamma_min": a.gamma_min,
           "checks": {"consistent": consistent, "gamma_at_least_min": enough}}
    print(json_line(rep))
    if a.out:
        Path(a.out).write_text(json_line(rep) + "\n")
    return EXIT_OK if consistent and enough else EXIT_CHECK


def cmd_exact(a) -> int:
    sphere = AmbientSphere(a.n, 1, a.K)
    if a.family == "geodesic-sphere":
        f = GeodesicSphere(a.phi0, sphere)
    elif a.family == "clifford-torus":
        f = CliffordTorus(a.p, a.n - a.p, a.phi0, sphere)
    else:
        f = CliffordEmbedding(a.p, a.epsilon, sphere)
    tr = evolve_exact(f, a.t_end, a.dt, record_every=a.record_every)
    last = tr.samples[-1]
    rep = {"family": a.family, "n": a.n, "K": a.K, "terminal": tr.terminal,
           "extinction_time": tr.extinction_time, "t": last.t, "phi": last.phi, "Hnorm": last.Hnorm}
    ok = True
    if a.expect_extinction is not None:
        T = tr.extinction_time
        ok = T is not None and abs(T - a.expect_extinction) <= a.rtol * abs(a.expect_extinction)
        rep["checks"] = {"extinction": ok}
    print(json_line(rep))
    if a.out:
        tr.write_csv(a.out)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_flow(a) -> int:
    cfg = resolve(a.preset, _load_json(a.config), [parse_override(s) for s in a.set or []])
    if a.no_surgery:
        cfg.with_surgery = False
    if a.print_config:
        print(json.dumps(effective(cfg), indent=2, sort_keys=True))
        return EXIT_OK
    code, rep = run_flow(cfg, Path(a.out) if a.out else None)
    print(json_line(rep))
    return code


def cmd_sweep(a) -> int:
    spec = _load_json(a.config)
    code, results = run_sweep(spec, Path(a.out) if a.out else None)
    for i, assign, c, rep in results:
        print(json_line({"run": i, "params": assign, "exit": c, "reason": rep.get("reason")}))
    return code


def cmd_report(a) -> int:
    try:
        rows = read_series(a.series)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read series {a.series}: {e}") from None
    out = summarize_series(rows, a.points)
    if a.events:
        with open(a.events) as fh:
            evs = [json.loads(line) for line in fh if line.strip()]
        out["events"] = {"surgeries": sum(e["kind"] == "surgery" for e in evs),
                         "discards": sum(e["kind"] == "discard" for e in evs),
                         "all_checks": all(all(e["checks"].values()) for e in evs)}
    text = json_line(out)
    if a.out:
        Path(a.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinchflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("verify-algebra", help="randomized inequality suites")
    s.add_argument("--n", type=int_list, default=int_list("5..8"))
    s.add_argument("--ell", type=int_list, default=int_list("2,3"))
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--probe", type=int, default=0, metavar="EVALS",
                   help="also run the LiLi sharpness probe with this budget")
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify_algebra)

    s = sub.add_parser("poincare", help="brute-force infimum of the F-inequality ratio")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--eta", type=float, default=None, help="default: half the admissible maximum")
    s.add_argument("--K", type=float, default=1.0)
    s.add_argument("--budget", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gamma-min", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_poincare)

    s = sub.add_parser("exact", help="reduced ODE of a symmetric exact solution")
    s.add_argument("--family", choices=["geodesic-sphere", "clifford-torus", "clifford-embedding"],
                   default="geodesic-sphere")
    s.add_argument("--phi0", type=float, default=math.pi / 3)
    s.add_argument("--p", type=int, default=1)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--K", type=float, default=1.0)
    s.add_argument("--t-end", type=float, default=1.0)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--record-every", type=int, default=100)
    s.add_argument("--expect-extinction", type=float, default=None)
    s.add_argument("--rtol", type=float, default=1e-6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("flow", help="profile flow, with surgery unless disabled")
    s.add_argument("--preset")
    s.add_argument("--config", help="JSON config merged over the preset")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, value as JSON")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--no-surgery", action="store_true")
    s.add_argument("--print-config", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("sweep", help="fan out flow runs over a parameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="plot-ready aggregates of a series CSV")
    s.add_argument("--series", required=True)
    s.add_argument("--events")
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_SCHEMA if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    if getattr(a, "seed", None) is not None and a.cmd == "flow":
        a.set = (a.set or []) + [f"seed={a.seed}"]
    try:
        return a.func(a)
    except (ConfigError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FloatingPointError, ArithmeticError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

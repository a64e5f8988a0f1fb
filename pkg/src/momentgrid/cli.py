"""Command line: ``momentgrid {solve,sweep,inspect,report}``.

Exit codes: 0 solved, 2 infeasible, 3 not converged, 4 bad input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cpoly import add_sphere_slack
from .driver import (SWEEP_HEADER, IterationConfig, grid, iterate_orders, laplacian_solve,
                     penalized_solve, solve_low, solve_moment, sweep)
from .errors import InputError, MaxItersExceeded
from .hierarchy import COMPLEX, REAL, sparse_decomposition
from .lowrelax import REAL_NATIVE
from .netio import (build_admittance, find_fixture, preprocess_low_impedance, read_case,
                    set_parameter)
from .opf import build_opf_qcqp
from .pop import read_pop

EXIT_OK, EXIT_INFEASIBLE, EXIT_NOT_CONVERGED, EXIT_INPUT = 0, 2, 3, 4

RELAXATIONS = {
    "shor-c": ("shor", COMPLEX),
    "shor-r": ("shor", REAL_NATIVE),
    "socp-c": ("socp", COMPLEX),
    "socp-r": ("socp", REAL),
    "moment-c": ("moment", COMPLEX),
    "moment-r": ("moment", REAL),
}
ALGORITHMS = ("none", "iterate", "penalize", "laplacian")

# case, parameter target, grid (lo, hi, points, decimals)
PRESETS = {
    "wb2": ("wb2", "bus:2:v_max", (0.976, 1.035, 10, 3)),
    "lmbm3": ("lmbm3", "branch:3-2:s_max", (28.35, 53.60, 10, 2)),
    "wb5": ("wb5", "gen:5:q_min", (-30.80, 61.81, 10, 2)),
}

_NUM = {"type": ["number", "null"]}


def _quantity(units: str) -> dict:
    return {**_NUM, "x-units": units}


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "momentgrid solve report",
    "type": "object",
    "required": ["status", "method", "flavor", "value", "lower_bound", "orders",
                 "iterations", "provenance", "timings", "units"],
    "properties": {
        "status": {"type": "string"},
        "method": {"type": "string"},
        "flavor": {"type": "string"},
        "value": _quantity("objective units ($/h on network cases)"),
        "dual_value": _quantity("objective units"),
        "lower_bound": _quantity("objective units"),
        "feasible_objective": _quantity("objective units"),
        "first_order_value": _quantity("objective units"),
        "gap_percent": _quantity("%"),
        "rank_ratio": _quantity("dimensionless (lambda_1 / lambda_2)"),
        "orders": {"type": "array", "items": {"type": "integer", "x-units": "relaxation order"}},
        "candidate": {"type": ["object", "null"],
                      "properties": {"re": {"type": "array", "items": _quantity("p.u.")},
                                     "im": {"type": "array", "items": _quantity("p.u.")}}},
        "mismatch": {"type": ["object", "null"],
                     "properties": {"zeta": _quantity("objective units"),
                                    "max_delta": _quantity("MVA on network cases"),
                                    "max_s_inj_mva": _quantity("MVA"),
                                    "max_s_flow_mva": _quantity("MVA"),
                                    "max_v_viol_pu": _quantity("p.u.")}},
        "iterations": {"type": "array", "items": {"type": "object"}},
        "message": {"type": "string"},
        "units": {"type": "object"},
        "provenance": {"type": "object"},
        "timings": {"type": "object", "additionalProperties": True, "x-units": "s"},
    },
}


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


# ---------------------------------------------------------------------------
# input


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    suffixes = [p.suffix] if p.suffix in (".m", ".pop") else [".m", ".pop"]
    for suffix in suffixes:
        try:
            return find_fixture(name, suffix)
        except FileNotFoundError:
            continue
    raise InputError(f"input {name!r} not found")


def _assignments(items):
    out = []
    for item in items or []:
        target, eq, value = item.partition("=")
        if not eq:
            raise InputError(f"--set expects TARGET=VALUE, got {item!r}")
        try:
            out.append((target.strip(), float(value)))
        except ValueError:
            raise InputError(f"--set value {value!r} is not a number") from None
    return out


def _load(args):
    """Returns (problem, case, path); case is None for .pop input."""
    path = _resolve(args.input)
    if path.suffix == ".pop":
        if args.set:
            raise InputError("--set applies to network cases only")
        return read_pop(path), None, path
    case = read_case(path)
    for target, value in _assignments(args.set):
        case = set_parameter(case, target, value)
    if args.thrshz:
        case, _ = preprocess_low_impedance(case, args.thrshz)
    return build_opf_qcqp(case), case, path


def _sphere(problem, case, radius_sq):
    if radius_sq is None:
        if case is None:
            raise InputError("--sphere on a .pop problem needs --radius-sq")
        radius_sq = float(sum(b.v_max ** 2 for b in case.buses))
        if not math.isfinite(radius_sq):
            raise InputError("--sphere needs finite voltage upper bounds")
    return add_sphere_slack(problem, radius_sq, realness=True)


def _config(args, **extra) -> IterationConfig:
    kw = {"sparse": args.sparse, "uniform": getattr(args, "uniform", False)}
    for flag, name in (("eps_g", "eps_g"), ("eps_f", "eps_f"), ("h", "h"),
                       ("delta", "delta"), ("max_iters", "max_iters"),
                       ("max_order", "max_order")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    kw.update(extra)
    return IterationConfig(**kw)


def _run_spec(args) -> dict:
    keys = ("relaxation", "algorithm", "order", "sparse", "sphere", "radius_sq", "eps_g",
            "eps_f", "h", "penalty_b", "delta", "thrshz", "max_iters", "max_order", "set")
    return {k: getattr(args, k, None) for k in keys}


# ---------------------------------------------------------------------------
# solve


def _solve_report(args, problem, case):
    kind, flavor = RELAXATIONS[args.relaxation]
    algo = args.algorithm
    cfg = _config(args)
    if kind in ("shor", "socp"):
        if algo not in ("none", "laplacian"):
            raise InputError(f"--algorithm {algo} needs a moment relaxation")
        if algo == "laplacian":
            if kind != "shor" or flavor != COMPLEX:
                raise InputError("the Laplacian method runs on shor-c")
            return laplacian_solve(problem, case, args.delta, cfg)
        return solve_low(problem, kind, flavor, cfg)
    if algo == "none":
        return solve_moment(problem, flavor, args.order, cfg)
    if algo == "iterate":
        return iterate_orders(problem, flavor, cfg)
    if algo == "penalize":
        return penalized_solve(problem, case, args.penalty_b or 0.0, flavor, cfg)
    raise InputError("the Laplacian method runs on shor-c")


def _exit_code(status: str) -> int:
    if status in ("optimal", "solved"):
        return EXIT_OK
    if status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_NOT_CONVERGED


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def report_json(report, units: str, provenance: dict) -> str:
    d = report.to_dict(units=units)
    d["provenance"] = {**provenance, **d.get("provenance", {})}
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def cmd_solve(args) -> int:
    problem, case, path = _load(args)
    if args.sphere:
        problem = _sphere(problem, case, args.radius_sq)
    try:
        report = _solve_report(args, problem, case)
    except MaxItersExceeded as e:
        report = e.report
        if report is None:
            raise
    units = "$/h" if case is not None else "objective"
    prov = {"input": path.name, "input_sha256": _sha256(path), "run_spec": _run_spec(args),
            "version": __version__}
    _emit(report_json(report, units, prov), args.out)
    shown = "-" if report.value is None else f"{report.value:.6g}"
    print(f"{path.name}: {report.status}, value {shown} {units}, orders up to "
          f"{report.max_order}, {report.timings.get('total', 0.0)} s", file=sys.stderr)
    return _exit_code(report.status)


# ---------------------------------------------------------------------------
# sweep


def _sweep_values(args):
    if args.values:
        try:
            return [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise InputError("--values must be comma-separated numbers") from None
    if args.lo is None or args.hi is None:
        raise InputError("give --values, --from/--to, or --preset")
    return grid(args.lo, args.hi, args.points, args.decimals)


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def cmd_sweep(args) -> int:
    if args.preset:
        name, target, (lo, hi, points, decimals) = PRESETS[args.preset]
        args.input = args.input or name
        args.param = args.param or target
        if args.values is None and args.lo is None:
            args.lo, args.hi, args.points, args.decimals = lo, hi, points, decimals
    if not args.input or not args.param:
        raise InputError("sweep needs a case and --param (or --preset)")
    path = _resolve(args.input)
    if path.suffix != ".m":
        raise InputError("sweeps run on network cases")
    case = read_case(path)
    if args.thrshz:
        case, _ = preprocess_low_impedance(case, args.thrshz)
    kind, flavor = RELAXATIONS[args.relaxation]
    if kind != "moment":
        raise InputError("sweeps use moment-c or moment-r")
    values = _sweep_values(args)
    set_parameter(case, args.param, values[0])  # validate the target up front
    cfg = _config(args, uniform=not args.adaptive)
    rows = sweep(case, args.param, values, flavor, cfg, jobs=args.jobs)
    _emit(sweep_csv(rows), args.out)
    bad = sum(r.status == "error" for r in rows)
    print(f"{path.name}: {len(rows)} points, {bad} errors", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect


def bus_orders(problem, raised=()) -> list[int]:
    """Order 2 on constraints of the listed bus ids, order 1 elsewhere."""
    groups = {f"bus:{b}" for b in raised}
    return [2 if c.group in groups else 1 for c in problem.constraints]


def inspect_case(case, thrshz: float = 0.0, raised=()) -> dict:
    """Counts and the clique decomposition with the given buses at order 2."""
    adm = build_admittance(case)
    problem = build_opf_qcqp(case, adm)
    known = {b.id for b in case.buses}
    missing = [b for b in raised if b not in known]
    if missing:
        raise InputError(f"unknown bus ids {missing}")
    dec = sparse_decomposition(problem, bus_orders(problem, raised), COMPLEX)
    ids = [b.id for b in case.buses]
    sizes = sorted((len(c) for c in dec.cliques), reverse=True)
    out = {
        "name": case.name,
        "buses": case.n_bus,
        "generators": len(case.gens),
        "branches": len(case.branches),
        "in_service_branches": len(case.active_branches()),
        "base_mva": case.base_mva,
        "graph": {"edges": len(dec.chordal_edges) - len(dec.fill_edges),
                  "fill_edges": len(dec.fill_edges),
                  "cliques": len(dec.cliques),
                  "max_clique": sizes[0] if sizes else 0,
                  "clique_sizes": sizes},
        "cliques": [[ids[i] for i in c] for c in dec.cliques],
    }
    if thrshz:
        red, groups = preprocess_low_impedance(case, thrshz)
        out["preprocessing"] = {"thrshz_pu": thrshz, "buses": red.n_bus,
                                "branches": len(red.branches),
                                "merged_groups": sum(len(m) > 1 for m in groups.members.values())}
    return out


def inspect_pop(problem) -> dict:
    dec = sparse_decomposition(problem, [1] * problem.m, COMPLEX)
    names = problem.var_names
    return {"variables": problem.n_vars, "constraints": problem.m,
            "degree": max(p.degree() for p in problem.polys()),
            "cliques": [[names[i] for i in c] for c in dec.cliques]}


def cmd_inspect(args) -> int:
    path = _resolve(args.input)
    if path.suffix == ".pop":
        info = inspect_pop(read_pop(path))
    else:
        raised = []
        if args.raise_buses:
            try:
                raised = [int(b) for b in args.raise_buses.split(",") if b.strip()]
            except ValueError:
                raise InputError("--raise expects comma-separated bus ids") from None
        info = inspect_case(read_case(path), args.thrshz or 0.0, raised)
    if args.json:
        _emit(json.dumps(info, indent=2) + "\n", args.out)
        return EXIT_OK
    lines = []
    if "buses" in info:
        lines.append(f"{info['name'] or path.name}: {info['buses']} buses, "
                     f"{info['generators']} generators, {info['branches']} branches")
        g = info["graph"]
        lines.append(f"graph: {g['edges']} edges, {g['fill_edges']} fill edges, "
                     f"{g['cliques']} cliques, largest {g['max_clique']}")
        if "preprocessing" in info:
            p = info["preprocessing"]
            lines.append(f"thrshz {p['thrshz_pu']:g} p.u.: {p['buses']} buses, "
                         f"{p['branches']} branches")
    else:
        lines.append(f"{path.name}: {info['variables']} variables, "
                     f"{info['constraints']} constraints, degree {info['degree']}")
    if len(info["cliques"]) <= args.max_cliques:
        for c in info["cliques"]:
            lines.append("clique {" + ",".join(str(v) for v in c) + "}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def iteration_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "max_order", "value", "max_mismatch", "rank_ratio"])
    for k, rec in enumerate(report.get("iterations", []), start=1):
        orders = rec.get("orders")
        mism = rec.get("max_unit_mismatch", rec.get("max_s_flow_mva"))
        w.writerow([rec.get("iteration", k), max(orders) if orders else "",
                    _cell(rec.get("value")), _cell(mism), _cell(rec.get("rank_ratio"))])
    return buf.getvalue()


def ratio_histogram_csv(ratios, bins: int = 10) -> str:
    """log10(lambda_1 / lambda_2) bin counts."""
    vals = np.log10([r for r in ratios if r is not None and r > 0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["log10_ratio_lo", "log10_ratio_hi", "count"])
    if len(vals):
        counts, edges = np.histogram(vals, bins=bins)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([f"{lo:.4g}", f"{hi:.4g}", int(c)])
    return buf.getvalue()


def _cell(v):
    return "" if v is None else repr(float(v))


def cmd_report(args) -> int:
    reports = []
    for name in args.reports:
        try:
            reports.append(json.loads(Path(name).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise InputError(f"cannot read report {name!r}: {e}") from None
    if args.kind == "iterations":
        if len(reports) != 1:
            raise InputError("iteration plots take one report")
        _emit(iteration_csv(reports[0]), args.out)
    else:
        ratios = [r.get("rank_ratio") for r in reports]
        ratios += [it.get("rank_ratio") for r in reports for it in r.get("iterations", [])]
        _emit(ratio_histogram_csv(ratios, args.bins), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--relaxation", choices=sorted(RELAXATIONS), default="moment-c")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sparse", dest="sparse", action="store_true", default=True,
                   help="clique-based complex hierarchy and Shor-c (default)")
    g.add_argument("--dense", dest="sparse", action="store_false",
                   help="one moment matrix over all variables")
    p.add_argument("--eps-g", type=float, help="bus mismatch tolerance, MVA")
    p.add_argument("--eps-f", type=float, help="relative objective tolerance")
    p.add_argument("--h", type=int, help="buses raised per iteration")
    p.add_argument("--delta", type=float, help="Laplacian cost cap, fraction of the bound")
    p.add_argument("--thrshz", type=float, default=0.0,
                   help="merge lines with |r + jx| below this, p.u.")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--max-order", type=int)
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="momentgrid", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one case or .pop problem; JSON report")
    s.add_argument("input", help="path, or a fixture name such as wb5 or ex71.pop")
    _common(s)
    s.add_argument("--order", type=int, help="uniform order for --algorithm none")
    s.add_argument("--sphere", action="store_true", help="lift onto a sphere with a slack")
    s.add_argument("--radius-sq", type=float, help="sphere radius squared (.pop input)")
    s.add_argument("--algorithm", choices=ALGORITHMS, default="none")
    s.add_argument("--penalty-b", type=float, default=0.0, help="$/MVAr")
    s.add_argument("--uniform", action="store_true", help="raise all orders together")
    s.add_argument("--set", action="append", metavar="TARGET=VALUE",
                   help="edit a case field, e.g. gen:5:q_min=-20.51")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="vary one case parameter; CSV table")
    w.add_argument("input", nargs="?", help="case path or fixture name")
    _common(w)
    w.set_defaults(relaxation="moment-r")
    w.add_argument("--preset", choices=sorted(PRESETS))
    w.add_argument("--param", help="bus:<id>:<field>, gen:<bus>:<field> or branch:<f>-<t>:<field>")
    w.add_argument("--from", dest="lo", type=float)
    w.add_argument("--to", dest="hi", type=float)
    w.add_argument("--points", type=int, default=10)
    w.add_argument("--decimals", type=int, default=2)
    w.add_argument("--values", help="comma-separated parameter values")
    w.add_argument("--adaptive", action="store_true",
                   help="raise orders per bus instead of uniformly")
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect", help="counts, cliques, preprocessing preview")
    i.add_argument("input")
    i.add_argument("--thrshz", type=float, default=0.0)
    i.add_argument("--raise", dest="raise_buses", metavar="BUSES",
                   help="comma-separated bus ids whose constraints get order 2")
    i.add_argument("--json", action="store_true")
    i.add_argument("--max-cliques", type=int, default=50, help="list cliques up to this many")
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect)

    r = sub.add_parser("report", help="CSV plot data from JSON reports")
    r.add_argument("reports", nargs="+")
    r.add_argument("--kind", choices=("iterations", "ratios"), default="iterations")
    r.add_argument("--bins", type=int, default=10)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _Usage as e:
        print(f"momentgrid: {e}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, ValueError) as e:
        print(f"momentgrid: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except MaxItersExceeded as e:
        print(f"momentgrid: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())

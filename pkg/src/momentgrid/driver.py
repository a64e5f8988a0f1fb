"""End-to-end algorithms on top of the relaxations.

* ``iterate_orders``: raise relaxation orders where the extracted point
  disagrees with the relaxation, until the point is certified.
* ``penalized_solve``: the same loop on a cost augmented by a reactive
  power penalty.
* ``laplacian_solve``: Shor relaxation with a weighted network Laplacian
  objective under a generation-cost cap.
* ``sweep``: one parameter varied over a grid, points run in parallel.
"""

from __future__ import annotations

import concurrent.futures as cf
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import conic
from .cpoly import (CPolynomial, CPolyProblem, add_ball, is_oscillatory, real_form,
                    to_real)
from .errors import InputError, MaxItersExceeded, NotQuadratic
from .hierarchy import COMPLEX, REAL, build_moment, constraint_degree
from .lowrelax import build_shor, build_socp
from .opf import OpfData, build_opf_qcqp, flow_forms

POWER_KINDS = {"pmin", "pmax", "qmin", "qmax", "p_balance", "q_balance"}
VOLTAGE_KINDS = {"vmin", "vmax"}


@dataclass
class IterationConfig:
    eps_g: float = 1.0  # MVA on OPF problems
    eps_f: float = 5e-4  # relative to 1 + |L(f)|
    h: int = 2
    max_iters: int = 10
    max_order: int = 3
    eps_generic: float = 1e-4  # replaces eps_g on problems without network data
    eps_b: float = 0.0  # $/MVAr
    delta: float = 0.005
    delta_step: float = 0.005
    outer_delta: bool = False
    outer_every: int = 20
    rank_ratio: float = 1e4
    uniform: bool = False
    sparse: bool = True
    fix_phase: bool = True
    ball: bool = True
    eps_flow: float = 1.0  # MVA
    eps_inj: float = 1.0  # MVA
    eps_v: float = 5e-4  # p.u.
    tol: conic.Tolerances | None = None

    def __post_init__(self):
        if not (self.eps_g > 0 and self.eps_f > 0 and self.eps_generic > 0):
            raise InputError("tolerances eps_g, eps_f must be positive")
        if self.h < 1:
            raise InputError("h must be at least 1")
        if self.delta < 0 or self.eps_b < 0:
            raise InputError("delta and the penalty must be nonnegative")
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")


# ---------------------------------------------------------------------------
# mismatches


@dataclass
class MismatchReport:
    zeta: float
    delta: list  # per constraint, |g_i(z) - L(g_i)| (MVA for power rows on OPF)
    s_inj: np.ndarray = field(default_factory=lambda: np.zeros(0))  # per bus, MVA
    s_flow: np.ndarray = field(default_factory=lambda: np.zeros(0))  # per branch, MVA
    v_viol: np.ndarray = field(default_factory=lambda: np.zeros(0))  # per bus, p.u.
    units: dict = field(default_factory=dict)  # escalation unit -> mismatch

    @property
    def max_delta(self) -> float:
        return max(self.delta, default=0.0)

    @property
    def max_unit(self) -> float:
        return max(self.units.values(), default=0.0)

    def summary(self) -> dict:
        def mx(a):
            return float(np.max(a)) if len(a) else 0.0
        return {"zeta": self.zeta, "max_delta": self.max_delta,
                "max_s_inj_mva": mx(self.s_inj), "max_s_flow_mva": mx(self.s_flow),
                "max_v_viol_pu": mx(self.v_viol)}


def _safe(L, poly):
    try:
        return L(poly)
    except (KeyError, NotQuadratic):
        return None


def _fit(poly: CPolynomial, n: int) -> CPolynomial:
    return poly if poly.n_vars == n else poly.extend(n)


def _opf(problem) -> OpfData | None:
    return problem.meta.get("opf")


def compute_mismatches(problem: CPolyProblem, L, z, value: float | None = None
                       ) -> MismatchReport:
    """Compare the extracted point z with the relaxation's functional L.

    ``L`` maps a polynomial of ``problem`` to its relaxed value (moments or
    matrix entries).  ``value`` overrides L(f), e.g. when f has squared
    terms that only the relaxation's epigraph represents.
    """
    z = np.asarray(z, dtype=complex)
    n = problem.n_vars
    f_rel = value if value is not None else _safe(L, problem.objective)
    f_z = problem.objective.evaluate(z).real
    zeta = math.inf if f_rel is None else abs(f_z - f_rel)
    data = _opf(problem)
    base = data.base_mva if data is not None else 1.0

    def diff(poly):
        lv = _safe(L, _fit(poly, n))
        return math.inf if lv is None else poly.evaluate(z[:poly.n_vars]).real - lv

    delta = []
    for c in problem.constraints:
        lv = _safe(L, c.poly)
        if lv is None and c.norm_form is not None:
            r, qs = c.norm_form
            parts = [_safe(L, q) for q in qs]
            lv = None if None in parts else r * r - sum(p * p for p in parts)
        d = math.inf if lv is None else abs(c.poly.evaluate(z).real - lv)
        if data is not None and c.kind in POWER_KINDS:
            d *= base
        elif data is not None and c.norm_form is not None:
            d = base * math.hypot(*(diff(q) for q in c.norm_form[1]))
        delta.append(d)

    if data is None:
        units = {}
        for i, c in enumerate(problem.constraints):
            u = c.group or f"#{i}"
            units[u] = max(units.get(u, 0.0), delta[i])
        return MismatchReport(zeta, delta, units=units)

    nb = len(data.bus_ids)
    s_inj = np.array([base * abs(complex(diff(data.p_forms[k]), diff(data.q_forms[k])))
                      for k in range(nb)])
    adm = data.adm
    s_flow = np.zeros(len(adm.branch_ids))
    end_mm = {}
    for b in range(len(adm.branch_ids)):
        for end in ("from", "to"):
            P, Q = flow_forms(adm, b, end)
            m = base * abs(complex(diff(P), diff(Q)))
            s_flow[b] += m
            end_mm[(b, end)] = m
    mags = np.abs(z[:nb])
    v_viol = np.maximum(0.0, np.maximum(data.v_min - mags, mags - data.v_max))
    units = {}
    for k, bid in enumerate(data.bus_ids):
        units[f"bus:{bid}"] = float(s_inj[k])
    pos_of = {pos: b for b, pos in enumerate(adm.branch_ids)}
    for pos, end, _, _, _ in data.flow_forms:
        br = data.case.branches[pos]
        bid = br.from_bus if end == "from" else br.to_bus
        u = f"bus:{bid}"
        units[u] = max(units.get(u, 0.0), end_mm[(pos_of[pos], end)])
    for i, c in enumerate(problem.constraints):
        u = c.group or f"#{i}"
        if u not in units:
            units[u] = delta[i]
    return MismatchReport(zeta, delta, s_inj, s_flow, v_viol, units)


def violations(problem: CPolyProblem, z) -> dict:
    """Largest violation per class: power (MVA), voltage (p.u.), other (raw)."""
    z = np.asarray(z, dtype=complex)
    data = _opf(problem)
    base = data.base_mva if data is not None else 1.0
    out = {"power": 0.0, "voltage": 0.0, "other": 0.0}
    for c in problem.constraints:
        v = c.poly.evaluate(z).real
        bad = abs(v) if c.sense == "eq" else max(0.0, -v)
        if data is not None and c.kind in POWER_KINDS:
            out["power"] = max(out["power"], bad * base)
        elif data is not None and c.kind in VOLTAGE_KINDS:
            k = next(iter(c.poly.support()))
            mag = abs(z[k])
            out["voltage"] = max(out["voltage"], data.v_min[k] - mag, mag - data.v_max[k], 0.0)
        elif data is not None and c.norm_form is not None:
            r, qs = c.norm_form
            norm = math.sqrt(sum(q.evaluate(z).real ** 2 for q in qs))
            out["power"] = max(out["power"], (norm - r) * base)
        else:
            out["other"] = max(out["other"], bad)
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class SolveReport:
    status: str  # optimal, infeasible, max_iters, numerical_failure, solved
    value: float | None = None  # relaxation value at the last solve
    dual_value: float | None = None
    lower_bound: float | None = None  # certified bound on the original problem
    feasible_objective: float | None = None
    z: np.ndarray | None = None
    orders: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    mismatch: MismatchReport | None = None
    first_order_value: float | None = None
    rank_ratio: float | None = None
    method: str = ""
    flavor: str = ""
    message: str = ""
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def gap(self) -> float | None:
        """(feasible - bound) / |feasible|, or None when either is absent."""
        if self.feasible_objective is None or self.lower_bound is None:
            return None
        if self.feasible_objective == 0:
            return None
        # the bound never exceeds a feasible value; clip solver-tolerance noise
        return max(0.0, (self.feasible_objective - self.lower_bound)
                   / abs(self.feasible_objective))

    @property
    def max_order(self) -> int | None:
        return max(self.orders) if self.orders else None

    def to_dict(self, units: str = "objective") -> dict:
        z = None
        if self.z is not None:
            z = {"re": [float(v) for v in np.real(self.z)],
                 "im": [float(v) for v in np.imag(self.z)]}
        return {
            "status": self.status,
            "method": self.method,
            "flavor": self.flavor,
            "value": _num(self.value),
            "dual_value": _num(self.dual_value),
            "lower_bound": _num(self.lower_bound),
            "feasible_objective": _num(self.feasible_objective),
            "gap_percent": _num(None if self.gap is None else 100.0 * self.gap),
            "first_order_value": _num(self.first_order_value),
            "rank_ratio": _num(self.rank_ratio),
            "orders": list(self.orders),
            "candidate": z,
            "mismatch": None if self.mismatch is None else
            {k: _num(v) for k, v in self.mismatch.summary().items()},
            "iterations": self.iterations,
            "message": self.message,
            "units": {"value": units, "mismatch.max_s_inj_mva": "MVA",
                      "mismatch.max_s_flow_mva": "MVA", "mismatch.max_v_viol_pu": "p.u.",
                      "mismatch.zeta": units, "gap_percent": "%", "timings": "s"},
            "provenance": self.provenance,
            "timings": self.timings,
        }

    def log_lines(self) -> str:
        """The iteration history as JSON lines."""
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.iterations)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# iterative order selection


class _Relaxer:
    """Builds relaxations of one flavor and exposes L on the original polynomials."""

    def __init__(self, problem: CPolyProblem, flavor: str, cfg: IterationConfig):
        self.problem = problem
        self.flavor = flavor
        self.cfg = cfg
        self.rp = None
        self.pv = None
        if flavor == REAL:
            fix = cfg.fix_phase and is_oscillatory(problem)
            self.pv = problem.n_vars - 1 if fix else None
            rp = to_real(problem, fix_phase=fix, phase_var=self.pv)
            data = _opf(problem)
            if cfg.ball and data is not None and np.all(np.isfinite(data.v_max)):
                rp = add_ball(rp, float(np.sum(data.v_max ** 2)))
            self.rp = rp
        elif flavor != COMPLEX:
            raise InputError(f"flavor must be 'complex' or 'real', got {flavor!r}")

    def min_orders(self):
        p = self.problem
        flavor = self.flavor
        return [max(1, constraint_degree(p, i, flavor)) for i in range(p.m)]

    def objective_order(self):
        return max(1, constraint_degree(self.problem, -1, self.flavor))

    def build(self, orders, d_max):
        if self.flavor == COMPLEX:
            return build_moment(self.problem, COMPLEX, orders, sparse=self.cfg.sparse)
        extra = len(self.rp.constraints) - len(orders)
        return build_moment(self.rp, REAL, list(orders) + [d_max] * extra, sparse=False)

    def functional(self, sol):
        if self.flavor == COMPLEX:
            return sol.L
        pv = self.pv
        return lambda poly: sol.L(real_form(poly, pv))


def _units(problem: CPolyProblem):
    units: dict[str, list[int]] = {}
    for i, c in enumerate(problem.constraints):
        units.setdefault(c.group or f"#{i}", []).append(i)
    return units


def _record(it, orders, sol, mm, viol, ratio=None):
    rec = {"iteration": it, "orders": list(orders), "status": sol.status,
           "value": _num(sol.value), "dual_value": _num(sol.dual_value),
           "rank_ratio": _num(ratio)}
    if mm is not None:
        rec.update({k: _num(v) for k, v in mm.summary().items()})
        rec["max_unit_mismatch"] = _num(mm.max_unit)
    if viol is not None:
        rec["violation"] = {k: _num(v) for k, v in viol.items()}
    return rec


def _certified(problem, mm, viol, f_rel, cfg) -> bool:
    opf = _opf(problem) is not None
    eps = cfg.eps_g if opf else cfg.eps_generic
    if mm.max_unit >= eps:
        return False
    if mm.zeta > cfg.eps_f * (1.0 + abs(f_rel)):
        return False
    if viol["power"] > eps or viol["other"] > (cfg.eps_generic if opf else eps):
        return False
    return viol["voltage"] <= cfg.eps_v


def iterate_orders(problem: CPolyProblem, flavor: str = COMPLEX,
                   config: IterationConfig | None = None) -> SolveReport:
    """Build, solve, extract, measure mismatches, raise orders; repeat.

    Stops once every escalation unit (a bus on OPF problems, a constraint
    otherwise) has mismatch below eps_g, the objective mismatch is below
    eps_f (1 + |L(f)|), and the extracted point is feasible to the same
    tolerances.  Raises MaxItersExceeded carrying the last report otherwise.
    """
    cfg = config or IterationConfig()
    rx = _Relaxer(problem, flavor, cfg)
    units = _units(problem)
    orders = rx.min_orders()
    d_max = max(orders + [rx.objective_order()])
    if cfg.uniform:
        orders = [d_max] * problem.m
    history = []
    seconds = []
    t0 = time.perf_counter()
    report = SolveReport("numerical_failure", method="iterate", flavor=flavor)
    done = False
    for it in range(1, cfg.max_iters + 1):
        ts = time.perf_counter()
        sol = rx.build(orders, d_max).solve(cfg.tol)
        mm = viol = None
        if sol.status == conic.INFEASIBLE:
            # moment side infeasible: so is the problem
            history.append(_record(it, orders, sol, None, None))
            report = SolveReport("infeasible", value=None, orders=list(orders),
                                 iterations=history, method="iterate", flavor=flavor,
                                 message=f"relaxation of order {max(orders)} is infeasible")
            done = True
            break
        if conic.is_solved(sol.status):
            cand = sol.extract_candidate()
            z = cand.z
            ratio = min(cand.rank_ratios, default=math.inf)
            mm = compute_mismatches(problem, rx.functional(sol), z, value=sol.value)
            viol = violations(problem, z)
            history.append(_record(it, orders, sol, mm, viol, ratio))
            report = SolveReport(sol.status, sol.value, sol.dual_value, sol.value, None, z,
                                 list(orders), history, mm, rank_ratio=_num(ratio),
                                 method="iterate", flavor=flavor)
            if _certified(problem, mm, viol, sol.value, cfg):
                report.status = "optimal"
                report.feasible_objective = problem.objective.evaluate(z).real
                done = True
                break
        else:
            history.append(_record(it, orders, sol, None, None))
            report = SolveReport(sol.status, orders=list(orders), iterations=history,
                                 method="iterate", flavor=flavor)
        seconds.append(round(time.perf_counter() - ts, 3))
        orders, d_max = _escalate(orders, d_max, units, mm, cfg)
        if d_max > cfg.max_order:
            break
    if len(seconds) < len(history):
        seconds.append(round(time.perf_counter() - ts, 3))
    report.timings = {"total": round(time.perf_counter() - t0, 3), "iterations": seconds}
    if not done:
        # the solver's own "optimal" is not a certificate for the problem
        report.status = "max_iters"
        report.message = report.message or "termination criteria not met"
        raise MaxItersExceeded(report.message, report)
    return report


def _single_status(status):
    if status == conic.INFEASIBLE:
        return "infeasible"
    return "solved" if conic.is_solved(status) else status


def solve_moment(problem: CPolyProblem, flavor: str = COMPLEX, order: int | None = None,
                 config: IterationConfig | None = None) -> SolveReport:
    """One relaxation at a uniform order (the minimal order when None), no iteration."""
    cfg = config or IterationConfig()
    rx = _Relaxer(problem, flavor, cfg)
    d = max(rx.min_orders() + [rx.objective_order()])
    if order is not None:
        if order < d:
            raise InputError(f"order {order} is below the minimal order {d}")
        d = order
    t0 = time.perf_counter()
    sol = rx.build([d] * problem.m, d).solve(cfg.tol)
    report = SolveReport(_single_status(sol.status), orders=[d] * problem.m,
                         method="moment", flavor=flavor)
    if conic.is_solved(sol.status):
        cand = sol.extract_candidate()
        report.value = report.lower_bound = sol.value
        report.dual_value = sol.dual_value
        report.z = cand.z
        report.rank_ratio = _num(min(cand.rank_ratios, default=math.inf))
        report.mismatch = compute_mismatches(problem, rx.functional(sol), cand.z,
                                             value=sol.value)
        report.feasible_objective = None
        viol = violations(problem, cand.z)
        if _certified(problem, report.mismatch, viol, sol.value, cfg):
            report.status = "optimal"
            report.feasible_objective = problem.objective.evaluate(cand.z).real
    report.timings = {"total": round(time.perf_counter() - t0, 3)}
    return report


def solve_low(problem: CPolyProblem, kind: str = "shor", variant: str = COMPLEX,
              config: IterationConfig | None = None) -> SolveReport:
    """Shor (``kind='shor'``) or SOCP (``kind='socp'``) relaxation with rank-one recovery.

    The complex Shor relaxation uses per-clique PSD blocks when ``config.sparse``.
    """
    cfg = config or IterationConfig()
    if kind not in ("shor", "socp"):
        raise InputError(f"unknown relaxation kind {kind!r}")
    t0 = time.perf_counter()
    if kind == "shor":
        rel = build_shor(problem, variant, sparse=cfg.sparse and variant == COMPLEX)
    else:
        rel = build_socp(problem, variant)
    sol = rel.solve(cfg.tol)
    report = SolveReport(_single_status(sol.status), orders=[1], method=kind,
                         flavor=variant)
    if conic.is_solved(sol.status):
        rec = sol.recover()
        report.value = report.lower_bound = report.first_order_value = sol.value
        report.dual_value = sol.bound
        report.z = rec.candidate_v
        report.rank_ratio = _num(rec.rank_metric)
        report.mismatch = compute_mismatches(problem, sol.L, rec.candidate_v)
        viol = violations(problem, rec.candidate_v)
        if rec.exact and _certified(problem, report.mismatch, viol, sol.value, cfg):
            report.status = "optimal"
            report.feasible_objective = problem.objective.evaluate(rec.candidate_v).real
    report.timings = {"total": round(time.perf_counter() - t0, 3)}
    return report


def _escalate(orders, d_max, units, mm, cfg):
    orders = list(orders)
    if cfg.uniform or mm is None:
        d_max += 1
        if cfg.uniform:
            return [d_max] * len(orders), d_max
        return [min(o + 1, d_max) for o in orders], d_max
    eps = cfg.eps_g
    score = {u: mm.units.get(u, 0.0) for u in units}

    def uorder(u):
        return max(orders[i] for i in units[u])

    bad = [u for u in units if score[u] > eps and uorder(u) < d_max]
    if not bad:
        d_max += 1
        bad = [u for u in units if score[u] > eps] or list(units)
    bad.sort(key=lambda u: (-score[u], u))
    for u in bad[:cfg.h]:
        for i in units[u]:
            orders[i] = min(orders[i] + 1, d_max)
    return orders, d_max


# ---------------------------------------------------------------------------
# penalization


def _penalized(problem: CPolyProblem, eps_b: float) -> CPolyProblem:
    data = _opf(problem)
    if data is None:
        raise InputError("the reactive power penalty needs a network case")
    q = _fit(data.reactive_generation(), problem.n_vars) * eps_b
    split = problem.objective_split
    if split is not None:
        split = (split[0] + q, split[1])
    return replace(problem, objective=problem.objective + q, objective_split=split)


def penalized_solve(problem: CPolyProblem, case=None, eps_b: float = 0.0,
                    flavor: str = COMPLEX, config: IterationConfig | None = None
                    ) -> SolveReport:
    """Order iteration on f + eps_b * (total reactive generation).

    The reported feasible objective uses the original f; the lower bound is
    the unpenalized Shor value (or the loop's own bound when eps_b = 0).
    """
    cfg = config or IterationConfig()
    if eps_b < 0:
        raise InputError("penalty must be nonnegative")
    target = _penalized(problem, eps_b) if eps_b else problem
    try:
        rep = iterate_orders(target, flavor, cfg)
    except MaxItersExceeded as e:
        rep = e.report
    lb_sol = build_shor(problem).solve(cfg.tol)
    lb = lb_sol.value if conic.is_solved(lb_sol.status) else None
    if eps_b == 0 and rep.value is not None and rep.status != "infeasible":
        lb = rep.value if lb is None else max(lb, rep.value)
    rep.method = "penalize"
    rep.lower_bound = lb
    rep.first_order_value = lb_sol.value if conic.is_solved(lb_sol.status) else None
    if rep.z is not None and rep.status == "optimal":
        rep.feasible_objective = problem.objective.evaluate(rep.z).real
    if rep.status == "max_iters":
        raise MaxItersExceeded(rep.message, rep)
    return rep


# ---------------------------------------------------------------------------
# Laplacian weights


@dataclass
class LaplacianState:
    weights: np.ndarray  # per branch
    incidence: sp.csr_matrix  # branches x buses
    cap: float
    log: list = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        A = self.incidence
        return (A.T @ sp.diags(self.weights) @ A).toarray()

    def objective(self) -> CPolynomial:
        """z^H L z, i.e. sum over lines of D_l |v_from - v_to|^2."""
        return CPolynomial.hermitian_form(self.matrix)


def incidence_matrix(data: OpfData) -> sp.csr_matrix:
    adm = data.adm
    rows, cols, vals = [], [], []
    for b, (f, t) in enumerate(adm.branch_ends):
        rows += [b, b]
        cols += [f, t]
        vals += [1.0, -1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(adm.branch_ends), adm.n))


def laplacian_solve(problem: CPolyProblem, case=None, delta: float | None = None,
                    config: IterationConfig | None = None) -> SolveReport:
    """Weighted-Laplacian objective with the cost held within delta of the Shor bound."""
    cfg = config or IterationConfig()
    delta = cfg.delta if delta is None else delta
    if delta < 0:
        raise InputError("delta must be nonnegative")
    data = _opf(problem)
    if data is None:
        raise InputError("the Laplacian method needs a network case")
    t0 = time.perf_counter()
    base_sol = build_shor(problem).solve(cfg.tol)
    if base_sol.status == conic.INFEASIBLE:
        return SolveReport("infeasible", method="laplacian", flavor=COMPLEX,
                           message="Shor relaxation is infeasible")
    if not conic.is_solved(base_sol.status):
        return SolveReport(base_sol.status, method="laplacian", flavor=COMPLEX,
                           message="Shor relaxation did not solve")
    c_star = base_sol.value
    state = LaplacianState(np.zeros(len(data.adm.branch_ids)), incidence_matrix(data),
                           c_star + delta * abs(c_star))
    sol = base_sol
    report = None
    done = False
    for it in range(0, cfg.max_iters + 1):
        rec = sol.recover()
        z = rec.candidate_v
        mm = compute_mismatches(problem, sol.L, z, value=None)
        flow_max = float(np.max(mm.s_flow)) if len(mm.s_flow) else 0.0
        inj_max = float(np.max(mm.s_inj)) if len(mm.s_inj) else 0.0
        v_max = float(np.max(mm.v_viol)) if len(mm.v_viol) else 0.0
        entry = {"iteration": it, "status": sol.status, "max_s_flow_mva": flow_max,
                 "max_s_inj_mva": inj_max, "max_v_viol_pu": v_max,
                 "rank_ratio": _num(rec.rank_metric), "delta": delta,
                 "weight_sum": float(state.weights.sum())}
        state.log.append(entry)
        report = SolveReport(sol.status, sol.value, sol.bound, c_star, None, z, [1],
                             state.log, mm, c_star, rec.rank_metric, method="laplacian",
                             flavor=COMPLEX)
        if flow_max < cfg.eps_flow and inj_max < cfg.eps_inj and v_max < cfg.eps_v:
            report.status = "optimal"
            report.feasible_objective = problem.objective.evaluate(z).real
            done = True
            break
        if it == cfg.max_iters:
            break
        state.weights = state.weights + mm.s_flow
        if cfg.outer_delta and it and it % cfg.outer_every == 0:
            delta += cfg.delta_step
            state.cap = c_star + delta * abs(c_star)
        sol = build_shor(problem, objective=state.objective(), cost_cap=state.cap).solve(cfg.tol)
        if not conic.is_solved(sol.status):
            report.status = sol.status
            report.message = "weighted relaxation did not solve"
            break
    report.timings = {"total": round(time.perf_counter() - t0, 3)}
    report.provenance = {"weights": [float(w) for w in state.weights]}
    if not done:
        report.message = report.message or "mismatch tolerances not reached"
        report.status = "max_iters" if conic.is_solved(report.status) else report.status
        raise MaxItersExceeded(report.message, report)
    return report


# ---------------------------------------------------------------------------
# parameter sweeps


@dataclass
class SweepRow:
    parameter: float
    order: int | None
    value: float | None
    first_order_value: float | None
    first_order_exact: bool
    status: str
    feasible_objective: float | None = None
    seconds: float = 0.0
    message: str = ""

    def csv_fields(self):
        def fmt(v, nd=2):
            return "" if v is None else f"{v:.{nd}f}"
        first = fmt(self.first_order_value)
        if first and not self.first_order_exact:
            first = f"({first})"
        return [repr(self.parameter), "" if self.order is None else str(self.order),
                fmt(self.value), first, self.status]


SWEEP_HEADER = ["parameter", "order", "value", "first_order_value", "status"]


def grid(lo: float, hi: float, points: int, decimals: int) -> list[float]:
    """Evenly spaced values rounded as printed in a table."""
    if points < 1:
        raise InputError("grid needs at least one point")
    if points == 1:
        return [round(lo, decimals)]
    return [round(float(v), decimals) for v in np.linspace(lo, hi, points)]


def _sweep_point(case, target, value, flavor, cfg):
    from .netio import set_parameter
    t0 = time.perf_counter()
    pr = build_opf_qcqp(set_parameter(case, target, value))
    first, exact = None, False
    try:
        s = build_shor(pr).solve(cfg.tol)
        if conic.is_solved(s.status):
            rec = s.recover()
            first = s.value
            feas = violations(pr, rec.candidate_v)
            exact = rec.rank_metric >= cfg.rank_ratio and feas["power"] <= cfg.eps_g
    except NotQuadratic:
        pass
    try:
        rep = iterate_orders(pr, flavor, cfg)
    except MaxItersExceeded as e:
        rep = e.report
    ok = rep.status == "optimal"
    return SweepRow(value, rep.max_order if ok else None, rep.value if ok else None, first,
                    exact, rep.status, rep.feasible_objective,
                    round(time.perf_counter() - t0, 3), rep.message)


def sweep(case, target: str, values, flavor: str = REAL,
          config: IterationConfig | None = None, jobs: int = 1) -> list[SweepRow]:
    """One row per parameter value; failures are recorded in their row."""
    cfg = config or IterationConfig(uniform=True)
    values = list(values)
    if not values:
        raise InputError("empty parameter grid")
    if jobs <= 1 or len(values) == 1:
        return [_guarded(case, target, v, flavor, cfg) for v in values]
    with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(_guarded, case, target, v, flavor, cfg) for v in values]
        return [f.result() for f in futs]


def _guarded(case, target, value, flavor, cfg):
    try:
        return _sweep_point(case, target, value, flavor, cfg)
    except Exception as e:  # noqa: BLE001 - the row carries the failure
        return SweepRow(value, None, None, None, False, "error", message=str(e))

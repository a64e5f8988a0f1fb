"""Optimal power flow as a complex QCQP in the bus voltages."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cpoly import EQ, GE, Constraint, CPolynomial, CPolyProblem
from .errors import UnsupportedObjective
from .netio import AdmittanceMatrix, NetworkCase, build_admittance


def _form(n, coeffs: dict, const=0.0) -> CPolynomial:
    """sum c_ij conj(v_i) v_j + const from {(i, j): c}."""
    terms = {}
    zero = (0,) * n
    for (i, j), c in coeffs.items():
        a = tuple(1 if k == i else 0 for k in range(n))
        b = tuple(1 if k == j else 0 for k in range(n))
        terms[(a, b)] = terms.get((a, b), 0.0) + c
    if const:
        terms[(zero, zero)] = terms.get((zero, zero), 0.0) + const
    return CPolynomial(n, terms)


def _pq_forms(n, sesq: dict):
    """Real and imaginary parts of a sesquilinear form S = sum A_ij conj(v_i) v_j."""
    p, q = {}, {}
    for (i, j), a in sesq.items():
        p[(i, j)] = p.get((i, j), 0.0) + a / 2
        p[(j, i)] = p.get((j, i), 0.0) + np.conj(a) / 2
        q[(i, j)] = q.get((i, j), 0.0) + a / 2j
        q[(j, i)] = q.get((j, i), 0.0) - np.conj(a) / 2j
    return _form(n, p), _form(n, q)


def injection_forms(adm: AdmittanceMatrix, k: int):
    """P_k, Q_k with S_k = v_k conj((Y v)_k) = P_k + i Q_k (p.u.)."""
    row = adm.Y.getrow(k)
    sesq = {}
    for j, y in zip(row.indices, row.data):
        # v_k conj(y v_j) = conj(y) conj(v_j) v_k
        sesq[(j, k)] = sesq.get((j, k), 0.0) + np.conj(y)
    return _pq_forms(adm.n, sesq)


def flow_forms(adm: AdmittanceMatrix, b: int, end: str):
    """P, Q of the apparent power entering branch b at its 'from' or 'to' end."""
    f, t = adm.branch_ends[b]
    if end == "from":
        l, m, yl, ym = f, t, adm.yff[b], adm.yft[b]
    else:
        l, m, yl, ym = t, f, adm.ytt[b], adm.ytf[b]
    sesq = {(l, l): np.conj(yl), (m, l): np.conj(ym)}
    return _pq_forms(adm.n, sesq)


@dataclass
class OpfData:
    """Electrical bookkeeping attached to an OPF problem for mismatch reports."""

    case: NetworkCase
    adm: AdmittanceMatrix
    base_mva: float
    bus_ids: list[int]
    p_forms: list[CPolynomial]
    q_forms: list[CPolynomial]
    pd: np.ndarray  # p.u.
    qd: np.ndarray
    flow_forms: list[tuple] = field(default_factory=list)  # (branch pos, end, P, Q, smax p.u.)
    v_min: np.ndarray | None = None
    v_max: np.ndarray | None = None
    objective_kind: str = "gen_cost"

    def reactive_generation(self) -> CPolynomial:
        """Total reactive generation sum_k (Q_k + Qd_k) in MVAr."""
        out = CPolynomial(len(self.bus_ids))
        for k, q in enumerate(self.q_forms):
            out = out + (q + self.qd[k]) * self.base_mva
        return out


def _bus_cost(gens, base, bus_id):
    """Cost of total generation P (p.u.) at one bus: (c0, c1, c2) in P."""
    if not gens:
        return 0.0, 0.0, 0.0
    if any(not g.cost_supported for g in gens):
        raise UnsupportedObjective(f"bus {bus_id}: only polynomial costs up to degree 2")
    c0 = sum(g.cost_const for g in gens)
    pairs = {(g.cost_quad, g.cost_lin) for g in gens}
    if len(pairs) > 1:
        raise UnsupportedObjective(
            f"bus {bus_id}: generators with different cost curves cannot be eliminated")
    c2, c1 = pairs.pop()
    m = len(gens)
    # identical units share output evenly at the optimum
    return c0, c1 * base, c2 * base ** 2 / m


def build_opf_qcqp(case: NetworkCase, admittance: AdmittanceMatrix | None = None,
                   objective_kind: str = "gen_cost") -> CPolyProblem:
    """Variables are the bus voltages; generator outputs are substituted out."""
    if objective_kind not in ("gen_cost", "active_loss"):
        raise UnsupportedObjective(f"unknown objective kind {objective_kind!r}")
    adm = admittance if admittance is not None else build_admittance(case)
    base = case.base_mva
    n = case.n_bus
    idx = case.bus_index()
    gens_at: dict[int, list] = {k: [] for k in range(n)}
    for g in case.active_gens():
        gens_at[idx[g.bus]].append(g)

    pf, qf = zip(*(injection_forms(adm, k) for k in range(n))) if n else ((), ())
    pd = np.array([b.p_dem for b in case.buses]) / base
    qd = np.array([b.q_dem for b in case.buses]) / base

    cons: list[Constraint] = []
    for k, bus in enumerate(case.buses):
        tag = bus.id
        grp = f"bus:{tag}"
        gens = gens_at[k]
        for name, form, dem, lo_attr, hi_attr in (("P", pf[k], pd[k], "p_min", "p_max"),
                                                  ("Q", qf[k], qd[k], "q_min", "q_max")):
            inj = form + dem  # total generation at the bus, p.u.
            kind = name.lower()
            if not gens:
                cons.append(Constraint(inj, EQ, f"{name}{tag} balance", f"{kind}_balance", grp))
                continue
            lo = sum(getattr(g, lo_attr) for g in gens) / base
            hi = sum(getattr(g, hi_attr) for g in gens) / base
            if math.isfinite(lo) and lo == hi:
                cons.append(Constraint(inj - lo, EQ, f"{name}{tag} fixed", f"{kind}_balance", grp))
                continue
            if math.isfinite(lo):
                cons.append(Constraint(inj - lo, GE, f"{name}{tag} lower", f"{kind}min", grp))
            if math.isfinite(hi):
                cons.append(Constraint(hi - inj, GE, f"{name}{tag} upper", f"{kind}max", grp))
    for k, bus in enumerate(case.buses):
        grp = f"bus:{bus.id}"
        if bus.v_min > 0:
            cons.append(Constraint(CPolynomial.modulus_sq(k, n) - bus.v_min ** 2, GE,
                                   f"V{bus.id} lower", "vmin", grp))
        if math.isfinite(bus.v_max):
            cons.append(Constraint(bus.v_max ** 2 - CPolynomial.modulus_sq(k, n), GE,
                                   f"V{bus.id} upper", "vmax", grp))

    flows = []
    for b, pos in enumerate(adm.branch_ids):
        br = case.branches[pos]
        if not math.isfinite(br.s_max):
            continue
        smax = br.s_max / base
        for end, bus_id in (("from", br.from_bus), ("to", br.to_bus)):
            P, Q = flow_forms(adm, b, end)
            poly = smax ** 2 - P * P - Q * Q
            cons.append(Constraint(poly, GE, f"S{br.from_bus}-{br.to_bus} {end}", "flow",
                                   f"bus:{bus_id}", norm_form=(smax, (P, Q))))
            flows.append((pos, end, P, Q, smax))

    split = None
    if objective_kind == "active_loss":
        quad = CPolynomial(n)
        for k in range(n):
            quad = quad + pf[k] * base
        obj = quad
    else:
        quad = CPolynomial(n)
        sq_terms = []
        for k, bus in enumerate(case.buses):
            c0, c1, c2 = _bus_cost(gens_at[k], base, bus.id)
            if not (c0 or c1 or c2):
                continue
            gen_k = pf[k] + pd[k]
            quad = quad + gen_k * c1 + c0
            if c2:
                sq_terms.append((c2, gen_k))
        obj = quad
        for c2, q in sq_terms:
            obj = obj + q * q * c2
        if sq_terms:
            split = (quad, sq_terms)

    data = OpfData(case, adm, base, [b.id for b in case.buses], list(pf), list(qf), pd, qd,
                   flows, np.array([b.v_min for b in case.buses]),
                   np.array([b.v_max for b in case.buses]), objective_kind)
    names = [f"v{b.id}" for b in case.buses]
    return CPolyProblem(obj, cons, n, names, objective_split=split, meta={"opf": data})

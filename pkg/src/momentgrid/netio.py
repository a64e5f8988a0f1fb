"""MATPOWER case files, bus admittance matrices and low-impedance line merging."""

from __future__ import annotations

import cmath
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (CaseSyntaxError, DanglingBranch, MergedBoundsEmpty, MissingSection,
                     ZeroImpedanceBranch)

INF = math.inf


@dataclass(frozen=True)
class Bus:
    id: int
    p_dem: float = 0.0  # MW
    q_dem: float = 0.0  # MVAr
    g_sh: float = 0.0  # p.u.
    b_sh: float = 0.0  # p.u.
    v_min: float = 0.0
    v_max: float = INF
    type: int = 1
    base_kv: float = 0.0
    vm: float = 1.0
    va: float = 0.0  # degrees


@dataclass(frozen=True)
class Gen:
    bus: int
    p_min: float = -INF  # MW
    p_max: float = INF
    q_min: float = -INF  # MVAr
    q_max: float = INF
    cost_quad: float = 0.0  # $/MW^2h
    cost_lin: float = 0.0  # $/MWh
    cost_const: float = 0.0  # $/h
    status: int = 1
    pg: float = 0.0
    qg: float = 0.0
    cost_supported: bool = True


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh_from: float = 0.0
    b_sh_to: float = 0.0
    g_sh_from: float = 0.0
    g_sh_to: float = 0.0
    tap: float = 1.0
    shift: float = 0.0  # radians
    s_max: float = INF  # MVA
    status: int = 1

    @property
    def impedance(self) -> float:
        return abs(complex(self.r, self.x))


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple
    gens: tuple
    branches: tuple
    name: str = ""

    def __post_init__(self):
        if not self.base_mva > 0:
            raise CaseSyntaxError("baseMVA must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseSyntaxError("duplicate bus ids")
        known = set(ids)
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise DanglingBranch(f"branch {k + 1} references unknown bus {end}")
        for g in self.gens:
            if g.bus not in known:
                raise DanglingBranch(f"generator references unknown bus {g.bus}")
        for b in self.buses:
            if not 0 <= b.v_min <= b.v_max:
                raise CaseSyntaxError(f"bus {b.id}: need 0 <= v_min <= v_max")

    @property
    def n_bus(self):
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def active_gens(self):
        return [g for g in self.gens if g.status > 0]

    def active_branches(self):
        return [br for br in self.branches if br.status > 0]

    def approx_equal(self, other: "NetworkCase", rtol=1e-12) -> bool:
        """Field-wise equality up to float rounding from unit conversions."""
        a, b = asdict(self), asdict(other)
        return _close(a, b, rtol)

    def with_updates(self, **kw):
        return replace(self, **kw)


def _close(a, b, rtol):
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_close(a[k], b[k], rtol) for k in a)
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_close(x, y, rtol) for x, y in zip(a, b))
    if isinstance(a, float) or isinstance(b, float):
        if math.isinf(a) or math.isinf(b):
            return a == b
        return math.isclose(a, b, rel_tol=rtol, abs_tol=rtol)
    return a == b


# ---------------------------------------------------------------------------
# parsing

_NUM = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _token(tok: str, where: str) -> float:
    t = tok.strip()
    low = t.lower()
    if low in ("inf", "+inf"):
        return INF
    if low == "-inf":
        return -INF
    if low == "nan":
        return math.nan
    if not _NUM.match(t):
        raise CaseSyntaxError(f"{where}: non-numeric entry {tok!r}")
    return float(t)


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        # '%' inside quoted strings does not occur in numeric sections
        k = line.find("%")
        out.append(line if k < 0 else line[:k])
    return "\n".join(out)


def _matrices(text: str) -> dict[str, list[list[float]]]:
    out = {}
    for m in re.finditer(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", text, re.S):
        name, body = m.group(1), m.group(2)
        rows = []
        for chunk in re.split(r"[;\n]", body):
            toks = [t for t in re.split(r"[\s,]+", chunk.strip()) if t]
            if toks:
                rows.append([_token(t, f"mpc.{name}") for t in toks])
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise CaseSyntaxError(f"mpc.{name}: rows of unequal length {sorted(widths)}")
        out[name] = rows
    return out


def _scalar(text: str, name: str):
    m = re.search(rf"mpc\.{name}\s*=\s*([^;\n\[]+);", text)
    if not m:
        return None
    return _token(m.group(1), f"mpc.{name}")


def _cost_terms(row):
    """(quad, lin, const, supported) from one gencost row."""
    model = int(row[0])
    if model != 2:
        return 0.0, 0.0, 0.0, False
    ncost = int(row[3])
    coeffs = list(row[4:4 + ncost])[::-1]  # ascending powers
    if any(abs(c) > 0 for c in coeffs[3:]):
        return 0.0, 0.0, 0.0, False
    coeffs += [0.0] * (3 - len(coeffs))
    return coeffs[2], coeffs[1], coeffs[0], True


def parse_case(text: str, name: str = "") -> NetworkCase:
    """Read a MATPOWER case (numeric matrices only)."""
    if not text or not text.strip():
        raise MissingSection("empty case file")
    text = _strip_comments(text)
    if name == "":
        m = re.search(r"function\s+\w+\s*=\s*(\w+)", text)
        name = m.group(1) if m else ""
    base = _scalar(text, "baseMVA")
    if base is None:
        raise MissingSection("mpc.baseMVA not found")
    mats = _matrices(text)
    for sec in ("bus", "gen", "branch"):
        if sec not in mats:
            raise MissingSection(f"mpc.{sec} not found")

    buses = []
    for r in mats["bus"]:
        if len(r) < 13:
            raise CaseSyntaxError("mpc.bus rows need 13 columns")
        buses.append(Bus(id=int(r[0]), type=int(r[1]), p_dem=r[2], q_dem=r[3],
                         g_sh=r[4] / base, b_sh=r[5] / base, vm=r[7], va=r[8],
                         base_kv=r[9], v_max=r[11], v_min=r[12]))

    costs = mats.get("gencost", [])
    gens = []
    for k, r in enumerate(mats["gen"]):
        if len(r) < 10:
            raise CaseSyntaxError("mpc.gen rows need at least 10 columns")
        cq, cl, c0, ok = _cost_terms(costs[k]) if k < len(costs) else (0.0, 0.0, 0.0, True)
        gens.append(Gen(bus=int(r[0]), pg=r[1], qg=r[2], q_max=r[3], q_min=r[4],
                        status=int(r[7]), p_max=r[8], p_min=r[9], cost_quad=cq, cost_lin=cl,
                        cost_const=c0, cost_supported=ok))

    extra = mats.get("branch_shunt")
    branches = []
    for k, r in enumerate(mats["branch"]):
        if len(r) < 11:
            raise CaseSyntaxError("mpc.branch rows need at least 11 columns")
        tap = r[8] if r[8] != 0 else 1.0
        if extra is not None:
            gf, bf, gt, bt = extra[k][:4]
        else:
            gf, bf, gt, bt = 0.0, r[4] / 2, 0.0, r[4] / 2
        branches.append(Branch(from_bus=int(r[0]), to_bus=int(r[1]), r=r[2], x=r[3],
                               b_sh_from=bf, b_sh_to=bt, g_sh_from=gf, g_sh_to=gt, tap=tap,
                               shift=math.radians(r[9]), s_max=r[5] if r[5] > 0 else INF,
                               status=int(r[10])))
    return NetworkCase(base, tuple(buses), tuple(gens), tuple(branches), name)


def read_case(path) -> NetworkCase:
    p = Path(path)
    return parse_case(p.read_text(), name=p.stem)


FIXTURE_ENV = "MOMENTGRID_FIXTURES"
_PACKAGE_DATA = Path(__file__).resolve().parent / "data"
_REPO_FIXTURES = Path(__file__).resolve().parents[2] / "fixtures"


def fixture_dirs() -> list[Path]:
    """Search path: $MOMENTGRID_FIXTURES, the repository fixtures, bundled data."""
    dirs = [Path(d) for d in os.environ.get(FIXTURE_ENV, "").split(os.pathsep) if d]
    dirs += [_REPO_FIXTURES, _REPO_FIXTURES / "matpower", _PACKAGE_DATA]
    return [d for d in dirs if d.is_dir()]


def find_fixture(name, suffix: str = ".m") -> Path:
    """Resolve a path, or a bare fixture name searched in ``fixture_dirs()``."""
    p = Path(name)
    if p.is_file():
        return p
    stem = p.name[: -len(suffix)] if p.name.endswith(suffix) else p.name
    candidates = [stem, stem.lower()]
    if suffix == ".m":
        candidates += ["case" + stem, "case" + stem.lower()]
    for d in fixture_dirs():
        for c in candidates:
            f = d / (c + suffix)
            if f.is_file():
                return f
    raise FileNotFoundError(f"{name!r} not found (searched {FIXTURE_ENV} and fixtures)")


def find_case(name) -> Path:
    return find_fixture(name, ".m")


def load_case(name) -> NetworkCase:
    """Read a case by path or by fixture name such as 'wb5' or 'case89pegase'."""
    return read_case(find_case(name))


def set_parameter(case: NetworkCase, target: str, value: float) -> NetworkCase:
    """Edit one field: 'bus:<id>:<field>', 'gen:<bus>:<field>' or 'branch:<f>-<t>:<field>'."""
    try:
        kind, key, fld = target.split(":")
    except ValueError:
        raise CaseSyntaxError(f"parameter target {target!r} is not kind:key:field") from None
    value = float(value)
    if kind == "bus":
        pool, attr = case.buses, "buses"
        hit = [k for k, b in enumerate(pool) if b.id == int(key)]
    elif kind == "gen":
        pool, attr = case.gens, "gens"
        hit = [k for k, g in enumerate(pool) if g.bus == int(key)]
    elif kind == "branch":
        pool, attr = case.branches, "branches"
        f, t = (int(v) for v in key.split("-"))
        hit = [k for k, br in enumerate(pool) if (br.from_bus, br.to_bus) == (f, t)]
    else:
        raise CaseSyntaxError(f"unknown parameter kind {kind!r}")
    if not hit:
        raise CaseSyntaxError(f"parameter target {target!r} matches nothing")
    if not hasattr(pool[hit[0]], fld):
        raise CaseSyntaxError(f"{kind} has no field {fld!r}")
    if fld == "s_max" and value <= 0:
        value = INF
    items = list(pool)
    for k in hit:
        items[k] = replace(items[k], **{fld: value})
    return replace(case, **{attr: tuple(items)})


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_case(case: NetworkCase) -> str:
    """MATPOWER text; asymmetric or conductive line shunts go to mpc.branch_shunt."""
    base = case.base_mva
    name = case.name or "case"
    lines = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "",
             "mpc.bus = ["]
    for b in case.buses:
        row = [b.id, b.type, b.p_dem, b.q_dem, b.g_sh * base, b.b_sh * base, 1, b.vm, b.va,
               b.base_kv, 1, b.v_max, b.v_min]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines += ["];", "", "mpc.gen = ["]
    for g in case.gens:
        row = [g.bus, g.pg, g.qg, g.q_max, g.q_min, 1, base, g.status, g.p_max, g.p_min]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines += ["];", "", "mpc.branch = ["]
    need_extra = False
    for br in case.branches:
        if br.g_sh_from or br.g_sh_to or br.b_sh_from != br.b_sh_to:
            need_extra = True
        smax = 0.0 if math.isinf(br.s_max) else br.s_max
        row = [br.from_bus, br.to_bus, br.r, br.x, br.b_sh_from + br.b_sh_to, smax, smax, smax,
               0.0 if br.tap == 1.0 else br.tap, math.degrees(br.shift), br.status, -360, 360]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines.append("];")
    if need_extra:
        lines += ["", "mpc.branch_shunt = ["]
        for br in case.branches:
            row = [br.g_sh_from, br.b_sh_from, br.g_sh_to, br.b_sh_to]
            lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
        lines.append("];")
    lines += ["", "mpc.gencost = ["]
    for g in case.gens:
        row = [2, 0, 0, 3, g.cost_quad, g.cost_lin, g.cost_const]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines.append("];")
    return "\n".join(lines) + "\n"


def _json_num(v):
    if isinstance(v, float) and math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return v


def case_to_json(case: NetworkCase) -> str:
    """Canonical JSON (sorted keys, infinities as strings)."""
    d = asdict(case)
    for sec in ("buses", "gens", "branches"):
        d[sec] = [{k: _json_num(v) for k, v in row.items()} for row in d[sec]]
    return json.dumps(d, sort_keys=True, indent=1)


def case_from_json(text: str) -> NetworkCase:
    d = json.loads(text)

    def num(v):
        if v == "Infinity":
            return INF
        if v == "-Infinity":
            return -INF
        return v

    return NetworkCase(
        d["base_mva"],
        tuple(Bus(**{k: num(v) for k, v in r.items()}) for r in d["buses"]),
        tuple(Gen(**{k: num(v) for k, v in r.items()}) for r in d["gens"]),
        tuple(Branch(**{k: num(v) for k, v in r.items()}) for r in d["branches"]),
        d.get("name", ""))


# ---------------------------------------------------------------------------
# admittance


@dataclass
class AdmittanceMatrix:
    n: int
    Y: sp.csr_matrix
    bus_ids: list[int]
    branch_ends: np.ndarray  # (m, 2) bus indices of in-service branches
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    branch_ids: list[int] = field(default_factory=list)  # positions in case.branches

    def injections(self, v) -> np.ndarray:
        """Complex power injections v * conj(Y v) in p.u."""
        v = np.asarray(v, dtype=complex)
        return v * np.conj(self.Y @ v)

    def branch_currents(self, v):
        v = np.asarray(v, dtype=complex)
        f, t = self.branch_ends[:, 0], self.branch_ends[:, 1]
        i_f = self.yff * v[f] + self.yft * v[t]
        i_t = self.ytf * v[f] + self.ytt * v[t]
        return i_f, i_t

    def branch_flows(self, v):
        v = np.asarray(v, dtype=complex)
        i_f, i_t = self.branch_currents(v)
        f, t = self.branch_ends[:, 0], self.branch_ends[:, 1]
        return v[f] * np.conj(i_f), v[t] * np.conj(i_t)


def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    idx = case.bus_index()
    n = case.n_bus
    rows, cols, vals = [], [], []
    ends, yff, yft, ytf, ytt, ids = [], [], [], [], [], []
    for k, br in enumerate(case.branches):
        if br.status <= 0:
            continue
        if br.r == 0 and br.x == 0:
            raise ZeroImpedanceBranch(f"branch {br.from_bus}-{br.to_bus} has r = x = 0")
        y = 1.0 / complex(br.r, br.x)
        rho = br.tap * cmath.exp(1j * br.shift)
        ff = (y + complex(br.g_sh_from, br.b_sh_from)) / abs(rho) ** 2
        ft = -y / rho.conjugate()
        tf = -y / rho
        tt = y + complex(br.g_sh_to, br.b_sh_to)
        f, t = idx[br.from_bus], idx[br.to_bus]
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [ff, ft, tf, tt]
        ends.append((f, t))
        yff.append(ff)
        yft.append(ft)
        ytf.append(tf)
        ytt.append(tt)
        ids.append(k)
    for b in case.buses:
        if b.g_sh or b.b_sh:
            k = idx[b.id]
            rows.append(k)
            cols.append(k)
            vals.append(complex(b.g_sh, b.b_sh))
    Y = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n))
    Y.sum_duplicates()
    return AdmittanceMatrix(n, Y, [b.id for b in case.buses],
                            np.array(ends, dtype=int).reshape(-1, 2), np.array(yff),
                            np.array(yft), np.array(ytf), np.array(ytt), ids)


# ---------------------------------------------------------------------------
# low-impedance preprocessing


@dataclass
class BusGroupMap:
    rep_of: dict[int, int]  # original bus id -> representative id
    members: dict[int, list[int]]  # representative id -> original ids

    def is_identity(self) -> bool:
        return all(k == v for k, v in self.rep_of.items())

    def back_map(self, reduced_voltages: dict[int, complex]) -> dict[int, complex]:
        """Identical voltage phasors for every bus of a group."""
        return {b: reduced_voltages[r] for b, r in self.rep_of.items()}


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


def preprocess_low_impedance(case: NetworkCase, thrshz: float):
    """Merge buses joined by in-service branches with |r + jx| < thrshz."""
    if thrshz < 0:
        raise ValueError("thrshz must be nonnegative")
    ids = [b.id for b in case.buses]
    uf = _UnionFind(ids)
    low = [br.status > 0 and br.impedance < thrshz for br in case.branches]
    for br, is_low in zip(case.branches, low):
        if is_low:
            uf.union(br.from_bus, br.to_bus)
    rep_of = {i: uf.find(i) for i in ids}
    if all(k == v for k, v in rep_of.items()):
        return case, BusGroupMap(rep_of, {i: [i] for i in ids})
    members: dict[int, list[int]] = {}
    for i in ids:
        members.setdefault(rep_of[i], []).append(i)
    by_id = {b.id: b for b in case.buses}

    extra_g = {r: 0.0 for r in members}
    extra_b = {r: 0.0 for r in members}
    branches = []
    for br, is_low in zip(case.branches, low):
        rf, rt = rep_of[br.from_bus], rep_of[br.to_bus]
        if rf == rt:
            if br.status > 0:
                # charging of an intra-group line becomes a bus shunt
                t2 = br.tap ** 2
                extra_g[rf] += br.g_sh_from / t2 + br.g_sh_to
                extra_b[rf] += br.b_sh_from / t2 + br.b_sh_to
            continue
        branches.append(replace(br, from_bus=rf, to_bus=rt))

    buses = []
    for r in sorted(members):
        group = [by_id[i] for i in members[r]]
        vmin = max(b.v_min for b in group)
        vmax = min(b.v_max for b in group)
        if vmin > vmax:
            raise MergedBoundsEmpty(f"group of bus {r}: voltage bounds do not intersect")
        base = by_id[r]
        types = {b.type for b in group}
        btype = 3 if 3 in types else (2 if 2 in types else base.type)
        buses.append(replace(base, p_dem=sum(b.p_dem for b in group),
                             q_dem=sum(b.q_dem for b in group),
                             g_sh=sum(b.g_sh for b in group) + extra_g[r],
                             b_sh=sum(b.b_sh for b in group) + extra_b[r],
                             v_min=vmin, v_max=vmax, type=btype))
    gens = tuple(replace(g, bus=rep_of[g.bus]) for g in case.gens)
    out = NetworkCase(case.base_mva, tuple(buses), gens, tuple(branches), case.name)
    return out, BusGroupMap(rep_of, members)


def total_load(case: NetworkCase) -> complex:
    return complex(sum(b.p_dem for b in case.buses), sum(b.q_dem for b in case.buses))


def total_shunt(case: NetworkCase) -> complex:
    """Bus shunts plus in-service line charging, in p.u."""
    s = sum(complex(b.g_sh, b.b_sh) for b in case.buses)
    for br in case.branches:
        if br.status > 0:
            s += complex(br.g_sh_from / br.tap ** 2 + br.g_sh_to,
                         br.b_sh_from / br.tap ** 2 + br.b_sh_to)
    return s

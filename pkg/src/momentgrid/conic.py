"""Primal-dual interior-point solver for block-diagonal cone programs.

The standard pair is

    (P)  min  c.x   s.t.  A x = b,  x in K
    (D)  max  b.y   s.t.  A^T y + s = c,  s in K*

where K is a product of blocks: free variables, the nonnegative orthant,
second-order cones and real symmetric PSD cones.  PSD blocks are stored
in ``svec`` form (lower triangle, column-major, off-diagonals scaled by
sqrt(2)) so that the Euclidean inner product matches the trace inner
product.  The dual cone of a free block is {0}.

The iteration is an infeasible-start Mehrotra predictor-corrector with
Nesterov-Todd scaling.  Infeasibility is detected from diverging iterates
and reported with an improving ray whose residuals are recomputed from
raw data before the status is returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConicFormatError

FREE, NONNEG, SOC, PSD = "free", "nonneg", "soc", "psd"
KINDS = (FREE, NONNEG, SOC, PSD)

OPTIMAL = "optimal"
INFEASIBLE = "strongly_infeasible"
UNBOUNDED = "unbounded"
FAILURE = "numerical_failure"
INACCURATE = "optimal_inaccurate"  # best iterate meets the relaxed tolerances

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# svec helpers


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec_order(dim: int) -> int:
    n = int(round((math.sqrt(8 * dim + 1) - 1) / 2))
    if svec_dim(n) != dim:
        raise ConicFormatError(f"{dim} is not a triangular number")
    return n


def svec_pos(n: int, i: int, j: int) -> int:
    """Position of entry (i, j) in svec storage of an order-n matrix."""
    if i < j:
        i, j = j, i
    return j * n - j * (j - 1) // 2 + (i - j)


_TRI_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _tri(n: int):
    if n not in _TRI_CACHE:
        cols, rows = [], []
        for j in range(n):
            for i in range(j, n):
                rows.append(i)
                cols.append(j)
        rows = np.array(rows)
        cols = np.array(cols)
        scale = np.where(rows == cols, 1.0, SQRT2)
        _TRI_CACHE[n] = (rows, cols, scale)
    return _TRI_CACHE[n]


def svec(m: np.ndarray) -> np.ndarray:
    rows, cols, scale = _tri(m.shape[-1])
    return m[..., rows, cols] * scale


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = svec_order(v.shape[-1])
    rows, cols, scale = _tri(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    vals = v / scale
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


# ---------------------------------------------------------------------------
# program containers


@dataclass(frozen=True)
class Block:
    kind: str
    dim: int  # vector length for free/nonneg/soc, matrix order for psd
    label: str = ""

    @property
    def size(self) -> int:
        return svec_dim(self.dim) if self.kind == PSD else self.dim

    @property
    def degree(self) -> int:
        if self.kind == FREE:
            return 0
        if self.kind == SOC:
            return 1
        return self.dim


@dataclass
class ConicProgram:
    """min c.x s.t. A x = b, x in K (blocks in order)."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: list[Block]
    offset: float = 0.0
    name: str = ""

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csr_matrix(self.A, dtype=float)
        n = sum(bl.size for bl in self.blocks)
        if not self.blocks:
            raise ConicFormatError("program needs at least one block")
        for bl in self.blocks:
            if bl.kind not in KINDS:
                raise ConicFormatError(f"unknown cone kind {bl.kind!r}")
            if bl.dim <= 0:
                raise ConicFormatError("block dimensions must be positive")
        if self.c.shape[0] != n or self.A.shape != (self.b.shape[0], n):
            raise ConicFormatError(
                f"dimension mismatch: c {self.c.shape}, A {self.A.shape}, "
                f"b {self.b.shape}, cones {n}")
        if not (np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ConicFormatError("b and c must be finite")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def slices(self) -> list[slice]:
        out, k = [], 0
        for bl in self.blocks:
            out.append(slice(k, k + bl.size))
            k += bl.size
        return out

    def block_values(self, v: np.ndarray) -> list[np.ndarray]:
        """Split a cone vector into blocks, PSD blocks returned as matrices."""
        out = []
        for bl, sl in zip(self.blocks, self.slices()):
            out.append(smat(v[sl]) if bl.kind == PSD else v[sl].copy())
        return out

    # interchange -----------------------------------------------------------

    def dumps(self) -> str:
        """Triplet text format; floats written with repr so reading is lossless."""
        A = self.A.tocoo()
        lines = ["# momentgrid conic program v1",
                 f"name {json.dumps(self.name)}",
                 f"offset {self.offset!r}",
                 f"dims {self.m} {self.n}"]
        for bl in self.blocks:
            lines.append(f"block {bl.kind} {bl.dim} {json.dumps(bl.label)}")
        for j in np.flatnonzero(self.c):
            lines.append(f"c {j} {float(self.c[j])!r}")
        for i in np.flatnonzero(self.b):
            lines.append(f"b {i} {float(self.b[i])!r}")
        order = np.lexsort((A.col, A.row))
        for k in order:
            if A.data[k] != 0.0:
                lines.append(f"a {A.row[k]} {A.col[k]} {float(A.data[k])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ConicProgram":
        blocks, cs, bs, rows, cols, vals = [], {}, {}, [], [], []
        m = n = None
        name, offset = "", 0.0
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            try:
                if tag == "name":
                    name = json.loads(rest)
                elif tag == "offset":
                    offset = float(rest)
                elif tag == "dims":
                    m, n = (int(t) for t in rest.split())
                elif tag == "block":
                    kind, dim, label = rest.split(" ", 2)
                    blocks.append(Block(kind, int(dim), json.loads(label)))
                elif tag == "c":
                    j, v = rest.split()
                    cs[int(j)] = float(v)
                elif tag == "b":
                    i, v = rest.split()
                    bs[int(i)] = float(v)
                elif tag == "a":
                    i, j, v = rest.split()
                    rows.append(int(i))
                    cols.append(int(j))
                    vals.append(float(v))
                else:
                    raise ValueError(f"unknown record {tag!r}")
            except ValueError as exc:
                raise ConicFormatError(f"line {lineno}: {exc}") from exc
        if m is None:
            raise ConicFormatError("missing dims record")
        c = np.zeros(n)
        for j, v in cs.items():
            c[j] = v
        b = np.zeros(m)
        for i, v in bs.items():
            b[i] = v
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        return cls(c, A, b, blocks, offset=offset, name=name)


@dataclass
class Tolerances:
    feas: float = 1e-8
    gap: float = 1e-8
    max_iter: int = 200
    infeas: float = 1e-8
    inaccurate: float = 1e-5
    equal_steps: bool = True
    refine: int = 2
    eliminate_free: bool = True
    step: float = 0.98


@dataclass
class SolveStats:
    status: str
    iterations: int
    mu: float
    pinf: float
    dinf: float
    rel_gap: float
    primal_obj: float
    dual_obj: float
    message: str = ""
    history: list = field(default_factory=list)


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    stats: SolveStats
    certificate: dict | None = None

    @property
    def status(self) -> str:
        return self.stats.status


def is_solved(status: str) -> bool:
    """Optimal, or optimal up to the relaxed tolerances."""
    return status in (OPTIMAL, INACCURATE)


def check_gap(stats: SolveStats, gap_tol: float = 1e-6) -> bool:
    """True iff the primal and dual objectives agree to gap_tol (relative)."""
    if stats.status != OPTIMAL:
        return False
    p, d = stats.primal_obj, stats.dual_obj
    return abs(p - d) <= gap_tol * (1.0 + abs(p))


# ---------------------------------------------------------------------------
# per-cone Nesterov-Todd machinery


class _NonnegScaling:
    def __init__(self, x, s):
        self.d = np.sqrt(x / s)  # P^{-1} = diag(d)
        self.lam = np.sqrt(x * s)
        self.g2 = x / s

    def to_scaled_x(self, dx):
        return dx / self.d

    def to_scaled_s(self, ds):
        return ds * self.d

    def from_scaled_x(self, u):
        return u * self.d

    def g2_apply(self, v):
        return self.g2 * v

    def lam_sq(self):
        return self.lam * self.lam

    def identity(self):
        return np.ones_like(self.lam)

    @staticmethod
    def product(u, v):
        return u * v

    def divide(self, r):
        return r / self.lam

    def max_step(self, v):
        neg = v < 0
        if not np.any(neg):
            return np.inf
        return float(np.min(-self.lam[neg] / v[neg]))


def _jdot(u, v):
    return u[0] * v[0] - u[1:] @ v[1:]


class _SocScaling:
    def __init__(self, x, s):
        xj = _jdot(x, x)
        sj = _jdot(s, s)
        if xj <= 0 or sj <= 0 or x[0] <= 0 or s[0] <= 0:
            raise FloatingPointError("iterate left the second-order cone")
        xn = x / math.sqrt(xj)
        sn = s / math.sqrt(sj)
        gamma = math.sqrt((1.0 + xn @ sn) / 2.0)
        J = np.eye(len(x))
        J[1:, 1:] *= -1.0
        wbar = (sn + J @ xn) / (2.0 * gamma)
        v = wbar.copy()
        v[0] += 1.0
        v /= math.sqrt(2.0 * (wbar[0] + 1.0))
        beta = (sj / xj) ** 0.25
        self.P = beta * (2.0 * np.outer(v, v) - J)
        Jv = J @ v
        self.Pinv = (2.0 * np.outer(Jv, Jv) - J) / beta
        self.g2 = self.Pinv @ self.Pinv
        self.lam = self.P @ x

    def to_scaled_x(self, dx):
        return self.P @ dx

    def to_scaled_s(self, ds):
        return self.Pinv @ ds

    def from_scaled_x(self, u):
        return self.Pinv @ u

    def g2_apply(self, v):
        return self.g2 @ v

    def lam_sq(self):
        return self.product(self.lam, self.lam)

    def identity(self):
        e = np.zeros_like(self.lam)
        e[0] = 1.0
        return e

    @staticmethod
    def product(u, v):
        out = np.empty_like(u)
        out[0] = u @ v
        out[1:] = u[0] * v[1:] + v[0] * u[1:]
        return out

    def divide(self, r):
        l0, l1 = self.lam[0], self.lam[1:]
        det = l0 * l0 - l1 @ l1
        u0 = (l0 * r[0] - l1 @ r[1:]) / det
        u = np.empty_like(r)
        u[0] = u0
        u[1:] = (r[1:] - u0 * l1) / l0
        return u

    def max_step(self, v):
        lam = self.lam
        a = _jdot(v, v)
        bq = 2.0 * _jdot(lam, v)
        cq = _jdot(lam, lam)
        roots = []
        if abs(a) < 1e-300:
            if bq < 0:
                roots.append(-cq / bq)
        else:
            disc = bq * bq - 4 * a * cq
            if disc >= 0:
                sq = math.sqrt(disc)
                q = -0.5 * (bq + math.copysign(sq, bq))
                if q != 0:
                    roots.extend([q / a, cq / q])
        pos = [r for r in roots if r > 0]
        if pos:
            return min(pos)
        if v[0] < 0:
            return -lam[0] / v[0]
        return np.inf


class _PsdScaling:
    def __init__(self, xv, sv):
        X = smat(xv)
        S = smat(sv)
        L1 = np.linalg.cholesky(X)
        L2 = np.linalg.cholesky(S)
        U, sig, Vt = np.linalg.svd(L2.T @ L1)
        self.R = L1 @ Vt.T / np.sqrt(sig)
        self.Rinv = (np.sqrt(sig)[:, None] * Vt) @ sla.solve_triangular(
            L1, np.eye(len(sig)), lower=True)
        self.W = self.R @ self.R.T
        self.lam = sig  # scaled point is diag(sig)
        self.n = len(sig)

    # scaled quantities are symmetric matrices stored in svec form
    def to_scaled_x(self, dxv):
        return svec(self.Rinv @ smat(dxv) @ self.Rinv.T)

    def to_scaled_s(self, dsv):
        return svec(self.R.T @ smat(dsv) @ self.R)

    def from_scaled_x(self, uv):
        return svec(self.R @ smat(uv) @ self.R.T)

    def g2_apply(self, v):
        return svec(self.W @ smat(v) @ self.W)

    def lam_sq(self):
        return svec(np.diag(self.lam * self.lam))

    def identity(self):
        return svec(np.eye(self.n))

    @staticmethod
    def product(u, v):
        U, V = smat(u), smat(v)
        return svec(0.5 * (U @ V + V @ U))

    def divide(self, rv):
        R = smat(rv)
        return svec(2.0 * R / (self.lam[:, None] + self.lam[None, :]))

    def max_step(self, v):
        isq = 1.0 / np.sqrt(self.lam)
        M = smat(v) * isq[:, None] * isq[None, :]
        lmin = np.linalg.eigvalsh(M)[0]
        if lmin >= 0:
            return np.inf
        return -1.0 / lmin


def _make_scaling(kind, x, s):
    if kind == NONNEG:
        return _NonnegScaling(x, s)
    if kind == SOC:
        return _SocScaling(x, s)
    return _PsdScaling(x, s)


def _identity(bl: Block) -> np.ndarray:
    if bl.kind == NONNEG:
        return np.ones(bl.dim)
    if bl.kind == SOC:
        e = np.zeros(bl.dim)
        e[0] = 1.0
        return e
    if bl.kind == PSD:
        return svec(np.eye(bl.dim))
    return np.zeros(bl.dim)


def cone_membership(blocks, slices, v, dual=False) -> float:
    """Most negative 'eigenvalue' of v over the cone (or its dual)."""
    worst = np.inf
    for bl, sl in zip(blocks, slices):
        w = v[sl]
        if bl.kind == FREE:
            val = -np.max(np.abs(w)) if dual and w.size else np.inf
        elif bl.kind == NONNEG:
            val = float(np.min(w))
        elif bl.kind == SOC:
            val = float(w[0] - np.linalg.norm(w[1:]))
        else:
            val = float(np.linalg.eigvalsh(smat(w))[0])
        worst = min(worst, val)
    return worst


# ---------------------------------------------------------------------------
# the solver


class _Workspace:
    """Precomputed per-block slices of A used for the Schur complement."""

    def __init__(self, prog: ConicProgram):
        self.prog = prog
        A = prog.A.tocsc()
        self.blocks = prog.blocks
        self.slices = prog.slices()
        self.rows = []
        self.dense = []
        self.stacked = []
        for bl, sl in zip(self.blocks, self.slices):
            sub = A[:, sl]
            rows = np.unique(sub.tocoo().row)
            self.rows.append(rows)
            dense = sub[rows, :].toarray() if rows.size else np.zeros((0, bl.size))
            self.dense.append(dense)
            if bl.kind == PSD and rows.size:
                self.stacked.append(smat(dense))
            else:
                self.stacked.append(None)
        free = [k for k, bl in enumerate(self.blocks) if bl.kind == FREE]
        if free:
            idx = np.concatenate([np.arange(self.slices[k].start, self.slices[k].stop)
                                  for k in free])
        else:
            idx = np.zeros(0, dtype=int)
        self.free_idx = idx
        self.Af = prog.A[:, idx].toarray() if idx.size else np.zeros((prog.m, 0))

    def schur(self, scalings) -> np.ndarray:
        m = self.prog.m
        M = np.zeros((m, m))
        for k, bl in enumerate(self.blocks):
            if bl.kind == FREE or self.rows[k].size == 0:
                continue
            rows, Ad, sc = self.rows[k], self.dense[k], scalings[k]
            if bl.kind == NONNEG:
                blk = (Ad * sc.g2) @ Ad.T
            elif bl.kind == SOC:
                blk = Ad @ sc.g2 @ Ad.T
            else:
                W = sc.W
                WAW = np.matmul(np.matmul(W, self.stacked[k]), W)
                blk = Ad @ svec(WAW).T
            M[np.ix_(rows, rows)] += blk
        return M


class _Factor:
    def __init__(self, M: np.ndarray, Af: np.ndarray):
        m = M.shape[0]
        diag = np.abs(np.diag(M))
        scale = max(float(diag.max()) if m else 1.0, 1e-300)
        reg = 1e-13 * scale
        self.chol = None
        for _ in range(8):
            try:
                self.chol = sla.cho_factor(M + reg * np.eye(m), lower=True,
                                           check_finite=False)
                break
            except (np.linalg.LinAlgError, ValueError):
                reg *= 100.0
        if self.chol is None:
            raise np.linalg.LinAlgError("Schur complement factorization failed")
        self.Af = Af
        if Af.shape[1]:
            self.MinvAf = sla.cho_solve(self.chol, Af, check_finite=False)
            S = Af.T @ self.MinvAf
            S = 0.5 * (S + S.T)
            sreg = 1e-13 * max(float(np.abs(np.diag(S)).max()), 1e-300)
            try:
                self.schol = sla.cho_factor(S + sreg * np.eye(S.shape[0]), lower=True)
                self.spinv = None
            except (np.linalg.LinAlgError, ValueError):
                self.schol = None
                self.spinv = np.linalg.pinv(S, rcond=1e-13)

    def solve(self, h: np.ndarray, rdf: np.ndarray):
        if self.Af.shape[1] == 0:
            return sla.cho_solve(self.chol, h, check_finite=False), np.zeros(0)
        Minvh = sla.cho_solve(self.chol, h, check_finite=False)
        rhs = self.Af.T @ Minvh - rdf
        if self.schol is not None:
            dxf = sla.cho_solve(self.schol, rhs)
        else:
            dxf = self.spinv @ rhs
        dy = Minvh - self.MinvAf @ dxf
        return dy, dxf


def _initial_point(prog: ConicProgram):
    blocks = prog.blocks
    nu = max(sum(bl.degree for bl in blocks), 1)
    Anorm = sp.linalg.norm(prog.A, axis=1) if prog.m else np.zeros(0)
    ratio = (1.0 + np.abs(prog.b)) / (1.0 + Anorm) if prog.m else np.ones(1)
    xi = max(10.0, math.sqrt(nu), float(np.max(ratio)) * math.sqrt(nu))
    cnorm = float(np.linalg.norm(prog.c, np.inf))
    eta = max(10.0, math.sqrt(nu), cnorm * 1.0)
    x = np.zeros(prog.n)
    s = np.zeros(prog.n)
    for bl, sl in zip(blocks, prog.slices()):
        e = _identity(bl)
        x[sl] = xi * e
        s[sl] = eta * e
    return x, np.zeros(prog.m), s


_ELIMINATION_LIMIT = 2e7


def _eliminate_free(prog: ConicProgram):
    """Presolve free blocks: A_f^T y = c_f is solved as y = y0 + N t.

    Free primal variables carry no barrier and make the Schur complement
    singular near the end of the path.  Returns None when elimination does
    not apply (no free block, too large, or inconsistent equalities).
    """
    free = [k for k, bl in enumerate(prog.blocks) if bl.kind == FREE]
    if not free or len(free) == len(prog.blocks):
        return None
    if prog.m * prog.n > _ELIMINATION_LIMIT:
        return None
    sls = prog.slices()
    fidx = np.concatenate([np.arange(sls[k].start, sls[k].stop) for k in free])
    keep = np.setdiff1d(np.arange(prog.n), fidx)
    Af = prog.A[:, fidx].toarray()
    cf = prog.c[fidx]
    Q, R, piv = sla.qr(Af, pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return None
    r = int(np.sum(d > 1e-11 * d[0]))
    y0 = np.linalg.lstsq(Af.T, cf, rcond=None)[0]
    if np.linalg.norm(Af.T @ y0 - cf) > 1e-9 * (1.0 + np.linalg.norm(cf)):
        return None
    N = Q[:, r:]
    Ak = prog.A[:, keep]
    A2 = sp.csr_matrix(N.T @ Ak.toarray())
    red = ConicProgram(prog.c[keep] - Ak.T @ y0, A2, N.T @ prog.b,
                       [bl for bl in prog.blocks if bl.kind != FREE],
                       offset=prog.offset + float(prog.b @ y0), name=prog.name)
    return red, y0, N, fidx, keep, Af


def solve(prog: ConicProgram, tol: Tolerances | None = None,
          initial: tuple | None = None, verbose: bool = False) -> ConicSolution:
    """Solve the primal-dual pair; never raises on numerical trouble."""
    tol = tol or Tolerances()
    red = _eliminate_free(prog) if (tol.eliminate_free and initial is None) else None
    if red is None:
        return _solve_core(prog, tol, initial, verbose)
    prog2, y0, N, fidx, keep, Af = red
    sol2 = _solve_core(prog2, tol, None, verbose)
    x = np.zeros(prog.n)
    s = np.zeros(prog.n)
    x[keep] = sol2.x
    s[keep] = sol2.s
    cert = sol2.certificate
    if cert is not None and cert["kind"] == "dual_ray":
        y = N @ sol2.y
        cert = verify_dual_ray(prog, N @ cert["y"], _expand(cert["s"], prog.n, keep))
    elif cert is not None and cert["kind"] == "primal_ray":
        y = y0 + N @ sol2.y
        rx = _expand(cert["x"], prog.n, keep)
        rx[fidx] = np.linalg.lstsq(Af, -(prog.A[:, keep] @ cert["x"]), rcond=None)[0]
        cert = verify_primal_ray(prog, rx)
        x = rx
    else:
        y = y0 + N @ sol2.y
    if cert is None or cert["kind"] != "primal_ray":
        x[fidx] = np.linalg.lstsq(Af, prog.b - prog.A[:, keep] @ sol2.x, rcond=None)[0]
    st = sol2.stats
    rp = prog.b - prog.A @ x
    rd = prog.c - prog.A.T @ y - s
    pobj, dobj = float(prog.c @ x), float(prog.b @ y)
    st.pinf = float(np.linalg.norm(rp)) / (1.0 + np.linalg.norm(prog.b))
    st.dinf = float(np.linalg.norm(rd)) / (1.0 + np.linalg.norm(prog.c))
    st.primal_obj = pobj + prog.offset
    st.dual_obj = dobj + prog.offset
    st.rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return ConicSolution(x=x, y=y, s=s, stats=st, certificate=cert)


def _expand(v, n, keep):
    out = np.zeros(n)
    out[keep] = v
    return out


def _solve_core(prog: ConicProgram, tol: Tolerances, initial, verbose) -> ConicSolution:
    ws = _Workspace(prog)
    blocks, slices = prog.blocks, ws.slices
    A, b, c = prog.A, prog.b, prog.c
    AT = A.T.tocsr()
    cone_idx = [k for k, bl in enumerate(blocks) if bl.kind != FREE]
    nu = max(sum(bl.degree for bl in blocks), 1)
    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(c)

    if initial is not None:
        x, y, s = (np.array(v, dtype=float) for v in initial)
    else:
        x, y, s = _initial_point(prog)

    history = []
    status, message = FAILURE, "iteration limit reached"
    certificate = None
    best = None
    dual_done = None
    stall = 0
    it = 0
    pinf = dinf = gap = mu = np.inf
    pobj = dobj = np.nan

    for it in range(tol.max_iter + 1):
        rp = b - A @ x
        rd = c - AT @ y - s
        pobj = float(c @ x)
        dobj = float(b @ y)
        mu = float(sum(x[slices[k]] @ s[slices[k]] for k in cone_idx)) / nu
        pinf = float(np.linalg.norm(rp)) / bnorm
        dinf = float(np.linalg.norm(rd)) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append((it, pobj, dobj, pinf, dinf, mu))
        if verbose:
            print(f"{it:3d} p={pobj:+.8e} d={dobj:+.8e} pinf={pinf:.1e} "
                  f"dinf={dinf:.1e} gap={gap:.1e} mu={mu:.1e}")

        if pinf <= tol.feas and dinf <= tol.feas and gap <= tol.gap:
            status, message = OPTIMAL, "converged"
            break

        score = max(pinf, dinf, gap)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), s.copy(), it)
        if dinf <= tol.feas and mu <= tol.gap * (1.0 + abs(dobj)):
            # dual side feasible and complementary; kept in case the primal never settles
            dual_done = (x.copy(), y.copy(), s.copy(), it)

        # divergence based infeasibility tests
        if dobj > 0:
            cert = _dual_ray(prog, y, s)
            if cert is not None and cert["residual"] <= tol.infeas:
                status, message, certificate = INFEASIBLE, "dual improving ray", cert
                break
        if pobj < 0:
            cert = _primal_ray(prog, x)
            if cert is not None and cert["residual"] <= tol.infeas:
                status, message, certificate = UNBOUNDED, "primal improving ray", cert
                break

        if it == tol.max_iter:
            break

        try:
            scal = {}
            for k in cone_idx:
                scal[k] = _make_scaling(blocks[k].kind, x[slices[k]], s[slices[k]])
            M = ws.schur(scal)
            fac = _Factor(M, ws.Af)

            def direction(rc_blocks):
                dx, dy, ds = newton(rc_blocks, rp, rd)
                # iterative refinement: only A dx = rp is affected by Schur round-off
                zero_rc = {k: np.zeros_like(rc_blocks[k]) for k in cone_idx}
                zero_rd = np.zeros_like(rd)
                for _ in range(tol.refine):
                    e1 = rp - A @ dx
                    if np.linalg.norm(e1) <= 1e-14 * (1.0 + np.linalg.norm(rp)):
                        break
                    cx, cy, cs = newton(zero_rc, e1, zero_rd)
                    dx, dy, ds = dx + cx, dy + cy, ds + cs
                return dx, dy, ds

            def newton(rc_blocks, rp, rd):
                # u = lam \ rc ; dx = P^{-1} u - G2 ds ; ds = rd - A^T dy
                h = rp.copy()
                pinv_u = {}
                for k in cone_idx:
                    sc = scal[k]
                    u = sc.divide(rc_blocks[k])
                    pinv_u[k] = sc.from_scaled_x(u)
                    g2rd = sc.g2_apply(rd[slices[k]])
                    rows = ws.rows[k]
                    if rows.size:
                        h[rows] -= ws.dense[k] @ (pinv_u[k] - g2rd)
                rdf = rd[ws.free_idx] if ws.free_idx.size else np.zeros(0)
                dy, dxf = fac.solve(h, rdf)
                dx = np.zeros_like(x)
                ds = np.zeros_like(s)
                ATdy = AT @ dy
                for k in cone_idx:
                    sl = slices[k]
                    ds[sl] = rd[sl] - ATdy[sl]
                    dx[sl] = pinv_u[k] - scal[k].g2_apply(ds[sl])
                if ws.free_idx.size:
                    dx[ws.free_idx] = dxf
                return dx, dy, ds

            def steps(dx, ds):
                ap = ad = 1.0
                for k in cone_idx:
                    sc = scal[k]
                    sl = slices[k]
                    ap = min(ap, sc.max_step(sc.to_scaled_x(dx[sl])))
                    ad = min(ad, sc.max_step(sc.to_scaled_s(ds[sl])))
                return ap, ad

            rc_aff = {k: -scal[k].lam_sq() for k in cone_idx}
            dxa, dya, dsa = direction(rc_aff)
            ap, ad = steps(dxa, dsa)
            mu_aff = sum((x[slices[k]] + ap * dxa[slices[k]])
                         @ (s[slices[k]] + ad * dsa[slices[k]]) for k in cone_idx) / nu
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0

            rc = {}
            for k in cone_idx:
                sc = scal[k]
                sl = slices[k]
                corr = sc.product(sc.to_scaled_x(dxa[sl]), sc.to_scaled_s(dsa[sl]))
                rc[k] = -sc.lam_sq() + sigma * mu * sc.identity() - corr
            dx, dy, ds = direction(rc)
            ap, ad = steps(dx, ds)
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
                raise FloatingPointError("non-finite direction")
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            message = f"linear algebra breakdown: {exc}"
            break

        ap = min(1.0, tol.step * ap)
        ad = min(1.0, tol.step * ad)
        if tol.equal_steps:
            ap = ad = min(ap, ad)
        if max(ap, ad) < 1e-10:
            stall += 1
            if stall >= 3:
                message = "step length collapsed"
                break
        else:
            stall = 0
        x = x + ap * dx
        y = y + ad * dy
        s = s + ad * ds

    def residuals(x, y, s):
        pobj, dobj = float(c @ x), float(b @ y)
        pinf = float(np.linalg.norm(b - A @ x)) / bnorm
        dinf = float(np.linalg.norm(c - AT @ y - s)) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return pobj, dobj, pinf, dinf, gap

    if status == FAILURE and dual_done is not None:
        # primal optimum not attained (typical without a strictly feasible dual point)
        x, y, s, _ = dual_done
        pobj, dobj, pinf, dinf, gap = residuals(x, y, s)
        status = INACCURATE
        message += "; dual side converged, primal side not attained"
    elif status == FAILURE and best is not None and best[0] < max(pinf, dinf, gap):
        _, x, y, s, _ = best
        pobj, dobj, pinf, dinf, gap = residuals(x, y, s)
    if status == FAILURE and max(pinf, dinf, gap) <= tol.inaccurate:
        status = INACCURATE

    stats = SolveStats(status=status, iterations=it, mu=mu, pinf=pinf, dinf=dinf,
                       rel_gap=gap, primal_obj=pobj + prog.offset,
                       dual_obj=dobj + prog.offset, message=message,
                       history=history)
    return ConicSolution(x=x, y=y, s=s, stats=stats, certificate=certificate)


def _dual_ray(prog, y, s):
    by = float(prog.b @ y)
    if by <= 0:
        return None
    ry, rs = y / by, s / by
    for bl, sl in zip(prog.blocks, prog.slices()):
        if bl.kind == FREE:
            rs[sl] = 0.0
    return verify_dual_ray(prog, ry, rs)


def verify_dual_ray(prog, y, s):
    """Residuals of A^T y + s = 0, s in K, b.y = 1, recomputed from raw data."""
    by = float(prog.b @ y)
    res = float(np.linalg.norm(prog.A.T @ y + s)) / (1.0 + np.linalg.norm(y))
    cone = cone_membership(prog.blocks, prog.slices(), s, dual=True)
    free_viol = 0.0
    for bl, sl in zip(prog.blocks, prog.slices()):
        if bl.kind == FREE:
            free_viol = max(free_viol, float(np.max(np.abs((prog.A.T @ y)[sl]), initial=0.0)))
    return {"kind": "dual_ray", "y": y, "s": s, "by": by,
            "residual": max(res, free_viol, max(0.0, -cone)),
            "cone_min": cone}


def _primal_ray(prog, x):
    cx = float(prog.c @ x)
    if cx >= 0:
        return None
    return verify_primal_ray(prog, x / -cx)


def verify_primal_ray(prog, x):
    """Residuals of A x = 0, x in K, c.x = -1."""
    res = float(np.linalg.norm(prog.A @ x)) / (1.0 + np.linalg.norm(x))
    cone = cone_membership(prog.blocks, prog.slices(), x)
    return {"kind": "primal_ray", "x": x, "cx": float(prog.c @ x),
            "residual": max(res, max(0.0, -cone)), "cone_min": cone}


# ---------------------------------------------------------------------------
# linear-matrix-inequality front end


class LMIBuilder:
    """Collect a problem in the form  min q.y + q0  s.t.  F_j(y) in K_j.

    Each F_j is affine in the free variables y.  A PSD block takes entries
    (i, j, var, coeff) for the symmetric matrix, var = -1 marking the
    constant term.  ``zero`` blocks express equalities F_j(y) = 0.
    The builder maps onto the dual side of the standard pair, so the
    LMI objective is q0 - b.y and the matching certified bound is q0 - c.x.
    """

    def __init__(self, nvar: int):
        self.nvar = nvar
        self.q = np.zeros(nvar)
        self.q0 = 0.0
        self._blocks: list[tuple[Block, dict]] = []

    def set_objective(self, coeffs: dict[int, float], const: float = 0.0):
        self.q[:] = 0.0
        for k, v in coeffs.items():
            if k < 0:
                const += v
            else:
                self.q[k] += v
        self.q0 = const

    def _add(self, kind, dim, label, entries):
        bl = Block(kind, dim, label)
        acc: dict[tuple[int, int], float] = {}
        for pos, var, val in entries:
            if val != 0.0:
                key = (pos, var)
                acc[key] = acc.get(key, 0.0) + val
        self._blocks.append((bl, acc))
        return len(self._blocks) - 1

    def add_psd(self, order: int, entries, label: str = ""):
        flat = []
        for i, j, var, val in entries:
            if i == j:
                flat.append((svec_pos(order, i, j), var, val))
            else:
                flat.append((svec_pos(order, i, j), var, val * SQRT2))
        return self._add(PSD, order, label, flat)

    def add_soc(self, dim: int, entries, label: str = ""):
        return self._add(SOC, dim, label, entries)

    def add_nonneg(self, dim: int, entries, label: str = ""):
        return self._add(NONNEG, dim, label, entries)

    def add_zero(self, dim: int, entries, label: str = ""):
        return self._add(FREE, dim, label, entries)

    @property
    def blocks(self):
        return [bl for bl, _ in self._blocks]

    def build(self, normalize: bool = True) -> "LMIProgram":
        rows, cols, vals = [], [], []
        c_parts = []
        off = 0
        scales = []
        for bl, acc in self._blocks:
            scale = 1.0
            if normalize and acc:
                mx = max(abs(v) for v in acc.values())
                scale = 1.0 / mx if mx > 0 else 1.0
            scales.append(scale)
            cvec = np.zeros(bl.size)
            for (pos, var), val in acc.items():
                if var < 0:
                    cvec[pos] += val * scale
                else:
                    rows.append(var)
                    cols.append(off + pos)
                    vals.append(-val * scale)
            c_parts.append(cvec)
            off += bl.size
        qs = 1.0
        if normalize:
            mq = float(np.max(np.abs(self.q))) if self.nvar else 0.0
            qs = 1.0 / mq if mq > 0 else 1.0
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.nvar, off))
        prog = ConicProgram(np.concatenate(c_parts) if c_parts else np.zeros(0),
                            A, -self.q * qs, self.blocks)
        return LMIProgram(prog, q0=self.q0, qscale=qs, block_scales=scales)


@dataclass
class LMIResult:
    status: str
    value: float  # LMI objective at y
    bound: float  # certified side (from the conic primal)
    y: np.ndarray
    slacks: list  # F_j(y) per block (matrices for PSD), unscaled
    stats: SolveStats
    certificate: dict | None = None

    @property
    def gap_ok(self) -> bool:
        return abs(self.value - self.bound) <= 1e-6 * (1.0 + abs(self.value))


_LMI_STATUS = {OPTIMAL: OPTIMAL, INFEASIBLE: UNBOUNDED, UNBOUNDED: INFEASIBLE,
               FAILURE: FAILURE, INACCURATE: INACCURATE}


@dataclass
class LMIProgram:
    program: ConicProgram
    q0: float
    qscale: float
    block_scales: list

    def solve(self, tol: Tolerances | None = None, verbose=False) -> LMIResult:
        sol = solve(self.program, tol, verbose=verbose)
        value = self.q0 - float(self.program.b @ sol.y) / self.qscale
        bound = self.q0 - float(self.program.c @ sol.x) / self.qscale
        slack = self.program.c - self.program.A.T @ sol.y
        parts = self.program.block_values(slack)
        parts = [p / sc for p, sc in zip(parts, self.block_scales)]
        return LMIResult(status=_LMI_STATUS[sol.status], value=value, bound=bound,
                         y=sol.y, slacks=parts, stats=sol.stats,
                         certificate=sol.certificate)

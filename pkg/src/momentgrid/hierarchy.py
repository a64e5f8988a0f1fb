"""Dense and chordal-sparse moment relaxations over complex or real variables.

Complex moments are y_{a,b} = L(conj(z)^a z^b).  A complex moment matrix
has rows and columns indexed by holomorphic monomials and entry
(a, b) -> y_{a,b}; the localizing matrix of g has entries
sum g_{c,d} y_{a+c, b+d}.  Real moments are y_k = L(x^k) with the usual
Hankel-type matrices.  Hermitian blocks reach the conic solver through the
embedding [[Re, -Im], [Im, Re]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import conic
from .chordal import (CliqueDecomposition, assign_orders, chordal_extend, covering_clique,
                      graph_from_problem)
from .cpoly import EQ, CPolyProblem, RPolyProblem, to_real
from .errors import OrderTooLow, StitchFailure, UncoveredConstraint

COMPLEX, REAL = "complex", "real"


# ---------------------------------------------------------------------------
# monomial tables


def _compositions(total, parts):
    """Exponent vectors summing to ``total``, in descending lexicographic order."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def monomials(n: int, d: int, support=None) -> list[tuple[int, ...]]:
    """Multi-indices of length n, supported on ``support``, degree <= d, graded order."""
    support = list(range(n)) if support is None else sorted(support)
    out = []
    for deg in range(d + 1):
        for comp in _compositions(deg, len(support)):
            a = [0] * n
            for v, p in zip(support, comp):
                a[v] = p
            out.append(tuple(a))
    return out


@dataclass
class MomentIndexTable:
    rows: list
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {r: k for k, r in enumerate(self.rows)}

    @classmethod
    def build(cls, n, d, support=None):
        return cls(monomials(n, d, support))

    def __len__(self):
        return len(self.rows)


def moment_matrix_size(n_vars: int, d: int) -> int:
    return math.comb(n_vars + d, d)


def largest_block_sizes(n: int, d: int) -> dict:
    """Largest real PSD block for a complex problem in n variables at order d."""
    return {"complex_converted": 2 * math.comb(n + d, d),
            "real": math.comb(2 * n + d, d),
            "real_phase_fixed": math.comb(2 * n - 1 + d, d)}


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# orders


def constraint_degree(problem, i, flavor) -> int:
    """k_i (complex) or ceil(deg/2) (real) for constraint i; i = -1 is the objective."""
    p = problem.objective if i < 0 else problem.constraints[i].poly
    if isinstance(problem, RPolyProblem):
        return math.ceil(p.degree / 2)
    if flavor == COMPLEX:
        return p.k
    return math.ceil(p.degree / 2)


def min_order(problem, flavor: str) -> int:
    m = problem.m
    return max([1] + [constraint_degree(problem, i, flavor) for i in range(-1, m)])


# ---------------------------------------------------------------------------
# relaxation


@dataclass
class BlockSpec:
    label: str
    kind: str  # "moment", "localizing", "zero", "scalar"
    constraint: int | None
    clique: int | None
    rows: list
    order: int
    lmi_index: int = -1
    face: np.ndarray | None = None  # basis after facial reduction


    @property
    def size(self):
        return len(self.rows)


class MomentRelaxation:
    """A built moment relaxation ready to be solved."""

    def __init__(self, problem, flavor: str, orders, cliques=None, clique_orders=None,
                 decomposition: CliqueDecomposition | None = None,
                 facial_reduction: bool = True):
        self.facial_reduction = facial_reduction
        if isinstance(problem, RPolyProblem):
            flavor = REAL
        if flavor not in (COMPLEX, REAL):
            raise ValueError(f"unknown flavor {flavor!r}")
        self.problem = problem
        self.flavor = flavor
        self.n = problem.n_vars
        m = problem.m
        orders = list(orders)
        if len(orders) != m:
            raise ValueError(f"need {m} orders, got {len(orders)}")
        self.orders = orders
        self.decomposition = decomposition
        if cliques is None:
            d = max([1] + orders + [constraint_degree(problem, -1, flavor)])
            cliques = [list(range(self.n))]
            clique_orders = [d]
        self.cliques = [sorted(c) for c in cliques]
        self.clique_orders = list(clique_orders)
        self.blocks: list[BlockSpec] = []
        self._var: dict = {}
        self._nvar = 0
        self._pending: list = []
        self._build()

    # -- variables ------------------------------------------------------------

    def _zero_key(self):
        z = (0,) * self.n
        return (z, z) if self.flavor == COMPLEX else z

    def _canon(self, key):
        """(canonical key, conjugated?)"""
        if self.flavor == REAL:
            return key, False
        a, b = key
        if a <= b:
            return key, False
        return (b, a), True

    def _vars_for(self, ckey):
        v = self._var.get(ckey)
        if v is None:
            if self.flavor == REAL:
                v = (self._nvar, None)
                self._nvar += 1
            else:
                a, b = ckey
                if a == b:
                    v = (self._nvar, None)
                    self._nvar += 1
                else:
                    v = (self._nvar, self._nvar + 1)
                    self._nvar += 2
            self._var[ckey] = v
        return v

    def _lin(self, terms):
        """Real and imaginary parts of sum c * y_key as {var: coeff} (var -1 = constant)."""
        re, im = {}, {}
        zero = self._zero_key()
        for key, c in terms:
            if key == zero:
                re[-1] = re.get(-1, 0.0) + c.real
                im[-1] = im.get(-1, 0.0) + c.imag
                continue
            ckey, conj = self._canon(key)
            vr, vi = self._vars_for(ckey)
            sgn = -1.0 if conj else 1.0
            re[vr] = re.get(vr, 0.0) + c.real
            im[vr] = im.get(vr, 0.0) + c.imag
            if vi is not None:
                re[vi] = re.get(vi, 0.0) - c.imag * sgn
                im[vi] = im.get(vi, 0.0) + c.real * sgn
        return re, im

    # -- entries --------------------------------------------------------------

    def _poly_terms(self, poly):
        if self.flavor == REAL and isinstance(self.problem, RPolyProblem):
            return [(k, complex(v)) for k, v in poly.terms.items()]
        return [(k, complex(v)) for k, v in poly.terms.items()]

    def entry_terms(self, terms, r, s):
        """[(moment key, coeff)] for entry (r, s) of the matrix built on g."""
        if self.flavor == COMPLEX:
            return [((_add(r, a), _add(s, b)), c) for (a, b), c in terms]
        rs = _add(r, s)
        return [(_add(rs, k), c) for k, c in terms]

    def symbolic_block(self, block: BlockSpec):
        """Entries as {moment key: coeff} dicts (the relaxation as printed)."""
        terms = self._block_terms(block)
        N = block.size
        out = [[None] * N for _ in range(N)]
        for r in range(N):
            for s in range(N):
                acc = {}
                for key, c in self.entry_terms(terms, block.rows[r], block.rows[s]):
                    acc[key] = acc.get(key, 0.0) + c
                out[r][s] = {k: v for k, v in acc.items() if abs(v) > 0}
        return out

    def _block_terms(self, block):
        if block.constraint is None:
            zero = (0,) * self.n
            return [((zero, zero), 1.0 + 0j)] if self.flavor == COMPLEX else [(zero, 1.0 + 0j)]
        return self._poly_terms(self.problem.constraints[block.constraint].poly)

    # -- construction -----------------------------------------------------------

    def _support(self, poly):
        return poly.support()

    def _build(self):
        prob = self.problem
        n = self.n
        cover_keys = set()

        for g, (cl, d) in enumerate(zip(self.cliques, self.clique_orders)):
            rows = monomials(n, d, cl)
            self._register(BlockSpec(f"moment C{g + 1}", "moment", None, g, rows, d))
            cover_keys.add(g)

        for i, con in enumerate(prob.constraints):
            k = constraint_degree(prob, i, self.flavor)
            di = self.orders[i]
            if di < k:
                raise OrderTooLow(f"constraint {con.label!r} needs order >= {k}, got {di}")
            sup = self._support(con.poly)
            if len(self.cliques) == 1:
                g = 0
            else:
                g = covering_clique(_Dec(self.cliques), sup)
                if g is None:
                    if di - k > 0:
                        raise UncoveredConstraint(f"constraint {con.label!r} lies in no clique")
                    g = None
            if g is not None and di > self.clique_orders[g]:
                raise OrderTooLow(f"clique {g + 1} order {self.clique_orders[g]} < {di}")
            loc = di - k
            cl = self.cliques[g] if g is not None else sorted(sup)
            rows = monomials(n, loc, cl)
            if con.sense == EQ:
                kind = "zero"
            elif len(rows) == 1:
                kind = "scalar"
            else:
                kind = "localizing"
            self._register(BlockSpec(con.label or f"g{i + 1}", kind, i, g, rows, loc))

        obj_k = constraint_degree(prob, -1, self.flavor)
        if max(self.clique_orders) < obj_k:
            raise OrderTooLow(f"objective needs order >= {obj_k}")
        self._finalize()

    def _register(self, block):
        self.blocks.append(block)

    def _finalize(self):
        specs = []
        self._eq_cache = self._imposed_equalities() if self.flavor == REAL else []
        for block in self.blocks:
            terms = self._block_terms(block)
            rows = block.rows
            N = len(rows)
            if block.kind == "zero":
                eqs = self._zero_rows(terms, rows)
                specs.append(("zero", len(eqs), [(p, v, c) for p, e in enumerate(eqs)
                                                 for v, c in e.items()]))
            elif self.flavor == COMPLEX:
                if N == 1:
                    re, _ = self._lin(self.entry_terms(terms, rows[0], rows[0]))
                    specs.append(("nonneg", 1, [(0, v, c) for v, c in re.items()]))
                    continue
                ent = []
                for r in range(N):
                    for s in range(r + 1):
                        re, im = self._lin(self.entry_terms(terms, rows[r], rows[s]))
                        for v, c in re.items():
                            ent.append((r, s, v, c))
                            ent.append((N + r, N + s, v, c))
                        if r != s:
                            for v, c in im.items():
                                ent.append((N + r, s, v, c))
                                ent.append((N + s, r, v, -c))
                specs.append(("psd", 2 * N, ent))
            else:
                if N == 1:
                    re, _ = self._lin(self.entry_terms(terms, rows[0], rows[0]))
                    specs.append(("nonneg", 1, [(0, v, c) for v, c in re.items()]))
                    continue
                lin = {}
                for r in range(N):
                    for s in range(r + 1):
                        re, _ = self._lin(self.entry_terms(terms, rows[r], rows[s]))
                        lin[(r, s)] = re
                V = self._face_basis(block, terms) if self.facial_reduction else None
                if V is None:
                    ent = [(r, s, v, c) for (r, s), re in lin.items() for v, c in re.items()]
                    specs.append(("psd", N, ent))
                    continue
                block.face = V
                K = V.shape[1]
                if K == 0:
                    specs.append(("skip", 0, []))
                elif K == 1:
                    ent = _project(lin, V)
                    specs.append(("nonneg", 1, [(0, v, c) for _, _, v, c in ent]))
                else:
                    specs.append(("psd", K, _project(lin, V)))

        _prune_dependent(specs, self._nvar)
        obj_re, _ = self._lin(self._poly_terms(self.problem.objective))
        self.lmi_builder = conic.LMIBuilder(self._nvar)
        self.lmi_builder.set_objective(obj_re)
        for block, (kind, dim, ent) in zip(self.blocks, specs):
            lab = block.label
            if kind == "psd":
                block.lmi_index = self.lmi_builder.add_psd(dim, ent, lab)
            elif kind == "nonneg":
                block.lmi_index = self.lmi_builder.add_nonneg(dim, ent, lab)
            elif kind == "zero":
                block.lmi_index = self.lmi_builder.add_zero(dim, ent, lab) if dim else -1

    def _imposed_equalities(self):
        """(terms of g, set of theta with L(g x^theta) = 0 imposed) per real equality."""
        out = []
        for b in self.blocks:
            if b.kind != "zero":
                continue
            sums = {_add(a, c) for a in b.rows for c in b.rows}
            out.append((self._block_terms(b), sums))
        return out

    def _face_basis(self, block, terms):
        """Orthonormal basis of the complement of the kernel forced by equalities.

        With g = 0 imposed, L(h x^lam g x^kap) = 0 for the relevant lam, kap,
        so the coefficient vector of g x^kap is a null vector of the block.
        Returns None when no such vector exists.
        """
        rows = block.rows
        index = {r: k for k, r in enumerate(rows)}
        hmon = [k for k, _ in terms]
        vecs = []
        for gterms, theta in self._eq_cache:
            for kap in rows:
                u = np.zeros(len(rows))
                ok = True
                for gam, c in gterms:
                    pos = index.get(_add(kap, gam))
                    if pos is None:
                        ok = False
                        break
                    u[pos] += c.real
                if not ok or not np.any(u):
                    continue
                if all(_add(_add(lam, kap), mu) in theta for lam in rows for mu in hmon):
                    vecs.append(u)
        if not vecs:
            return None
        U = np.array(vecs).T
        Q, sv, _ = np.linalg.svd(U, full_matrices=True)
        rank = int(np.sum(sv > 1e-9 * sv[0]))
        if rank == 0:
            return None
        return Q[:, rank:]

    def _zero_rows(self, terms, rows):
        """Independent-looking equations of a zero localizing block, deduplicated."""
        seen = set()
        eqs = []

        def push(lin):
            lin = {v: c for v, c in lin.items() if abs(c) > 1e-15}
            if not lin:
                return
            mx = max(abs(c) for c in lin.values())
            sig = tuple(sorted((v, round(c / mx, 12)) for v, c in lin.items()))
            neg = tuple(sorted((v, round(-c / mx, 12)) for v, c in lin.items()))
            if sig in seen or neg in seen:
                return
            seen.add(sig)
            eqs.append(lin)

        if self.flavor == COMPLEX:
            for r in range(len(rows)):
                for s in range(r + 1):
                    re, im = self._lin(self.entry_terms(terms, rows[r], rows[s]))
                    push(re)
                    if r != s:
                        push(im)
        else:
            sums = sorted({_add(a, b) for a in rows for b in rows})
            zero = (0,) * self.n
            for k in sums:
                re, _ = self._lin(self.entry_terms(terms, k, zero))
                push(re)
        return eqs

    # -- accessors --------------------------------------------------------------

    @property
    def nvar(self):
        return self._nvar

    def block_sizes(self):
        return [(b.label, b.kind, b.size) for b in self.blocks]

    def largest_real_block(self):
        sizes = [bl.size for bl in self.lmi_builder.blocks if bl.kind == conic.PSD]
        return max(sizes, default=0)

    def program(self, normalize=True) -> conic.LMIProgram:
        return self.lmi_builder.build(normalize=normalize)

    def solve(self, tol: conic.Tolerances | None = None, verbose=False) -> "MomentSolution":
        res = self.program().solve(tol, verbose=verbose)
        return MomentSolution(self, res)

    def dumps(self) -> str:
        """Block list with labels and sparse coefficient triplets."""
        lines = [f"# moment relaxation flavor={self.flavor} nvar={self.nvar}"]
        for b in self.blocks:
            lines.append(f"block {b.label!r} kind={b.kind} clique={b.clique} "
                         f"constraint={b.constraint} order={b.order} size={b.size}")
        lines.append(self.program(normalize=False).program.dumps())
        return "\n".join(lines)

    def moment_value(self, y, key) -> complex:
        if key == self._zero_key():
            return 1.0
        ckey, conj = self._canon(key)
        v = self._var.get(ckey)
        if v is None:
            raise KeyError(f"moment {key} is not part of the relaxation")
        vr, vi = v
        val = complex(y[vr], 0.0 if vi is None else y[vi])
        return val.conjugate() if conj else val

    def has_moment(self, key) -> bool:
        return key == self._zero_key() or self._canon(key)[0] in self._var


def _project(lin, V, drop=1e-13):
    """Entries of V^T F(y) V from the lower-triangle linear forms of F."""
    N, K = V.shape
    mats = {}
    for (r, s), form in lin.items():
        for v, c in form.items():
            F = mats.get(v)
            if F is None:
                F = mats[v] = np.zeros((N, N))
            F[r, s] += c
            if r != s:
                F[s, r] += c
    ent = []
    for v, F in mats.items():
        G = V.T @ F @ V
        scale = max(float(np.abs(F).max()), 1e-300)
        for a in range(K):
            for b in range(a + 1):
                if abs(G[a, b]) > drop * scale:
                    ent.append((a, b, v, float(G[a, b])))
    return ent


def _independent(rows, nvar, rtol=1e-10):
    """Indices of a maximal independent subset of rows [a | a0] (QR with pivoting)."""
    if not rows:
        return []
    cols = sorted({v for r in rows for v in r})
    pos = {v: k for k, v in enumerate(cols)}
    A = np.zeros((len(rows), len(cols)))
    for i, r in enumerate(rows):
        for v, c in r.items():
            A[i, pos[v]] = c
    A /= np.maximum(np.abs(A).max(axis=1, keepdims=True), 1e-300)
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return []
    rank = int(np.sum(d > rtol * d[0]))
    return sorted(piv[:rank].tolist())


_DENSE_QR_LIMIT = 5e7


def _prune_dependent(specs, nvar):
    """Drop equality rows implied by others; singular free blocks stall the solver."""
    zero = [k for k, sp in enumerate(specs) if sp[0] == "zero"]
    rows, owner = [], []
    for k in zero:
        _, dim, ent = specs[k]
        local = [dict() for _ in range(dim)]
        for p, v, c in ent:
            local[p][v] = local[p].get(v, 0.0) + c
        keep = _independent(local, nvar)
        for p in keep:
            rows.append(local[p])
            owner.append(k)
    if len(rows) * max(nvar, 1) <= _DENSE_QR_LIMIT:
        keep = set(_independent(rows, nvar))
    else:
        keep = set(range(len(rows)))
    per = {k: [] for k in zero}
    for i, (r, k) in enumerate(zip(rows, owner)):
        if i in keep:
            per[k].append(r)
    for k in zero:
        eqs = per[k]
        specs[k] = ("zero", len(eqs), [(p, v, c) for p, e in enumerate(eqs) for v, c in e.items()])


class _Dec:
    def __init__(self, cliques):
        self.cliques = cliques


def build_moment(problem, flavor: str, orders, sparse: bool = False,
                 decomposition: CliqueDecomposition | None = None) -> MomentRelaxation:
    """Relaxation with per-constraint orders d_i (a scalar means all equal).

    A complex problem asked for in the real flavor is converted first, with
    no phase fixing; callers wanting a fixed phase pass ``to_real`` output.
    """
    if flavor == REAL and isinstance(problem, CPolyProblem):
        problem = to_real(problem)
    m = problem.m
    if isinstance(orders, int):
        orders = [orders] * m
    orders = list(orders)
    dmin = min_order(problem, flavor if not isinstance(problem, RPolyProblem) else REAL)
    if max(orders + [0]) < dmin and not sparse:
        obj_k = constraint_degree(problem, -1, flavor)
        if max(orders + [obj_k]) < dmin:
            raise OrderTooLow(f"order {max(orders + [0])} below minimal order {dmin}")
    if not sparse:
        d = max(orders + [constraint_degree(problem, -1, flavor), 1])
        return MomentRelaxation(problem, flavor, orders, [list(range(problem.n_vars))], [d])
    dec = decomposition or sparse_decomposition(problem, orders, flavor)
    return MomentRelaxation(problem, flavor, orders, dec.cliques, dec.orders, dec)


def sparse_decomposition(problem, orders, flavor=COMPLEX) -> CliqueDecomposition:
    """Chordal extension of the sparsity graph augmented by high-order constraints."""
    extra = []
    for i, con in enumerate(problem.constraints):
        if orders[i] > 1:
            extra.append(sorted(con.poly.support()))
    obj_k = constraint_degree(problem, -1, flavor)
    if obj_k > 1:
        for key in problem.objective.terms:
            sup = _key_support(key)
            if sup:
                extra.append(sup)
    graph = graph_from_problem(problem, extra)
    dec = chordal_extend(graph)
    supports = [sorted(c.poly.support()) for c in problem.constraints]
    dec = assign_orders(dec, orders, supports)
    # the objective's monomials need a clique of sufficient order
    for key in problem.objective.terms:
        sup = _key_support(key)
        need = _key_order(key, flavor)
        if need <= 1 or not sup:
            continue
        g = covering_clique(dec, sup)
        if g is None:
            raise UncoveredConstraint("objective monomial lies in no clique")
        dec.orders[g] = max(dec.orders[g], need)
    return dec


def _key_support(key):
    if isinstance(key[0], tuple):
        a, b = key
        return sorted(i for i in range(len(a)) if a[i] or b[i])
    return sorted(i for i, p in enumerate(key) if p)


def _key_order(key, flavor):
    if isinstance(key[0], tuple):
        a, b = key
        return max(sum(a), sum(b)) if flavor == COMPLEX else math.ceil((sum(a) + sum(b)) / 2)
    return math.ceil(sum(key) / 2)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class CandidatePoint:
    z: np.ndarray
    rank_ratios: list  # lambda_1 / lambda_2 per clique block
    stitch_residual: float = 0.0


class MomentSolution:
    """Solved relaxation: values, moments and candidate extraction."""

    def __init__(self, relaxation: MomentRelaxation, result: conic.LMIResult):
        self.relaxation = relaxation
        self.result = result

    @property
    def status(self):
        return self.result.status

    @property
    def value(self):
        """Moment side objective (rho_d)."""
        return self.result.value

    @property
    def dual_value(self):
        """Sum-of-squares side objective (rho_d^*)."""
        return self.result.bound

    @property
    def gap_ok(self):
        return self.result.gap_ok

    @property
    def stats(self):
        return self.result.stats

    def moment(self, key) -> complex:
        return self.relaxation.moment_value(self.result.y, key)

    def L(self, poly) -> float:
        """Riesz functional applied to a polynomial of the relaxed problem."""
        tot = 0.0 + 0.0j
        for key, c in poly.terms.items():
            tot += c * self.moment(key)
        return tot.real

    def block_matrix(self, block: BlockSpec) -> np.ndarray:
        rel = self.relaxation
        terms = rel._block_terms(block)
        N = block.size
        dtype = complex if rel.flavor == COMPLEX else float
        out = np.zeros((N, N), dtype=dtype)
        for r in range(N):
            for s in range(N):
                val = sum(c * self.moment(k) for k, c in rel.entry_terms(terms, block.rows[r],
                                                                        block.rows[s]))
                out[r, s] = val if dtype is complex else np.real(val)
        return out

    def moment_blocks(self):
        return [b for b in self.relaxation.blocks if b.kind == "moment"]

    def moment_matrix(self, clique=0, order=None) -> np.ndarray:
        blk = self.moment_blocks()[clique]
        M = self.block_matrix(blk)
        if order is None:
            return M
        keep = [k for k, r in enumerate(blk.rows) if sum(r) <= order]
        return M[np.ix_(keep, keep)]

    def trace_moment(self, clique=0) -> float:
        return float(np.real(np.trace(self.moment_matrix(clique))))

    # -- extraction -------------------------------------------------------------

    def _first_order(self, variables):
        """W ~ z z^H over the listed complex variables."""
        rel = self.relaxation
        n = rel.n
        k = len(variables)
        W = np.zeros((k, k), dtype=complex)
        for a, i in enumerate(variables):
            for b, j in enumerate(variables):
                ei = tuple(1 if t == i else 0 for t in range(n))
                ej = tuple(1 if t == j else 0 for t in range(n))
                W[a, b] = self.moment((ej, ei))  # L(z_i conj(z_j))
        return W

    def _second_real(self, variables):
        rel = self.relaxation
        n = rel.n
        k = len(variables)
        X = np.zeros((k, k))
        for a, i in enumerate(variables):
            for b, j in enumerate(variables):
                key = tuple((1 if t == i else 0) + (1 if t == j else 0) for t in range(n))
                X[a, b] = self.moment(key).real
        return X

    def extract_candidate(self, strict=False, tol=1e-3) -> CandidatePoint:
        rel = self.relaxation
        if rel.flavor == COMPLEX:
            return self._extract_complex(strict, tol)
        return self._extract_real()

    def _extract_complex(self, strict, tol):
        rel = self.relaxation
        n = rel.n
        vecs, ratios = [], []
        for cl in rel.cliques:
            W = self._first_order(cl)
            W = 0.5 * (W + W.conj().T)
            ev, V = np.linalg.eigh(W)
            lam1 = max(ev[-1], 0.0)
            ratios.append(_ratio(ev))
            vecs.append(math.sqrt(lam1) * V[:, -1])
        z = np.zeros(n, dtype=complex)
        placed = np.zeros(n, dtype=bool)
        resid = 0.0
        order = _clique_visit_order(rel)
        for g in order:
            cl, v = rel.cliques[g], vecs[g]
            ov = [a for a, i in enumerate(cl) if placed[i]]
            if ov:
                ref = np.array([z[cl[a]] for a in ov])
                cur = v[ov]
                rot = np.vdot(cur, ref)
                if abs(rot) > 0:
                    v = v * rot / abs(rot)
                r = np.linalg.norm(v[ov] - ref) / max(np.linalg.norm(ref), 1e-12)
                resid = max(resid, r)
            for a, i in enumerate(cl):
                if not placed[i]:
                    z[i] = v[a]
                    placed[i] = True
        if strict and resid > tol:
            raise StitchFailure(f"clique overlap mismatch {resid:.2e}")
        return CandidatePoint(z, ratios, resid)

    def _extract_real(self):
        rel = self.relaxation
        prob = rel.problem
        n_real = rel.n
        origin = getattr(prob, "origin", None) or list(range(n_real))
        nc = max(origin) + 1 if origin else 0
        # position of each real variable: (complex index, 0 for Re / 1 for Im)
        part = []
        seen = set()
        for p, o in enumerate(origin):
            part.append((o, 1 if o in seen else 0))
            seen.add(o)
        ratios = []
        zsum = np.zeros(nc, dtype=complex)
        cnt = np.zeros(nc)
        for cl in rel.cliques:
            X = self._second_real(cl)
            comps = sorted({part[p][0] for p in cl})
            loc = {c: k for k, c in enumerate(comps)}
            X2 = np.zeros((2 * len(comps), 2 * len(comps)))
            for a, p in enumerate(cl):
                for b, q in enumerate(cl):
                    ia = loc[part[p][0]] + part[p][1] * len(comps)
                    ib = loc[part[q][0]] + part[q][1] * len(comps)
                    X2[ia, ib] = X[a, b]
            from .cpoly import lambda_tilde
            W = lambda_tilde(X2)
            W = 0.5 * (W + W.conj().T)
            ev, V = np.linalg.eigh(W)
            ratios.append(_ratio(ev))
            v = math.sqrt(2 * max(ev[-1], 0.0)) * V[:, -1]
            # align with first moments (resolves the sign/phase left by the eigenvector)
            first = np.zeros(len(comps), dtype=complex)
            for p in cl:
                c, im = part[p]
                key = tuple(1 if t == p else 0 for t in range(n_real))
                first[loc[c]] += (1j if im else 1.0) * self.moment(key).real
            rot = np.vdot(v, first)
            if abs(rot) > 1e-9 * max(1.0, np.linalg.norm(first) * np.linalg.norm(v)):
                v = v * rot / abs(rot)
            elif getattr(prob, "fixed_phase", None) is not None:
                k = loc.get(prob.fixed_phase)
                if k is not None and abs(v[k]) > 0:
                    v = v * abs(v[k]) / v[k]
            for c, k in loc.items():
                zsum[c] += v[k]
                cnt[c] += 1
        z = zsum / np.maximum(cnt, 1)
        return CandidatePoint(z, ratios, 0.0)


def _ratio(ev):
    ev = np.sort(np.real(ev))
    if len(ev) < 2:
        return math.inf
    l1, l2 = ev[-1], max(ev[-2], 0.0)
    if l2 <= 1e-300:
        return math.inf
    return float(l1 / l2)


def _clique_visit_order(rel):
    dec = rel.decomposition
    p = len(rel.cliques)
    if dec is None or not dec.tree_edges:
        return list(range(p))
    adj = {k: set() for k in range(p)}
    for a, b in dec.tree_edges:
        adj[a].add(b)
        adj[b].add(a)
    order, seen = [], set()
    for root in range(p):
        if root in seen:
            continue
        stack = [root]
        seen.add(root)
        while stack:
            g = stack.pop(0)
            order.append(g)
            for h in sorted(adj[g]):
                if h not in seen:
                    seen.add(h)
                    stack.append(h)
    return order

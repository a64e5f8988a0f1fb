"""First-level relaxations: Shor SDPs and their second-order-cone weakenings.

Variables are the entries of a lifted matrix.  In the complex variants
W stands for z z^H (W[r, s] ~ z_r conj(z_s)); in the real variants X
stands for x x^T with x = [Re z; Im z].  Problems with linear terms are
homogenized by one extra index pinned to 1, placed last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .chordal import SparsityGraph, chordal_extend, graph_from_problem
from .cpoly import EQ, CPolynomial, CPolyProblem, lambda_tilde, real_form
from .errors import NotQuadratic

COMPLEX = "complex"
REAL_CONVERTED = "real_converted"
REAL_NATIVE = "real_native"
REAL = "real"
SHOR_VARIANTS = (COMPLEX, REAL_CONVERTED, REAL_NATIVE)
SOCP_VARIANTS = (COMPLEX, REAL)

EXACT_RATIO = 1e-4  # lambda_2 / lambda_1 below this counts as rank one


# ---------------------------------------------------------------------------
# lifted-matrix variable registries


class _ComplexLift:
    """Hermitian W of order N; diagonal entries real, off-diagonals (re, im)."""

    def __init__(self, order: int, dense: bool):
        self.N = order
        self.index: dict[tuple[int, int], tuple[int, int]] = {}
        self.nvar = 0
        if dense:
            for i in range(order):
                for j in range(i, order):
                    self._alloc(i, j)

    def _alloc(self, i, j):
        if (i, j) not in self.index:
            if i == j:
                self.index[(i, j)] = (self.nvar, -1)
                self.nvar += 1
            else:
                self.index[(i, j)] = (self.nvar, self.nvar + 1)
                self.nvar += 2
        return self.index[(i, j)]

    def real_part(self, r, s, c: complex) -> dict:
        """Linear expression of Re(c * W[r, s])."""
        i, j = min(r, s), max(r, s)
        re, im = self._alloc(i, j)
        out = {re: c.real}
        if im >= 0:
            # W[r, s] = re + i im when r < s, its conjugate otherwise
            sign = 1.0 if r < s else -1.0
            out[im] = out.get(im, 0.0) - sign * c.imag
        return out

    def matrix(self, y) -> np.ndarray:
        W = np.zeros((self.N, self.N), dtype=complex)
        for (i, j), (re, im) in self.index.items():
            v = y[re] + (1j * y[im] if im >= 0 else 0.0)
            W[i, j] = v
            W[j, i] = np.conj(v)
        return W

    def psd_entries(self, nodes=None):
        """Entries of the real embedding [[Re W, -Im W], [Im W, Re W]].

        With ``nodes`` the embedding is of the principal submatrix W[nodes, nodes].
        """
        if nodes is None:
            N, items = self.N, self.index.items()
        else:
            pos = {v: k for k, v in enumerate(nodes)}
            N = len(nodes)
            items = [((pos[i], pos[j]), self.index[(i, j)])
                     for a, i in enumerate(nodes) for j in nodes[a:]]
        out = []
        for (i, j), (re, im) in items:
            out.append((i, j, re, 1.0))
            out.append((N + i, N + j, re, 1.0))
            if im >= 0:
                out.append((i, N + j, im, -1.0))
                out.append((j, N + i, im, 1.0))
        return out


class _RealLift:
    """Symmetric X of order N, one variable per entry on or above the diagonal."""

    def __init__(self, order: int, dense: bool):
        self.N = order
        self.index: dict[tuple[int, int], int] = {}
        self.nvar = 0
        if dense:
            for i in range(order):
                for j in range(i, order):
                    self._alloc(i, j)

    def _alloc(self, i, j):
        key = (min(i, j), max(i, j))
        if key not in self.index:
            self.index[key] = self.nvar
            self.nvar += 1
        return self.index[key]

    def entry(self, i, j, c: float) -> dict:
        return {self._alloc(i, j): c}

    def matrix(self, y) -> np.ndarray:
        X = np.zeros((self.N, self.N))
        for (i, j), v in self.index.items():
            X[i, j] = X[j, i] = y[v]
        return X

    def psd_entries(self):
        return [(i, j, v, 1.0) for (i, j), v in self.index.items()]


def _merge(acc: dict, part: dict, scale=1.0):
    for k, v in part.items():
        acc[k] = acc.get(k, 0.0) + scale * v
    return acc


# ---------------------------------------------------------------------------
# polynomial -> linear form in the lifted matrix


def _needs_homog_complex(polys) -> bool:
    for p in polys:
        for a, b in p.terms:
            if sum(a) + sum(b) == 1:
                return True
    return False


def _complex_linear(lift: _ComplexLift, poly: CPolynomial, h: int | None) -> dict:
    out: dict = {}
    for (a, b), c in poly.terms.items():
        da, db = sum(a), sum(b)
        if da + db == 0:
            out[-1] = out.get(-1, 0.0) + complex(c).real
            continue
        if da > 1 or db > 1:
            raise NotQuadratic("term is not of the form conj(z_i) z_j, z_j or a constant")
        col = a.index(1) if da else h  # conj(z_col)
        row = b.index(1) if db else h  # z_row
        _merge(out, lift.real_part(row, col, complex(c)))
    return out


def _real_linear(lift: _RealLift, poly, h: int | None) -> dict:
    out: dict = {}
    for k, c in poly.terms.items():
        idx = [i for i, e in enumerate(k) for _ in range(e)]
        if not idx:
            out[-1] = out.get(-1, 0.0) + c
            continue
        if len(idx) > 2:
            raise NotQuadratic(f"term of degree {len(idx)} in a quadratic relaxation")
        i, j = (idx[0], h) if len(idx) == 1 else idx
        _merge(out, lift.entry(i, j, c))
    return out


def _is_quadratic(poly) -> bool:
    return poly.degree <= 2


# ---------------------------------------------------------------------------
# relaxation containers


@dataclass
class ShorRelaxation:
    variant: str
    problem: CPolyProblem
    builder: conic.LMIBuilder
    lift: object
    homogenized: bool
    phase_var: int | None = None
    epigraph_vars: list = field(default_factory=list)
    kind: str = "sdp"
    edge_set: set = field(default_factory=set)
    cliques: list = field(default_factory=list)  # PSD blocks of the clique-sparse form
    tree_edges: list = field(default_factory=list)

    @property
    def var_map(self) -> dict:
        return dict(self.lift.index)

    @property
    def program(self) -> conic.ConicProgram:
        return self.builder.build().program

    @property
    def order(self) -> int:
        return self.lift.N

    def solve(self, tol: conic.Tolerances | None = None, verbose=False) -> "ShorSolution":
        res = self.builder.build().solve(tol, verbose=verbose)
        return ShorSolution(self, res)


# The SOCP variants reuse the container; ``edge_set`` lists the 2x2 minors.
SocpRelaxation = ShorRelaxation


@dataclass
class RankOneRecovery:
    candidate_v: np.ndarray
    rank_metric: float  # lambda_1 / lambda_2
    exact: bool
    eigenvalues: np.ndarray
    rank: int = 0


@dataclass
class ShorSolution:
    relaxation: ShorRelaxation
    result: conic.LMIResult

    @property
    def status(self) -> str:
        return self.result.status

    @property
    def value(self) -> float:
        return self.result.value

    @property
    def bound(self) -> float:
        return self.result.bound

    def L(self, poly: CPolynomial) -> float:
        """Linear functional of the solution on a quadratic Hermitian polynomial."""
        W = self.hermitian()
        first = self._first_moments()
        tot = 0.0 + 0.0j
        for (a, b), c in poly.terms.items():
            da, db = sum(a), sum(b)
            if da > 1 or db > 1:
                raise NotQuadratic("functional defined up to conj(z_i) z_j terms only")
            if da + db == 0:
                tot += c
            elif da and db:
                tot += c * W[b.index(1), a.index(1)]
            elif db:
                tot += c * first[b.index(1)]
            else:
                tot += c * np.conj(first[a.index(1)])
        return float(tot.real)

    def _first_moments(self) -> np.ndarray:
        rel = self.relaxation
        n = rel.problem.n_vars
        if not rel.homogenized:
            return np.zeros(n, dtype=complex)
        M = self.matrix()
        if rel.variant == COMPLEX:
            return M[:n, -1]
        col = M[:-1, -1]
        if rel.phase_var is not None:
            col = np.insert(col, n + rel.phase_var, 0.0)
        return col[:n] + 1j * col[n:]

    def matrix(self) -> np.ndarray:
        """The solved lifted matrix, homogenizing index included."""
        return self.relaxation.lift.matrix(self.result.y)

    def hermitian(self) -> np.ndarray:
        """W (order n) describing z z^H, whichever variant was solved."""
        rel = self.relaxation
        M = self.matrix()
        if rel.homogenized:
            M = M[:-1, :-1]
        if rel.variant == COMPLEX:
            return M
        n = rel.problem.n_vars
        if rel.phase_var is not None:
            M = np.insert(M, n + rel.phase_var, 0.0, axis=0)
            M = np.insert(M, n + rel.phase_var, 0.0, axis=1)
        return 2.0 * lambda_tilde(M)

    def recover(self) -> RankOneRecovery:
        rel = self.relaxation
        if rel.cliques:
            rec = _stitch_cliques(self.matrix(), rel.cliques, rel.tree_edges)
            if rel.homogenized:
                h = rel.lift.N - 1
                v = rec.candidate_v
                if abs(v[h]) > 0:
                    v = v * (abs(v[h]) / v[h])
                rec.candidate_v = v[:-1]
            return rec
        variant = COMPLEX if rel.variant == COMPLEX else REAL_CONVERTED
        rec = recover_rank_one(self.hermitian() if variant == COMPLEX else
                               self._real_square(), variant)
        v = rec.candidate_v
        if rel.homogenized:
            s = np.vdot(v, self._first_moments())
            if abs(s) > 0:
                v = v * (s / abs(s))
        elif rel.phase_var is not None and abs(v[rel.phase_var]) > 0:
            p = v[rel.phase_var]
            v = v * (abs(p) / p)
        rec.candidate_v = v
        return rec

    def _real_square(self) -> np.ndarray:
        rel = self.relaxation
        M = self.matrix()
        if rel.homogenized:
            M = M[:-1, :-1]
        if rel.phase_var is not None:
            n = rel.problem.n_vars
            M = np.insert(M, n + rel.phase_var, 0.0, axis=0)
            M = np.insert(M, n + rel.phase_var, 0.0, axis=1)
        return 2.0 * M  # x x^T is Lambda(z z^H) / 2


def _stitch_cliques(W, cliques, tree_edges) -> RankOneRecovery:
    """Per-clique leading eigenvectors, phase-aligned along the clique tree.

    Entries outside the chordal pattern are never formed, so no global
    eigendecomposition is available; exactness means every clique block
    is numerically rank one.
    """
    n = W.shape[0]
    vecs, ratios, worst = [], [], None
    for cl in cliques:
        rec = recover_rank_one(W[np.ix_(cl, cl)])
        vecs.append(rec.candidate_v)
        ratios.append(rec.rank_metric)
        if worst is None or rec.rank_metric < worst.rank_metric:
            worst = rec
    adj = {k: [] for k in range(len(cliques))}
    for a, b in tree_edges:
        adj[a].append(b)
        adj[b].append(a)
    z = np.zeros(n, dtype=complex)
    placed = np.zeros(n, dtype=bool)
    seen = set()
    for root in range(len(cliques)):
        if root in seen:
            continue
        stack = [root]
        seen.add(root)
        while stack:
            g = stack.pop()
            cl, v = cliques[g], vecs[g]
            ov = [a for a, i in enumerate(cl) if placed[i]]
            if ov:
                rot = np.vdot(v[ov], z[[cl[a] for a in ov]])
                if abs(rot) > 0:
                    v = v * rot / abs(rot)
            for a, i in enumerate(cl):
                if not placed[i]:
                    z[i], placed[i] = v[a], True
            for nb in adj[g]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
    exact = all(r * EXACT_RATIO > 1 for r in ratios)
    return RankOneRecovery(z, min(ratios), exact, worst.eigenvalues, 1 if exact else 0)


def recover_rank_one(matrix, variant: str = COMPLEX) -> RankOneRecovery:
    """Leading eigenpair of a solved matrix; exact iff lambda_2/lambda_1 < 1e-4.

    The complex variant takes W ~ z z^H.  The real variants take X of order
    2n normalized as Lambda(W), so X = Lambda(z z^H) yields z; a real solver
    matrix x x^T must be doubled first.
    """
    M = np.asarray(matrix)
    if variant == COMPLEX:
        W = np.asarray(M, dtype=complex)
        rank_src = np.linalg.eigvalsh((W + W.conj().T) / 2)
    else:
        Xs = (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T) / 2
        rank_src = np.linalg.eigvalsh(Xs)
        W = lambda_tilde(Xs)
    W = (W + W.conj().T) / 2
    lam, vec = np.linalg.eigh(W)
    lam, vec = lam[::-1], vec[:, ::-1]
    l1 = max(lam[0], 0.0) if len(lam) else 0.0
    l2 = max(lam[1], 0.0) if len(lam) > 1 else 0.0
    v = math.sqrt(l1) * vec[:, 0] if len(lam) else np.zeros(0, dtype=complex)
    if v.size:
        k = int(np.argmax(np.abs(v)))
        if abs(v[k]) > 0:
            v = v * (abs(v[k]) / v[k])
    ratio = math.inf if l2 <= 0 else l1 / l2
    exact = l1 > 0 and l2 < EXACT_RATIO * l1
    top = max(rank_src[-1], 0.0) if len(rank_src) else 0.0
    rank = int(np.sum(rank_src > 1e-6 * top)) if top > 0 else 0
    return RankOneRecovery(v, ratio, exact, lam, rank)


# ---------------------------------------------------------------------------
# builders


def _constraint_forms(problem: CPolyProblem, phase_var=None, real=False):
    """Per constraint: ("lin", sense, poly) or ("soc", radius, (q1, q2, ...))."""
    conv = (lambda p: real_form(p, phase_var)) if real else (lambda p: p)
    out = []
    for c in problem.constraints:
        if _is_quadratic(c.poly):
            out.append(("lin", c.sense, conv(c.poly), c.label))
        elif c.norm_form is not None and c.sense != EQ and \
                all(_is_quadratic(q) for q in c.norm_form[1]):
            r, qs = c.norm_form
            out.append(("soc", float(r), [conv(q) for q in qs], c.label))
        else:
            raise NotQuadratic(f"constraint {c.label!r} has degree {c.poly.degree}")
    obj = problem.objective
    if _is_quadratic(obj):
        split = (conv(obj), [])
    elif problem.objective_split is not None:
        quad, sq = problem.objective_split
        split = (conv(quad), [(float(cf), conv(q)) for cf, q in sq])
    else:
        raise NotQuadratic(f"objective has degree {obj.degree}")
    return out, split


def _all_polys(forms, split):
    polys = [split[0]] + [q for _, q in split[1]]
    for f in forms:
        polys.extend([f[2]] if f[0] == "lin" else f[2])
    return polys


def _populate(builder, lift, lin, forms, split, objective=None, cost_cap=None):
    """Objective, constraint rows and the epigraph of the squared cost terms.

    With ``objective`` given, the problem's own cost is no longer minimized
    but kept below ``cost_cap``.
    """
    nvar_base = lift.nvar
    obj = lin(split[0])
    epi = []
    for k, (cf, _) in enumerate(split[1]):
        t = nvar_base + k
        epi.append(t)
        obj[t] = obj.get(t, 0.0) + cf
    if objective is None:
        builder.set_objective(obj)
    else:
        builder.set_objective(lin(objective))
        cap = {v: -c for v, c in obj.items()}
        cap[-1] = cap.get(-1, 0.0) + cost_cap
        builder.add_nonneg(1, [(0, v, c) for v, c in cap.items()], "cost cap")
    for kind, a, b, label in forms:
        if kind == "lin":
            e = lin(b)
            entries = [(0, v, c) for v, c in e.items()]
            if a == EQ:
                builder.add_zero(1, entries, label)
            else:
                builder.add_nonneg(1, entries, label)
        else:
            entries = [(0, -1, a)]
            for pos, q in enumerate(b, start=1):
                entries += [(pos, v, c) for v, c in lin(q).items()]
            builder.add_soc(len(b) + 1, entries, label)
    for t, (_, q) in zip(epi, split[1]):
        # t >= q^2  as  ||(2q, t - 1)|| <= t + 1
        e = lin(q)
        entries = [(0, t, 1.0), (0, -1, 1.0), (2, t, 1.0), (2, -1, -1.0)]
        entries += [(1, v, 2.0 * c) for v, c in e.items()]
        builder.add_soc(3, entries, "cost epigraph")
    return epi


def _finish_homog(builder, lift, h, real):
    if h is None:
        return
    if real:
        builder.add_zero(1, [(0, lift.entry(h, h, 1.0).popitem()[0], 1.0), (0, -1, -1.0)],
                         "homogenizing entry")
    else:
        re, _ = lift.index[(h, h)]
        builder.add_zero(1, [(0, re, 1.0), (0, -1, -1.0)], "homogenizing entry")


def _validate(variant, allowed):
    if variant not in allowed:
        raise ValueError(f"variant must be one of {allowed}, got {variant!r}")


def _build(problem: CPolyProblem, variant: str, conic_kind: str, fix_phase: bool,
           phase_var: int | None, objective=None, cost_cap=None):
    """``conic_kind`` is "sdp", "socp" or "clique" (one PSD block per maximal clique)."""
    real = variant != COMPLEX
    pv = None
    if fix_phase:
        if variant != REAL_NATIVE:
            raise ValueError("phase fixing applies to the real_native variant")
        pv = problem.n_vars - 1 if phase_var is None else phase_var
    forms, split = _constraint_forms(problem, pv, real)
    if objective is not None:
        if cost_cap is None:
            raise ValueError("an objective override needs a cost cap")
        objective = real_form(objective, pv) if real else objective
    polys = _all_polys(forms, split) + ([objective] if objective is not None else [])
    n = problem.n_vars
    if real:
        homog = any(any(sum(k) == 1 for k in p.terms) for p in polys)
        size = 2 * n - (pv is not None)
    else:
        homog = _needs_homog_complex(polys)
        size = n
    order = size + homog
    h = size if homog else None
    dense = conic_kind == "sdp"
    lift = (_RealLift if real else _ComplexLift)(order, dense)
    if real:
        lin = lambda p: _real_linear(lift, p, h)  # noqa: E731
    else:
        lin = lambda p: _complex_linear(lift, p, h)  # noqa: E731

    edges = set()
    if conic_kind == "socp":
        for p in polys:
            for i, j in _pairs(p, real, h):
                edges.add((min(i, j), max(i, j)))
                lift._alloc(min(i, j), max(i, j))
        for i in range(order):
            lift._alloc(i, i)
        if h is not None:
            lift._alloc(h, h)
    dec = None
    if conic_kind == "clique":
        graph = SparsityGraph(order)
        for p in polys:
            for i, j in _pairs(p, real, h):
                graph.add_edge(i, j)
        dec = chordal_extend(graph)
        for i in range(order):
            lift._alloc(i, i)
        for i, j in dec.chordal_edges:
            lift._alloc(i, j)
    # linear forms allocate lazily; evaluate once to fix the variable count
    for p in polys:
        lin(p)
    builder = conic.LMIBuilder(lift.nvar + len(split[1]))
    epi = _populate(builder, lift, lin, forms, split, objective, cost_cap)
    if conic_kind == "sdp":
        if real:
            builder.add_psd(order, lift.psd_entries(), "X")
        else:
            builder.add_psd(2 * order, lift.psd_entries(), "Lambda(W)")
    elif conic_kind == "clique":
        for k, cl in enumerate(dec.cliques):
            builder.add_psd(2 * len(cl), lift.psd_entries(cl), f"Lambda(W_C{k + 1})")
    else:
        _add_minors(builder, lift, edges, real, order)
    _finish_homog(builder, lift, h, real)
    if variant == REAL_CONVERTED:
        _couple(builder, lift, n)
    rel = ShorRelaxation(variant, problem, builder, lift, homog, pv, epi, conic_kind, edges)
    if dec is not None:
        rel.cliques, rel.tree_edges = dec.cliques, dec.tree_edges
    return rel


def _pairs(poly, real, h):
    if real:
        for k in poly.terms:
            idx = [i for i, e in enumerate(k) for _ in range(e)]
            if len(idx) == 2 and idx[0] != idx[1]:
                yield idx[0], idx[1]
            elif len(idx) == 1 and h is not None:
                yield idx[0], h
    else:
        for a, b in poly.terms:
            ia = a.index(1) if sum(a) else h
            ib = b.index(1) if sum(b) else h
            if ia is not None and ib is not None and ia != ib:
                yield ia, ib


def _add_minors(builder, lift, edges, real, order):
    for i in range(order):
        d = lift.index[(i, i)]
        v = d if real else d[0]
        builder.add_nonneg(1, [(0, v, 1.0)], f"diag {i}")
    for i, j in sorted(edges):
        if real:
            a, b, x = lift.index[(i, i)], lift.index[(j, j)], lift.index[(i, j)]
            off = [(1, x, 2.0)]
        else:
            a, b = lift.index[(i, i)][0], lift.index[(j, j)][0]
            re, im = lift.index[(i, j)]
            off = [(1, re, 2.0), (3, im, 2.0)]
        # |W_ij|^2 <= W_ii W_jj  as  ||(2 W_ij, W_ii - W_jj)|| <= W_ii + W_jj
        entries = [(0, a, 1.0), (0, b, 1.0), (2, a, 1.0), (2, b, -1.0)] + off
        builder.add_soc(3 if real else 4, entries, f"minor {i},{j}")


def _couple(builder, lift, n):
    """X = Lambda(W) structure: equal diagonal blocks, antisymmetric off-block."""
    for i in range(n):
        for j in range(i, n):
            a, b = lift.index[(i, j)], lift.index[(n + i, n + j)]
            builder.add_zero(1, [(0, a, 1.0), (0, b, -1.0)], "coupling re")
            # X[n+i, j] = -X[i, n+j]
            c, d = lift.index[(min(j, n + i), max(j, n + i))], lift.index[(i, n + j)]
            if c == d:
                builder.add_zero(1, [(0, c, 1.0)], "coupling im")
            else:
                builder.add_zero(1, [(0, c, 1.0), (0, d, 1.0)], "coupling im")


def build_shor(problem: CPolyProblem, variant: str = COMPLEX, fix_phase: bool = False,
               phase_var: int | None = None, objective: CPolynomial | None = None,
               cost_cap: float | None = None, sparse: bool = False) -> ShorRelaxation:
    """Shor relaxation: drop rank(W) = 1 and keep W PSD.

    ``sparse`` (complex variant only) keeps W only on the chordal extension
    of the sparsity graph and asks for PSD principal blocks on its maximal
    cliques, which has the same optimal value as the dense form.

    Constraints of degree four are accepted only when they carry a norm
    form r^2 - sum q_j^2 with quadratic q_j (becoming ||q(W)|| <= r), and a
    degree-four objective only with a split into a quadratic part plus
    weighted squares of quadratics (handled by epigraph variables).
    ``objective`` replaces the cost to minimize; the original cost is then
    constrained to be at most ``cost_cap``.
    """
    _validate(variant, SHOR_VARIANTS)
    if sparse and variant != COMPLEX:
        raise ValueError("the clique-sparse form is built for the complex variant")
    return _build(problem, variant, "clique" if sparse else "sdp", fix_phase, phase_var,
                  objective, cost_cap)


def build_socp(problem: CPolyProblem, variant: str = COMPLEX, fix_phase: bool = False,
               phase_var: int | None = None) -> SocpRelaxation:
    """Replace the PSD cone by 2x2 principal minors on the sparsity edges."""
    _validate(variant, SOCP_VARIANTS)
    return _build(problem, REAL_NATIVE if variant == REAL else COMPLEX, "socp",
                  fix_phase, phase_var)


def sparsity_edges(problem: CPolyProblem) -> set:
    """Variable pairs that share a monomial somewhere in the problem."""
    return set(graph_from_problem(problem).edges)

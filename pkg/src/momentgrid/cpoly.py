"""Real-valued polynomials in complex variables and their real counterparts.

A complex polynomial is stored as a map (alpha, beta) -> f_ab for the
monomial conj(z)^alpha z^beta.  Real-valuedness on C^n is the Hermitian
symmetry f_ab = conj(f_ba).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NegativeRadius

PRUNE = 1e-14

Key = tuple[tuple[int, ...], tuple[int, ...]]


def _add_tuple(a, b):
    return tuple(x + y for x, y in zip(a, b))


class CPolynomial:
    """Finitely supported sum of f_ab conj(z)^a z^b over n variables."""

    __slots__ = ("n_vars", "terms")

    def __init__(self, n_vars: int, terms: dict | None = None):
        self.n_vars = int(n_vars)
        self.terms: dict[Key, complex] = {}
        for (a, b), v in (terms or {}).items():
            a, b = tuple(int(t) for t in a), tuple(int(t) for t in b)
            if len(a) != n_vars or len(b) != n_vars:
                raise ValueError("multi-index length differs from n_vars")
            v = complex(v)
            if abs(v) > PRUNE:
                key = (a, b)
                self.terms[key] = self.terms.get(key, 0.0) + v
        self._prune()

    def _prune(self):
        dead = [k for k, v in self.terms.items() if abs(v) <= PRUNE]
        for k in dead:
            del self.terms[k]

    # constructors ---------------------------------------------------------

    @classmethod
    def constant(cls, value, n_vars):
        z = (0,) * n_vars
        return cls(n_vars, {(z, z): value})

    @classmethod
    def var(cls, i, n_vars):
        e = tuple(1 if k == i else 0 for k in range(n_vars))
        return cls(n_vars, {((0,) * n_vars, e): 1.0})

    @classmethod
    def conj_var(cls, i, n_vars):
        e = tuple(1 if k == i else 0 for k in range(n_vars))
        return cls(n_vars, {(e, (0,) * n_vars): 1.0})

    @classmethod
    def modulus_sq(cls, i, n_vars):
        e = tuple(1 if k == i else 0 for k in range(n_vars))
        return cls(n_vars, {(e, e): 1.0})

    @classmethod
    def hermitian_form(cls, H, const=0.0):
        """v^H H v + const for a Hermitian matrix H (dense or sparse)."""
        if hasattr(H, "tocoo"):
            H = H.tocoo()
        n = H.shape[0]
        terms = {}
        if hasattr(H, "row"):
            it = zip(H.row, H.col, H.data)
        else:
            nz = np.argwhere(np.abs(H) > 0)
            it = ((i, j, H[i, j]) for i, j in nz)
        for i, j, v in it:
            a = tuple(1 if k == i else 0 for k in range(n))
            b = tuple(1 if k == j else 0 for k in range(n))
            terms[(a, b)] = terms.get((a, b), 0.0) + complex(v)
        p = cls(n, terms)
        if const:
            p = p + const
        return p

    # arithmetic -------------------------------------------------------------

    def copy(self):
        out = CPolynomial(self.n_vars)
        out.terms = dict(self.terms)
        return out

    def _coerce(self, other):
        if isinstance(other, CPolynomial):
            if other.n_vars != self.n_vars:
                raise ValueError("variable counts differ")
            return other
        return CPolynomial.constant(other, self.n_vars)

    def __add__(self, other):
        other = self._coerce(other)
        out = self.copy()
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out._prune()
        return out

    __radd__ = __add__

    def __neg__(self):
        out = CPolynomial(self.n_vars)
        out.terms = {k: -v for k, v in self.terms.items()}
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, CPolynomial):
            c = complex(other)
            out = CPolynomial(self.n_vars)
            out.terms = {k: v * c for k, v in self.terms.items()}
            out._prune()
            return out
        other = self._coerce(other)
        acc: dict[Key, complex] = {}
        for (a1, b1), v1 in self.terms.items():
            for (a2, b2), v2 in other.terms.items():
                key = (_add_tuple(a1, a2), _add_tuple(b1, b2))
                acc[key] = acc.get(key, 0.0) + v1 * v2
        out = CPolynomial(self.n_vars)
        out.terms = acc
        out._prune()
        return out

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = CPolynomial.constant(1.0, self.n_vars)
        for _ in range(k):
            out = out * self
        return out

    def conj(self):
        out = CPolynomial(self.n_vars)
        out.terms = {(b, a): v.conjugate() for (a, b), v in self.terms.items()}
        return out

    def extend(self, n_new: int):
        """Same polynomial seen in a larger variable space."""
        pad = (0,) * (n_new - self.n_vars)
        out = CPolynomial(n_new)
        out.terms = {(a + pad, b + pad): v for (a, b), v in self.terms.items()}
        return out

    def __eq__(self, other):
        if not isinstance(other, CPolynomial):
            return NotImplemented
        if other.n_vars != self.n_vars:
            return False
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(k, 0) - other.terms.get(k, 0)) <= 1e-12 for k in keys)

    def __repr__(self):
        return f"CPolynomial({self.to_text()})"

    # queries ----------------------------------------------------------------

    def is_hermitian(self, tol=1e-12) -> bool:
        for (a, b), v in self.terms.items():
            w = self.terms.get((b, a), 0.0)
            if abs(v - w.conjugate()) > tol * max(1.0, abs(v)):
                return False
        return True

    @property
    def k(self) -> int:
        """max over terms of max(|alpha|, |beta|)."""
        return max((max(sum(a), sum(b)) for a, b in self.terms), default=0)

    @property
    def degree(self) -> int:
        """Total degree |alpha| + |beta|."""
        return max((sum(a) + sum(b) for a, b in self.terms), default=0)

    def support(self) -> set[int]:
        out = set()
        for a, b in self.terms:
            out.update(i for i in range(self.n_vars) if a[i] or b[i])
        return out

    def monomial_pairs(self):
        """Unordered variable pairs appearing together in a monomial."""
        out = set()
        for a, b in self.terms:
            s = sorted(i for i in range(self.n_vars) if a[i] or b[i])
            out.update(itertools.combinations(s, 2))
        return out

    def constant_term(self) -> complex:
        z = (0,) * self.n_vars
        return self.terms.get((z, z), 0.0)

    def evaluate(self, z) -> complex:
        z = np.asarray(z, dtype=complex)
        if z.ndim == 1:
            zc = np.conj(z)
            total = 0.0 + 0.0j
            for (a, b), v in self.terms.items():
                total += v * np.prod(zc ** np.array(a)) * np.prod(z ** np.array(b))
            return total
        # batch: rows are points
        zc = np.conj(z)
        total = np.zeros(z.shape[0], dtype=complex)
        for (a, b), v in self.terms.items():
            total += v * np.prod(zc ** np.array(a), axis=1) * np.prod(z ** np.array(b), axis=1)
        return total

    def __call__(self, z):
        return self.evaluate(z)

    def moment_value(self, y: dict) -> complex:
        """L_y(f) = sum f_ab y_ab for a moment map keyed like the terms."""
        return sum(v * y[k] for k, v in self.terms.items())

    # text -------------------------------------------------------------------

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: monomial_sort_key(kv[0]))

    def to_text(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for (a, b), v in self.sorted_terms():
            factors = []
            for i, p in enumerate(a):
                if p:
                    factors.append(f"conj(z{i + 1})" + (f"^{p}" if p > 1 else ""))
            for i, p in enumerate(b):
                if p:
                    factors.append(f"z{i + 1}" + (f"^{p}" if p > 1 else ""))
            coeff = format_complex(v)
            parts.append(coeff if not factors else f"{coeff} * " + "*".join(factors))
        return " + ".join(parts)


def monomial_sort_key(key: Key):
    """Graded order on (|alpha|+|beta|, alpha, beta), descending lex inside a degree."""
    a, b = key
    return (sum(a) + sum(b), tuple(-t for t in a), tuple(-t for t in b))


def format_complex(v: complex) -> str:
    v = complex(v)
    re, im = v.real, v.imag
    if abs(im) <= PRUNE:
        return f"{re:.17g}"
    if abs(re) <= PRUNE:
        return f"({im:.17g}j)"
    return f"({re:.17g}{im:+.17g}j)"


# ---------------------------------------------------------------------------
# real polynomials


class RPolynomial:
    """Real polynomial sum q_kappa x^kappa."""

    __slots__ = ("n_vars", "terms")

    def __init__(self, n_vars: int, terms: dict | None = None):
        self.n_vars = n_vars
        self.terms: dict[tuple[int, ...], float] = {}
        for k, v in (terms or {}).items():
            if abs(v) > PRUNE:
                k = tuple(int(t) for t in k)
                self.terms[k] = self.terms.get(k, 0.0) + float(v)

    @classmethod
    def constant(cls, value, n_vars):
        return cls(n_vars, {(0,) * n_vars: value})

    @classmethod
    def var(cls, i, n_vars):
        return cls(n_vars, {tuple(1 if k == i else 0 for k in range(n_vars)): 1.0})

    def _coerce(self, other):
        if isinstance(other, RPolynomial):
            return other
        return RPolynomial.constant(other, self.n_vars)

    def __add__(self, other):
        other = self._coerce(other)
        acc = dict(self.terms)
        for k, v in other.terms.items():
            acc[k] = acc.get(k, 0.0) + v
        return RPolynomial(self.n_vars, acc)

    __radd__ = __add__

    def __neg__(self):
        return RPolynomial(self.n_vars, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, RPolynomial):
            return RPolynomial(self.n_vars, {k: v * float(other) for k, v in self.terms.items()})
        acc = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = _add_tuple(k1, k2)
                acc[k] = acc.get(k, 0.0) + v1 * v2
        return RPolynomial(self.n_vars, acc)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, RPolynomial):
            return NotImplemented
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.terms.get(k, 0) - other.terms.get(k, 0)) <= 1e-12 for k in keys)

    @property
    def degree(self):
        return max((sum(k) for k in self.terms), default=0)

    def support(self):
        out = set()
        for k in self.terms:
            out.update(i for i, p in enumerate(k) if p)
        return out

    def monomial_pairs(self):
        out = set()
        for k in self.terms:
            s = [i for i, p in enumerate(k) if p]
            out.update(itertools.combinations(s, 2))
        return out

    @property
    def k(self):
        return math.ceil(self.degree / 2)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(sum(v * np.prod(x ** np.array(k)) for k, v in self.terms.items()))
        total = np.zeros(x.shape[0])
        for k, v in self.terms.items():
            total += v * np.prod(x ** np.array(k), axis=1)
        return total

    __call__ = evaluate

    def to_text(self):
        if not self.terms:
            return "0"
        parts = []
        for k, v in sorted(self.terms.items(), key=lambda kv: (sum(kv[0]), [-t for t in kv[0]])):
            f = "*".join(f"x{i + 1}" + (f"^{p}" if p > 1 else "") for i, p in enumerate(k) if p)
            parts.append(f"{v:.17g}" + (f" * {f}" if f else ""))
        return " + ".join(parts)

    def __repr__(self):
        return f"RPolynomial({self.to_text()})"


# ---------------------------------------------------------------------------
# problems

GE, EQ = "ge", "eq"


@dataclass
class Constraint:
    poly: CPolynomial
    sense: str = GE  # "ge": poly >= 0, "eq": poly == 0
    label: str = ""
    kind: str = ""  # e.g. "pmin", "qmax", "p_balance", "vmin", "vmax", "flow", "sphere"
    group: str = ""  # escalation unit, e.g. "bus:3"
    norm_form: tuple | None = None  # (r, (q1, q2, ...)) with poly = r^2 - sum q_j^2

    def __post_init__(self):
        if self.sense not in (GE, EQ):
            raise ValueError(f"sense must be 'ge' or 'eq', got {self.sense!r}")


@dataclass
class CPolyProblem:
    objective: CPolynomial
    constraints: list[Constraint]
    n_vars: int
    var_names: list[str] = field(default_factory=list)
    objective_split: tuple | None = None  # (quadratic part, [(c >= 0, q), ...])
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.var_names:
            self.var_names = [f"z{i + 1}" for i in range(self.n_vars)]
        for c in self.constraints:
            if c.poly.n_vars != self.n_vars:
                raise ValueError(f"constraint {c.label!r} has {c.poly.n_vars} variables")
        if self.objective.n_vars != self.n_vars:
            raise ValueError("objective variable count differs")

    @property
    def m(self):
        return len(self.constraints)

    @property
    def labels(self):
        return [c.label for c in self.constraints]

    def polys(self):
        return [self.objective] + [c.poly for c in self.constraints]

    def is_quadratic(self) -> bool:
        return all(p.degree <= 2 for p in self.polys())

    def feasibility(self, z) -> float:
        """Largest constraint violation at z."""
        worst = 0.0
        for c in self.constraints:
            v = c.poly.evaluate(z).real
            worst = max(worst, abs(v) if c.sense == EQ else max(0.0, -v))
        return worst

    def split_equalities(self) -> "CPolyProblem":
        """Each equality g = 0 becomes the pair g >= 0 and -g >= 0."""
        out = []
        for c in self.constraints:
            if c.sense == EQ:
                out.append(replace(c, sense=GE, label=c.label + " (+)", norm_form=None))
                out.append(replace(c, poly=-c.poly, sense=GE, label=c.label + " (-)",
                                   norm_form=None))
            else:
                out.append(c)
        return replace(self, constraints=out)


def is_oscillatory(problem: CPolyProblem) -> bool:
    """True iff every monomial of f and of every g_i has |alpha| = |beta|."""
    for p in problem.polys():
        for a, b in p.terms:
            if sum(a) != sum(b):
                return False
    return True


def add_sphere_slack(problem: CPolyProblem, radius_sq: float, per_clique=None,
                     realness: bool = False) -> CPolyProblem:
    """Append slack variable(s) with sum |z_i|^2 + |z_slack|^2 = R^2.

    ``per_clique`` is an optional list of variable sets; each receives its
    own slack and sphere.  ``radius_sq`` may then be a list (one per set).
    ``realness`` adds i z - i conj(z) = 0 and z + conj(z) >= 0 on each slack.
    """
    groups = per_clique if per_clique is not None else [list(range(problem.n_vars))]
    radii = radius_sq if isinstance(radius_sq, (list, tuple)) else [radius_sq] * len(groups)
    if any(r < 0 for r in radii):
        raise NegativeRadius("sphere radius must be nonnegative")
    n_old = problem.n_vars
    n_new = n_old + len(groups)
    cons = [replace(c, poly=c.poly.extend(n_new),
                    norm_form=None if c.norm_form is None else
                    (c.norm_form[0], tuple(q.extend(n_new) for q in c.norm_form[1])))
            for c in problem.constraints]
    for g, (members, r2) in enumerate(zip(groups, radii)):
        slack = n_old + g
        s = CPolynomial.constant(r2, n_new)
        for i in list(members) + [slack]:
            s = s - CPolynomial.modulus_sq(i, n_new)
        tag = "sphere" if per_clique is None else f"sphere {g + 1}"
        cons.append(Constraint(s, EQ, tag, kind="sphere", group=f"slack:{g + 1}"))
        if realness:
            zs = CPolynomial.var(slack, n_new)
            zc = CPolynomial.conj_var(slack, n_new)
            cons.append(Constraint(zs * 1j - zc * 1j, EQ, f"{tag} slack real",
                                   kind="slack_real", group=f"slack:{g + 1}"))
            cons.append(Constraint(zs + zc, GE, f"{tag} slack nonneg",
                                   kind="slack_pos", group=f"slack:{g + 1}"))
    split = problem.objective_split
    if split is not None:
        split = (split[0].extend(n_new), [(c, q.extend(n_new)) for c, q in split[1]])
    names = list(problem.var_names) + [f"s{g + 1}" for g in range(len(groups))]
    meta = dict(problem.meta)
    meta["slack_vars"] = list(range(n_old, n_new))
    return CPolyProblem(problem.objective.extend(n_new), cons, n_new, names,
                        objective_split=split, meta=meta)


# ---------------------------------------------------------------------------
# complex <-> real


def lambda_embed(Z) -> np.ndarray:
    """[[Re Z, -Im Z], [Im Z, Re Z]]."""
    Z = np.asarray(Z, dtype=complex)
    return np.block([[Z.real, -Z.imag], [Z.imag, Z.real]])


def lambda_tilde(X) -> np.ndarray:
    """Left inverse of the embedding on 2n x 2n real matrices."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0] // 2
    A, B = X[:n, :n], X[n:, :n]
    C, Bt = X[n:, n:], X[:n, n:]
    return (A + C) / 2 + 1j * (B - Bt) / 2


@dataclass
class RConstraint:
    poly: RPolynomial
    sense: str = GE
    label: str = ""
    kind: str = ""
    group: str = ""


@dataclass
class RPolyProblem:
    objective: RPolynomial
    constraints: list[RConstraint]
    n_vars: int
    var_names: list[str] = field(default_factory=list)
    origin: list[int] = field(default_factory=list)  # complex variable behind each real one
    fixed_phase: int | None = None
    meta: dict = field(default_factory=dict)

    def polys(self):
        return [self.objective] + [c.poly for c in self.constraints]

    @property
    def m(self):
        return len(self.constraints)

    def feasibility(self, x) -> float:
        worst = 0.0
        for c in self.constraints:
            v = c.poly.evaluate(x)
            worst = max(worst, abs(v) if c.sense == EQ else max(0.0, -v))
        return worst


def _binom_expand(p: int, sign: float):
    """(x + sign*i*y)^p as {(px, py): complex coeff}."""
    out = {}
    for k in range(p + 1):
        out[(p - k, k)] = math.comb(p, k) * (sign * 1j) ** k
    return out


def _to_real_poly(poly: CPolynomial, n_real: int, phase_var: int | None) -> RPolynomial:
    n = poly.n_vars
    acc: dict[tuple[int, ...], complex] = {}
    for (a, b), v in poly.terms.items():
        partial = {(0,) * (2 * n): v}
        for i in range(n):
            if a[i] == 0 and b[i] == 0:
                continue
            fac = {}
            for (px1, py1), c1 in _binom_expand(a[i], -1.0).items():
                for (px2, py2), c2 in _binom_expand(b[i], 1.0).items():
                    key = (px1 + px2, py1 + py2)
                    fac[key] = fac.get(key, 0.0) + c1 * c2
            nxt = {}
            for k, c in partial.items():
                for (px, py), cf in fac.items():
                    kk = list(k)
                    kk[i] += px
                    kk[n + i] += py
                    kk = tuple(kk)
                    nxt[kk] = nxt.get(kk, 0.0) + c * cf
            partial = nxt
        for k, c in partial.items():
            acc[k] = acc.get(k, 0.0) + c
    terms = {}
    for k, c in acc.items():
        if abs(c) <= PRUNE:
            continue
        if abs(c.imag) > 1e-9 * max(1.0, abs(c)):
            raise ValueError("polynomial is not real-valued (Hermitian symmetry broken)")
        if phase_var is not None:
            if k[n + phase_var]:
                continue
            k = k[: n + phase_var] + k[n + phase_var + 1:]
        terms[k] = terms.get(k, 0.0) + c.real
    return RPolynomial(n_real, terms)


def real_form(poly: CPolynomial, phase_var: int | None = None) -> RPolynomial:
    """Real expansion of a Hermitian polynomial in x = [Re z; Im z].

    With ``phase_var`` set, Im z[phase_var] is fixed to zero and dropped.
    """
    n = poly.n_vars
    return _to_real_poly(poly, 2 * n - (phase_var is not None), phase_var)


def to_real(problem: CPolyProblem, fix_phase: bool = False,
            phase_var: int | None = None) -> RPolyProblem:
    """Expand z = x + i y with x = [Re z; Im z] ordering.

    With ``fix_phase`` the imaginary part of ``phase_var`` (default: the last
    variable) is set to zero.  Magnitude bounds on that variable (kinds
    'vmin'/'vmax') become linear bounds on its real part, and x >= 0 is added
    if no lower magnitude bound exists.
    """
    n = problem.n_vars
    pv = None
    if fix_phase:
        pv = (n - 1) if phase_var is None else phase_var
    n_real = 2 * n - (1 if fix_phase else 0)
    names = [f"Re({v})" for v in problem.var_names] + [f"Im({v})" for v in problem.var_names]
    origin = list(range(n)) + list(range(n))
    if fix_phase:
        del names[n + pv]
        del origin[n + pv]
    obj = _to_real_poly(problem.objective, n_real, pv)
    cons = []
    have_lower = False
    for c in problem.constraints:
        if fix_phase and c.kind in ("vmin", "vmax") and c.poly.support() == {pv}:
            # |z|^2 bound -> linear bound on the real part
            bound_sq = abs(c.poly.constant_term().real)
            bound = math.sqrt(bound_sq)
            xv = RPolynomial.var(pv, n_real)
            if c.kind == "vmin":
                have_lower = True
                poly = xv - bound
            else:
                poly = bound - xv
            cons.append(RConstraint(poly, c.sense, c.label + " (phase fixed)", c.kind, c.group))
            continue
        cons.append(RConstraint(_to_real_poly(c.poly, n_real, pv), c.sense, c.label,
                                c.kind, c.group))
    if fix_phase and not have_lower:
        cons.append(RConstraint(RPolynomial.var(pv, n_real), GE,
                                f"{problem.var_names[pv]} phase reference", "phase", ""))
    meta = dict(problem.meta)
    return RPolyProblem(obj, cons, n_real, names, origin, pv, meta)


def real_point(z, fix_phase_var: int | None = None) -> np.ndarray:
    """x = [Re z; Im z] (optionally dropping one imaginary part)."""
    z = np.asarray(z, dtype=complex)
    x = np.concatenate([z.real, z.imag])
    if fix_phase_var is not None:
        x = np.delete(x, len(z) + fix_phase_var)
    return x


def add_ball(problem: RPolyProblem, radius_sq: float, label: str = "ball") -> RPolyProblem:
    """Append the redundant constraint ||x||^2 <= radius_sq."""
    if radius_sq < 0:
        raise NegativeRadius("ball radius must be nonnegative")
    p = RPolynomial.constant(radius_sq, problem.n_vars)
    for i in range(problem.n_vars):
        p = p - RPolynomial.var(i, problem.n_vars) * RPolynomial.var(i, problem.n_vars)
    return replace(problem, constraints=problem.constraints + [RConstraint(p, GE, label, "ball")])

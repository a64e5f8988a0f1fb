import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentgrid import conic
from momentgrid.cpoly import GE, Constraint, CPolynomial, CPolyProblem, add_sphere_slack
from momentgrid.hierarchy import (COMPLEX, REAL, build_moment, largest_block_sizes, min_order,
                                  moment_matrix_size)
from momentgrid.lowrelax import build_shor

from conftest import opf, pop
from test_lowrelax import random_problem

# --- two-bus loss minimization with a sphere slack --------------------------

E0, E1, E2, E3 = (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)
G = 0.05 / (0.05 ** 2 + 0.25 ** 2)
B = -0.25 / (0.05 ** 2 + 0.25 ** 2)
VMAX2 = 1.1 ** 2

# constraint terms written out from the printed relaxation:
# (conj exponent, plain exponent, coefficient)
PRINTED = {
    "P2": [(E0, E0, 0.6), (E1, E2, -(G - 1j * B) / 2), (E2, E1, -(G + 1j * B) / 2),
           (E2, E2, G)],
    "Q2": [(E0, E0, 0.3), (E1, E2, (B + 1j * G) / 2), (E2, E1, (B - 1j * G) / 2),
           (E2, E2, -B)],
    "V1": [(E0, E0, VMAX2), (E1, E1, -1)],
    "V2": [(E0, E0, VMAX2), (E2, E2, -1)],
    "sphere": [(E0, E0, 2 * VMAX2), (E1, E1, -1), (E2, E2, -1), (E3, E3, -1)],
}


def add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def twobus_lifted():
    return add_sphere_slack(opf("twobus", objective_kind="active_loss"), 2 * VMAX2)


def printed_block(name, rows):
    out = []
    for r in rows:
        row = []
        for s in rows:
            acc = Counter()
            for a, b, c in PRINTED[name]:
                acc[(add(r, a), add(s, b))] += c
            row.append(dict(acc))
        out.append(row)
    return out


def _multiset(block):
    return sorted((round(c.real, 9), round(c.imag, 9))
                  for row in block for entry in row for c in entry.values())


def _close(got, want):
    if got.keys() != want.keys():
        return False
    return all(abs(got[k] - want[k]) < 1e-9 for k in got)


def _label(block):
    return block.label.split()[0]


def test_twobus_first_order_layout():
    rel = build_moment(twobus_lifted(), COMPLEX, 1)
    moment = [b for b in rel.blocks if b.kind == "moment"]
    assert [b.size for b in moment] == [4]
    assert moment[0].rows == [E0, E1, E2, E3]
    M = rel.symbolic_block(moment[0])
    for r, a in enumerate(moment[0].rows):
        for s, b in enumerate(moment[0].rows):
            assert M[r][s] == {(a, b): 1.0}
    others = [b for b in rel.blocks if b.kind != "moment"]
    assert all(b.size == 1 for b in others)
    kinds = {_label(b): b.kind for b in others}
    assert kinds == {"P2": "zero", "Q2": "zero", "V1": "scalar", "V2": "scalar",
                     "sphere": "zero"}
    for b in others:
        got = rel.symbolic_block(b)[0][0]
        want = printed_block(_label(b), [E0])[0][0]
        assert _close(got, want)


def test_twobus_second_order_golden():
    rel = build_moment(twobus_lifted(), COMPLEX, 2)
    sizes = {(_label(b), b.kind): b.size for b in rel.blocks}
    assert sizes == {("moment", "moment"): 10, ("P2", "zero"): 4, ("Q2", "zero"): 4,
                     ("V1", "localizing"): 4, ("V2", "localizing"): 4, ("sphere", "zero"): 4}
    for b in rel.blocks:
        if b.kind == "moment":
            continue
        assert b.rows == [E0, E1, E2, E3]
        got = rel.symbolic_block(b)
        want = printed_block(_label(b), b.rows)
        assert all(_close(got[r][s], want[r][s]) for r in range(4) for s in range(4))
        assert _multiset(got) == _multiset(want)


def test_twobus_printed_entries():
    # a few entries transcribed literally from the printed second-order relaxation
    rel = build_moment(twobus_lifted(), COMPLEX, 2)
    blk = {_label(b): b for b in rel.blocks}
    P = rel.symbolic_block(blk["P2"])
    c = -(G - 1j * B) / 2
    assert P[1][2][((2, 0, 0), (0, 2, 0))] == pytest.approx(c)
    assert P[3][3][((1, 0, 1), (0, 1, 1))] == pytest.approx(c)
    V1 = rel.symbolic_block(blk["V1"])
    assert V1[1][1] == pytest.approx({(E1, E1): VMAX2, ((2, 0, 0), (2, 0, 0)): -1})


def test_twobus_objective_terms():
    obj = twobus_lifted().objective.terms
    assert obj == pytest.approx({(E1, E1): G, (E1, E2): -G, (E2, E1): -G, (E2, E2): G})


# --- sizes and orders -------------------------------------------------------


def test_block_size_formulas():
    assert 2 * moment_matrix_size(10, 3) == 572
    sizes = largest_block_sizes(10, 3)
    assert sizes["complex_converted"] == 572
    assert sizes["real"] == 1771
    assert sizes["real_phase_fixed"] == math.comb(2 * 10 - 1 + 3, 3)


@pytest.mark.parametrize("name, d", [("wb2", 1), ("wb2", 2), ("wb5", 1)])
def test_built_blocks_match_formulas(name, d):
    pr = opf(name)
    n = pr.n_vars
    for flavor, want in ((COMPLEX, moment_matrix_size(n, d)),
                         (REAL, largest_block_sizes(n, d)["real"])):
        rel = build_moment(pr, flavor, d)
        assert max(b.size for b in rel.blocks if b.kind == "moment") == want


def test_min_orders():
    assert min_order(pop("ex71_disk"), COMPLEX) == 2
    assert min_order(opf("wb5"), COMPLEX) == 1
    assert min_order(opf("lmbm3"), COMPLEX) == 2


# --- small examples with known answers --------------------------------------


@pytest.mark.parametrize("d", [2, 3])
def test_example_71_without_slack(d):
    s = build_moment(pop("ex71_disk"), COMPLEX, d).solve()
    assert s.value == pytest.approx(-1 / 3, abs=5e-4)


def test_example_71_with_slack():
    s = build_moment(pop("ex71"), COMPLEX, 2).solve()
    assert s.value == pytest.approx(1 / 18, abs=5e-4)


def numerical_rank(M, gap=1e4):
    ev = np.sort(np.linalg.eigvalsh(M))[::-1]
    for k in range(len(ev) - 1):
        if ev[k] > 0 and ev[k] >= gap * max(ev[k + 1], 0.0):
            return k + 1
    return len(ev)


def test_example_72():
    pr = pop("ex72")
    assert build_moment(pr, COMPLEX, 2).solve().value == pytest.approx(0.6813, abs=1e-3)
    s = build_moment(pr, COMPLEX, 3).solve()
    assert s.value == pytest.approx(1.0, abs=1e-4)
    assert numerical_rank(s.moment_matrix(order=1)) == 2
    assert numerical_rank(s.moment_matrix()) == 2
    assert abs(s.extract_candidate().z[0]) == pytest.approx(math.sqrt(2), abs=1e-3)


# --- properties -------------------------------------------------------------


@pytest.mark.parametrize("make, r2", [(lambda: pop("ex71"), 1.0),
                                      (twobus_lifted, 2 * VMAX2)])
def test_trace_bound_and_monotone(make, r2):
    pr = make()
    prev = -math.inf
    for d in (1, 2, 3):
        if d < min_order(pr, COMPLEX):
            continue
        s = build_moment(pr, COMPLEX, d).solve()
        assert s.status == conic.OPTIMAL
        y00 = s.moment_matrix()[0, 0].real
        assert s.trace_moment() <= y00 * sum(r2 ** l for l in range(d + 1)) + 1e-6
        assert s.value >= prev - 1e-6
        prev = s.value


@pytest.mark.parametrize("make, d", [(twobus_lifted, 1), (twobus_lifted, 2),
                                     (lambda: opf("wb2"), 1), (lambda: opf("wb2"), 2),
                                     (lambda: pop("ex71"), 2)])
def test_complex_bound_below_real(make, d):
    pr = make()
    c = build_moment(pr, COMPLEX, d).solve().value
    r = build_moment(pr, REAL, d).solve().value
    assert c <= r + 1e-6 * (1 + abs(r))


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 3))
def test_first_order_equals_shor(seed, n):
    pr, _, _ = random_problem(seed, n)
    mom = build_moment(pr, COMPLEX, 1).solve().value
    shor = build_shor(pr).solve().value
    assert mom == pytest.approx(shor, abs=1e-6 * (1 + abs(shor)))


def test_sparse_below_dense():
    pr = opf("wb5", "gen:5:q_min", -30.80)
    orders = [1] * pr.m
    sp1 = build_moment(pr, COMPLEX, orders, sparse=True).solve().value
    de1 = build_moment(pr, COMPLEX, orders).solve().value
    assert sp1 <= de1 + 1e-6 * abs(de1)
    # a complete graph leaves nothing to exploit
    tw = twobus_lifted()
    a = build_moment(tw, COMPLEX, 2, sparse=True).solve().value
    b = build_moment(tw, COMPLEX, 2).solve().value
    assert a == pytest.approx(b, abs=1e-6)


def _one_variable(seed):
    rng = np.random.default_rng(seed)
    terms = {}
    for a in range(3):
        for b in range(a, 3):
            c = complex(rng.normal(), rng.normal()) if a != b else rng.normal()
            terms[((a,), (b,))] = c
            terms[((b,), (a,))] = np.conj(c)
    f = CPolynomial(1, terms)
    return CPolyProblem(f, [Constraint(1 - CPolynomial.modulus_sq(0, 1), GE)], 1), f


def _polar_grid_min(f, points=1000):
    r = np.sqrt(np.linspace(0, 1, points))[:, None]
    t = np.linspace(0, 2 * np.pi, points, endpoint=False)[None, :]
    z = (r * np.exp(1j * t)).ravel()
    val = np.zeros(z.shape, dtype=complex)
    for ((a,), (b,)), c in f.terms.items():
        val += c * np.conj(z) ** a * z ** b
    return float(val.real.min())


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_one_variable_against_polar_grid(seed):
    pr, f = _one_variable(seed)
    fgrid = _polar_grid_min(f)
    for d in (2, 3):
        s = build_moment(pr, COMPLEX, d).solve()
        assert s.value <= fgrid + 1e-4


def test_blocks_at_a_point_mass(rng):
    """Evaluated at a single point, every block is g(z) conj(v) v^T."""
    pr = opf("wb5")
    rel = build_moment(pr, COMPLEX, 2)
    z = rng.uniform(0.9, 1.1, 5) * np.exp(1j * rng.uniform(-0.3, 0.3, 5))

    def mono(e):
        return np.prod(z ** np.array(e))

    def at(entry):
        return sum(c * np.conj(mono(a)) * mono(b) for (a, b), c in entry.items())

    for blk in rel.blocks:
        sym = rel.symbolic_block(blk)
        N = blk.size
        got = np.array([[at(sym[r][s]) for s in range(N)] for r in range(N)])
        v = np.array([mono(e) for e in blk.rows])
        g = 1.0 if blk.constraint is None else pr.constraints[blk.constraint].poly.evaluate(z)
        assert np.allclose(got, g * np.outer(v.conj(), v), atol=1e-9)


def test_real_flavor_extracts_the_same_point():
    pr = opf("wb5", "gen:5:q_min", -30.80)
    c = build_moment(pr, COMPLEX, 1).solve()
    r = build_moment(pr, REAL, 1).solve()
    assert r.value == pytest.approx(c.value, abs=1e-3)
    zc, zr = c.extract_candidate().z, r.extract_candidate().z
    assert np.allclose(np.abs(zc), np.abs(zr), atol=1e-4)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentgrid.cpoly import (EQ, GE, Constraint, CPolynomial, CPolyProblem, add_sphere_slack,
                              is_oscillatory, lambda_embed, lambda_tilde, real_form,
                              real_point, to_real)
from momentgrid.errors import NegativeRadius
from momentgrid.hierarchy import COMPLEX, REAL, min_order

from conftest import opf, pop


def random_hermitian_poly(rng, n, deg=2, nterms=6):
    terms = {}
    for _ in range(nterms):
        a = tuple(rng.multinomial(int(rng.integers(0, deg + 1)), [1 / n] * n))
        b = tuple(rng.multinomial(int(rng.integers(0, deg + 1)), [1 / n] * n))
        terms[(a, b)] = complex(rng.normal(), rng.normal())
    p = CPolynomial(n, terms)
    return p + p.conj()


def random_z(rng, n, size=None):
    shape = (n,) if size is None else (size, n)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(1, 4))
def test_hermitian_polys_are_real_valued(seed, n):
    rng = np.random.default_rng(seed)
    p = random_hermitian_poly(rng, n)
    assert p.is_hermitian()
    for z in random_z(rng, n, 1000 // 30 + 1):
        v = p.evaluate(z)
        assert abs(v.imag) < 1e-12 * (1 + abs(v.real))


def test_hermitian_symmetry_of_coefficients(rng):
    p = random_hermitian_poly(rng, 3)
    for (a, b), c in p.terms.items():
        assert p.terms[(b, a)] == pytest.approx(np.conj(c))


def test_no_explicit_zeros():
    z = CPolynomial.var(0, 2)
    p = z - z + CPolynomial.modulus_sq(1, 2) * 0.0
    assert p.terms == {}


def test_arithmetic_matches_evaluation(rng):
    p = random_hermitian_poly(rng, 3)
    q = random_hermitian_poly(rng, 3)
    for z in random_z(rng, 3, 20):
        assert (p * q).evaluate(z) == pytest.approx(p.evaluate(z) * q.evaluate(z))
        assert (p - 2 * q).evaluate(z) == pytest.approx(p.evaluate(z) - 2 * q.evaluate(z))
        assert (p ** 2).evaluate(z) == pytest.approx(p.evaluate(z) ** 2)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(1, 4), fix=st.booleans())
def test_real_form_commutes_with_evaluation(seed, n, fix):
    rng = np.random.default_rng(seed)
    p = random_hermitian_poly(rng, n)
    pv = n - 1 if fix else None
    rp = real_form(p, pv)
    for z in random_z(rng, n, 10):
        if fix:
            z[pv] = z[pv].real
        want = p.evaluate(z).real
        got = rp.evaluate(real_point(z, pv))
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want)) * 10


def test_real_form_of_modulus():
    rp = real_form(CPolynomial.modulus_sq(0, 1))
    assert rp.terms == {(2, 0): 1.0, (0, 2): 1.0}


def test_real_form_cross_term(rng):
    z1, z2 = CPolynomial.var(0, 2), CPolynomial.var(1, 2)
    c1, c2 = CPolynomial.conj_var(0, 2), CPolynomial.conj_var(1, 2)
    f = (1 + 1j) * c1 * z2 + (1 - 1j) * c2 * z1
    rp = real_form(f)
    # x = (x1, x2, y1, y2); 2 Re((1 + j)(x1 - j y1)(x2 + j y2)) expanded by hand
    for z in random_z(rng, 2, 20):
        x1, x2, y1, y2 = z[0].real, z[1].real, z[0].imag, z[1].imag
        want = 2 * x1 * x2 + 2 * y1 * y2 - 2 * x1 * y2 + 2 * x2 * y1
        assert want == pytest.approx(f.evaluate(z).real, abs=1e-12)
        assert rp.evaluate(np.array([x1, x2, y1, y2])) == pytest.approx(want, abs=1e-12)


def test_wb2_phase_fixed_has_three_real_variables():
    pr = opf("wb2")
    rp = to_real(pr, fix_phase=True)
    assert pr.n_vars == 2 and rp.n_vars == 3


def test_lambda_embed_examples():
    assert np.array_equal(lambda_embed(np.eye(3)), np.eye(6))
    assert np.array_equal(lambda_embed(np.array([[1j]])), np.array([[0.0, -1.0], [1.0, 0.0]]))


def test_lambda_homomorphism_1000_pairs(rng):
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        Z1 = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        Z2 = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        L1, L2 = lambda_embed(Z1), lambda_embed(Z2)
        worst = max(worst,
                    np.linalg.norm(lambda_embed(Z1 @ Z2) - L1 @ L2),
                    np.linalg.norm(lambda_embed(Z1 + Z2) - (L1 + L2)),
                    np.linalg.norm(lambda_embed(Z1.conj().T) - L1.T))
        assert np.allclose(lambda_tilde(L1), Z1)
    assert worst < 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 5))
def test_trace_identity_for_hermitian_pairs(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    B = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    Z1, Z2 = A + A.conj().T, B + B.conj().T
    lhs = np.trace(lambda_embed(Z1) @ lambda_embed(Z2))
    assert lhs == pytest.approx(2 * np.trace(Z1 @ Z2).real, rel=1e-10, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=st.integers(1, 6))
def test_lambda_of_dyad_has_rank_two(seed, n):
    rng = np.random.default_rng(seed)
    z = random_z(rng, n)
    X = lambda_embed(np.outer(z, z.conj()))
    ev = np.sort(np.linalg.eigvalsh(X))[::-1]
    assert ev[-1] > -1e-9 * ev[0]
    assert ev[1] > 0.5 * ev[0]  # the two nonzero eigenvalues are equal
    if 2 * n > 2:
        assert ev[2] < 1e-9 * ev[0]
    # two-dyad form: [x; y][x; y]^T + [-y; x][-y; x]^T
    u = np.concatenate([z.real, z.imag])
    w = np.concatenate([-z.imag, z.real])
    assert np.allclose(X, np.outer(u, u) + np.outer(w, w), atol=1e-12)


def test_oscillatory_examples():
    assert is_oscillatory(opf("wb5"))
    z = CPolynomial.var(0, 1)
    f = z + CPolynomial.conj_var(0, 1)
    assert not is_oscillatory(CPolyProblem(f, [], 1))
    assert not is_oscillatory(pop("ex72_raw"))


@pytest.mark.parametrize("name", ["wb2", "wb5", "lmbm3", "twobus"])
def test_oscillatory_opf_has_equal_min_orders(name):
    pr = opf(name)
    assert is_oscillatory(pr)
    assert min_order(pr, REAL) == min_order(pr, COMPLEX)


def test_sphere_slack_on_two_bus():
    pr = opf("twobus", objective_kind="active_loss")
    vmax_sq = 1.1 ** 2 + 1.1 ** 2
    lifted = add_sphere_slack(pr, vmax_sq)
    assert lifted.n_vars == 3
    sph = lifted.constraints[-1]
    assert sph.sense == EQ
    want = vmax_sq - sum(CPolynomial.modulus_sq(i, 3) for i in range(3))
    assert sph.poly == want


def test_sphere_slack_example_71():
    z = CPolynomial.modulus_sq(0, 1)
    base = CPolyProblem(1 - 4 / 3 * z + 7 / 18 * z * z, [Constraint(1 - z, GE, "g")], 1)
    lifted = add_sphere_slack(CPolyProblem(base.objective, [], 1), 1.0)
    g = lifted.constraints[0].poly
    assert g == 1 - CPolynomial.modulus_sq(0, 2) - CPolynomial.modulus_sq(1, 2)


def test_sphere_slack_keeps_feasible_projection(rng):
    pr = opf("wb5")
    r2 = 5 * 1.05 ** 2
    lifted = add_sphere_slack(pr, r2)
    for _ in range(20):
        v = rng.uniform(0.95, 1.05, 5) * np.exp(1j * rng.uniform(-0.3, 0.3, 5))
        s = np.sqrt(max(r2 - np.sum(np.abs(v) ** 2), 0.0))
        zl = np.append(v, s)
        assert lifted.feasibility(zl) == pytest.approx(pr.feasibility(v), abs=1e-12)


def test_sphere_negative_radius():
    with pytest.raises(NegativeRadius):
        add_sphere_slack(opf("wb2"), -1.0)

import cmath
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentgrid.errors import (CaseSyntaxError, DanglingBranch, InputError, MissingSection,
                               ZeroImpedanceBranch)
from momentgrid.netio import (Branch, Bus, Gen, NetworkCase, build_admittance, load_case,
                              parse_case, preprocess_low_impedance, set_parameter,
                              total_load, total_shunt, write_case)

from conftest import have_fixture, needs

TWO_BUS = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 1 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 1 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.1 10 0;
];
"""


def test_minimal_case_counts():
    c = parse_case(TWO_BUS)
    assert (c.n_bus, len(c.gens), len(c.branches)) == (2, 1, 1)
    assert c.name == "tiny"
    assert c.buses[1].p_dem == 50


@pytest.mark.parametrize("text, err", [
    ("", MissingSection),
    ("mpc.baseMVA = 100;", MissingSection),
    (TWO_BUS.replace("1 2 0.01", "1 7 0.01"), DanglingBranch),
    (TWO_BUS.replace("0.01 0.1", "0 0"), None),
])
def test_parse_errors(text, err):
    if err is None:
        with pytest.raises(ZeroImpedanceBranch):
            build_admittance(parse_case(text))
    else:
        with pytest.raises(err):
            parse_case(text)


def test_input_errors_share_a_base():
    assert issubclass(CaseSyntaxError, InputError)


@needs("case89pegase")
def test_pegase89_counts():
    c = load_case("case89pegase")
    assert (c.n_bus, len(c.gens), len(c.branches)) == (89, 12, 210)


@needs("case9241pegase")
def test_pegase9241_counts():
    c = load_case("case9241pegase")
    assert (c.n_bus, len(c.gens), len(c.branches)) == (9241, 1445, 16049)


@needs("case1354pegase")
def test_pegase1354_counts():
    c = load_case("case1354pegase")
    assert (c.n_bus, len(c.gens), len(c.branches)) == (1354, 260, 1991)


def _line_case(r, x, tap=1.0, shift=0.0, b=0.0):
    buses = (Bus(1, v_max=1.1), Bus(2, v_max=1.1))
    br = Branch(1, 2, r, x, b_sh_from=b / 2, b_sh_to=b / 2, tap=tap, shift=shift)
    return NetworkCase(1.0, buses, (Gen(1),), (br,))


def test_admittance_single_line():
    Y = build_admittance(_line_case(0.1, 0.3)).Y.toarray()
    y = 1 / complex(0.1, 0.3)
    assert np.allclose(Y, [[y, -y], [-y, y]])


def test_admittance_real_tap():
    t = 1.05
    Y = build_admittance(_line_case(0.1, 0.3, tap=t)).Y.toarray()
    y = 1 / complex(0.1, 0.3)
    assert np.allclose(Y, [[y / t**2, -y / t], [-y / t, y]])


def _kirchhoff(case, v):
    """Injections summed branch by branch from the pi model."""
    idx = case.bus_index()
    inj = np.zeros(case.n_bus, dtype=complex)
    for br in case.active_branches():
        f, t = idx[br.from_bus], idx[br.to_bus]
        rho = br.tap * cmath.exp(1j * br.shift)
        y = 1 / complex(br.r, br.x)
        vf = v[f] / rho  # voltage seen after the ideal transformer
        i_series = y * (vf - v[t])
        i_f = (i_series + complex(br.g_sh_from, br.b_sh_from) * vf) / np.conj(rho)
        i_t = -i_series + complex(br.g_sh_to, br.b_sh_to) * v[t]
        inj[f] += v[f] * np.conj(i_f)
        inj[t] += v[t] * np.conj(i_t)
    for b in case.buses:
        k = idx[b.id]
        inj[k] += v[k] * np.conj(complex(b.g_sh, b.b_sh) * v[k])
    return inj


@pytest.mark.parametrize("name", ["wb5", "lmbm3", "case14", "case39"])
def test_injections_match_kirchhoff(name, rng):
    case = load_case(name)
    adm = build_admittance(case)
    for _ in range(5):
        v = rng.uniform(0.9, 1.1, case.n_bus) * np.exp(1j * rng.uniform(-0.5, 0.5, case.n_bus))
        assert np.max(np.abs(adm.injections(v) - _kirchhoff(case, v))) < 1e-10


def test_branch_flows_sum_to_injections(rng):
    case = load_case("case14")
    adm = build_admittance(case)
    v = rng.uniform(0.9, 1.1, case.n_bus) * np.exp(1j * rng.uniform(-0.5, 0.5, case.n_bus))
    sf, st_ = adm.branch_flows(v)
    acc = np.zeros(case.n_bus, dtype=complex)
    np.add.at(acc, adm.branch_ends[:, 0], sf)
    np.add.at(acc, adm.branch_ends[:, 1], st_)
    idx = case.bus_index()
    for b in case.buses:
        acc[idx[b.id]] += abs(v[idx[b.id]]) ** 2 * np.conj(complex(b.g_sh, b.b_sh))
    assert np.allclose(acc, adm.injections(v), atol=1e-12)


@pytest.mark.parametrize("name", ["wb2", "wb5", "lmbm3", "twobus", "case14", "case39"])
def test_write_parse_round_trip(name):
    c = load_case(name)
    again = parse_case(write_case(c), name=c.name)
    assert again.approx_equal(c)
    assert write_case(again) == write_case(c)


def test_set_parameter():
    c = load_case("wb5")
    d = set_parameter(c, "gen:5:q_min", 12.5)
    assert [g.q_min for g in d.gens if g.bus == 5] == [12.5]
    lm = set_parameter(load_case("lmbm3"), "branch:3-2:s_max", 40.0)
    assert [br.s_max for br in lm.branches if (br.from_bus, br.to_bus) == (3, 2)] == [40.0]
    lm = set_parameter(lm, "branch:3-2:s_max", 0)  # MATPOWER: 0 means unlimited
    assert [br.s_max for br in lm.branches if (br.from_bus, br.to_bus) == (3, 2)] == [math.inf]
    with pytest.raises(CaseSyntaxError):
        set_parameter(c, "gen:9:q_min", 1)
    with pytest.raises(CaseSyntaxError):
        set_parameter(c, "gen:5:nope", 1)
    with pytest.raises(CaseSyntaxError):
        set_parameter(c, "gen5", 1)


# --- preprocessing -----------------------------------------------------------


def random_case(seed, n=8):
    rng = np.random.default_rng(seed)
    buses = tuple(Bus(i + 1, p_dem=float(rng.uniform(0, 50)), q_dem=float(rng.uniform(-5, 5)),
                      g_sh=float(rng.uniform(0, 0.01)), b_sh=float(rng.uniform(-0.05, 0.05)),
                      v_min=0.9, v_max=1.1) for i in range(n))
    g = nx.gnm_random_graph(n, n + 4, seed=int(seed))
    g.add_edges_from((i, i + 1) for i in range(n - 1))
    branches = []
    for a, b in sorted(g.edges):
        small = rng.random() < 0.35
        scale = 1e-4 if small else 1.0
        branches.append(Branch(a + 1, b + 1, float(rng.uniform(0, 0.02)) * scale,
                               float(rng.uniform(0.01, 0.2)) * scale,
                               b_sh_from=float(rng.uniform(0, 0.01)),
                               b_sh_to=float(rng.uniform(0, 0.01))))
    gens = (Gen(1, p_max=100.0), Gen(int(rng.integers(1, n + 1)), p_max=50.0))
    return NetworkCase(100.0, buses, gens, tuple(branches))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_preprocessing_invariants(seed):
    case = random_case(seed)
    thr = 1e-3
    red, groups = preprocess_low_impedance(case, thr)
    # components of the low-impedance subgraph
    g = nx.Graph()
    g.add_nodes_from(b.id for b in case.buses)
    g.add_edges_from((br.from_bus, br.to_bus) for br in case.branches
                     if br.status > 0 and br.impedance < thr)
    comps = sorted(sorted(c) for c in nx.connected_components(g))
    assert sorted(sorted(m) for m in groups.members.values()) == comps
    assert red.n_bus == len(comps)
    # conservation
    assert abs(total_load(red) - total_load(case)) < 1e-9
    # bus shunts plus line charging; merged lines hand their charging to the bus
    assert abs(total_shunt(red) - total_shunt(case)) < 1e-9
    # idempotence
    again, g2 = preprocess_low_impedance(red, thr)
    assert again == red and g2.is_identity()
    # back-mapping assigns one phasor per group
    vr = {b.id: complex(1, 0.01 * b.id) for b in red.buses}
    full = groups.back_map(vr)
    assert all(full[i] == vr[groups.rep_of[i]] for i in full)


def test_zero_threshold_is_identity():
    case = load_case("case14")
    red, groups = preprocess_low_impedance(case, 0.0)
    assert red is case and groups.is_identity()


@pytest.mark.parametrize("name, thr, buses, branches", [
    ("case2383wp", 1e-3, 2177, 2690),
    ("case3012wp", 1e-3, 2292, 2851),
    ("case3120sp", 1e-3, 2314, 2886),
    ("case1354pegase", 1e-3, 1179, 1803),
])
def test_large_case_reduction(name, thr, buses, branches):
    if not have_fixture(name):
        pytest.skip(f"{name} not available")
    red, _ = preprocess_low_impedance(load_case(name), thr)
    assert (red.n_bus, len(red.branches)) == (buses, branches)

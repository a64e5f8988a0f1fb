import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentgrid.chordal import (PartialHermitian, SparsityGraph, assign_orders, chordal_extend,
                                complete_rank_one, running_intersection_holds)
from momentgrid.errors import CycleInconsistent
from momentgrid.hierarchy import sparse_decomposition

from conftest import opf, same_up_to_phase


def graph(n, edges):
    g = SparsityGraph(n)
    for i, j in edges:
        g.add_edge(i, j)
    return g


def test_tree_cliques_are_edges():
    edges = [(0, 1), (1, 2), (1, 3), (3, 4)]
    dec = chordal_extend(graph(5, edges))
    assert sorted(map(tuple, dec.cliques)) == sorted(edges)
    assert not dec.fill_edges


def test_four_cycle_gets_one_chord():
    dec = chordal_extend(graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)]))
    assert len(dec.fill_edges) == 1
    assert sorted(len(c) for c in dec.cliques) == [3, 3]
    # no ordering of the 4-cycle does better than one fill edge
    best = min(_fill_for_order(4, [(0, 1), (1, 2), (2, 3), (0, 3)], p)
               for p in itertools.permutations(range(4)))
    assert best == len(dec.fill_edges)


def _fill_for_order(n, edges, order):
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    fill, alive = 0, set(range(n))
    for v in order:
        nb = adj[v] & alive
        for a, b in itertools.combinations(sorted(nb), 2):
            if b not in adj[a]:
                adj[a].add(b)
                adj[b].add(a)
                fill += 1
        alive.discard(v)
    return fill


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 14))
def test_extension_properties(seed, n):
    g = nx.gnm_random_graph(n, min(n * (n - 1) // 2, 2 * n), seed=seed)
    sg = graph(n, g.edges)
    dec = chordal_extend(sg)
    ext = nx.Graph()
    ext.add_nodes_from(range(n))
    ext.add_edges_from(dec.chordal_edges)
    assert nx.is_chordal(ext)
    cl = [set(c) for c in dec.cliques]
    for i, j in sg.edges:
        assert any({i, j} <= c for c in cl)
    for a, b in itertools.permutations(range(len(cl)), 2):
        assert not cl[a] < cl[b]
    assert sorted(map(sorted, cl)) == sorted(sorted(c) for c in nx.find_cliques(ext))
    assert running_intersection_holds(dec)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 9))
def test_psd_clique_blocks_admit_psd_completion(seed, n):
    """Blocks PSD on every clique of a chordal pattern -> a PSD completion exists."""
    rng = np.random.default_rng(seed)
    g = nx.gnm_random_graph(n, n + 2, seed=seed)
    g.add_edges_from((i, i + 1) for i in range(n - 1))
    dec = chordal_extend(graph(n, g.edges))
    # random PSD matrix, keep only the chordal pattern
    A = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
    W = A @ A.conj().T + 0.1 * np.eye(n)
    pattern = {(min(i, j), max(i, j)) for i, j in dec.chordal_edges}
    for c in dec.cliques:
        assert np.linalg.eigvalsh(W[np.ix_(c, c)]).min() > -1e-10
    # maximum-determinant completion, computed by cvxpy as an independent oracle
    cp = pytest.importorskip("cvxpy")
    X = cp.Variable((n, n), hermitian=True)
    cons = [X >> 0] + [X[i, i] == W[i, i] for i in range(n)]
    cons += [X[i, j] == W[i, j] for i, j in pattern]
    prob = cp.Problem(cp.Maximize(cp.log_det(X)), cons)
    prob.solve(solver="CLARABEL")
    assert prob.status in ("optimal", "optimal_inaccurate")
    # break one clique block: no PSD completion remains
    big = max(dec.cliques, key=len)
    i, j = big[0], big[1]
    Wbad = W.copy()
    Wbad[i, j] = 2 * np.sqrt(W[i, i].real * W[j, j].real)
    Wbad[j, i] = np.conj(Wbad[i, j])
    assert np.linalg.eigvalsh(Wbad[np.ix_(big, big)]).min() < 0
    cons = [X >> 0] + [X[k, k] == Wbad[k, k] for k in range(n)]
    cons += [X[a, b] == Wbad[a, b] for a, b in pattern]
    bad = cp.Problem(cp.Minimize(0), cons)
    bad.solve(solver="CLARABEL")
    assert bad.status in ("infeasible", "infeasible_inaccurate")


def test_five_bus_cliques_and_orders():
    pr = opf("wb5")
    second = {7, 8, 9, 10, 17, 18, 19, 20}  # 1-based constraint numbers
    orders = [2 if i + 1 in second else 1 for i in range(pr.m)]
    dec = sparse_decomposition(pr, orders)
    assert [[v + 1 for v in c] for c in dec.cliques] == [[1, 2, 3], [2, 3, 4, 5]]
    assert dec.orders == [1, 2]


def test_assign_orders_trivial_cases():
    dec = chordal_extend(graph(4, [(0, 1), (1, 2), (2, 3)]))
    sup = [[0, 1], [1, 2], [2, 3]]
    assert assign_orders(dec, [1, 1, 1], sup).orders == [1, 1, 1]
    single = chordal_extend(graph(3, [(0, 1), (1, 2), (0, 2)]))
    assert assign_orders(single, [1, 3, 2], [[0], [1, 2], [0, 2]]).orders == [3]


def _pattern_from(g):
    return [(min(i, j), max(i, j)) for i, j in g.edges]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 10))
def test_rank_one_completion_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    g = nx.random_labeled_tree(n, seed=seed) if n > 1 else nx.empty_graph(1)
    g.add_edges_from(nx.gnm_random_graph(n, n // 2, seed=seed + 1).edges)
    part = PartialHermitian.from_matrix(np.outer(v, v.conj()), _pattern_from(g))
    got = complete_rank_one(part)
    assert same_up_to_phase(got, v) < 1e-9


def test_completion_on_complete_pattern(rng):
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    part = PartialHermitian.from_matrix(np.outer(v, v.conj()), itertools.combinations(range(4), 2))
    assert same_up_to_phase(complete_rank_one(part), v) < 1e-10


def test_inconsistent_cycle_is_rejected(rng):
    v = rng.normal(size=3) + 1j * rng.normal(size=3)
    W = np.outer(v, v.conj())
    W[0, 1] *= 1j
    W[1, 0] = np.conj(W[0, 1])
    part = PartialHermitian.from_matrix(W, [(0, 1), (1, 2), (0, 2)])
    with pytest.raises(CycleInconsistent):
        complete_rank_one(part)

"""Sparsity graphs, chordal extensions, clique orders and rank-one completion."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import CycleInconsistent, RankTooHigh, UncoveredConstraint

PHASE_TOL = 1e-6
RANK_TOL = 1e-6


@dataclass
class SparsityGraph:
    n: int
    edges: set = field(default_factory=set)  # pairs (i, j) with i < j
    provenance: dict = field(default_factory=dict)  # edge -> labels that created it

    def add_edge(self, i, j, source=""):
        if i == j:
            return
        e = (min(i, j), max(i, j))
        self.edges.add(e)
        if source:
            self.provenance.setdefault(e, set()).add(source)

    def add_clique(self, nodes, source=""):
        nodes = sorted(set(nodes))
        for a in range(len(nodes)):
            for b in range(a + 1, len(nodes)):
                self.add_edge(nodes[a], nodes[b], source)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def adjacency(self) -> list[set]:
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def to_dot(self, cliques=None, names=None) -> str:
        names = names or [str(i + 1) for i in range(self.n)]
        lines = ["graph sparsity {"]
        for i in range(self.n):
            lines.append(f'  n{i} [label="{names[i]}"];')
        for i, j in sorted(self.edges):
            lines.append(f"  n{i} -- n{j};")
        for k, c in enumerate(cliques or []):
            members = " ".join(f"n{i}" for i in c)
            lines.append(f'  subgraph cluster_{k} {{ label="C{k + 1}"; {members} }}')
        lines.append("}")
        return "\n".join(lines)


def graph_from_problem(problem, extra_cliques=()) -> SparsityGraph:
    """Edges between variables sharing a monomial in f or any g_i."""
    g = SparsityGraph(problem.n_vars)
    polys = [("objective", problem.objective)] + [(c.label, c.poly) for c in problem.constraints]
    for label, p in polys:
        for i, j in p.monomial_pairs():
            g.add_edge(i, j, label)
    for nodes in extra_cliques:
        g.add_clique(nodes, "augmented")
    return g


@dataclass
class CliqueDecomposition:
    cliques: list[list[int]]
    chordal_edges: set
    fill_edges: set
    tree_edges: list[tuple[int, int]]  # pairs of clique indices
    orders: list[int] = field(default_factory=list)
    covering: dict = field(default_factory=dict)  # constraint id -> clique index

    @property
    def p(self):
        return len(self.cliques)

    def max_clique_size(self):
        return max((len(c) for c in self.cliques), default=0)


def _min_degree_elimination(n, adj):
    adj = [set(a) for a in adj]
    alive = set(range(n))
    order, raw, fill = [], [], set()
    while alive:
        v = min(alive, key=lambda u: (len(adj[u] & alive), u))
        nbrs = adj[v] & alive
        raw.append(sorted(nbrs | {v}))
        nb = sorted(nbrs)
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                i, j = nb[a], nb[b]
                if j not in adj[i]:
                    adj[i].add(j)
                    adj[j].add(i)
                    fill.add((i, j))
        order.append(v)
        alive.remove(v)
    return order, raw, fill


def chordal_extend(graph: SparsityGraph) -> CliqueDecomposition:
    """Minimum-degree elimination; maximal cliques and a clique tree."""
    order, raw, fill = _min_degree_elimination(graph.n, graph.adjacency())
    sets = [frozenset(c) for c in raw]
    maximal = []
    for c in sorted(set(sets), key=lambda s: (-len(s), sorted(s))):
        if not any(c < m for m in maximal):
            maximal.append(c)
    cliques = sorted((sorted(c) for c in maximal), key=lambda c: (c[0], len(c), c))
    # clique tree: maximum-weight spanning forest on intersection sizes
    cg = nx.Graph()
    cg.add_nodes_from(range(len(cliques)))
    for a in range(len(cliques)):
        for b in range(a + 1, len(cliques)):
            w = len(set(cliques[a]) & set(cliques[b]))
            if w:
                cg.add_edge(a, b, weight=w)
    tree = nx.maximum_spanning_tree(cg, algorithm="kruskal")
    tree_edges = sorted((min(a, b), max(a, b)) for a, b in tree.edges)
    chordal_edges = set(graph.edges) | fill
    return CliqueDecomposition(cliques, chordal_edges, fill, tree_edges)


def running_intersection_holds(dec: CliqueDecomposition) -> bool:
    """Each node's cliques form a connected subtree of the clique tree."""
    t = nx.Graph()
    t.add_nodes_from(range(dec.p))
    t.add_edges_from(dec.tree_edges)
    nodes = set().union(*map(set, dec.cliques)) if dec.cliques else set()
    for v in nodes:
        holders = [k for k, c in enumerate(dec.cliques) if v in c]
        if not nx.is_connected(t.subgraph(holders)):
            return False
    return True


def covering_clique(dec: CliqueDecomposition, support) -> int | None:
    """Smallest clique containing ``support`` (ties: lowest index)."""
    support = set(support)
    best = None
    for k, c in enumerate(dec.cliques):
        if support <= set(c):
            if best is None or len(c) < len(dec.cliques[best]):
                best = k
    return best


def assign_orders(dec: CliqueDecomposition, orders, supports) -> CliqueDecomposition:
    """Clique order = max d_i over constraints it minimally covers (default 1)."""
    d_tilde = [1] * dec.p
    covering = {}
    for i, (d, sup) in enumerate(zip(orders, supports)):
        k = covering_clique(dec, sup)
        if k is None:
            if d > 1:
                raise UncoveredConstraint(f"constraint {i} (order {d}) lies in no clique")
            continue
        covering[i] = k
        if d > 1:
            d_tilde[k] = max(d_tilde[k], d)
    dec.orders = d_tilde
    dec.covering = covering
    return dec


# ---------------------------------------------------------------------------
# rank-one completion


@dataclass
class PartialHermitian:
    n: int
    entries: dict  # (i, j) -> complex, i <= j, diagonal included
    blocks: list = field(default_factory=list)  # optional clique index lists

    @classmethod
    def from_matrix(cls, W, pattern_edges, blocks=()):
        W = np.asarray(W, dtype=complex)
        n = W.shape[0]
        ent = {(i, i): W[i, i] for i in range(n)}
        for i, j in pattern_edges:
            a, b = min(i, j), max(i, j)
            ent[(a, b)] = W[a, b]
        return cls(n, ent, [list(b) for b in blocks])

    def value(self, i, j):
        if i <= j:
            return self.entries[(i, j)]
        return np.conj(self.entries[(j, i)])


def complete_rank_one(partial: PartialHermitian, phase_tol=PHASE_TOL, rank_tol=RANK_TOL):
    """v with v v^H matching every specified entry of a rank-one pattern."""
    n = partial.n
    for blk in partial.blocks:
        B = np.array([[partial.value(i, j) for j in blk] for i in blk])
        ev = np.linalg.eigvalsh(B)
        if ev[-1] > 0 and len(ev) > 1 and ev[-2] > rank_tol * ev[-1]:
            raise RankTooHigh(f"block {blk}: eigenvalue ratio {ev[-2] / ev[-1]:.2e}")
    g = nx.Graph()
    g.add_nodes_from(range(n))
    for (i, j), v in partial.entries.items():
        if i != j and abs(v) > 0:
            g.add_edge(i, j)
    mag = np.sqrt(np.maximum([partial.value(i, i).real for i in range(n)], 0.0))
    theta = np.zeros(n)
    seen = set()
    for comp in nx.connected_components(g):
        root = min(comp)
        seen.add(root)
        for a, b in nx.bfs_edges(g, root):
            # W_ab = v_a conj(v_b) -> arg v_b = arg v_a - arg W_ab
            theta[b] = theta[a] - cmath.phase(partial.value(a, b))
            seen.add(b)
    for i, j in g.edges:
        d = (theta[i] - theta[j] - cmath.phase(partial.value(i, j)) + math.pi) % (2 * math.pi) - math.pi
        if abs(d) > phase_tol:
            raise CycleInconsistent(f"phase sum off by {d:.3e} rad around edge ({i},{j})")
    return mag * np.exp(1j * theta)

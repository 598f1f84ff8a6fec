"""Regular-vine tree sequences.

A structure is stored as explicit per-tree edge lists.  Every edge carries
its conditioned pair ``(j, k)`` (with ``j < k``) and conditioning set ``D``;
the two nodes it joins in the previous tree are the edges whose constraint
sets are ``{j} | D`` and ``{k} | D``.  The lower-triangular R-vine matrix is
derived from the edge lists and used only for serialisation and sampling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import ConnectivityError, DataError
from .families import EPS, BivariateCopula


@dataclass(frozen=True, order=True)
class Edge:
    tree: int
    conditioned: tuple
    conditioning: frozenset = frozenset()

    def __post_init__(self):
        j, k = self.conditioned
        if j == k:
            raise ValueError("edge endpoints must be distinct")
        object.__setattr__(self, "conditioned", (min(j, k), max(j, k)))
        object.__setattr__(self, "conditioning", frozenset(self.conditioning))

    @property
    def constraint(self) -> frozenset:
        return self.conditioning | set(self.conditioned)

    @property
    def nodes(self) -> tuple:
        """Constraint sets of the two previous-tree nodes joined by this edge."""
        j, k = self.conditioned
        return (self.conditioning | {j}, self.conditioning | {k})

    def label(self, one_based: bool = True) -> str:
        off = 1 if one_based else 0
        j, k = self.conditioned
        s = f"{j + off},{k + off}"
        if self.conditioning:
            s += ";" + ",".join(str(x + off) for x in sorted(self.conditioning))
        return s

    def __repr__(self):
        return f"Edge({self.label()})"


def edge_sort_key(edge: Edge):
    return (edge.tree, edge.conditioned, tuple(sorted(edge.conditioning)))


@dataclass
class WeightedEdge:
    a: Hashable
    b: Hashable
    weight: float
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("weighted edge endpoints must be distinct")


def _lex(x):
    if isinstance(x, (frozenset, set)):
        return tuple(sorted(x))
    return x


def max_spanning_tree(nodes: Sequence, edges: Sequence[WeightedEdge]) -> list[WeightedEdge]:
    """Prim's algorithm for a maximum-weight spanning tree.

    Ties are broken towards the lexicographically smallest endpoint pair, so
    the result is deterministic.
    """
    nodes = list(nodes)
    if len(nodes) <= 1:
        return []
    order = {nd: _lex(nd) for nd in nodes}

    def pair_key(e):
        a, b = sorted((order[e.a], order[e.b]))
        return (a, b)

    adjacency = {nd: [] for nd in nodes}
    for e in edges:
        if e.a not in adjacency or e.b not in adjacency:
            raise ValueError(f"edge {e.a}-{e.b} refers to an unknown node")
        adjacency[e.a].append(e)
        adjacency[e.b].append(e)
    start = min(nodes, key=lambda nd: order[nd])
    in_tree = {start}
    frontier = list(adjacency[start])
    chosen = []
    while len(in_tree) < len(nodes):
        best = None
        for e in frontier:
            if (e.a in in_tree) == (e.b in in_tree):
                continue
            if best is None or e.weight > best.weight or (
                    e.weight == best.weight and pair_key(e) < pair_key(best)):
                best = e
        if best is None:
            raise ConnectivityError("edge set does not connect all nodes")
        chosen.append(best)
        new = best.b if best.a in in_tree else best.a
        in_tree.add(new)
        frontier = [e for e in frontier if not (e.a in in_tree and e.b in in_tree)]
        frontier.extend(e for e in adjacency[new]
                        if (e.a in in_tree) != (e.b in in_tree))
    return chosen


def _is_spanning_tree(nodes, pairs) -> bool:
    nodes = list(nodes)
    if len(pairs) != len(nodes) - 1:
        return False
    parent = {nd: nd for nd in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        if a not in parent or b not in parent:
            return False
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def allowed_edges(prev_tree: Sequence[Edge]) -> list[Edge]:
    """Candidate edges of the next tree under the proximity condition.

    Two edges of the previous tree may be joined when they share exactly one
    node; the new edge is conditioned on the shared part of their
    constraint sets.
    """
    prev = sorted(prev_tree, key=edge_sort_key)
    if not prev:
        return []
    level = prev[0].tree + 1
    out = []
    for a, b in itertools.combinations(prev, 2):
        shared = set(a.nodes) & set(b.nodes)
        if len(shared) != 1:
            continue
        cond = a.constraint & b.constraint
        diff = a.constraint ^ b.constraint
        if len(diff) != 2:
            continue
        out.append(Edge(level, tuple(sorted(diff)), cond))
    return sorted(out, key=edge_sort_key)


def first_tree_candidates(d: int) -> list[Edge]:
    return [Edge(1, (i, j)) for i, j in itertools.combinations(range(d), 2)]


def count_structures(d: int, kind: str = "rvine") -> int:
    """Number of vine tree sequences in dimension ``d`` (exact integers)."""
    if not 3 <= d <= 60:
        raise ValueError(f"d must lie in [3, 60], got {d}")
    free = math.comb(d - 2, 2)
    if kind == "rvine":
        return math.factorial(d) // 2 * 2 ** free
    if kind == "cvine":
        return math.factorial(d) // 2
    if kind in ("natural_order_matrices", "natural", "natural_order"):
        return 2 ** free
    raise ValueError(f"unknown structure kind {kind!r}")


def pseudo_obs_update(fitted: BivariateCopula, u_left, u_right):
    """Conditional pseudo-observations produced by a fitted pair-copula.

    Returns ``(C(u_left | u_right), C(u_right | u_left))``.
    """
    first = fitted.hfunc(u_left, u_right, "second")
    second = fitted.hfunc(u_left, u_right, "first")
    return np.clip(first, EPS, 1 - EPS), np.clip(second, EPS, 1 - EPS)


class VineStructure:
    """Tree sequence T_1, ..., T_{d-1} of a regular vine on variables 0..d-1."""

    def __init__(self, d: int, trees: Sequence[Iterable[Edge]]):
        self.d = int(d)
        self.trees = [sorted(t, key=edge_sort_key) for t in trees]

    def __repr__(self):
        body = "; ".join(",".join(e.label() for e in t) for t in self.trees)
        return f"VineStructure(d={self.d}: {body})"

    def __eq__(self, other):
        return (isinstance(other, VineStructure) and self.d == other.d
                and self.edge_set() == other.edge_set())

    def __hash__(self):
        return hash((self.d, frozenset(self.edge_set())))

    def edges(self) -> list[Edge]:
        return [e for t in self.trees for e in t]

    def edge_set(self) -> set:
        return {(e.conditioned, e.conditioning) for e in self.edges()}

    def validate(self) -> None:
        """Check tree conditions (i)-(iii); raises ``DataError`` on violation."""
        d = self.d
        if d < 2:
            raise DataError("a vine needs at least two variables")
        if len(self.trees) != d - 1:
            raise DataError(f"expected {d - 1} trees, got {len(self.trees)}")
        nodes = [frozenset({i}) for i in range(d)]
        for m, tree in enumerate(self.trees, start=1):
            node_set = set(nodes)
            pairs = []
            for e in tree:
                if e.tree != m:
                    raise DataError(f"edge {e} is stored in tree {m}")
                if len(e.conditioning) != m - 1:
                    raise DataError(f"edge {e} has a conditioning set of the wrong size")
                a, b = e.nodes
                if a not in node_set or b not in node_set:
                    raise DataError(f"edge {e} does not join two nodes of tree {m}")
                pairs.append((a, b))
            if not _is_spanning_tree(nodes, pairs):
                raise DataError(f"tree {m} is not a spanning tree on its nodes")
            if m >= 2:
                prev = {e.constraint: e for e in self.trees[m - 2]}
                for e in tree:
                    # proximity: the joined edges of T_{m-1} share the node D
                    a, b = (prev[x] for x in e.nodes)
                    if e.conditioning not in a.nodes or e.conditioning not in b.nodes:
                        raise DataError(f"edge {e} violates the proximity condition")
            nodes = [e.constraint for e in tree]
        if len(self.edges()) != d * (d - 1) // 2:
            raise DataError("wrong total number of edges")

    def is_valid(self) -> bool:
        try:
            self.validate()
        except DataError:
            return False
        return True

    def is_cvine(self) -> bool:
        for tree in self.trees:
            if len(tree) <= 2:
                continue
            counts = {}
            for e in tree:
                for nd in e.nodes:
                    counts[nd] = counts.get(nd, 0) + 1
            if max(counts.values()) != len(tree):
                return False
        return True

    def cvine_roots(self) -> list[int]:
        """Root order of a C-vine (last entry completes the order)."""
        roots = []
        for tree in self.trees:
            counts = {}
            for e in tree:
                for v in e.conditioned:
                    counts[v] = counts.get(v, 0) + 1
            best = max(counts.values())
            roots.append(min(v for v, c in counts.items() if c == best))
        rest = set(range(self.d)) - set(roots)
        return roots + sorted(rest)

    def first_tree_degrees(self) -> dict:
        deg = {i: 0 for i in range(self.d)}
        for e in self.trees[0]:
            for v in e.conditioned:
                deg[v] += 1
        return deg

    # ------------------------------------------------------------------
    # lower-triangular R-vine matrix (column k: diagonal variable M[k, k];
    # row i > k holds the partner of tree d - i, conditioned on M[i+1:, k])
    # ------------------------------------------------------------------
    def to_matrix(self) -> np.ndarray:
        d = self.d
        remaining = [list(t) for t in self.trees]
        mat = np.zeros((d, d), dtype=int)
        for k in range(d - 1):
            top = d - 2 - k            # index of the top remaining tree
            edge = remaining[top][0]
            for a in edge.conditioned:
                chain = _peel(remaining, a, top)
                if chain is not None:
                    break
            else:
                raise DataError("structure cannot be written as an R-vine matrix")
            mat[k, k] = a
            for level, e in chain:
                j, kk = e.conditioned
                mat[d - 1 - level, k] = kk if j == a else j
                remaining[level].remove(e)
        mat[d - 1, d - 1] = next(iter(set(range(d)) - set(np.diag(mat)[:d - 1])))
        return mat

    @classmethod
    def from_matrix(cls, mat) -> "VineStructure":
        mat = np.asarray(mat, dtype=int)
        d = mat.shape[0]
        if mat.shape != (d, d):
            raise DataError("structure matrix must be square")
        trees = [[] for _ in range(d - 1)]
        for k in range(d - 1):
            for i in range(k + 1, d):
                level = d - i
                cond = frozenset(int(x) for x in mat[i + 1:, k])
                trees[level - 1].append(Edge(level, (int(mat[k, k]), int(mat[i, k])), cond))
        vs = cls(d, trees)
        vs.validate()
        return vs

    def matrix_orientation(self) -> dict:
        """Map edge -> True when the matrix lists the edge's first variable on the diagonal."""
        mat = self.to_matrix()
        d = self.d
        out = {}
        for k in range(d - 1):
            for i in range(k + 1, d):
                level = d - i
                cond = frozenset(int(x) for x in mat[i + 1:, k])
                e = Edge(level, (int(mat[k, k]), int(mat[i, k])), cond)
                out[e] = e.conditioned[0] == int(mat[k, k])
        return out


def _peel(remaining, a, top):
    """Edges containing ``a`` in their conditioned set, one per tree, nested downwards.

    Returns ``[(level_index, edge), ...]`` from the top tree down or ``None``
    when ``a`` cannot be removed as a leaf variable.
    """
    chain = []
    prev = None
    for level in range(top, -1, -1):
        hits = [e for e in remaining[level] if a in e.conditioned]
        if prev is not None:
            hits = [e for e in hits if e.constraint <= prev.constraint]
        if len(hits) != 1:
            return None
        if any(a in e.conditioning for e in remaining[level]):
            return None
        prev = hits[0]
        chain.append((level, prev))
    # a must not appear anywhere else among the remaining edges
    for level in range(top + 1):
        others = [e for e in remaining[level] if a in e.constraint]
        if len(others) != 1:
            return None
    return chain


def cvine_structure(order: Sequence[int]) -> VineStructure:
    """C-vine with the given root order (length d or d-1)."""
    order = list(order)
    d = len(order) if len(set(order)) == len(order) else None
    allv = set(order)
    d = max(allv) + 1 if d is None else d
    if len(order) == d - 1:
        order.append(next(iter(set(range(d)) - set(order))))
    trees = []
    for m in range(d - 1):
        root = order[m]
        cond = frozenset(order[:m])
        trees.append([Edge(m + 1, (root, v), cond) for v in order[m + 1:]])
    return VineStructure(d, trees)


def dvine_structure(order: Sequence[int]) -> VineStructure:
    order = list(order)
    d = len(order)
    trees = []
    for m in range(1, d):
        trees.append([Edge(m, (order[i], order[i + m]), frozenset(order[i + 1:i + m]))
                      for i in range(d - m)])
    return VineStructure(d, trees)


def propagate(structure: VineStructure, data, copulas: dict, want_last: bool = False):
    """Push copula-scale data through the vine.

    Yields ``(edge, x, y)`` with the two pseudo-observation columns entering
    each edge, tree by tree; the returned dictionary is filled lazily as the
    generator advances.
    """
    data = np.asarray(data, dtype=float)
    pseudo = {(i, frozenset()): data[:, i] for i in range(structure.d)}
    last = len(structure.trees)
    for m, tree in enumerate(structure.trees, start=1):
        for e in tree:
            j, k = e.conditioned
            x, y = pseudo[(j, e.conditioning)], pseudo[(k, e.conditioning)]
            yield e, x, y
            if m < last or want_last:
                hx, hy = pseudo_obs_update(copulas[e], x, y)
                pseudo[(j, e.conditioning | {k})] = hx
                pseudo[(k, e.conditioning | {j})] = hy

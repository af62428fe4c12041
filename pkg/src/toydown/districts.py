"""District generators and fragmentation bounds.

``greedy`` and ``square`` build one district on a homogeneous hierarchy;
``disconn`` assembles random whole units up to a population target; the
ReCom chain (``recom_step``/``run_recom``) walks over connected, balanced
partitions of an adjacency graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationFailure, InputError
from .hierarchy import District, Hierarchy, district_from_mask, district_weights


def _leaf_ranges(h: Hierarchy) -> tuple[np.ndarray, np.ndarray]:
    """First descendant leaf and number of descendant leaves for every node."""
    size = h.leaf_sizes()
    lo = np.arange(h.n_nodes)
    for lv in range(h.depth - 1, 0, -1):
        nodes = h.level_nodes(lv)
        lo[nodes.start:nodes.stop] = lo[h.first_child[nodes.start:nodes.stop]]
    return lo, size


def greedy(h: Hierarchy, k: int, rng: np.random.Generator) -> District:
    """District of floor(|leaves| / k) leaves built from the largest whole units possible.

    At each node the run of whole children starts at a random child and
    continues in child order (cyclically); the first child left over becomes
    the partially used unit that the next round descends into.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > h.n_leaves:
        raise InputError(f"k={k} exceeds the {h.n_leaves} leaves")
    if k == 1:
        return district_weights(h, h.leaves)
    lo, size = _leaf_ranges(h)
    need = h.n_leaves // k
    chosen: list[range] = []
    current = h.root
    while need > 0:
        kids = list(h.children(current))
        start = int(rng.integers(len(kids)))
        order = kids[start:] + kids[:start]
        leftover = []
        for c in order:
            if size[c] <= need:
                chosen.append(range(lo[c], lo[c] + size[c]))
                need -= int(size[c])
            else:
                leftover.append(c)
        if need > 0:
            current = leftover[0]
    return district_weights(h, (x for r in chosen for x in r))


@dataclass(frozen=True)
class PlaneGrid:
    """Square tiling of a homogeneous hierarchy whose branching factors are squares.

    ``cell_leaf[r, c]`` is the leaf id at row ``r``, column ``c``; every unit
    covers an axis-aligned square of cells.
    """

    hierarchy: Hierarchy
    side: int
    cell_leaf: np.ndarray

    @classmethod
    def from_hierarchy(cls, h: Hierarchy) -> "PlaneGrid":
        branching = h.branching
        roots = [math.isqrt(n) for n in branching]
        if any(r * r != n for r, n in zip(roots, branching)):
            raise InputError(f"every branching factor must be a perfect square: {branching}")
        side = math.prod(roots)
        row = np.zeros(h.n_nodes, dtype=np.int64)
        col = np.zeros(h.n_nodes, dtype=np.int64)
        span = side
        for lv, m in enumerate(roots, start=1):
            span //= m
            kids = h.level_nodes(lv + 1)
            par = h.parent[kids.start:kids.stop]
            idx = np.arange(kids.start, kids.stop) - h.first_child[par]
            row[kids.start:kids.stop] = row[par] + (idx // m) * span
            col[kids.start:kids.stop] = col[par] + (idx % m) * span
        cell_leaf = np.empty((side, side), dtype=np.int64)
        leaves = np.arange(h.leaves.start, h.n_nodes)
        cell_leaf[row[leaves], col[leaves]] = leaves
        return cls(h, side, cell_leaf)

    def adjacency(self) -> np.ndarray:
        """Rook-adjacency edges between leaves, as an (m, 2) array."""
        g = self.cell_leaf
        horiz = np.stack([g[:, :-1].ravel(), g[:, 1:].ravel()], axis=1)
        vert = np.stack([g[:-1, :].ravel(), g[1:, :].ravel()], axis=1)
        return np.vstack([horiz, vert])


def square_side(h: Hierarchy, k: int) -> int:
    cells = h.n_leaves / k
    s = math.isqrt(int(cells))
    if cells != int(cells) or s * s != int(cells):
        raise InputError(f"{h.n_leaves} leaves / k={k} is not a perfect square")
    return s


def square(grid: PlaneGrid, k: int, rng: np.random.Generator) -> District:
    """Uniformly placed s x s square of blocks, s = sqrt(|leaves| / k)."""
    h = grid.hierarchy
    s = square_side(h, k)
    i, j = rng.integers(0, grid.side - s + 1, size=2)
    return square_at(grid, s, int(i), int(j))


def square_at(grid: PlaneGrid, s: int, i: int, j: int) -> District:
    h = grid.hierarchy
    mask = np.zeros(h.n_leaves, dtype=bool)
    mask[grid.cell_leaf[i:i + s, j:j + s].ravel() - h.leaves.start] = True
    return district_from_mask(h, mask)


def disconn(
    units: Sequence[tuple[int, float]],
    target: float,
    rng: np.random.Generator,
    tolerance: float = 0.02,
) -> list[int]:
    """Whole units in random order until the population lands in target*(1 +/- tol).

    Units that would push the total above the upper bound are skipped.
    Raises GenerationFailure if the units run out first.
    """
    total = sum(p for _, p in units)
    if total < target:
        raise InputError(f"units hold {total} people, less than the target {target}")
    lower, upper = target * (1 - tolerance), target * (1 + tolerance)
    picked: list[int] = []
    pop = 0.0
    for i in rng.permutation(len(units)):
        uid, p = units[i]
        if pop + p > upper:
            continue
        picked.append(uid)
        pop += p
        if pop >= lower:
            return picked
    raise GenerationFailure(
        f"no random fill reached [{lower:.1f}, {upper:.1f}] (stopped at {pop:.1f})"
    )


def expand_units(h: Hierarchy, units: Iterable[int]) -> District:
    """District made of all leaves under the given units."""
    lo, size = _leaf_ranges(h)
    return district_weights(h, (x for u in units for x in range(lo[u], lo[u] + size[u])))


def frag_bounds(branching: Sequence[int], k: int) -> tuple[float, float]:
    """Upper bound on E Frag(Greedy) and lower bound on E Frag(Square).

    L is the first level at which the product n_1...n_L reaches k.
    """
    n = [int(x) for x in branching]
    if k < 2:
        raise InputError(f"bounds need k >= 2, got {k}")
    if not n or math.prod(n) < k:
        raise InputError(f"branching {n} has fewer than k={k} leaves")
    prod, big_l = 1, 0
    for lv, m in enumerate(n, start=1):
        prod *= m
        if prod >= k:
            big_l = lv
            break
    upper = (k - 1) / k ** 2 * sum(n[:big_l]) + 0.25 * sum(n[big_l:])
    lower = (2.0 / 3.0) * (math.sqrt(math.prod(n)) / math.sqrt(k) - 5.5) * math.sqrt(n[-1])
    return upper, lower


# ReCom ---------------------------------------------------------------------


@dataclass(frozen=True)
class Graph:
    n: int
    edges: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InputError("edge endpoint outside the node range")
        e = np.unique(np.sort(e[e[:, 0] != e[:, 1]], axis=1), axis=0)
        nbrs: list[list[int]] = [[] for _ in range(n)]
        for a, b in e:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return cls(n, e, tuple(tuple(x) for x in nbrs))


def grid_graph(rows: int, cols: int) -> Graph:
    ids = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1)
    vert = np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1)
    return Graph.from_edges(rows * cols, np.vstack([horiz, vert]))


def contract_adjacency(edges, unit_of) -> set[tuple[int, int]]:
    """Unit-level adjacency: units are adjacent if any of their leaves are."""
    out = set()
    for a, b in edges:
        ua, ub = unit_of[a], unit_of[b]
        if ua != ub:
            out.add((min(ua, ub), max(ua, ub)))
    return out


@dataclass(frozen=True)
class Partition:
    """Assignment of every graph node to a district 0..k-1."""

    graph: Graph
    assignment: np.ndarray
    populations: np.ndarray
    k: int

    @property
    def ideal(self) -> float:
        return float(self.populations.sum()) / self.k

    def district_populations(self) -> np.ndarray:
        return np.bincount(self.assignment, weights=self.populations, minlength=self.k)

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        e = self.graph.edges
        a, b = self.assignment[e[:, 0]], self.assignment[e[:, 1]]
        cut = a != b
        pairs = np.unique(np.sort(np.stack([a[cut], b[cut]], axis=1), axis=1), axis=0)
        return [(int(x), int(y)) for x, y in pairs]


def _component_sizes_ok(pop: float, ideal: float, tol: float) -> bool:
    return ideal * (1 - tol) - 1e-9 <= pop <= ideal * (1 + tol) + 1e-9


def _random_spanning_tree(nodes: np.ndarray, graph: Graph, member: np.ndarray,
                          rng: np.random.Generator) -> list[list[int]]:
    """Minimum spanning tree under i.i.d. uniform edge weights (Kruskal).

    Returns tree adjacency lists indexed like ``nodes``.
    """
    local = {int(v): i for i, v in enumerate(nodes)}
    e = graph.edges
    inside = member[e[:, 0]] & member[e[:, 1]]
    sub = e[inside]
    order = np.argsort(rng.random(len(sub)))
    parent = list(range(len(nodes)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree: list[list[int]] = [[] for _ in nodes]
    joined = 0
    for idx in order:
        a, b = local[int(sub[idx, 0])], local[int(sub[idx, 1])]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree[a].append(b)
            tree[b].append(a)
            joined += 1
            if joined == len(nodes) - 1:
                break
    if joined != len(nodes) - 1:
        raise GenerationFailure("merged region is not connected")
    return tree


def _balanced_cuts(tree: list[list[int]], pops: np.ndarray, ideal: float, tol: float,
                   parts: int = 2) -> tuple[list[int], list[int], np.ndarray]:
    """Tree nodes whose subtree is a valid district and leaves a valid remainder.

    ``parts`` is how many districts the whole tree must eventually hold.
    Returns (candidate roots, parent list, bfs order).
    """
    n = len(tree)
    order = [0]
    par = [-1] * n
    seen = [False] * n
    seen[0] = True
    for v in order:
        for w in tree[v]:
            if not seen[w]:
                seen[w] = True
                par[w] = v
                order.append(w)
    sub = pops.astype(float).copy()
    for v in reversed(order[1:]):
        sub[par[v]] += sub[v]
    total = sub[0]
    rest = parts - 1
    cands = [v for v in order[1:]
             if _component_sizes_ok(sub[v], ideal, tol)
             and _component_sizes_ok(total - sub[v], ideal * rest, tol)]
    return cands, par, np.asarray(order)


def _subtree(root: int, tree: list[list[int]], par: list[int]) -> list[int]:
    out = [root]
    for v in out:
        out.extend(w for w in tree[v] if w != par[v])
    return out


def seed_partition(graph: Graph, populations, k: int, tol: float,
                   rng: np.random.Generator, max_attempts: int = 1000) -> Partition:
    """Initial balanced connected partition by repeatedly carving a tree cut."""
    pops = np.asarray(populations, dtype=float)
    ideal = pops.sum() / k
    for _ in range(max_attempts):
        assign = np.full(graph.n, k - 1, dtype=np.int64)
        remaining = np.ones(graph.n, dtype=bool)
        ok = True
        for d in range(k - 1):
            nodes = np.flatnonzero(remaining)
            tree = _random_spanning_tree(nodes, graph, remaining, rng)
            cands, par, _ = _balanced_cuts(tree, pops[nodes], ideal, tol, parts=k - d)
            if not cands:
                ok = False
                break
            cut = cands[int(rng.integers(len(cands)))]
            carved = nodes[_subtree(cut, tree, par)]
            assign[carved] = d
            remaining[carved] = False
        if ok:
            return Partition(graph, assign, pops, k)
    raise GenerationFailure(f"no balanced seed partition after {max_attempts} attempts")


def recom_step(p: Partition, rng: np.random.Generator, tol: float,
               max_trees: int = 100) -> Partition:
    """Merge a random adjacent district pair and re-split it along a balanced tree cut.

    Returns ``p`` itself when no balanced cut turns up within ``max_trees``
    spanning trees (a rejected step).
    """
    pairs = p.adjacent_pairs()
    if not pairs:
        return p
    a, b = pairs[int(rng.integers(len(pairs)))]
    member = (p.assignment == a) | (p.assignment == b)
    nodes = np.flatnonzero(member)
    ideal = p.ideal
    for _ in range(max_trees):
        tree = _random_spanning_tree(nodes, p.graph, member, rng)
        cands, par, _ = _balanced_cuts(tree, p.populations[nodes], ideal, tol)
        if cands:
            cut = cands[int(rng.integers(len(cands)))]
            assign = p.assignment.copy()
            assign[nodes] = b
            assign[nodes[_subtree(cut, tree, par)]] = a
            return Partition(p.graph, assign, p.populations, p.k)
    return p


def run_recom(p: Partition, steps: int, rng: np.random.Generator, tol: float,
              max_trees: int = 100):
    """Yield the partition after every step (accepted or not)."""
    for _ in range(steps):
        p = recom_step(p, rng, tol, max_trees)
        yield p


def is_connected(graph: Graph, nodes: Iterable[int]) -> bool:
    nodes = set(int(v) for v in nodes)
    if not nodes:
        return True
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in graph.neighbors[v]:
            if w in nodes and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(nodes)


def partition_violations(p: Partition, tol: float) -> list[str]:
    """Coverage, connectivity and population-balance problems of ``p`` (empty if valid)."""
    problems = []
    if p.assignment.shape != (p.graph.n,):
        problems.append("assignment does not cover every node")
    if np.any((p.assignment < 0) | (p.assignment >= p.k)):
        problems.append("assignment outside 0..k-1")
    pops = p.district_populations()
    for d in range(p.k):
        members = np.flatnonzero(p.assignment == d)
        if members.size == 0:
            problems.append(f"district {d} is empty")
            continue
        if not is_connected(p.graph, members):
            problems.append(f"district {d} is disconnected")
        if not _component_sizes_ok(pops[d], p.ideal, tol):
            problems.append(f"district {d} population {pops[d]} outside tolerance")
    return problems

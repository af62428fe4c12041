"""Geographic hierarchies, per-type count tables, and district weights.

Nodes are dense integers in breadth-first order, so every level occupies a
contiguous id range and every node's children form a contiguous range in
construction order. Most level-wise operations below are therefore a single
``np.add.reduceat`` over a slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Hierarchy:
    """A rooted tree of uniform depth.

    Build with :meth:`from_level_counts` or :func:`build_homogeneous`; the
    raw fields are not validated.
    """

    parent: np.ndarray
    level: np.ndarray
    first_child: np.ndarray
    n_children: np.ndarray
    level_start: tuple[int, ...]
    labels: tuple[str, ...]

    @classmethod
    def from_level_counts(
        cls,
        child_counts: Sequence[Sequence[int]],
        labels: Sequence[str] | None = None,
    ) -> "Hierarchy":
        """Build from child counts listed level by level.

        ``child_counts[i]`` holds the number of children of each node on
        level ``i + 1``, in breadth-first order. The tree in which the root
        has children with 2, 4 and 2 children of their own is
        ``[[3], [2, 4, 2]]``.
        """
        if len(child_counts) == 0:
            parent = np.array([-1])
            level = np.array([1])
            return cls(parent, level, np.zeros(1, dtype=np.int64),
                       np.zeros(1, dtype=np.int64), (0, 1),
                       tuple(labels) if labels else ("root",))
        expected = 1
        for i, row in enumerate(child_counts):
            if len(row) != expected:
                raise InputError(
                    f"level {i + 1} has {expected} nodes but {len(row)} child counts were given"
                )
            if any(int(c) < 1 for c in row):
                raise InputError(
                    f"level {i + 1}: every non-leaf needs at least one child "
                    "(only uniform-depth trees are supported)"
                )
            expected = int(sum(int(c) for c in row))

        depth = len(child_counts) + 1
        level_sizes = [1] + [int(sum(int(c) for c in row)) for row in child_counts]
        starts = np.concatenate([[0], np.cumsum(level_sizes)]).astype(np.int64)
        n_nodes = int(starts[-1])

        n_children = np.zeros(n_nodes, dtype=np.int64)
        first_child = np.zeros(n_nodes, dtype=np.int64)
        parent = np.full(n_nodes, -1, dtype=np.int64)
        level = np.empty(n_nodes, dtype=np.int64)
        for lv in range(depth):
            level[starts[lv]:starts[lv + 1]] = lv + 1
        for lv, row in enumerate(child_counts):
            counts = np.asarray(row, dtype=np.int64)
            ids = np.arange(starts[lv], starts[lv + 1])
            n_children[ids] = counts
            first_child[ids] = starts[lv + 1] + np.concatenate([[0], np.cumsum(counts)[:-1]])
            parent[starts[lv + 1]:starts[lv + 2]] = np.repeat(ids, counts)
        # leaves point one past the end so that children(h) is empty
        leaf_ids = np.arange(starts[depth - 1], n_nodes)
        first_child[leaf_ids] = n_nodes

        if labels is None:
            labels = _default_labels(parent, first_child)
        elif len(labels) != n_nodes:
            raise InputError(f"expected {n_nodes} labels, got {len(labels)}")
        return cls(parent, level, first_child, n_children,
                   tuple(int(s) for s in starts), tuple(labels))

    @property
    def depth(self) -> int:
        return len(self.level_start) - 1

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    @property
    def root(self) -> int:
        return 0

    def level_nodes(self, lv: int) -> range:
        """Node ids on level ``lv`` (1-based)."""
        if not 1 <= lv <= self.depth:
            raise InputError(f"level {lv} outside 1..{self.depth}")
        return range(self.level_start[lv - 1], self.level_start[lv])

    @property
    def leaves(self) -> range:
        return self.level_nodes(self.depth)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def children(self, h: int) -> range:
        start = int(self.first_child[h])
        return range(start, start + int(self.n_children[h]))

    def is_leaf(self, h: int) -> bool:
        return int(self.level[h]) == self.depth

    @property
    def is_homogeneous(self) -> bool:
        for lv in range(1, self.depth):
            nc = self.n_children[self.level_start[lv - 1]:self.level_start[lv]]
            if np.any(nc != nc[0]):
                return False
        return True

    @property
    def branching(self) -> tuple[int, ...]:
        """(n_1, ..., n_{d-1}) for a homogeneous hierarchy."""
        if not self.is_homogeneous:
            raise InputError("hierarchy is not homogeneous")
        return tuple(int(self.n_children[self.level_start[lv - 1]])
                     for lv in range(1, self.depth))

    def leaf_sizes(self) -> np.ndarray:
        """Number of leaves descending from each node (a leaf counts itself)."""
        size = np.zeros(self.n_nodes, dtype=np.int64)
        size[self.level_start[-2]:] = 1
        return self.sum_up(size[:, None].astype(float))[:, 0].astype(np.int64)

    def sum_up(self, values: np.ndarray) -> np.ndarray:
        """Fill every internal row of ``values`` with the sum of its children.

        ``values`` is an (n_nodes, k) array; the leaf rows are read, the rest
        overwritten. Returns a new array.
        """
        out = np.array(values, dtype=float, copy=True)
        for lv in range(self.depth - 1, 0, -1):
            self._reduce_level(out, lv, mean=False)
        return out

    def mean_up(self, values: np.ndarray) -> np.ndarray:
        """Like :meth:`sum_up` but each internal row is the mean of its children."""
        out = np.array(values, dtype=float, copy=True)
        for lv in range(self.depth - 1, 0, -1):
            self._reduce_level(out, lv, mean=True)
        return out

    def _reduce_level(self, out: np.ndarray, lv: int, mean: bool) -> None:
        parents = self.level_nodes(lv)
        kids = self.level_nodes(lv + 1)
        offsets = self.first_child[parents.start:parents.stop] - kids.start
        sums = np.add.reduceat(out[kids.start:kids.stop], offsets, axis=0)
        if mean:
            sums = sums / self.n_children[parents.start:parents.stop][:, None]
        out[parents.start:parents.stop] = sums

    def path(self, h: int) -> str:
        parts = []
        while h >= 0:
            parts.append(self.labels[h])
            h = int(self.parent[h])
        return "/".join(reversed(parts))


def _default_labels(parent: np.ndarray, first_child: np.ndarray) -> tuple[str, ...]:
    labels = ["root"]
    for h in range(1, parent.shape[0]):
        labels.append(str(h - int(first_child[parent[h]])))
    return tuple(labels)


@dataclass(frozen=True)
class TypeSchema:
    types: tuple[str, ...]

    def __post_init__(self):
        if len(self.types) == 0:
            raise InputError("type schema must be nonempty")
        if len(set(self.types)) != len(self.types):
            raise InputError(f"duplicate type labels in {self.types}")

    def __len__(self) -> int:
        return len(self.types)

    def index(self, label: str) -> int:
        return self.types.index(label)


TOTAL = TypeSchema(("total",))


@dataclass(frozen=True)
class CountTable:
    """Counts per (node, type) as an (n_nodes, n_types) float array."""

    hierarchy: Hierarchy
    schema: TypeSchema
    values: np.ndarray
    consistent: bool = False

    def __post_init__(self):
        shape = (self.hierarchy.n_nodes, len(self.schema))
        if self.values.shape != shape:
            raise InputError(f"values shape {self.values.shape} does not match {shape}")

    @property
    def n_types(self) -> int:
        return len(self.schema)

    def column(self, t: int) -> "CountTable":
        """Single-type table holding type ``t`` only."""
        return CountTable(self.hierarchy, TypeSchema((self.schema.types[t],)),
                          self.values[:, [t]].copy(), self.consistent)

    def totals(self) -> "CountTable":
        """Single-attribute table of per-node totals over all types."""
        return CountTable(self.hierarchy, TOTAL,
                          self.values.sum(axis=1, keepdims=True), self.consistent)

    def leaf_values(self) -> np.ndarray:
        leaves = self.hierarchy.leaves
        return self.values[leaves.start:leaves.stop]


def aggregate(leaf_counts: CountTable) -> CountTable:
    """Recompute every internal count as the sum of its descendant leaves."""
    leaves = leaf_counts.hierarchy.leaves
    leaf_block = leaf_counts.values[leaves.start:leaves.stop]
    if np.isnan(leaf_block).any():
        h, t = np.argwhere(np.isnan(leaf_block))[0]
        raise InputError(
            f"missing value for leaf {leaves.start + int(h)} "
            f"type {leaf_counts.schema.types[int(t)]!r}"
        )
    values = leaf_counts.hierarchy.sum_up(np.nan_to_num(leaf_counts.values))
    return CountTable(leaf_counts.hierarchy, leaf_counts.schema, values, consistent=True)


def from_leaf_values(
    h: Hierarchy, leaf_values: np.ndarray, schema: TypeSchema = TOTAL
) -> CountTable:
    """Aggregate an (n_leaves, n_types) array (or n_leaves vector) into a table."""
    leaf_values = np.asarray(leaf_values, dtype=float)
    if leaf_values.ndim == 1:
        leaf_values = leaf_values[:, None]
    if leaf_values.shape != (h.n_leaves, len(schema)):
        raise InputError(
            f"leaf values shape {leaf_values.shape} != ({h.n_leaves}, {len(schema)})"
        )
    values = np.full((h.n_nodes, len(schema)), np.nan)
    values[h.leaves.start:] = leaf_values
    return aggregate(CountTable(h, schema, values))


def build_homogeneous(
    branching: Sequence[int],
    leaf_populations: float | Sequence[float] | np.ndarray = 1,
    schema: TypeSchema = TOTAL,
) -> tuple[Hierarchy, CountTable]:
    """Homogeneous hierarchy with n_l children per level-l node, plus counts.

    ``leaf_populations`` is a constant, one value per leaf, or an
    (n_leaves, n_types) array.
    """
    branching = [int(n) for n in branching]
    if any(n < 1 for n in branching):
        raise InputError(f"branching factors must be >= 1, got {branching}")
    rows = []
    width = 1
    for n in branching:
        rows.append([n] * width)
        width *= n
    h = Hierarchy.from_level_counts(rows)
    pops = np.asarray(leaf_populations, dtype=float)
    if pops.ndim == 0:
        pops = np.full((h.n_leaves, len(schema)), float(pops))
    elif pops.shape[0] != h.n_leaves:
        raise InputError(
            f"{pops.shape[0]} leaf populations given for {h.n_leaves} leaves"
        )
    return h, from_leaf_values(h, pops, schema)


@dataclass(frozen=True)
class Violation:
    node: int
    type_index: int
    value: float
    child_sum: float


def check_consistency(table: CountTable, tol: float = 1e-9) -> list[Violation]:
    """List every (parent, type) whose value differs from its children's sum.

    The comparison is relative: ``|value - sum| <= tol * max(1, |value|, |sum|)``.
    """
    h = table.hierarchy
    sums = h.sum_up(table.values)
    internal = slice(0, h.level_start[-2])
    got = table.values[internal]
    want = sums[internal]
    scale = np.maximum(1.0, np.maximum(np.abs(got), np.abs(want)))
    bad = np.argwhere(~(np.abs(got - want) <= tol * scale))
    return [Violation(int(n), int(t), float(got[n, t]), float(want[n, t])) for n, t in bad]


@dataclass(frozen=True)
class District:
    """A set of leaves with the induced node weights (mean of children).

    ``mask`` marks membership over the leaves in leaf order.
    """

    hierarchy: Hierarchy
    mask: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def leaves(self) -> frozenset[int]:
        start = self.hierarchy.leaves.start
        return frozenset(int(i) + start for i in np.flatnonzero(self.mask))

    @property
    def root_weight(self) -> float:
        return float(self.weights[0])

    def __len__(self) -> int:
        return int(self.mask.sum())


def district_weights(h: Hierarchy, leaves: Iterable[int]) -> District:
    ids = np.fromiter((int(x) for x in leaves), dtype=np.int64)
    first_leaf = h.leaves.start
    bad = ids[(ids < first_leaf) | (ids >= h.n_nodes)]
    if bad.size:
        raise InputError(f"node {int(bad[0])} is not a leaf of the hierarchy")
    mask = np.zeros(h.n_leaves, dtype=bool)
    mask[ids - first_leaf] = True
    return district_from_mask(h, mask)


def district_from_mask(h: Hierarchy, mask: np.ndarray) -> District:
    """District from a boolean vector over the leaves (in leaf order)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (h.n_leaves,):
        raise InputError(f"mask length {mask.shape} != {h.n_leaves} leaves")
    w = np.zeros(h.n_nodes)
    w[h.leaves.start:] = mask
    for lv in range(h.depth - 1, 0, -1):
        parents = h.level_nodes(lv)
        kids = h.level_nodes(lv + 1)
        offsets = h.first_child[parents.start:parents.stop] - kids.start
        w[parents.start:parents.stop] = (
            np.add.reduceat(w[kids.start:kids.stop], offsets)
            / h.n_children[parents.start:parents.stop]
        )
    return District(h, mask, w)

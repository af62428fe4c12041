"""Top-down least-squares post-processing to hierarchical consistency.

Each level's problem splits into one independent problem per family
(a parent and its children), because the only constraint linking children is
that they sum to their already-fixed parent. Unconstrained families have a
closed form; non-negative families are a Euclidean projection onto a scaled
simplex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .hierarchy import CountTable
from .mechanisms import BudgetAllocation, SeedLike, Workload, workload_noise

MODES = ("unconstrained", "nonneg", "nonneg-integer")


def project_children_unconstrained(parent_value: float, child_estimates) -> np.ndarray:
    """Closest vector to ``child_estimates`` (in L2) whose entries sum to ``parent_value``."""
    c = np.asarray(child_estimates, dtype=float)
    if c.size == 0:
        raise InputError("a family needs at least one child")
    return c + (parent_value - c.sum()) / c.size


def project_simplex(child_estimates, total: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = total} by sort-and-threshold."""
    v = np.asarray(child_estimates, dtype=float)
    if total < 0:
        raise InputError(f"simplex total must be non-negative, got {total}")
    if v.size == 0:
        raise InputError("a family needs at least one child")
    if total == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    # the first index always qualifies in exact arithmetic
    hits = np.nonzero(u - css / idx > 0)[0]
    rho = hits[-1] if hits.size else 0
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def integerize(values, total: int) -> np.ndarray:
    """Largest-remainder rounding of non-negative ``values`` to integers summing to ``total``.

    Ties in the fractional part go to the lower index.
    """
    v = np.asarray(values, dtype=float)
    if np.any(v < -1e-9):
        raise InputError(f"integerize needs non-negative values, got min {v.min()}")
    total = int(total)
    if abs(v.sum() - total) > 1e-6 * max(1.0, abs(total)):
        raise InputError(f"values sum to {v.sum()}, expected {total}")
    v = np.maximum(v, 0.0)
    base = np.floor(v + 1e-12).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        remainders = v - base
        order = np.lexsort((np.arange(v.size), -remainders))
        base[order[:short]] += 1
    elif short < 0:
        # only reachable through float slop; take from the smallest remainders
        remainders = v - base
        order = np.lexsort((-np.arange(v.size), remainders))
        order = [i for i in order if base[i] > 0]
        base[order[:-short]] -= 1
    return base


@dataclass(frozen=True)
class AdjustedTable(CountTable):
    mode: str = "unconstrained"


def topdown_sweep(noisy: CountTable, mode: str = "unconstrained") -> AdjustedTable:
    """Post-process noisy counts level by level, starting at the root.

    ``unconstrained`` keeps the root estimate and applies the closed-form
    family projection; ``nonneg`` clamps the root at zero and projects every
    family onto the simplex; ``nonneg-integer`` additionally rounds each
    family to integers that sum to the (already integer) parent.
    Types are processed independently.
    """
    if mode not in MODES:
        raise InputError(f"unknown post-processing mode {mode!r}; expected one of {MODES}")
    h = noisy.hierarchy
    if np.isnan(noisy.values).any():
        raise InputError("noisy table must cover every node")
    est = noisy.values
    out = np.empty_like(est)
    if mode == "unconstrained":
        out[0] = est[0]
        for lv in range(1, h.depth):
            parents = h.level_nodes(lv)
            kids = h.level_nodes(lv + 1)
            offsets = h.first_child[parents.start:parents.stop] - kids.start
            n = h.n_children[parents.start:parents.stop][:, None]
            sums = np.add.reduceat(est[kids.start:kids.stop], offsets, axis=0)
            shift = (out[parents.start:parents.stop] - sums) / n
            out[kids.start:kids.stop] = est[kids.start:kids.stop] + np.repeat(shift, n[:, 0], axis=0)
        return AdjustedTable(h, noisy.schema, out, True, mode)

    integer = mode == "nonneg-integer"
    out[0] = np.maximum(est[0], 0.0)
    if integer:
        out[0] = np.rint(out[0])
    for lv in range(1, h.depth):
        for p in h.level_nodes(lv):
            kids = h.children(p)
            for t in range(noisy.n_types):
                proj = project_simplex(est[kids.start:kids.stop, t], out[p, t])
                if integer:
                    proj = integerize(proj, int(out[p, t]))
                out[kids.start:kids.stop, t] = proj
    return AdjustedTable(h, noisy.schema, out, True, mode)


def reconcile_workload(bin_estimates: np.ndarray, workload: Workload) -> np.ndarray:
    """Per-type estimates minimizing the squared workload residuals at each node.

    ``bin_estimates`` is (n_nodes, n_bins) or a single (n_bins,) row. Solves
    the normal equations Q^T Q x = Q^T y for every node at once.
    """
    y = np.asarray(bin_estimates, dtype=float)
    single = y.ndim == 1
    if single:
        y = y[None, :]
    q = workload.query_matrix()
    if y.shape[1] != q.shape[0]:
        raise InputError(f"{y.shape[1]} bin estimates for a workload with {q.shape[0]} bins")
    gram = q.T @ q
    if np.linalg.matrix_rank(gram) < workload.n_types:
        raise ConfigurationError(
            "workload does not identify every type; include a detailed histogram"
        )
    x = np.linalg.solve(gram, q.T @ y.T).T
    return x[0] if single else x


def minitopdown(
    counts: CountTable,
    workload: Workload,
    alloc: BudgetAllocation,
    seed: SeedLike,
    mode: str = "nonneg-integer",
):
    """Workload geometric noising, per-node reconciliation, then a top-down sweep.

    Returns ``(AdjustedTable, NoiseLedger)``. Invariants and structural
    inequalities are not modelled.
    """
    bins, ledger = workload_noise(counts, workload, alloc, seed)
    per_type = reconcile_workload(bins, workload)
    noisy = CountTable(counts.hierarchy, counts.schema, per_type)
    return topdown_sweep(noisy, mode), ledger


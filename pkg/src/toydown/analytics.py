"""Closed-form ToyDown error expressions, optimal level budgets, fragmentation, L1 error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .hierarchy import CountTable, District, Hierarchy
from .mechanisms import BudgetAllocation, laplace_variance


@dataclass(frozen=True)
class VarianceReport:
    per_level_contributions: tuple[float, ...]
    total_variance: float


@dataclass(frozen=True)
class FragReport:
    score: float
    per_level_terms: dict[int, float]


def error_recursion(noise: np.ndarray, h: Hierarchy) -> np.ndarray:
    """Post-processing error at every node implied by the noise draws.

    The root error is its own noise; a child's error is its noise plus an
    equal share of the gap between the parent's error and the family's total
    noise. Only valid for the unconstrained sweep.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (h.n_nodes,):
        raise InputError(f"need one draw per node ({h.n_nodes}), got shape {noise.shape}")
    if np.isnan(noise).any():
        raise InputError("noise draws missing for some nodes")
    err = np.empty(h.n_nodes)
    err[0] = noise[0]
    for p in range(h.level_start[-2]):
        kids = h.children(p)
        family = noise[kids.start:kids.stop]
        err[kids.start:kids.stop] = family + (err[p] - family.sum()) / len(kids)
    return err


def district_error_from_noise(district: District, noise: np.ndarray) -> float:
    """E_D = w_1 L_1 + sum over non-root h of (w_h - w_parent(h)) L_h."""
    h = district.hierarchy
    w = district.weights
    diff = w[1:] - w[h.parent[1:]]
    return float(w[0] * noise[0] + diff @ noise[1:])


def _level_squared_jumps(district: District) -> dict[int, float]:
    h = district.hierarchy
    w = district.weights
    terms = {}
    for lv in range(2, h.depth + 1):
        nodes = h.level_nodes(lv)
        jumps = w[nodes.start:nodes.stop] - w[h.parent[nodes.start:nodes.stop]]
        terms[lv] = float(jumps @ jumps)
    return terms


def district_error_variance(district: District, alloc: BudgetAllocation) -> VarianceReport:
    h = district.hierarchy
    if alloc.depth != h.depth:
        raise InputError(f"allocation depth {alloc.depth} != hierarchy depth {h.depth}")
    contrib = [laplace_variance(alloc[1]) * district.root_weight ** 2]
    for lv, jump in _level_squared_jumps(district).items():
        contrib.append(laplace_variance(alloc[lv]) * jump)
    return VarianceReport(tuple(contrib), math.fsum(contrib))


def block_variance_coefficients(branching: Sequence[int]) -> np.ndarray:
    """a_l such that a single block's error variance is sum_l a_l / eps_l**2."""
    n = [int(x) for x in branching]
    unit = laplace_variance(1.0)
    below = [math.prod(n[i:]) for i in range(len(n) + 1)]  # n_i * ... * n_{d-1}
    coeffs = [unit / below[0] ** 2]
    for lv in range(2, len(n) + 2):
        m = n[lv - 2]
        coeffs.append(unit * m * (m - 1) / below[lv - 2] ** 2)
    return np.asarray(coeffs)


def block_variance_homogeneous(branching: Sequence[int], alloc: BudgetAllocation) -> float:
    coeffs = block_variance_coefficients(branching)
    if alloc.depth != coeffs.size:
        raise InputError(f"allocation depth {alloc.depth} != {coeffs.size} levels")
    return allocation_objective(coeffs, alloc.per_level)


def allocation_objective(coeffs, split) -> float:
    a = np.asarray(coeffs, dtype=float)
    x = np.asarray(split, dtype=float)
    return float(np.sum(a / x ** 2))


def optimal_split(coeffs, epsilon: float) -> np.ndarray:
    """Minimizer of sum a_l / x_l**2 subject to sum x_l = epsilon: x_l ∝ a_l**(1/3)."""
    a = np.asarray(coeffs, dtype=float)
    if epsilon <= 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    if np.any(a < 0) or not np.any(a > 0):
        raise InputError("coefficients must be non-negative and not all zero")
    roots = np.cbrt(a)
    return epsilon * roots / roots.sum()


def optimal_allocation(coeffs, epsilon: float) -> BudgetAllocation:
    split = optimal_split(coeffs, epsilon)
    if np.any(split == 0):
        zero = [i + 1 for i in np.flatnonzero(split == 0)]
        raise InputError(
            f"levels {zero} have zero coefficient and need no budget; drop them "
            "or use optimal_split"
        )
    return BudgetAllocation(tuple(split))


def fragmentation(district: District) -> FragReport:
    terms = _level_squared_jumps(district)
    return FragReport(math.fsum(terms.values()), terms)


def var_frag_identity(district: District, epsilon: float, d: int) -> float:
    """(8 d^2 / eps^2) (w_1^2 + Frag(D)): the district variance under an equal split."""
    frag = fragmentation(district).score
    return laplace_variance(epsilon / d) * (district.root_weight ** 2 + frag)


def l1_error(original: CountTable, noised: CountTable) -> float:
    """Leaf-level sum of |changes| over every bin, divided by twice the population."""
    if original.schema != noised.schema or original.values.shape != noised.values.shape:
        raise InputError("L1 error needs tables over the same schema and hierarchy")
    a = original.leaf_values()
    b = noised.leaf_values()
    pop = a.sum()
    if pop <= 0:
        raise InputError("original table has no population")
    return float(np.abs(a - b).sum() / (2.0 * pop))


def variance_curve(branching: Sequence[int], epsilon: float, step: float) -> np.ndarray:
    """Single-block variance over a grid of splits with every level strictly positive.

    Rows are (eps_1, ..., eps_d, variance). Grid points are multiples of
    ``step`` (times epsilon); the last level takes the remainder.
    """
    coeffs = block_variance_coefficients(branching)
    d = coeffs.size
    m = int(round(1.0 / step))
    if d == 1:
        return np.array([[epsilon, allocation_objective(coeffs, [epsilon])]])
    grids = np.meshgrid(*[np.arange(1, m) for _ in range(d - 1)], indexing="ij")
    head = np.stack([g.ravel() for g in grids], axis=1)
    last = m - head.sum(axis=1)
    keep = last >= 1
    split = np.column_stack([head[keep], last[keep]]) * (epsilon / m)
    var = (coeffs / split ** 2).sum(axis=1)
    return np.column_stack([split, var])

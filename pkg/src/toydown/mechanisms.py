"""Noise primitives and the noising stages of ToyDown and MiniTopDown.

Randomness contract: every noised column (a type for ToyDown, a workload bin
for MiniTopDown) gets its own generator derived from ``(seed, *replicate_key,
column)`` through :class:`numpy.random.SeedSequence`, and draws one value per
node in node-id order. A draw therefore depends only on the seed, the
replicate, the column and the node, never on iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError, InputError
from .hierarchy import CountTable, Hierarchy, TOTAL

# Bounded DP: moving one person between types changes a histogram by 2.
SENSITIVITY = 2.0

SeedLike = Union[int, np.random.SeedSequence]


def laplace_variance(epsilon: float) -> float:
    """Variance of Lap(SENSITIVITY / epsilon), i.e. 8 / epsilon**2."""
    return 2.0 * (SENSITIVITY / epsilon) ** 2


def as_seed_sequence(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child seed sequence for ``key`` under ``seed`` (keys are appended)."""
    if isinstance(seed, np.random.SeedSequence):
        base_key = tuple(seed.spawn_key)
        entropy = seed.entropy
    else:
        base_key = ()
        entropy = int(seed)
    return np.random.SeedSequence(entropy, spawn_key=base_key + tuple(int(k) for k in key))


def stream(seed: SeedLike, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(as_seed_sequence(seed, *key)))


def open_uniform(rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniforms on the open interval (0, 1) from 53 random bits."""
    k = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (k + 0.5) / float(1 << 53)


def laplace_inverse_cdf(u, b: float):
    u = np.asarray(u, dtype=float)
    c = u - 0.5
    return -b * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def sample_laplace(b: float, rng: np.random.Generator, size=None):
    """Mean-zero Laplace draws with scale ``b`` (variance 2 b^2)."""
    if not b > 0:
        raise InputError(f"Laplace scale must be positive, got {b}")
    out = laplace_inverse_cdf(open_uniform(rng, size), b)
    return float(out) if size is None else out


def sample_two_sided_geometric(beta: float, rng: np.random.Generator, size=None):
    """Integer draws with Pr[k] = (1-beta)/(1+beta) * beta**|k|.

    Sampled as the difference of two one-sided geometric variables.
    """
    if not 0 < beta < 1:
        raise InputError(f"geometric beta must lie in (0, 1), got {beta}")
    p = 1.0 - beta
    out = rng.geometric(p, size=size) - rng.geometric(p, size=size)
    return int(out) if size is None else out.astype(np.int64)


def geometric_variance(beta: float) -> float:
    return 2.0 * beta / (1.0 - beta) ** 2


@dataclass(frozen=True)
class BudgetAllocation:
    per_level: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(e) for e in self.per_level)
        object.__setattr__(self, "per_level", levels)
        if len(levels) == 0:
            raise InputError("allocation needs at least one level")
        if not all(e > 0 and math.isfinite(e) for e in levels):
            raise InputError(f"every level budget must be positive and finite: {levels}")

    @classmethod
    def equal(cls, epsilon: float, depth: int) -> "BudgetAllocation":
        return cls((epsilon / depth,) * depth)

    @property
    def total(self) -> float:
        return math.fsum(self.per_level)

    @property
    def depth(self) -> int:
        return len(self.per_level)

    def __getitem__(self, level: int) -> float:
        """Budget of a 1-based level."""
        return self.per_level[level - 1]

    def node_budgets(self, h: Hierarchy) -> np.ndarray:
        if self.depth != h.depth:
            raise InputError(
                f"allocation has {self.depth} levels but the hierarchy has depth {h.depth}"
            )
        return np.asarray(self.per_level)[h.level - 1]


@dataclass(frozen=True)
class Histogram:
    name: str
    bins: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class Workload:
    """Budget-weighted histograms, each a partition of the type indices into bins."""

    histograms: tuple[Histogram, ...]
    shares: tuple[float, ...]
    n_types: int

    def __post_init__(self):
        if len(self.histograms) == 0:
            raise InputError("workload must contain at least one histogram")
        if len(self.shares) != len(self.histograms):
            raise InputError("one share per histogram is required")
        if any(not 0 <= s <= 1 for s in self.shares):
            raise InputError(f"shares must lie in [0, 1]: {self.shares}")
        if abs(math.fsum(self.shares) - 1.0) > 1e-12:
            raise InputError(f"shares must sum to 1, got {math.fsum(self.shares)}")
        universe = list(range(self.n_types))
        for hist in self.histograms:
            covered = sorted(t for b in hist.bins for t in b)
            if covered != universe:
                raise InputError(
                    f"histogram {hist.name!r} does not partition the {self.n_types} types"
                )

    @classmethod
    def from_bins(cls, n_types: int, by_name: dict[str, tuple[float, Sequence[Sequence[int]]]]):
        """``by_name`` maps name -> (share, bins)."""
        hists = tuple(Histogram(name, tuple(tuple(b) for b in bins))
                      for name, (_, bins) in by_name.items())
        shares = tuple(float(share) for share, _ in by_name.values())
        return cls(hists, shares, n_types)

    @classmethod
    def detailed(cls, n_types: int) -> "Workload":
        return cls((detailed_histogram(n_types),), (1.0,), n_types)

    @property
    def bin_shares(self) -> np.ndarray:
        """Share B(Q) for every bin, in bin order."""
        return np.concatenate([[s] * len(hq.bins) for hq, s in zip(self.histograms, self.shares)])

    @property
    def bin_labels(self) -> list[str]:
        return [f"{hq.name}[{i}]" for hq in self.histograms for i in range(len(hq.bins))]

    def query_matrix(self) -> np.ndarray:
        """(n_bins, n_types) 0/1 matrix; row q sums the types in bin q."""
        rows = []
        for hq in self.histograms:
            for b in hq.bins:
                row = np.zeros(self.n_types)
                row[list(b)] = 1.0
                rows.append(row)
        return np.vstack(rows)


def detailed_histogram(n_types: int) -> Histogram:
    return Histogram("detailed", tuple((t,) for t in range(n_types)))


def total_histogram(n_types: int) -> Histogram:
    return Histogram("total", (tuple(range(n_types)),))


@dataclass
class NoiseLedger:
    """Every noise value added in one noising run.

    ``draws[h, c]`` is the noise on node ``h``, column ``c``;
    ``budget_by_level[l-1]`` is the budget consumed by level ``l`` summed
    over the histograms noised there.
    """

    draws: np.ndarray
    columns: tuple[str, ...]
    seed: tuple
    budget_by_level: tuple[float, ...] = field(default=())

    def column(self, c: int) -> np.ndarray:
        return self.draws[:, c]


def _seed_echo(seed: SeedLike) -> tuple:
    if isinstance(seed, np.random.SeedSequence):
        return (seed.entropy, *seed.spawn_key)
    return (int(seed),)


def toydown_noise(
    counts: CountTable,
    alloc: BudgetAllocation,
    seed: SeedLike,
    multi: bool = True,
    type_streams: Sequence[int] | None = None,
) -> tuple[CountTable, NoiseLedger]:
    """Add Lap(2 / eps_level) to every count.

    With ``multi=False`` only the per-node totals are noised and the result
    is a single-attribute table. ``type_streams`` overrides which stream id
    each column draws from (defaults to the column index); passing ``[t]``
    for a single-type table reproduces column ``t`` of a multi-attribute run.
    """
    h = counts.hierarchy
    scales = SENSITIVITY / alloc.node_budgets(h)
    table = counts if multi else counts.totals()
    n_cols = table.n_types
    if type_streams is None:
        type_streams = range(n_cols)
    if len(type_streams) != n_cols:
        raise InputError(f"{len(type_streams)} stream ids for {n_cols} columns")
    draws = np.empty((h.n_nodes, n_cols))
    for c, sid in enumerate(type_streams):
        u = open_uniform(stream(seed, sid), h.n_nodes)
        draws[:, c] = laplace_inverse_cdf(u, 1.0) * scales
    noisy = CountTable(h, table.schema, table.values + draws, consistent=False)
    ledger = NoiseLedger(draws, table.schema.types, _seed_echo(seed), alloc.per_level)
    return noisy, ledger


def workload_noise(
    counts: CountTable,
    workload: Workload,
    alloc: BudgetAllocation,
    seed: SeedLike,
) -> tuple[np.ndarray, NoiseLedger]:
    """Geometric mechanism on every (node, histogram bin).

    Returns the (n_nodes, n_bins) noisy bin estimates and the ledger. Bin
    ``q`` at node ``h`` uses beta = exp(-B(Q) * eps_level(h) / 2).
    """
    if workload.n_types != counts.n_types:
        raise ConfigurationError(
            f"workload covers {workload.n_types} types, table has {counts.n_types}"
        )
    h = counts.hierarchy
    node_eps = alloc.node_budgets(h)
    exact = counts.values @ workload.query_matrix().T
    shares = workload.bin_shares
    draws = np.zeros_like(exact)
    for q, share in enumerate(shares):
        if share == 0:
            raise ConfigurationError(f"bin {workload.bin_labels[q]} has zero budget share")
        p = 1.0 - np.exp(-share * node_eps / SENSITIVITY)
        rng = stream(seed, q)
        draws[:, q] = rng.geometric(p) - rng.geometric(p)
    # each level spends sum over histograms of B(Q) * eps_l = eps_l
    spent = tuple(math.fsum(s * e for s in workload.shares) for e in alloc.per_level)
    ledger = NoiseLedger(draws, tuple(workload.bin_labels), _seed_echo(seed), spent)
    return exact + draws, ledger


def empty_ledger(h: Hierarchy, columns: Sequence[str] = TOTAL.types) -> NoiseLedger:
    return NoiseLedger(np.zeros((h.n_nodes, len(columns))), tuple(columns), (0,))

"""Ecological regression on noised precinct demographics.

A fit regresses candidate vote share (y) on the group's share of voting-age
population (x) across precincts; the line's values at x=1 and x=0 estimate
support within the group and within its complement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import FitError, InputError
from .hierarchy import CountTable, Hierarchy, TypeSchema
from .mechanisms import BudgetAllocation, SeedLike, as_seed_sequence, stream, toydown_noise
from .postprocess import topdown_sweep

log = logging.getLogger(__name__)

MODES = ("all", "filtered", "weighted")
DEFAULT_MIN_VOTES = 10
ER_SCHEMA = TypeSchema(("group", "other"))


@dataclass(frozen=True)
class PrecinctRecord:
    precinct_id: str
    group_vap: float
    other_vap: float
    votes_cast: int
    candidate_votes: int

    def __post_init__(self):
        if self.votes_cast < 0 or not 0 <= self.candidate_votes <= self.votes_cast:
            raise InputError(
                f"precinct {self.precinct_id}: need 0 <= candidate_votes <= votes_cast"
            )
        if self.group_vap < 0 or self.other_vap < 0:
            raise InputError(f"precinct {self.precinct_id}: negative VAP")

    @property
    def total_vap(self) -> float:
        return self.group_vap + self.other_vap

    @property
    def x(self) -> float:
        return self.group_vap / self.total_vap if self.total_vap > 0 else 0.0

    @property
    def y(self) -> float:
        # a precinct with no votes plots at y = 0
        return self.candidate_votes / self.votes_cast if self.votes_cast else 0.0


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    n_points: int
    mode: str = "all"

    @property
    def support_group(self) -> float:
        return self.intercept + self.slope

    @property
    def support_complement(self) -> float:
        return self.intercept


def weighted_line(x, y, w=None) -> tuple[float, float]:
    """(slope, intercept) minimizing sum w (y - b0 - b1 x)^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise InputError("regression weights must be non-negative")
    pos = w > 0
    if pos.sum() < 2:
        raise FitError("need at least two points with positive weight")
    sw = w.sum()
    xm = (w @ x) / sw
    ym = (w @ y) / sw
    sxx = w @ (x - xm) ** 2
    if sxx <= 1e-15 * max(1.0, sw):
        raise FitError("all weighted x values are equal")
    slope = (w @ ((x - xm) * (y - ym))) / sxx
    return float(slope), float(ym - slope * xm)


def fit_ols(records: Sequence[PrecinctRecord], weights=None, mode: str = "all") -> RegressionResult:
    x = [r.x for r in records]
    y = [r.y for r in records]
    slope, intercept = weighted_line(x, y, weights)
    return RegressionResult(slope, intercept, len(records), mode)


def filter_precincts(records: Sequence[PrecinctRecord],
                     min_votes: int = DEFAULT_MIN_VOTES) -> list[PrecinctRecord]:
    return [r for r in records if r.votes_cast >= min_votes]


def fit_mode(x, y, votes, mode: str, min_votes: int = DEFAULT_MIN_VOTES) -> RegressionResult:
    """Fit arrays under one of the three precinct treatments."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    votes = np.asarray(votes, dtype=float)
    if mode == "all":
        return RegressionResult(*weighted_line(x, y), x.size, mode)
    if mode == "filtered":
        keep = votes >= min_votes
        return RegressionResult(*weighted_line(x[keep], y[keep]), int(keep.sum()), mode)
    if mode == "weighted":
        return RegressionResult(*weighted_line(x, y, votes), x.size, mode)
    raise InputError(f"unknown ER mode {mode!r}; expected one of {MODES}")


def gaussian_sigma(e_avg: float, b: int, c: int) -> float:
    """Per-entry Gaussian sd whose expected L1 error over b*c entries equals ``e_avg``.

    Uses E|N(0, s^2)| = s * sqrt(2/pi).
    """
    if b * c <= 0:
        raise InputError("need b * c > 0")
    if e_avg < 0:
        raise InputError("average L1 error must be non-negative")
    return e_avg * math.sqrt(math.pi) / (b * c * math.sqrt(2.0))


@dataclass(frozen=True)
class ToyDownNoiser:
    """ToyDown on a county -> precinct hierarchy, both VAP types noised."""

    alloc: BudgetAllocation
    postprocess: str = "unconstrained"

    def __call__(self, counts: np.ndarray, seed) -> np.ndarray:
        n = counts.shape[0]
        h = Hierarchy.from_level_counts([[n]])
        values = np.vstack([counts.sum(axis=0, keepdims=True), counts])
        table = CountTable(h, ER_SCHEMA, values, consistent=True)
        noisy, _ = toydown_noise(table, self.alloc, seed)
        return topdown_sweep(noisy, self.postprocess).values[1:]


@dataclass(frozen=True)
class GaussianNoiser:
    sigma: float

    def __call__(self, counts: np.ndarray, seed) -> np.ndarray:
        if self.sigma == 0:
            return counts.astype(float)
        return counts + stream(seed, 0).normal(0.0, self.sigma, size=counts.shape)


@dataclass(frozen=True)
class ZeroNoiser:
    def __call__(self, counts: np.ndarray, seed) -> np.ndarray:
        return counts.astype(float)


Noiser = Union[ToyDownNoiser, GaussianNoiser, ZeroNoiser]


@dataclass
class ERSummary:
    mode: str
    estimates: list[tuple[int, float, float]] = field(default_factory=list)
    failures: list[int] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    l1_errors: list[float] = field(default_factory=list)
    scatter: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def group(self) -> np.ndarray:
        return np.array([g for _, g, _ in self.estimates])

    @property
    def complement(self) -> np.ndarray:
        return np.array([c for _, _, c in self.estimates])

    def mean(self) -> tuple[float, float]:
        return float(self.group.mean()), float(self.complement.mean())

    def variance(self) -> tuple[float, float]:
        """Empirical variance over replicates (ddof=1; 0 for a single replicate)."""
        if len(self.estimates) < 2:
            return 0.0, 0.0
        return float(self.group.var(ddof=1)), float(self.complement.var(ddof=1))


def format_variance_1e8(v: float) -> str:
    """Variance in units of 1e-8, two significant digits."""
    scaled = v / 1e-8
    if scaled == 0:
        return "0"
    return f"{float(f'{scaled:.2g}'):g}"


def noisy_er_experiment(
    records: Sequence[PrecinctRecord],
    noiser: Noiser,
    mode: str,
    replicates: int,
    seed: SeedLike,
    min_votes: int = DEFAULT_MIN_VOTES,
    keep_scatter: bool = False,
) -> ERSummary:
    """Noise the VAP counts ``replicates`` times and refit under ``mode``.

    Votes are never noised. A precinct whose noised total VAP is not
    positive is dropped from that replicate's fit.
    """
    if replicates < 1:
        raise InputError(f"replicates must be >= 1, got {replicates}")
    if mode not in MODES:
        raise InputError(f"unknown ER mode {mode!r}; expected one of {MODES}")
    counts = np.array([[r.group_vap, r.other_vap] for r in records], dtype=float)
    y = np.array([r.y for r in records])
    votes = np.array([r.votes_cast for r in records], dtype=float)
    summary = ERSummary(mode)
    for rep in range(replicates):
        noisy = noiser(counts, as_seed_sequence(seed, rep))
        summary.l1_errors.append(float(np.abs(noisy - counts).sum()))
        total = noisy.sum(axis=1)
        ok = total > 0
        dropped = int((~ok).sum())
        summary.dropped.append(dropped)
        if dropped:
            log.info("replicate %d: dropped %d precincts with non-positive noised VAP", rep, dropped)
        x = noisy[ok, 0] / total[ok]
        if keep_scatter:
            summary.scatter.extend((rep, float(a), float(b)) for a, b in zip(x, y[ok]))
        try:
            fit = fit_mode(x, y[ok], votes[ok], mode, min_votes)
        except FitError as exc:
            log.warning("replicate %d: fit failed (%s)", rep, exc)
            summary.failures.append(rep)
            continue
        summary.estimates.append((rep, fit.support_group, fit.support_complement))
    return summary


def synthetic_county(
    n_precincts: int = 800,
    group_support: float = 0.87,
    complement_support: float = 0.48,
    tiny_fraction: float = 0.25,
    seed: int = 0,
) -> list[PrecinctRecord]:
    """Polarized county: votes drawn from the planted per-group support rates.

    Regular precincts hold 600-3000 voting-age residents with 10-40% turnout;
    the ``tiny_fraction`` share holds 100-400 residents and fewer than 10 votes
    (a fifth of those with zero votes).
    """
    rng = np.random.default_rng(seed)
    n_tiny = int(round(n_precincts * tiny_fraction))
    records = []
    for i in range(n_precincts):
        tiny = i >= n_precincts - n_tiny
        share = rng.beta(0.8, 1.2)
        if tiny:
            vap = int(rng.integers(100, 401))
            votes = 0 if rng.random() < 0.2 else int(rng.integers(1, 10))
        else:
            vap = int(rng.integers(600, 3001))
            votes = max(10, int(vap * rng.uniform(0.1, 0.4)))
        group_vap = int(rng.binomial(vap, share))
        other_vap = vap - group_vap
        frac = group_vap / vap
        # voters drawn in proportion to the precinct's VAP mix
        group_voters = int(rng.binomial(votes, frac))
        cand = int(rng.binomial(group_voters, group_support)
                   + rng.binomial(votes - group_voters, complement_support))
        records.append(PrecinctRecord(f"P{i:04d}", group_vap, other_vap, votes, cand))
    order = rng.permutation(n_precincts)
    return [records[i] for i in order]

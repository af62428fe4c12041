"""Experiment configuration and the named budget splits."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError
from .mechanisms import BudgetAllocation

# Shares of the sub-national budget for (state, county, tract, block group, block).
# Exact fractions; rounded to three decimals they read 0.083, 0.167 and so on.
SPLITS: dict[str, tuple[Fraction, ...]] = {
    "equal": (Fraction(1, 5),) * 5,
    "state-heavy": (Fraction(1, 2), Fraction(1, 4), Fraction(1, 12), Fraction(1, 12), Fraction(1, 12)),
    "tract-heavy": (Fraction(1, 12), Fraction(1, 6), Fraction(1, 2), Fraction(1, 6), Fraction(1, 12)),
    "BG-heavy": (Fraction(1, 12), Fraction(1, 12), Fraction(1, 6), Fraction(1, 2), Fraction(1, 6)),
    "block-heavy": (Fraction(1, 12), Fraction(1, 12), Fraction(1, 12), Fraction(1, 4), Fraction(1, 2)),
}
DEFAULT_NATION_BUDGET = 9.0

NOISE_ALGORITHMS = ("toydown", "toydown-single", "toydown-nonneg", "minitopdown", "none")
DISTRICT_METHODS = ("none", "greedy", "square", "disconn", "recom")


def resolve_split(split, epsilon: float, depth: int,
                  nation_budget: float = DEFAULT_NATION_BUDGET) -> BudgetAllocation:
    """Turn a split name or explicit vector into a per-level allocation.

    Named splits cover five sub-national levels: a depth-5 hierarchy gets them
    as is, a depth-6 hierarchy gets ``nation_budget`` on top. ``equal`` also
    works at any other depth (epsilon / depth per level).
    """
    if isinstance(split, str):
        if split not in SPLITS:
            raise ConfigurationError(f"unknown split {split!r}; choose from {sorted(SPLITS)}")
        shares = [float(s) * epsilon for s in SPLITS[split]]
        if depth == 5:
            return BudgetAllocation(tuple(shares))
        if depth == 6:
            return BudgetAllocation((nation_budget, *shares))
        if split == "equal":
            return BudgetAllocation.equal(epsilon, depth)
        raise ConfigurationError(
            f"split {split!r} is defined for 5 sub-national levels; hierarchy depth is {depth}"
        )
    vec = [float(x) for x in split]
    if len(vec) != depth:
        raise ConfigurationError(f"split has {len(vec)} levels, hierarchy depth is {depth}")
    if any(x <= 0 for x in vec):
        raise ConfigurationError(f"explicit split entries must be positive: {vec}")
    if abs(math.fsum(vec) - epsilon) > 1e-9 * max(1.0, epsilon):
        raise ConfigurationError(f"explicit split sums to {math.fsum(vec)}, expected {epsilon}")
    return BudgetAllocation(tuple(vec))


@dataclass
class DistrictConfig:
    method: str = "none"
    k: int = 4
    count: int = 10
    tolerance: float = 0.02
    unit_level: int | None = None
    recom_steps: int = 10
    adjacency_file: str | None = None


@dataclass
class ERConfig:
    election_file: str | None = None
    synthetic_precincts: int = 800
    synthetic_seed: int = 0
    noiser: str = "toydown"
    sigma: float | None = None
    modes: list[str] = field(default_factory=lambda: ["all", "filtered", "weighted"])
    min_votes: int = 10


@dataclass
class ExperimentConfig:
    branching: list[int] | None = None
    counts_file: str | None = None
    leaf_population: float = 1.0
    epsilon: float = 1.0
    split: Any = "equal"
    nation_budget: float = DEFAULT_NATION_BUDGET
    replicates: int = 16
    seed: int | None = None
    noise: str = "toydown"
    detailed_share: float = 0.1
    districts: DistrictConfig = field(default_factory=DistrictConfig)
    er: ERConfig | None = None
    variance_curve_step: float | None = None
    output_dir: str | None = None

    def validate(self) -> None:
        if (self.branching is None) == (self.counts_file is None):
            raise ConfigurationError("give exactly one of branching or counts_file")
        if self.replicates < 1:
            raise ConfigurationError(f"replicates must be >= 1, got {self.replicates}")
        if self.seed is None:
            raise ConfigurationError("a seed is required")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.noise not in NOISE_ALGORITHMS:
            raise ConfigurationError(f"noise must be one of {NOISE_ALGORITHMS}")
        if self.districts.method not in DISTRICT_METHODS:
            raise ConfigurationError(f"district method must be one of {DISTRICT_METHODS}")
        if not 0 < self.detailed_share <= 1:
            raise ConfigurationError("detailed_share must lie in (0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "districts" in data:
                data["districts"] = DistrictConfig(**(data["districts"] or {}))
            if data.get("er") is not None:
                data["er"] = ERConfig(**data["er"])
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        cfg = cls.from_dict(data)
        base = Path(path).parent

        def rel(p):
            return p if p is None or Path(p).is_absolute() else str(base / p)

        cfg.counts_file = rel(cfg.counts_file)
        cfg.districts.adjacency_file = rel(cfg.districts.adjacency_file)
        if cfg.er is not None:
            cfg.er.election_file = rel(cfg.er.election_file)
        return cfg

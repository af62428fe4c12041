"""Experiment orchestration: noising replicates, district metrics, ER, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as tio
from .analytics import district_error_variance, fragmentation, l1_error, variance_curve
from .config import ExperimentConfig, resolve_split
from .districts import (
    Graph,
    PlaneGrid,
    disconn,
    expand_units,
    greedy,
    run_recom,
    seed_partition,
    square,
)
from .er import (
    GaussianNoiser,
    ToyDownNoiser,
    format_variance_1e8,
    gaussian_sigma,
    noisy_er_experiment,
    synthetic_county,
)
from .errors import ConfigurationError, GenerationFailure, ToydownError
from .hierarchy import CountTable, District, build_homogeneous, district_from_mask
from .mechanisms import (
    Histogram,
    Workload,
    as_seed_sequence,
    detailed_histogram,
    stream,
    toydown_noise,
)
from .postprocess import minitopdown, topdown_sweep

log = logging.getLogger(__name__)

# sub-stream ids under the experiment seed
_NOISE, _DISTRICTS, _ER = 1, 2, 3

PLOT_KINDS = ("error-hist", "variance-curve", "er-scatter")


class ExperimentError(ToydownError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class RunReport:
    config: dict
    seed: int
    district_rows: list[dict] = field(default_factory=list)
    district_summary: list[dict] = field(default_factory=list)
    l1: list[dict] = field(default_factory=list)
    er: dict | None = None
    er_scatter: list[tuple[int, float, float]] | None = None
    variance_curve: list[list[float]] | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "district_summary": self.district_summary,
            "l1": self.l1,
            "er": self.er,
        }


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (ToydownError, ValueError, OSError, ArithmeticError)) \
                and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        return False


def _load_hierarchy(cfg: ExperimentConfig) -> CountTable:
    if cfg.counts_file:
        return tio.load_counts(cfg.counts_file)[1]
    return build_homogeneous(cfg.branching, cfg.leaf_population)[1]


def make_districts(cfg: ExperimentConfig, table: CountTable) -> list[tuple[str, District]]:
    dc = cfg.districts
    h = table.hierarchy
    rng = stream(cfg.seed, _DISTRICTS)
    pops = table.values.sum(axis=1)
    out: list[tuple[str, District]] = []
    if dc.method == "none":
        return out
    if dc.method == "greedy":
        return [(f"greedy-{i}", greedy(h, dc.k, rng)) for i in range(dc.count)]
    if dc.method == "square":
        grid = PlaneGrid.from_hierarchy(h)
        return [(f"square-{i}", square(grid, dc.k, rng)) for i in range(dc.count)]
    if dc.method == "disconn":
        lv = dc.unit_level or h.depth
        units = [(u, float(pops[u])) for u in h.level_nodes(lv)]
        target = float(pops[0]) / dc.k
        for i in range(dc.count):
            for _ in range(100):
                try:
                    picked = disconn(units, target, rng, dc.tolerance)
                    break
                except GenerationFailure:
                    continue
            else:
                raise GenerationFailure(f"disconn district {i} failed 100 times")
            out.append((f"disconn-{i}", expand_units(h, picked)))
        return out
    if dc.method == "recom":
        if dc.adjacency_file:
            edges = np.asarray(tio.load_adjacency(dc.adjacency_file, h)) - h.leaves.start
        else:
            edges = PlaneGrid.from_hierarchy(h).adjacency() - h.leaves.start
        graph = Graph.from_edges(h.n_leaves, edges)
        leaf_pops = pops[h.leaves.start:]
        part = seed_partition(graph, leaf_pops, dc.k, dc.tolerance, rng)
        chain = run_recom(part, dc.count * dc.recom_steps, rng, dc.tolerance)
        for step, part in enumerate(chain, start=1):
            if step % dc.recom_steps == 0:
                sample = step // dc.recom_steps - 1
                for d in range(dc.k):
                    out.append((f"recom-{sample}-{d}", district_from_mask(h, part.assignment == d)))
        return out
    raise ConfigurationError(f"unknown district method {dc.method!r}")


def noised_table(cfg: ExperimentConfig, table: CountTable, alloc, rep: int) -> CountTable:
    seed = as_seed_sequence(cfg.seed, _NOISE, rep)
    if cfg.noise == "none":
        return table
    if cfg.noise == "toydown":
        return topdown_sweep(toydown_noise(table, alloc, seed)[0], "unconstrained")
    if cfg.noise == "toydown-single":
        return topdown_sweep(toydown_noise(table, alloc, seed, multi=False)[0], "unconstrained")
    if cfg.noise == "toydown-nonneg":
        return topdown_sweep(toydown_noise(table, alloc, seed)[0], "nonneg")
    if cfg.noise == "minitopdown":
        return minitopdown(table, _workload(cfg, table.n_types), alloc, seed)[0]
    raise ConfigurationError(f"unknown noise algorithm {cfg.noise!r}")


def _workload(cfg: ExperimentConfig, n_types: int) -> Workload:
    if cfg.detailed_share >= 1 or n_types == 1:
        return Workload.detailed(n_types)
    total = Histogram("total", (tuple(range(n_types)),))
    return Workload((detailed_histogram(n_types), total),
                    (cfg.detailed_share, 1.0 - cfg.detailed_share), n_types)


def _predicted_variance(cfg: ExperimentConfig, district: District, alloc, n_types: int):
    if cfg.noise == "toydown-single":
        return district_error_variance(district, alloc).total_variance
    if cfg.noise == "toydown":
        # independent per-type errors add up
        return n_types * district_error_variance(district, alloc).total_variance
    return None


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run every configured stage. Deterministic given ``cfg.seed``."""
    with _Stage("config"):
        cfg.validate()
    with _Stage("hierarchy"):
        table = _load_hierarchy(cfg)
        h = table.hierarchy
    with _Stage("allocation"):
        alloc = resolve_split(cfg.split, cfg.epsilon, h.depth, cfg.nation_budget)
    report = RunReport(config=cfg.to_dict(), seed=int(cfg.seed))
    report.config["resolved_allocation"] = list(alloc.per_level)

    with _Stage("districts"):
        districts = make_districts(cfg, table)
        masks = np.zeros((len(districts), h.n_leaves))
        for j, (_, d) in enumerate(districts):
            masks[j] = d.mask

    with _Stage("noise"):
        truth = table.totals()
        errors = np.zeros((cfg.replicates, len(districts)))
        for rep in range(cfg.replicates):
            out = noised_table(cfg, table, alloc, rep)
            compare = truth if out.n_types == 1 and table.n_types > 1 else table
            report.l1.append({"replicate": rep, "l1": l1_error(compare, out)})
            leaf_err = out.leaf_values().sum(axis=1) - truth.leaf_values()[:, 0]
            errors[rep] = masks @ leaf_err
            for j, (name, _) in enumerate(districts):
                report.district_rows.append(
                    {"replicate": rep, "district": name, "error": float(errors[rep, j])})

    with _Stage("metrics"):
        for j, (name, d) in enumerate(districts):
            e = errors[:, j]
            pred = _predicted_variance(cfg, d, alloc, table.n_types)
            report.district_summary.append({
                "district": name,
                "size": len(d),
                "root_weight": d.root_weight,
                "frag": fragmentation(d).score,
                "mean_error": float(e.mean()),
                "mean_abs_error": float(np.abs(e).mean()),
                "error_variance": float(e.var(ddof=1)) if cfg.replicates > 1 else 0.0,
                "predicted_variance": pred,
            })
        if cfg.variance_curve_step:
            branching = h.branching
            report.variance_curve = variance_curve(branching, cfg.epsilon,
                                                   cfg.variance_curve_step).tolist()

    if cfg.er is not None:
        with _Stage("er"):
            report.er, report.er_scatter = _run_er(cfg)
    if cfg.output_dir:
        with _Stage("report"):
            write_report(report, cfg.output_dir)
    return report


def _run_er(cfg: ExperimentConfig):
    ec = cfg.er
    if ec.election_file:
        records = tio.load_election(ec.election_file)
    else:
        records = synthetic_county(ec.synthetic_precincts, seed=ec.synthetic_seed)
    alloc = resolve_split(cfg.split, cfg.epsilon, 2, cfg.nation_budget)
    toy = ToyDownNoiser(alloc)
    seed = as_seed_sequence(cfg.seed, _ER)
    out: dict = {"n_precincts": len(records), "noiser": ec.noiser, "modes": {}}
    if ec.noiser == "toydown":
        noiser = toy
    elif ec.noiser == "gaussian":
        sigma = ec.sigma
        if sigma is None:
            calib = noisy_er_experiment(records, toy, "all", cfg.replicates, seed)
            e_avg = float(np.mean(calib.l1_errors))
            sigma = gaussian_sigma(e_avg, len(records), 2)
            out["calibration_l1"] = e_avg
        out["sigma"] = sigma
        noiser = GaussianNoiser(sigma)
    else:
        raise ConfigurationError(f"unknown ER noiser {ec.noiser!r}")
    scatter = None
    for i, mode in enumerate(ec.modes):
        s = noisy_er_experiment(records, noiser, mode, cfg.replicates, seed,
                                ec.min_votes, keep_scatter=(i == 0))
        if i == 0:
            scatter = s.scatter
        mg, mc = s.mean() if s.estimates else (float("nan"), float("nan"))
        vg, vc = s.variance()
        out["modes"][mode] = {
            "mean_group": mg,
            "mean_complement": mc,
            "variance_group": vg,
            "variance_complement": vc,
            "variance_group_1e-8": format_variance_1e8(vg),
            "variance_complement_1e-8": format_variance_1e8(vc),
            "failures": len(s.failures),
            "dropped": s.dropped,
            "estimates": [list(e) for e in s.estimates],
        }
    return out, scatter


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_plotdata(report: RunReport, kind: str) -> str:
    """CSV text for a figure.

    error-hist:     district,mean_abs_error (sorted by district)
    variance-curve: eps_1..eps_d,variance (grid order)
    er-scatter:     x,y,replicate (sorted by replicate, x, y)
    """
    if kind == "error-hist":
        if not report.district_summary:
            raise ToydownError("report has no district errors")
        rows = sorted((r["district"], repr(r["mean_abs_error"])) for r in report.district_summary)
        return _csv_text(["district", "mean_abs_error"], rows)
    if kind == "variance-curve":
        if not report.variance_curve:
            raise ToydownError("report has no variance curve (set variance_curve_step)")
        d = len(report.variance_curve[0]) - 1
        header = [f"eps{i}" for i in range(1, d + 1)] + ["variance"]
        return _csv_text(header, [[repr(v) for v in row] for row in report.variance_curve])
    if kind == "er-scatter":
        if not report.er_scatter:
            raise ToydownError("report has no ER scatter (add an er section)")
        rows = sorted((rep, x, y) for rep, x, y in report.er_scatter)
        return _csv_text(["x", "y", "replicate"], [[repr(x), repr(y), rep] for rep, x, y in rows])
    raise ToydownError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")


def write_report(report: RunReport, out_dir) -> list[Path]:
    """Write report.json, district_errors.csv, districts.csv and l1.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "report.json"
    p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    paths.append(p)
    rows = sorted((r["district"], r["replicate"], repr(r["error"])) for r in report.district_rows)
    p = out / "district_errors.csv"
    p.write_text(_csv_text(["district", "replicate", "error"], rows))
    paths.append(p)
    if report.district_summary:
        keys = list(report.district_summary[0])
        rows = [[_cell(r[k]) for k in keys]
                for r in sorted(report.district_summary, key=lambda r: r["district"])]
        p = out / "districts.csv"
        p.write_text(_csv_text(keys, rows))
        paths.append(p)
    p = out / "l1.csv"
    p.write_text(_csv_text(["replicate", "l1"], [[r["replicate"], repr(r["l1"])] for r in report.l1]))
    paths.append(p)
    return paths


def _cell(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else v

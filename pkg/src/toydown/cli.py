"""Command-line entry point: ``toydown <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys

import numpy as np

from . import io as tio
from .analytics import (
    block_variance_coefficients,
    district_error_variance,
    fragmentation,
    optimal_allocation,
    variance_curve,
)
from .config import (
    DEFAULT_NATION_BUDGET,
    DISTRICT_METHODS,
    NOISE_ALGORITHMS,
    SPLITS,
    DistrictConfig,
    ERConfig,
    ExperimentConfig,
    resolve_split,
)
from .districts import frag_bounds
from .er import MODES as ER_MODES
from .er import GaussianNoiser, ToyDownNoiser, noisy_er_experiment, synthetic_county
from .errors import ToydownError
from .experiment import (
    PLOT_KINDS,
    ExperimentError,
    make_districts,
    noised_table,
    emit_plotdata,
    run_experiment,
)
from .hierarchy import (
    CountTable,
    Hierarchy,
    TypeSchema,
    build_homogeneous,
    district_weights,
    from_leaf_values,
)
from .mechanisms import stream

log = logging.getLogger("toydown")


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(str(cause))


def _split_arg(text: str):
    if text in SPLITS:
        return text
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"split must be one of {sorted(SPLITS)} or comma-separated numbers"
        ) from None


def _table(args) -> CountTable:
    if getattr(args, "counts", None):
        return tio.load_counts(args.counts)[1]
    if not getattr(args, "branching", None):
        raise ToydownError("give --branching or --counts")
    return build_homogeneous(args.branching, args.leaf_population)[1]


def _out(args):
    if getattr(args, "out", None):
        return open(args.out, "w", newline="")
    return contextlib.nullcontext(sys.stdout)


def _add_tree_args(p, counts=True):
    p.add_argument("--branching", type=int, nargs="+", metavar="N",
                   help="homogeneous branching factors, e.g. 10 10")
    p.add_argument("--leaf-population", type=float, default=1.0)
    if counts:
        p.add_argument("--counts", help="counts CSV (unit_path,type,count)")


def _add_budget_args(p):
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--split", type=_split_arg, default="equal",
                   help=f"one of {', '.join(SPLITS)} or comma-separated per-level budgets")
    p.add_argument("--nation-budget", type=float, default=DEFAULT_NATION_BUDGET)


# subcommands ---------------------------------------------------------------


def cmd_gen(args) -> None:
    if args.kind == "homogeneous":
        if not args.branching:
            raise ToydownError("gen homogeneous needs --branching")
        types = TypeSchema(tuple(args.types))
        rng = stream(args.seed, 0)
        h0, _ = build_homogeneous(args.branching)
        if args.max_count:
            leaves = rng.integers(0, args.max_count + 1, size=(h0.n_leaves, len(types)))
        else:
            leaves = np.full((h0.n_leaves, len(types)), args.leaf_population)
        tio.write_counts(from_leaf_values(h0, leaves, types), args.out)
    elif args.kind == "grid":
        h, table = build_homogeneous([args.rows * args.cols], args.leaf_population)
        labels = ["root"] + [f"r{i}c{j}" for i in range(args.rows) for j in range(args.cols)]
        h = Hierarchy.from_level_counts([[args.rows * args.cols]], labels=labels)
        tio.write_counts(CountTable(h, table.schema, table.values, consistent=True), args.out)
        cells = np.arange(1, h.n_nodes).reshape(args.rows, args.cols)
        edges = [(int(a), int(b)) for a, b in zip(cells[:, :-1].ravel(), cells[:, 1:].ravel())]
        edges += [(int(a), int(b)) for a, b in zip(cells[:-1, :].ravel(), cells[1:, :].ravel())]
        tio.write_adjacency(h, edges, args.adjacency)
    elif args.kind == "county":
        tio.write_election(synthetic_county(args.precincts, seed=args.seed), args.out)


def cmd_noise(args) -> None:
    table = _table(args)
    cfg = ExperimentConfig(branching=[1], epsilon=args.epsilon, split=args.split,
                           nation_budget=args.nation_budget, seed=args.seed,
                           noise=args.algorithm, detailed_share=args.detailed_share)
    alloc = resolve_split(args.split, args.epsilon, table.hierarchy.depth, args.nation_budget)
    out = noised_table(cfg, table, alloc, args.replicate)
    tio.write_counts(out, args.out, include_internal=True)


def cmd_variance(args) -> None:
    if args.curve_step:
        rows = variance_curve(args.branching, args.epsilon, args.curve_step)
        d = rows.shape[1] - 1
        with _out(args) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"eps{i}" for i in range(1, d + 1)] + ["variance"])
            w.writerows([[repr(float(v)) for v in r] for r in rows])
        return
    h, _ = build_homogeneous(args.branching)
    alloc = resolve_split(args.split, args.epsilon, h.depth, args.nation_budget)
    rep = district_error_variance(district_weights(h, [h.leaves.start]), alloc)
    print(json.dumps({"allocation": list(alloc.per_level),
                      "per_level": list(rep.per_level_contributions),
                      "variance": rep.total_variance}, indent=2))


def cmd_allocate(args) -> None:
    coeffs = block_variance_coefficients(args.branching)
    alloc = optimal_allocation(coeffs, args.epsilon)
    var = float((coeffs / np.asarray(alloc.per_level) ** 2).sum())
    print(json.dumps({"allocation": [round(x, args.digits) for x in alloc.per_level],
                      "variance": round(var, args.digits)}))


def _district_cfg(args) -> ExperimentConfig:
    return ExperimentConfig(
        branching=args.branching, counts_file=args.counts,
        leaf_population=args.leaf_population, seed=args.seed,
        districts=DistrictConfig(method=args.method, k=args.k, count=args.count,
                                 tolerance=args.tolerance, recom_steps=args.recom_steps,
                                 adjacency_file=args.adjacency),
    )


def cmd_districts(args) -> None:
    cfg = _district_cfg(args)
    table = _table(args)
    districts = make_districts(cfg, table)
    with _out(args) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["district", "size", "root_weight", "frag", "leaves"])
        for name, d in districts:
            leaves = " ".join(table.hierarchy.path(x) for x in sorted(d.leaves))
            w.writerow([name, len(d), repr(d.root_weight), repr(fragmentation(d).score), leaves])


def cmd_frag(args) -> None:
    result: dict = {}
    try:
        up, lo = frag_bounds(args.branching, args.k)
        result.update(greedy_upper=up, square_lower=lo)
    except ToydownError as exc:
        result["bounds"] = str(exc)
    if args.method != "none":
        cfg = ExperimentConfig(branching=args.branching, seed=args.seed,
                               districts=DistrictConfig(method=args.method, k=args.k,
                                                        count=args.draws))
        table = build_homogeneous(args.branching)[1]
        scores = [fragmentation(d).score for _, d in make_districts(cfg, table)]
        result.update(method=args.method, draws=len(scores), mean_frag=float(np.mean(scores)))
    print(json.dumps(result, indent=2))


def cmd_er(args) -> None:
    records = tio.load_election(args.election) if args.election else \
        synthetic_county(args.precincts, seed=args.county_seed)
    alloc = resolve_split(args.split, args.epsilon, 2, args.nation_budget)
    noiser = GaussianNoiser(args.sigma) if args.sigma is not None else ToyDownNoiser(alloc)
    out = {}
    for mode in args.modes:
        s = noisy_er_experiment(records, noiser, mode, args.replicates, args.seed, args.min_votes)
        mg, mc = s.mean() if s.estimates else (float("nan"), float("nan"))
        vg, vc = s.variance()
        out[mode] = {"mean_group": mg, "mean_complement": mc,
                     "variance_group": vg, "variance_complement": vc,
                     "failures": len(s.failures)}
    print(json.dumps(out, indent=2, sort_keys=True))


def cmd_run(args) -> None:
    if args.config:
        try:
            cfg = ExperimentConfig.load(args.config)
        except (OSError, ToydownError, ValueError) as exc:
            raise StageError("config", exc) from exc
    else:
        cfg = ExperimentConfig()
    for key in ("branching", "counts_file", "epsilon", "split", "replicates", "noise",
                "output_dir", "variance_curve_step"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    if cfg.branching is not None and cfg.counts_file is not None and args.branching is not None:
        cfg.counts_file = None
    cfg.seed = args.seed
    if args.district_method is not None:
        cfg.districts.method = args.district_method
    if args.k is not None:
        cfg.districts.k = args.k
    if args.er and cfg.er is None:
        cfg.er = ERConfig()
    report = run_experiment(cfg)
    if args.plot:
        sys.stdout.write(emit_plotdata(report, args.plot))
    elif not cfg.output_dir:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="toydown", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic counts, grids, or election returns")
    p.add_argument("kind", choices=("homogeneous", "grid", "county"))
    _add_tree_args(p, counts=False)
    p.add_argument("--types", nargs="+", default=["total"])
    p.add_argument("--max-count", type=int, default=0,
                   help="draw leaf counts uniformly from 0..max instead of a constant")
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--adjacency", default="adjacency.csv")
    p.add_argument("--precincts", type=int, default=800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("noise", help="noise and post-process one count table")
    _add_tree_args(p)
    _add_budget_args(p)
    p.add_argument("--algorithm", choices=NOISE_ALGORITHMS, default="toydown")
    p.add_argument("--detailed-share", type=float, default=0.1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("variance", help="single-block error variance or a split sweep")
    _add_tree_args(p, counts=False)
    _add_budget_args(p)
    p.add_argument("--curve-step", type=float, help="emit a variance-curve CSV at this grid step")
    p.add_argument("--out")
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("allocate", help="variance-minimizing per-level split")
    _add_tree_args(p, counts=False)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--digits", type=int, default=6)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("districts", help="sample districts and report weights and Frag")
    _add_tree_args(p)
    p.add_argument("--method", choices=DISTRICT_METHODS[1:], default="greedy")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--recom-steps", type=int, default=10)
    p.add_argument("--adjacency")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_districts)

    p = sub.add_parser("frag", help="Frag bounds and Monte Carlo mean Frag")
    _add_tree_args(p, counts=False)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--method", choices=("none", "greedy", "square"), default="none")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_frag)

    p = sub.add_parser("er", help="ecological regression under noised demographics")
    _add_budget_args(p)
    p.add_argument("--election", help="election CSV; omit for a synthetic county")
    p.add_argument("--precincts", type=int, default=800)
    p.add_argument("--county-seed", type=int, default=0)
    p.add_argument("--sigma", type=float, help="use Gaussian noise with this sd instead of ToyDown")
    p.add_argument("--modes", nargs="+", choices=ER_MODES, default=list(ER_MODES))
    p.add_argument("--min-votes", type=int, default=10)
    p.add_argument("--replicates", type=int, default=16)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_er)

    p = sub.add_parser("run", help="full experiment from a config file")
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--branching", type=int, nargs="+")
    p.add_argument("--counts", dest="counts_file")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--split", type=_split_arg)
    p.add_argument("--replicates", type=int)
    p.add_argument("--noise", choices=NOISE_ALGORITHMS)
    p.add_argument("--district-method", choices=DISTRICT_METHODS)
    p.add_argument("--k", type=int)
    p.add_argument("--er", action="store_true", help="add an ER section with defaults")
    p.add_argument("--variance-curve-step", type=float)
    p.add_argument("--out", dest="output_dir", help="directory for report files")
    p.add_argument("--plot", choices=PLOT_KINDS, help="print plot data CSV to stdout")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ExperimentError as exc:
        print(f"toydown: stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"toydown: stage {exc.stage}: {exc}", file=sys.stderr)
        return 1
    except (ToydownError, ValueError, OSError, ArithmeticError) as exc:
        print(f"toydown: stage {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

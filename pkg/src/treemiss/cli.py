"""Command-line interface: fitting, imputation, selection, inference, studies.

Every randomized subcommand requires an explicit --seed, artifacts are written
atomically, and each run drops a JSON sidecar embedding the seed and a hash of
the resolved configuration.  Report-producing subcommands render matplotlib
figures next to their CSV tables unless --no-figures is passed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from functools import partial

import numpy as np

from . import graphselect, impute, inference, report, sensitivity, simharness
from .expfam import FamilySpec, InvalidTiltError, SupportError
from .fitting import EMConfig, FitError, FittedFullModel, fit_full, select_k_bic
from .odds import OddsConfig, OddsFitError
from .impute import ImputationError
from .patterns import IncompleteDataset, MissingPattern, read_data_csv
from .treegraph import (
    TreeGraph,
    build_ccmv,
    build_lncmv,
    build_rncmv,
    count_trees,
    sample_tree_uniform,
    validate,
)
from .util import atomic_write_text, config_hash, substream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2

_MODEL_ERRORS = (FitError, OddsFitError, ImputationError, InvalidTiltError, SupportError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared option plumbing


def _add_family_flags(p: _Parser) -> None:
    p.add_argument("--family", choices=[
        "gaussian-diag", "binomial-product", "negative-binomial", "pareto", "beta", "dirichlet", "gaussian-kde",
    ], help="model family for the complete-case mixture")
    p.add_argument("--trials", "--N", dest="trials", help="binomial trial counts: one int or comma list")
    p.add_argument("--failures", help="negative-binomial known failure counts")
    p.add_argument("--scale", help="pareto scale per coordinate")
    p.add_argument("--bandwidth", help="kde bandwidth per coordinate (default: rule of thumb)")


def _num_list(text: str, d: int, name: str) -> tuple[float, ...]:
    parts = [p for p in str(text).split(",") if p != ""]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"cannot parse --{name} value {text!r}") from None
    if len(vals) == 1:
        vals = vals * d
    if len(vals) != d:
        raise UsageError(f"--{name} needs 1 or {d} values, got {len(vals)}")
    return tuple(vals)


def _family_from_args(args, d: int) -> FamilySpec:
    kind = args.family
    if kind is None:
        raise UsageError("this operation needs --family")
    if kind == "binomial-product":
        if args.trials is None:
            raise UsageError("--trials is required for binomial-product")
        return FamilySpec.binomial(d, [int(v) for v in _num_list(args.trials, d, "trials")])
    if kind == "negative-binomial":
        if args.failures is None:
            raise UsageError("--failures is required for negative-binomial")
        return FamilySpec.negbin(d, _num_list(args.failures, d, "failures"))
    if kind == "pareto":
        if args.scale is None:
            raise UsageError("--scale is required for pareto")
        return FamilySpec.pareto(d, _num_list(args.scale, d, "scale"))
    if kind == "gaussian-kde":
        if args.bandwidth is None:
            raise UsageError("--bandwidth is required for gaussian-kde (or use fit-time rules)")
        return FamilySpec.kde(d, _num_list(args.bandwidth, d, "bandwidth"))
    if kind == "beta":
        return FamilySpec.beta(d)
    if kind == "dirichlet":
        return FamilySpec.dirichlet(d)
    return FamilySpec.gaussian(d)


def _tree_from_source(source: str, data: IncompleteDataset, min_rows: int) -> TreeGraph:
    patterns = data.patterns(min_rows)
    if source == "ccmv":
        return build_ccmv(patterns)
    if source == "lncmv":
        return build_lncmv(patterns)
    if source == "rncmv":
        return build_rncmv(patterns)
    if not os.path.exists(source):
        raise UsageError(f"--tree must be ccmv, lncmv, rncmv, or a JSON path; {source!r} not found")
    return TreeGraph.load(source)


def _em_config(args) -> EMConfig:
    return EMConfig(
        tol=getattr(args, "em_tol", 1e-8),
        restarts=getattr(args, "restarts", 10),
    )


def _odds_config(args) -> OddsConfig:
    return OddsConfig(
        min_rows=getattr(args, "min_rows", 5),
        quadratic=not getattr(args, "no_quadratic", False),
    )


_REQUIRED: dict[str, tuple[str, ...]] = {}


def _require(args, *dests) -> None:
    for dest in dests:
        if getattr(args, dest, None) is None:
            raise UsageError(f"the following arguments are required: --{dest.replace('_', '-')}")


def _resolved_config(args) -> dict:
    # the artifact destination is excluded so identical runs hash identically
    skip = {"func", "config", "out"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        out[key] = value
    return out


def _write_run_json(outdir: str, args, extra: dict | None = None) -> str:
    doc = {"config": _resolved_config(args)}
    doc["config_hash"] = config_hash(doc["config"])
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if extra:
        doc.update(extra)
    path = os.path.join(outdir, "run.json")
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return doc["config_hash"]


def _write_table(path, rows: list[dict], meta: str | None = None) -> None:
    buf = io.StringIO()
    if meta:
        buf.write(f"# {meta}\n")
    if rows:
        header = list(rows[0].keys())
        writer = csv.DictWriter(buf, fieldnames=header)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def _functional(spec: str):
    parts = spec.split(":")
    if parts[0] == "mean" and len(parts) == 2:
        return partial(_col_mean, int(parts[1]) - 1)
    if parts[0] == "pgt" and len(parts) == 3:
        return partial(_col_pgt, int(parts[1]) - 1, float(parts[2]))
    raise UsageError(f"unknown functional {spec!r}; use mean:J or pgt:J:C")


def _col_mean(j: int, completed: np.ndarray) -> float:
    return float(completed[:, j].mean())


def _col_pgt(j: int, c: float, completed: np.ndarray) -> float:
    return float((completed[:, j] > c).mean())


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_count_trees(args) -> int:
    print(count_trees(args.d))
    return EXIT_OK


def _cmd_validate_graph(args) -> int:
    tree = TreeGraph.load(args.tree)
    rep = validate(tree)
    if rep.ok:
        print(f"ok: {len(tree.patterns)} patterns, {len(tree.edges)} edges")
        return EXIT_OK
    for v in rep.violations:
        print(v)
    return EXIT_MODEL


def _cmd_sample_tree(args) -> int:
    if args.data:
        data, _ = read_data_csv(args.data)
        patterns = data.patterns(args.min_rows)
    elif args.patterns:
        with open(args.patterns) as fh:
            doc = json.load(fh)
        patterns = [MissingPattern.from_string(s) for s in doc["patterns"]]
    elif args.d:
        from .patterns import all_patterns

        patterns = all_patterns(args.d)
    else:
        raise UsageError("sample-tree needs --d, --data, or --patterns")
    tree = sample_tree_uniform(patterns, substream(args.seed))
    if args.out:
        tree.save(args.out)
        print(args.out)
    else:
        print(json.dumps(tree.to_dict()))
    return EXIT_OK


def _cmd_fit(args) -> int:
    data, _ = read_data_csv(args.data)
    family = _family_from_args(args, data.d)
    tree = _tree_from_source(args.tree, data, args.min_rows)
    em = _em_config(args)
    if args.k is not None:
        k = args.k
    elif args.k_range:
        lo, hi = (int(v) for v in args.k_range.split(":"))
        k = select_k_bic(data.complete_values(), family, range(lo, hi + 1), em, substream(args.seed, 1))
        print(f"selected k={k} by information criterion")
    else:
        raise UsageError("fit needs --k or --k-range lo:hi")
    model = fit_full(data, tree, family, k, em, _odds_config(args), substream(args.seed))
    model.save(args.out)
    outdir = os.path.dirname(os.path.abspath(args.out))
    _write_run_json(outdir, args, {"model": model.digest, "tree": model.tree_digest, "k": k})
    print(args.out)
    return EXIT_OK


def _cmd_impute(args) -> int:
    data, names = read_data_csv(args.data)
    model = FittedFullModel.load(args.model)
    result = impute.impute_conjugate(data, model, args.m, args.seed)
    paths = result.save(args.out, names)
    _write_run_json(args.out, args, {"model": model.digest})
    print("\n".join(paths))
    return EXIT_OK


def _cmd_select_graph(args) -> int:
    data, _ = read_data_csv(args.data)
    method = args.method
    os.makedirs(args.out, exist_ok=True)
    table = None
    if method in ("ccmv", "lncmv", "rncmv"):
        tree = _tree_from_source(method, data, args.min_rows)
    elif method == "energy":
        tree, table = graphselect.select_energy(data, min_rows=args.select_min_rows)
    else:
        family = _family_from_args(args, data.d)
        em = _em_config(args)
        if method == "parent":
            tree, table = graphselect.select_parent_based(
                data, family, args.k, em, args.seed, args.select_min_rows
            )
        elif method == "child":
            tree, table = graphselect.select_child_based(
                data, family, args.k, em, args.seed, args.select_min_rows
            )
        else:
            raise UsageError(f"unknown method {method!r}")
    rep = validate(tree)
    if not rep.ok:
        raise FitError(f"selected graph failed validation: {rep}")
    tree_path = os.path.join(args.out, "tree.json")
    tree.save(tree_path)
    atomic_write_text(os.path.join(args.out, "tree.dot"), tree.to_dot())
    chash = _write_run_json(args.out, args, {"tree": config_hash(tree.to_dict())})
    meta = f"config_hash={chash} seed={args.seed}"
    if table is not None:
        _write_table(os.path.join(args.out, "scores.csv"), table.rows(), meta)
    if not args.no_figures:
        report.save_tree_figure(tree, os.path.join(args.out, "tree.png"))
    print(tree_path)
    return EXIT_OK


def _cmd_bootstrap(args) -> int:
    data, _ = read_data_csv(args.data)
    family = _family_from_args(args, data.d)
    tree = _tree_from_source(args.tree, data, args.min_rows)
    draws = inference.bootstrap(
        data, tree, family, args.k, args.b, _em_config(args), _odds_config(args),
        seed=args.seed, workers=args.workers,
    )
    os.makedirs(args.out, exist_ok=True)
    chash = _write_run_json(args.out, args, {"failed_replicates": draws.failed})
    meta = f"config_hash={chash} seed={args.seed}"
    rows = [dict(zip(draws.names, map(float, row))) for row in draws.values]
    _write_table(os.path.join(args.out, "draws.csv"), rows, meta)
    summary = inference.summarize(draws, args.level, percentile=args.percentile)
    block = inference.covariance_block_check(draws, tree)
    summary["block_check"] = {
        "threshold": block.threshold,
        "ok": block.ok,
        "pairs": block.pairs,
        "violations": block.violations,
    }
    atomic_write_text(os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not args.no_figures:
        report.save_bootstrap_figure(draws.names, draws.values, os.path.join(args.out, "draws.png"))
    print(os.path.join(args.out, "summary.json"))
    return EXIT_OK


def _cmd_sensitivity(args) -> int:
    data, _ = read_data_csv(args.data)
    family = _family_from_args(args, data.d)
    with open(args.grid) as fh:
        grid = json.load(fh)
    rho_grid = [np.asarray(r, float) for r in grid.get("rho", [[0.0] * data.d])]
    tree_sources = grid.get("trees", [args.tree])
    trees = [_tree_from_source(src, data, args.min_rows) for src in tree_sources]
    rows = sensitivity.sweep(
        data, rho_grid, trees, family, args.k, _functional(args.functional), args.m,
        _em_config(args), _odds_config(args), seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    chash = _write_run_json(args.out, args)
    _write_table(os.path.join(args.out, "sweep.csv"), rows, f"config_hash={chash} seed={args.seed}")
    if not args.no_figures:
        report.save_sweep_figure(rows, os.path.join(args.out, "sweep.png"))
    print(os.path.join(args.out, "sweep.csv"))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    study = args.study
    os.makedirs(args.out, exist_ok=True)
    kwargs: dict = {"seed": args.seed}
    if study in ("consistency", "recovery"):
        cfg = simharness.binomial_benchmark(args.trials_value)
        kwargs.update(config=cfg, n_grid=[int(v) for v in args.n.split(",")], u=args.u, workers=args.workers)
    elif study == "coverage":
        cfg = simharness.binomial_benchmark(args.trials_value)
        kwargs.update(config=cfg, n=int(args.n.split(",")[0]), u=args.u, b=args.b, workers=args.workers)
    else:
        kwargs.update(n=int(args.n), iters=args.iters)
        if args.data:
            kwargs["data_values"] = read_data_csv(args.data)[0].values
    result = simharness.run_study(study, **kwargs)
    chash = _write_run_json(args.out, args, {"study": study, "trees": result.get("trees")})
    meta = f"config_hash={chash} seed={args.seed}"
    table_path = os.path.join(args.out, f"{study}.csv")
    _write_table(table_path, result["rows"], meta)
    if not args.no_figures:
        fig_path = os.path.join(args.out, f"{study}.png")
        if study == "consistency":
            report.save_consistency_figure(result["rows"], fig_path)
        elif study == "coverage":
            report.save_coverage_figure(result["rows"], fig_path)
        elif study == "recovery":
            report.save_recovery_figure(result["rows"], fig_path)
        else:
            report.save_kde_figure(result["rows"], fig_path)
    print(table_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="treemiss", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text, seed_required=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=handler)
        p.add_argument("--config", help="JSON file of defaults; explicit flags win")
        if seed_required:
            p.add_argument("--seed", type=int, help="RNG seed (all randomness is explicit)")
            _REQUIRED.setdefault(name, ("seed",))
        return p

    p = add("count-trees", _cmd_count_trees, "count trees over the full pattern set", seed_required=False)
    p.add_argument("--d", type=int)

    p = add("validate-graph", _cmd_validate_graph, "check the tree invariants of a graph file", seed_required=False)
    p.add_argument("--tree")

    p = add("sample-tree", _cmd_sample_tree, "draw a tree uniformly over a pattern set")
    p.add_argument("--d", type=int)
    p.add_argument("--data")
    p.add_argument("--patterns")
    p.add_argument("--min-rows", type=int, default=1)
    p.add_argument("--out")

    p = add("fit", _cmd_fit, "fit the complete-case mixture, edge odds, and derived joints")
    p.add_argument("--data")
    _add_family_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--k-range", help="lo:hi searched by information criterion")
    p.add_argument("--tree", help="ccmv | lncmv | rncmv | path to tree JSON")
    p.add_argument("--min-rows", type=int, default=5)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--em-tol", type=float, default=1e-8)
    p.add_argument("--no-quadratic", action="store_true", help="gaussian odds: first-order statistics only")
    p.add_argument("--out", default="model.json")

    p = add("impute", _cmd_impute, "draw multiple imputations from a fitted model")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--m", type=int)
    p.add_argument("--out", default="imputations")

    p = add("select-graph", _cmd_select_graph, "select a tree from data or a named rule")
    p.add_argument("--data")
    p.add_argument("--method", choices=["parent", "child", "energy", "lncmv", "rncmv", "ccmv"])
    p.add_argument("--family", choices=[
        "gaussian-diag", "binomial-product", "negative-binomial", "pareto", "beta", "dirichlet", "gaussian-kde",
    ])
    p.add_argument("--trials")
    p.add_argument("--failures")
    p.add_argument("--scale")
    p.add_argument("--bandwidth")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--min-rows", type=int, default=1)
    p.add_argument("--select-min-rows", type=int, default=20)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default="selected")

    p = add("bootstrap", _cmd_bootstrap, "bootstrap parameter uncertainty by refitting resamples")
    p.add_argument("--data")
    _add_family_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--tree")
    p.add_argument("--b", type=int)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--percentile", action="store_true")
    p.add_argument("--min-rows", type=int, default=5)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--workers", type=int, default=os.cpu_count(), help="parallelism bound (default: logical cores)")
    p.add_argument("--no-quadratic", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default="bootstrap")

    p = add("sensitivity", _cmd_sensitivity, "sweep alternative trees and odds perturbations")
    p.add_argument("--data")
    _add_family_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--tree", default="ccmv", help="base tree when the grid lists none")
    p.add_argument("--grid", help="JSON: {rho: [[...], ...], trees: [...]}")
    p.add_argument("--functional", default="mean:1", help="mean:J or pgt:J:C")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--min-rows", type=int, default=5)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--no-quadratic", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default="sensitivity")

    p = add("simulate", _cmd_simulate, "run a named study and emit its tables")
    p.add_argument("--study", choices=["consistency", "coverage", "recovery", "kde-mnar", "kde-mar"])
    p.add_argument("--n", default="500,1000,2000,5000", help="sample size (grid for consistency/recovery)")
    p.add_argument("--u", type=int, default=50)
    p.add_argument("--b", type=int, default=200)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--trials-value", type=int, default=17)
    p.add_argument("--data", help="kde studies: user-supplied complete CSV to mask")
    p.add_argument("--workers", type=int, default=os.cpu_count(), help="parallelism bound (default: logical cores)")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default="study")

    _REQUIRED.update(
        {
            "count-trees": ("d",),
            "validate-graph": ("tree",),
            "sample-tree": ("seed",),
            "fit": ("seed", "data", "family", "tree"),
            "impute": ("seed", "data", "model", "m"),
            "select-graph": ("seed", "data", "method"),
            "bootstrap": ("seed", "data", "family", "k", "tree", "b"),
            "sensitivity": ("seed", "data", "family", "k", "grid"),
            "simulate": ("seed", "study"),
        }
    )
    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> None:
    if "--config" not in argv:
        return
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise UsageError("--config needs a path")
    path = argv[idx + 1]
    try:
        with open(path) as fh:
            conf = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read config file {path}: {err}") from None
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    if not argv or argv[0].startswith("-"):
        raise UsageError("--config requires a subcommand")
    sub = parser._subparsers._group_actions[0].choices.get(argv[0])  # noqa: SLF001
    if sub is None:
        raise UsageError(f"unknown subcommand {argv[0]!r}")
    known = {a.dest for a in sub._actions}  # noqa: SLF001
    unknown = [k for k in conf if k not in known]
    if unknown:
        raise UsageError(f"unrecognized config keys: {', '.join(sorted(unknown))}")
    sub.set_defaults(**conf)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        _require(args, *_REQUIRED.get(args.command, ()))
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except _MODEL_ERRORS as err:
        print(f"model error: {err}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, json.JSONDecodeError, ValueError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

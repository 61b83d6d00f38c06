"""Command-line interface for permutation-distribution optimization.

Subcommands
-----------
- ``optimize``: run the full search for each seed and write per-seed result
  JSON, trace JSONL, a summary JSON/CSV pair, and score figures.
- ``baseline``: score a reference strategy (``static`` keeps the given
  order; ``topk`` takes the best of a budget of uniform draws) with the same
  output layout.
- ``verify``: run the built-in correctness checks and print one line each.
- ``enumerate``: exact probability table of a small distribution, as CSV.
- ``report``: re-render the CSV and figures for a finished run directory.

Exit codes: 0 on success, 1 when a verify check fails, 2 for configuration
errors, 3 when scoring failed (including partial per-seed failures).

Output layout (per run directory)
---------------------------------
- ``result-<seed>.json``: the selected ordering, its validation score, the
  configuration hash, and the package version.
- ``trace-<seed>.jsonl``: one JSON object per line.  Iteration records hold
  ``type="iteration"``, ``iteration``, ``samples`` (one ordering per draw),
  ``scores``, ``elite_indices``, ``params`` (logits snapshot after the
  update), and ``wall_ms``.  The last line holds ``type="final"`` with the
  validation ``draws``, their ``scores``, the ``selected`` ordering,
  ``scorer_calls``, and ``wall_ms``.
- ``summary.json`` / ``summary.csv``: per-seed outcomes plus the mean and
  standard deviation over seeds.
- ``score_history.png`` / ``final_scores.png``: rendered figures.

Every record is reproducible: equal configuration and seeds give identical
bytes apart from the wall-clock fields.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_all_checks
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    load_config,
    save_config,
    with_seed,
)
from .distributions import Permutation, PLParams, RandomSource
from .exact import all_orders, enumerate_pl
from .llm_client import llm_accuracy_scorer
from .optimizer import run, run_baseline
from .report import plot_distribution, render_report
from .scoring import (
    BimodalScorer,
    DataSplits,
    Example,
    MallowsScorer,
    METRICS,
    ProtocolError,
    ScoringError,
    load_demonstrations_jsonl,
    load_examples_jsonl,
)

# Stream indices reserved for task setup, distinct from the optimizer's
# internal streams (0-3) so targets and splits stay stable if either side
# changes how much randomness it consumes.
_TARGET_STREAM = 17
_SPLIT_STREAM = 18

_METHOD_NAMES = {"ema": "plr-ema", "mle": "plr-mle", "em": "plr-em"}


def _synthetic_splits(inner: int = 40, validation: int = 10) -> DataSplits:
    # Synthetic scorers ignore the data; placeholders keep the pipeline uniform.
    pool = [Example(f"synthetic-{i}", str(i)) for i in range(inner + validation)]
    return DataSplits(tuple(pool[:inner]), tuple(pool[inner:]))


def _derived_target(n: int, seed: int) -> Permutation:
    rng = RandomSource(seed).split(_TARGET_STREAM)
    return Permutation(tuple(int(i) for i in rng.generator.permutation(n)))


def _task_builder(config: RunConfig):
    """Return a function mapping a seed to (scorer, splits, metadata)."""
    n = config.optimizer.n_items
    scoring = config.scoring

    if config.task == "synthetic-mallows":

        def build(seed: int):
            target = (
                Permutation(tuple(scoring.target))
                if scoring.target is not None
                else _derived_target(n, seed)
            )
            return MallowsScorer(target), _synthetic_splits(), {"target": list(target.order)}

        return build

    if config.task == "synthetic-bimodal":

        def build(seed: int):
            target_a = (
                Permutation(tuple(scoring.target))
                if scoring.target is not None
                else _derived_target(n, seed)
            )
            target_b = (
                Permutation(tuple(scoring.target_b))
                if scoring.target_b is not None
                else target_a.reversed()
            )
            meta = {"target": list(target_a.order), "target_b": list(target_b.order)}
            return BimodalScorer(target_a, target_b), _synthetic_splits(), meta

        return build

    # icl: one shared scorer (and completion cache) across seeds.
    demonstrations = load_demonstrations_jsonl(scoring.demonstrations)
    if len(demonstrations) != n:
        raise ConfigError(
            f"optimizer.items is {n} but {scoring.demonstrations} holds "
            f"{len(demonstrations)} demonstrations"
        )
    pool = load_examples_jsonl(scoring.dataset)
    scorer = llm_accuracy_scorer(
        scoring.template, demonstrations, scoring.endpoint, METRICS[scoring.metric]
    )

    def build(seed: int):
        splits = DataSplits.from_pool(
            pool,
            fraction=scoring.split_fraction,
            budget=scoring.validation_budget,
            rng=RandomSource(seed).split(_SPLIT_STREAM),
        )
        return scorer, splits, {"dataset_size": len(splits.inner_pool) + len(splits.validation)}

    return build


def _summarize(task: str, method: str, digest: str, seeds: list[int], results: list[dict]) -> dict:
    scores = [r["validation_score"] for r in results if r.get("validation_score") is not None]
    failures = [r["seed"] for r in results if r.get("error")]
    return {
        "task": task,
        "method": method,
        "version": __version__,
        "config_hash": digest,
        "seeds": seeds,
        "results": results,
        "mean_score": float(np.mean(scores)) if scores else None,
        "stddev_score": float(np.std(scores)) if len(scores) > 1 else 0.0 if scores else None,
        "failures": failures,
    }


def _write_outputs(out_dir: Path, config: RunConfig, summary: dict, traces: dict[int, object]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / "config_used.yaml")
    for seed, trace in traces.items():
        trace.write_jsonl(out_dir / f"trace-{seed}.jsonl")
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    render_report(out_dir)


def _execute_runs(config: RunConfig, method: str, run_one, parallel: int, out_dir: Path,
                  write_trace: bool) -> int:
    """Shared driver for optimize and baseline: fan out over seeds, write files."""
    digest = config_hash(config)
    results: list[dict] = []
    traces: dict[int, object] = {}

    def attempt(seed: int) -> tuple[dict, object | None]:
        begin = time.perf_counter()
        try:
            pi, trace, meta = run_one(seed)
        except (ScoringError, ProtocolError) as err:
            return {"seed": seed, "error": str(err), "validation_score": None}, None
        final = trace.final
        record = {
            "task": config.task,
            "method": method,
            "seed": seed,
            "n_items": config.optimizer.n_items,
            "selected": list(pi.order),
            "validation_score": max(final.scores),
            "scorer_calls": final.scorer_calls,
            "config_hash": digest,
            "version": __version__,
            **meta,
            "wall_time_s": round(time.perf_counter() - begin, 3),
        }
        return record, trace

    if parallel > 1 and len(config.seeds) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(attempt, config.seeds))
    else:
        outcomes = [attempt(seed) for seed in config.seeds]

    out_dir.mkdir(parents=True, exist_ok=True)
    for seed, (record, trace) in zip(config.seeds, outcomes):
        results.append(record)
        if trace is not None and write_trace:
            traces[seed] = trace
        (out_dir / f"result-{seed}.json").write_text(
            json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    summary = _summarize(config.task, method, digest, list(config.seeds), results)
    _write_outputs(out_dir, config, summary, traces)

    for record in results:
        if record.get("error"):
            print(f"seed {record['seed']}: FAILED ({record['error']})", file=sys.stderr)
        else:
            print(f"seed {record['seed']}: score {record['validation_score']:.4f} "
                  f"selected {record['selected']}")
    if summary["mean_score"] is not None:
        print(f"mean validation score over {len(config.seeds)} seeds: "
              f"{summary['mean_score']:.4f}")
    return 3 if summary["failures"] else 0


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seeds is not None:
        try:
            config.seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
        except ValueError as err:
            raise ConfigError(f"invalid --seeds value: {args.seeds}") from err
        if not config.seeds:
            raise ConfigError("--seeds must name at least one seed")
    if args.out is not None:
        config.output_dir = args.out
    return config


def cmd_optimize(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    build = _task_builder(config)
    method = _METHOD_NAMES[config.optimizer.update]

    def run_one(seed: int):
        scorer, splits, meta = build(seed)
        pi, trace = run(with_seed(config.optimizer, seed), scorer, splits)
        return pi, trace, meta

    return _execute_runs(config, method, run_one, args.parallel, Path(config.output_dir),
                         args.trace)


def cmd_baseline(args: argparse.Namespace) -> int:
    config = _apply_overrides(load_config(args.config), args)
    build = _task_builder(config)
    budget = args.budget if args.budget is not None else config.optimizer.sample_budget

    def run_one(seed: int):
        scorer, splits, meta = build(seed)
        pi, trace = run_baseline(args.kind, config.optimizer.n_items, scorer, splits,
                                 seed, budget=budget)
        return pi, trace, {**meta, "budget": budget}

    return _execute_runs(config, args.kind, run_one, args.parallel, Path(config.output_dir),
                         args.trace)


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_all_checks()
    for result in results:
        print(result.describe())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_enumerate(args: argparse.Namespace) -> int:
    if args.logits is not None:
        logits = np.array([float(x) for x in args.logits.split(",")])
        dist = PLParams(logits)
        table = enumerate_pl(dist)
        title = f"PL({', '.join(f'{x:g}' for x in logits)})"
    elif args.items is not None:
        table = enumerate_pl(PLParams.uniform(args.items))
        title = f"uniform over {args.items} items"
    else:
        raise ConfigError("enumerate needs --logits or --items")
    orders = all_orders(table.n)
    lines = ["permutation,probability"]
    for row, p in zip(orders, table.probs):
        lines.append(f"{' '.join(str(i) for i in row)},{p:.12g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.figure:
        plot_distribution(table.probs, args.figure, title)
        print(f"wrote {args.figure}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    written = render_report(Path(args.out))
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plreorder",
        description="Optimize permutation distributions against a black-box score.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the YAML run file")
        p.add_argument("--seeds", default=None, help="comma-separated seed list override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--parallel", type=int, default=1, help="seeds to run concurrently")
        p.add_argument("--trace", action=argparse.BooleanOptionalAction, default=True,
                       help="write per-seed trace JSONL files")

    p_opt = sub.add_parser("optimize", help="run the permutation search")
    add_run_flags(p_opt)
    p_opt.set_defaults(func=cmd_optimize)

    p_base = sub.add_parser("baseline", help="run a reference strategy")
    add_run_flags(p_base)
    p_base.add_argument("--kind", choices=("static", "topk"), default="topk")
    p_base.add_argument("--budget", type=int, default=None,
                        help="uniform draws for topk (default: matches the search budget)")
    p_base.set_defaults(func=cmd_baseline)

    p_verify = sub.add_parser("verify", help="run the built-in correctness checks")
    p_verify.set_defaults(func=cmd_verify)

    p_enum = sub.add_parser("enumerate", help="exact probability table for small n")
    p_enum.add_argument("--logits", default=None, help="comma-separated logit vector")
    p_enum.add_argument("--items", type=int, default=None, help="item count for uniform logits")
    p_enum.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p_enum.add_argument("--figure", default=None, help="optional PNG of the table")
    p_enum.set_defaults(func=cmd_enumerate)

    p_report = sub.add_parser("report", help="re-render CSV and figures for a run directory")
    p_report.add_argument("--out", required=True, help="run directory to render")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (ScoringError, ProtocolError) as err:
        print(f"scoring error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

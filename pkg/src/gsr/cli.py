"""Command-line entry point.

Subcommands: ``validate`` (grammar diagnostics), ``gen-bench`` (write
benchmark CSVs), ``train`` / ``ablate`` (single runs from a TOML config),
``experiment`` (benchmark x seed matrix), ``report`` (aggregate a results
directory).  Exit codes: 0 ok, 1 validation findings, 2 unusable
input/config, 3 training aborted on a non-finite loss.

Config files are TOML with [grammar], [dataset], [trainer] and [run]
sections; any trainer field can be overridden on the command line with
``--override trainer.key=value``.  The ``GSR_OUTPUT_ROOT`` environment
variable sets the default parent of output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from multiprocessing import Pool

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .benchmarks import (
    BENCHMARKS,
    benchmark_names,
    generate_benchmark,
    load_csv,
    write_dataset_csv,
)
from .grammar import GrammarError, parse_grammar, validate_grammar
from .reporting import emit_report, records_from_results
from .trainer import (
    ABLATIONS,
    RunResult,
    TrainConfig,
    TrainError,
    derive_run_seed,
    run_ablation,
    run_benchmark_job,
    train,
)

SHIPPED_GRAMMARS = ("nguyen", "airfoil")


def shipped_grammar_text(name: str) -> str:
    if name not in SHIPPED_GRAMMARS:
        raise ValueError(f"unknown shipped grammar {name!r}; have {SHIPPED_GRAMMARS}")
    return (resources.files("gsr") / "grammars" / f"{name}.bnf").read_text("utf-8")


def shipped_data_path(name: str) -> str:
    return str(resources.files("gsr") / "data" / name)


def _parse_override_value(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _apply_overrides(config: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        dotted, _, raw = item.partition("=")
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            raise ValueError(f"override key {dotted!r} must be section.key")
        section, key = parts
        config.setdefault(section, {})[key] = _parse_override_value(raw.strip())
    return config


def _load_config(path: str, overrides: list[str]) -> dict:
    with open(path, "rb") as fh:
        config = tomllib.load(fh)
    return _apply_overrides(config, overrides or [])


def _train_config(config: dict, seed: int | None) -> TrainConfig:
    section = dict(config.get("trainer", {}))
    if seed is not None:
        section["seed"] = seed
    try:
        return TrainConfig(**section)
    except TypeError as exc:
        raise ValueError(f"bad [trainer] config: {exc}") from None


def _grammar_text(config: dict) -> str:
    section = config.get("grammar", {})
    if "path" in section:
        with open(section["path"], "r", encoding="utf-8") as fh:
            return fh.read()
    if "name" in section:
        return shipped_grammar_text(section["name"])
    raise ValueError("config needs [grammar] with a `path` or shipped `name`")


def _datasets(config: dict, seed: int):
    section = config.get("dataset", {})
    if "benchmark" in section:
        name = section["benchmark"]
        train_ds, test_ds, _ = generate_benchmark(name, seed=seed)
        return train_ds, test_ds, name
    if "csv" in section:
        path = section["csv"]
        if path == "airfoil-synthetic":
            path = shipped_data_path("airfoil_synthetic.csv")
        columns = section.get("columns")
        train_ds, test_ds = load_csv(
            path,
            target=section.get("target"),
            split_fraction=float(section.get("split_fraction", 0.7)),
            seed=seed,
            columns=tuple(columns) if columns else None,
        )
        label = section.get("label", os.path.basename(path))
        return train_ds, test_ds, label
    raise ValueError("config needs [dataset] with `benchmark` or `csv`")


def _output_dir(config: dict, explicit: str | None, config_path: str) -> str:
    if explicit:
        return explicit
    run_section = config.get("run", {})
    if "output_dir" in run_section:
        return run_section["output_dir"]
    root = os.environ.get("GSR_OUTPUT_ROOT", "runs")
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join(root, stem)


def _write_result(result: RunResult, outdir: str, stem: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, f"{stem}.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(result.to_json())
        fh.write("\n")
    return path


def cmd_validate(args) -> int:
    try:
        with open(args.grammar, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        grammar = parse_grammar(text, nvar=args.nvar, strict=False)
    except GrammarError as exc:
        print(f"syntax error: {exc}", file=sys.stderr)
        return 1
    problems = validate_grammar(grammar)
    for problem in problems:
        print(problem, file=sys.stderr)
    if not problems:
        print(
            f"OK: {len(grammar.nonterminals)} productions, "
            f"{grammar.action_count} actions, start {grammar.start_symbol}"
        )
    return 0 if not problems else 1


def cmd_gen_bench(args) -> int:
    names = benchmark_names() if args.names == ["all"] else args.names
    unknown = [n for n in names if n not in BENCHMARKS]
    if unknown:
        print(f"error: unknown benchmarks {unknown}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    manifest = {}
    for name in names:
        train_ds, test_ds, truth = generate_benchmark(name, seed=args.seed)
        for ds in (train_ds, test_ds):
            write_dataset_csv(ds, os.path.join(args.out, f"{name}_{ds.split}.csv"))
        manifest[name] = {
            "train_rows": train_ds.n_rows,
            "test_rows": test_ds.n_rows,
            "variables": train_ds.n_features,
            "ground_truth": BENCHMARKS[name].expression_text,
            "excluded_from_stats": BENCHMARKS[name].excluded_from_stats,
        }
        print(f"{name}: {train_ds.n_rows} train rows, {test_ds.n_rows} test rows")
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return 0


def _run_from_config(args, ablation: str | None) -> int:
    try:
        config = _load_config(args.config, args.override)
        cfg = _train_config(config, args.seed)
        grammar_text = _grammar_text(config)
        train_ds, test_ds, label = _datasets(config, cfg.seed)
        grammar = parse_grammar(grammar_text, nvar=train_ds.n_features)
    except (OSError, ValueError, KeyError, GrammarError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outdir = _output_dir(config, args.out, args.config)
    os.makedirs(outdir, exist_ok=True)
    stem = f"{label}_s{cfg.seed}" + (f"_{ablation}" if ablation else "")
    ledger_path = os.path.join(outdir, f"{stem}.jsonl")
    try:
        if ablation:
            result = run_ablation(
                cfg, ablation, grammar, train_ds, test_ds,
                ledger_path=ledger_path, benchmark=label,
            )
        else:
            result = train(
                cfg, grammar, train_ds, test_ds,
                ledger_path=ledger_path, benchmark=label,
            )
    except TrainError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    path = _write_result(result, outdir, stem)
    print(f"best expression: {result.best_expression}")
    print(f"test MSE: {result.best_test_mse}")
    print(f"result: {path}")
    return 0


def cmd_train(args) -> int:
    return _run_from_config(args, ablation=None)


def cmd_ablate(args) -> int:
    if args.which not in ABLATIONS:
        print(
            f"error: unknown ablation {args.which!r}; known: {', '.join(ABLATIONS)}",
            file=sys.stderr,
        )
        return 2
    return _run_from_config(args, ablation=args.which)


def _experiment_job(job: tuple) -> dict:
    benchmark, run_seed, cfg, grammar_text, outdir = job
    try:
        result = run_benchmark_job(benchmark, run_seed, cfg, grammar_text)
        path = _write_result(result, outdir, f"{benchmark}_s{run_seed}")
        row = result.to_dict(include_timing=True)
        row["failed"] = False
        row["path"] = path
        return row
    except Exception as exc:  # keep the suite going; record the failure
        return {
            "benchmark": benchmark,
            "seed": run_seed,
            "failed": True,
            "error": f"{type(exc).__name__}: {exc}",
        }


def cmd_experiment(args) -> int:
    try:
        config = _load_config(args.config, args.override)
        base_cfg = _train_config(config, None)
        grammar_text = _grammar_text(config)
    except (OSError, ValueError, GrammarError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    suite = args.suite.split(",")
    unknown = [n for n in suite if n not in BENCHMARKS]
    if unknown:
        print(f"error: unknown benchmarks {unknown}", file=sys.stderr)
        return 2
    seeds = [int(s) for s in args.seeds.split(",")]
    outdir = _output_dir(config, args.out, args.config)
    os.makedirs(outdir, exist_ok=True)

    jobs = []
    for benchmark in suite:
        for index, seed in enumerate(seeds):
            run_seed = derive_run_seed(seed, benchmark, index)
            jobs.append((benchmark, run_seed, base_cfg, grammar_text, outdir))

    workers = args.workers or int(config.get("run", {}).get("workers", 1))
    if workers > 1:
        with Pool(workers) as pool:
            rows = pool.map(_experiment_job, jobs)
    else:
        rows = [_experiment_job(job) for job in jobs]

    table_path = os.path.join(outdir, "rows.jsonl")
    with open(table_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    failures = sum(1 for row in rows if row.get("failed"))
    print(f"{len(rows)} runs ({failures} failed) -> {table_path}")
    return 0


def cmd_report(args) -> int:
    if not os.path.isdir(args.results_dir):
        print(f"error: {args.results_dir} is not a directory", file=sys.stderr)
        return 2
    docs = []
    for entry in sorted(os.listdir(args.results_dir)):
        if not entry.endswith(".json") or entry == "manifest.json":
            continue
        with open(os.path.join(args.results_dir, entry), "r", encoding="utf-8") as fh:
            try:
                docs.append(json.load(fh))
            except json.JSONDecodeError:
                print(f"warning: skipping unreadable {entry}", file=sys.stderr)
    rows_path = os.path.join(args.results_dir, "rows.jsonl")
    if os.path.exists(rows_path):
        with open(rows_path, "r", encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                if row.get("failed"):
                    docs.append(row)
    # Drop rows that also exist as result documents (path marker).
    docs = [d for d in docs if "path" not in d]
    if not docs:
        print("warning: no results found; empty report", file=sys.stderr)
    excluded = {n for n, s in BENCHMARKS.items() if s.excluded_from_stats}
    kept = [d for d in docs if d.get("benchmark") not in excluded]
    dropped = len(docs) - len(kept)
    if dropped:
        print(f"note: {dropped} run(s) on excluded benchmarks left out", file=sys.stderr)
    records = records_from_results(kept)
    try:
        text = emit_report(records, fmt=args.format, alpha=args.alpha)
    except ValueError:
        text = "(no runs)\n"
    ext = {"markdown": "md", "json": "json", "csv": "csv"}[args.format]
    out_path = os.path.join(args.results_dir, f"report.{ext}")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)
    print(f"report: {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsr", description="Grammar-guided symbolic regression engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a grammar file")
    p.add_argument("grammar")
    p.add_argument("--nvar", type=int, default=1)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-bench", help="write benchmark CSVs")
    p.add_argument("names", nargs="+", help="benchmark names or 'all'")
    p.add_argument("--out", default="benchmarks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_bench)

    for name, help_text in (
        ("train", "run one training from a config"),
        ("ablate", "run one ablated training from a config"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
        if name == "ablate":
            p.add_argument("--which", required=True)
            p.set_defaults(func=cmd_ablate)
        else:
            p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run a benchmark x seed matrix")
    p.add_argument("config")
    p.add_argument("--suite", required=True, help="comma-separated benchmark names")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--override", action="append", default=[],
                   metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="aggregate a directory of run results")
    p.add_argument("results_dir")
    p.add_argument("--format", choices=("markdown", "json", "csv"), default="markdown")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

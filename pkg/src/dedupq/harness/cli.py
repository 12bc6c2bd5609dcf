"""Command line entry point: ``dedupq repl|query|gen|bench``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from dedupq.blocking import dump_index
from dedupq.catalog import Catalog, write_collection
from dedupq.engine import PLANNERS, Engine
from dedupq.executor import EngineConfig, QueryResult
from dedupq.harness.experiment import engine_config, format_report, run_experiment
from dedupq.harness.generator import GeneratorConfig, generate_dirty_collection, generate_linked_collections
from dedupq.sqlfront import QueryError


def _add_engine_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("resolution")
    g.add_argument("--smoothing-factor", type=float)
    g.add_argument("--filter-ratio", type=float)
    g.add_argument("--mb-stages", help="all, bp-bf, bp-ep, none or a dash-separated subset of bp/bf/ep")
    g.add_argument("--purge-mode", choices=("level", "adjacent"))
    g.add_argument("--scope", choices=("table", "query"))
    g.add_argument("--semantics", choices=("exact", "paper"))
    g.add_argument("--similarity-threshold", type=float)
    g.add_argument("--match-mode", choices=("similarity", "co-occurrence"))
    g.add_argument("--no-link-index", action="store_true", help="resolve every query from scratch")


def config_from_args(args: argparse.Namespace) -> EngineConfig:
    names = ("smoothing_factor", "filter_ratio", "mb_stages", "purge_mode", "scope", "semantics",
             "similarity_threshold", "match_mode")
    options = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    if getattr(args, "no_link_index", False):
        options["use_link_index"] = False
    return engine_config(options)


def write_csv(result: QueryResult, out=None) -> None:
    w = csv.writer(out or sys.stdout, quoting=csv.QUOTE_ALL, lineterminator="\n")
    w.writerow(result.columns)
    w.writerows(result.rows)


def format_table(result: QueryResult) -> str:
    widths = [len(c) for c in result.columns]
    for row in result.rows:
        widths = [max(w, len(v)) for w, v in zip(widths, row)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    out = [line(result.columns), "-+-".join("-" * w for w in widths)]
    out.extend(line(r) for r in result.rows)
    n = len(result.rows)
    out.append(f"({n} row{'s' if n != 1 else ''}, {result.metrics.executed_comparisons} comparisons, "
               f"{result.metrics.total_time:.3f} s)")
    return "\n".join(out)


def _engine(args: argparse.Namespace) -> Engine:
    return Engine.from_dir(args.data, args.id_col, config_from_args(args))


def _dump_indices(catalog: Catalog, target: str) -> None:
    path = Path(target)
    names = list(catalog.collections)
    if len(names) == 1 and path.suffix:
        paths = {names[0]: path}
    else:
        path.mkdir(parents=True, exist_ok=True)
        paths = {n: path / f"{n}.tbi.jsonl" for n in names}
    for name, p in paths.items():
        state = catalog.state(name)
        with p.open("w", encoding="utf-8") as fh:
            dump_index(state.tbi, fh, state.collection.id_column)


def cmd_query(args: argparse.Namespace) -> int:
    engine = _engine(args)
    results = [engine.query(args.query, args.planner) for _ in range(max(1, args.repetitions))]
    write_csv(results[-1])
    if args.metrics_out:
        payload = results[0].metrics.to_json()
        if len(results) > 1:
            payload["repetitions"] = [r.metrics.to_json() for r in results]
        Path(args.metrics_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if args.dump_index:
        _dump_indices(engine.catalog, args.dump_index)
    return 0


def run_statement(engine: Engine, text: str, planner: str) -> str:
    stripped = text.strip().rstrip(";").strip()
    if not stripped:
        return ""
    head = stripped.split(None, 1)
    if head[0].upper() == "EXPLAIN":
        if len(head) < 2:
            raise QueryError("EXPLAIN needs a query")
        return engine.explain(head[1], planner if planner != "batch" else "naive")
    if head[0].upper() == "TABLES":
        return "\n".join(f"{n} ({c.size} rows)" for n, c in engine.catalog.collections.items())
    return format_table(engine.query(stripped, planner))


def cmd_repl(args: argparse.Namespace) -> int:
    engine = _engine(args)
    interactive = sys.stdin.isatty()
    if interactive:
        print("tables: " + ", ".join(engine.catalog.collections) + "   (EXPLAIN <query>, TABLES, \\q to quit)")
    buffer: list[str] = []
    while True:
        try:
            line = input("dedupq> " if interactive and not buffer else ("   ...> " if interactive else ""))
        except EOFError:
            break
        if line.strip() in ("\\q", "quit", "exit"):
            break
        buffer.append(line)
        text = " ".join(buffer)
        if not text.rstrip().endswith(";"):
            continue
        buffer.clear()
        try:
            out = run_statement(engine, text, args.planner)
        except (QueryError, ValueError) as exc:
            out = f"error: {exc}"
        if out:
            print(out)
    if buffer:
        try:
            print(run_statement(engine, " ".join(buffer), args.planner))
        except (QueryError, ValueError) as exc:
            print(f"error: {exc}")
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    people = GeneratorConfig(base_size=args.size, duplicate_rate=args.dup_rate, seed=args.seed, name=args.name)
    if args.orgs:
        orgs = GeneratorConfig(base_size=args.orgs, duplicate_rate=args.dup_rate, seed=args.seed + 1, kind="orgs")
        p, pgt, o, ogt = generate_linked_collections(people, orgs)
        pairs = [(p, pgt), (o, ogt)]
    else:
        pairs = [generate_dirty_collection(people)]
    for coll, gt in pairs:
        write_collection(coll, out / f"{coll.name}.csv")
        gt.write(out / f"{coll.name}.gt.csv")
        print(f"{coll.name}: {coll.size} rows, {len(gt)} duplicate pairs -> {out / (coll.name + '.csv')}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    report = run_experiment(args.workload, config_from_args(args))
    print(format_report(report))
    if args.metrics_out:
        Path(args.metrics_out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dedupq", description="Query-time entity resolution over CSV collections.")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True, help="directory of CSV files, one collection each")
        p.add_argument("--id-col", default="id", help="id column name (case-insensitive)")
        p.add_argument("--planner", choices=PLANNERS, default="advanced")
        _add_engine_options(p)
        return p

    q = data_command("query", "run one query and print CSV")
    q.add_argument("--query", required=True)
    q.add_argument("--metrics-out", help="write query metrics as JSON")
    q.add_argument("--dump-index", help="write the table block index as JSON lines (file or directory)")
    q.add_argument("--repetitions", type=int, default=1, help="run the query this many times on one link index")
    q.set_defaults(func=cmd_query)

    r = data_command("repl", "interactive shell")
    r.set_defaults(func=cmd_repl)

    g = sub.add_parser("gen", help="generate a dirty collection with ground truth")
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=1000)
    g.add_argument("--dup-rate", type=float, default=0.4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default="people")
    g.add_argument("--orgs", type=int, default=0, help="also generate a linked organisation table of this size")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench", help="run a TOML workload")
    b.add_argument("--workload", required=True)
    b.add_argument("--metrics-out", help="write the full report as JSON")
    _add_engine_options(b)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (QueryError, ValueError, OSError) as exc:
        print(f"dedupq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Declarative experiment runner.

A workload is a TOML file::

    repetitions = 3

    [[datasets]]
    id = "people10k"
    generate = { size = 10000, dup_rate = 0.4, seed = 1 }
    # linked people/organisation tables: orgs = { size = 2000, dup_rate = 0.4, seed = 2 }
    # or an existing directory of CSV files: path = "data/motivating"

    [[queries]]
    id = "sp10"
    dataset = "people10k"
    table = "people"          # needed when the query is synthesised
    selectivity = 0.10        # or: sql = "SELECT DEDUP * FROM people WHERE ..."

    [[cells]]
    query = "sp10"
    planner = "advanced"      # naive | advanced | batch
    repetitions = 5
    config = { mb_stages = "all" }

    [[ladders]]
    dataset = "people10k"
    table = "people"
    selectivities = [0.05, 0.1, 0.2, 0.4, 0.8]

    [[li_effect]]
    dataset = "people10k"
    table = "people"
    start = 0.44
    growth = 0.3
    steps = 4

Every repetition starts from an empty link index, so repetitions measure
the same work.  The LI-effect protocol is the exception: it deliberately
keeps the link index between the queries of a sequence.
"""

from __future__ import annotations

import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from dedupq.catalog import Catalog, EntityCollection, id_sort_key
from dedupq.engine import Engine
from dedupq.executor import EngineConfig
from dedupq.harness.generator import GeneratorConfig, GroundTruth, generate_dirty_collection, generate_linked_collections
from dedupq.metablocking import parse_stages

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SELECTIVITY_TOLERANCE = 0.02


class WorkloadError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def engine_config(options: dict[str, Any] | None = None, base: EngineConfig | None = None) -> EngineConfig:
    """Build an :class:`EngineConfig` from CLI-style option names."""
    options = dict(options or {})
    base = base or EngineConfig()
    mb, sim = base.metablocking, base.similarity
    mb_fields = {
        "smoothing_factor": "smoothing_factor", "filter_ratio": "filtering_ratio",
        "purge_mode": "purge_mode", "weighting": "weighting", "scope": "scope",
    }
    mb_changes = {dst: options.pop(src) for src, dst in mb_fields.items() if src in options}
    if "mb_stages" in options:
        mb_changes["stages"] = parse_stages(str(options.pop("mb_stages")))
    sim_changes = {}
    if "similarity_threshold" in options:
        sim_changes["threshold"] = float(options.pop("similarity_threshold"))
    if "match_mode" in options:
        sim_changes["mode"] = options.pop("match_mode")
    top = {k: options.pop(k) for k in ("semantics", "use_link_index", "sample_fraction", "stats_seed") if k in options}
    if options:
        raise WorkloadError(f"unknown configuration option(s): {sorted(options)}")
    return replace(base, metablocking=replace(mb, **mb_changes), similarity=replace(sim, **sim_changes), **top)


# ---------------------------------------------------------------- datasets and queries


@dataclass
class Dataset:
    id: str
    catalog: Catalog
    ground_truth: dict[str, GroundTruth] = field(default_factory=dict)


def build_dataset(spec: dict[str, Any], base_dir: Path | None = None) -> Dataset:
    did = spec.get("id")
    if not did:
        raise WorkloadError("dataset without id")
    catalog = Catalog()
    ds = Dataset(did, catalog)
    if "path" in spec:
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        catalog.load_dir(path, spec.get("id_column", "id"))
        for gt_path in sorted(path.glob("*.gt.csv")):
            ds.ground_truth[gt_path.name[: -len(".gt.csv")]] = GroundTruth.read(gt_path)
        return ds
    gen = spec.get("generate")
    if gen is None:
        raise WorkloadError(f"dataset {did!r} needs either 'path' or 'generate'")
    people = generator_config(gen, "people")
    if "orgs" in spec:
        orgs = generator_config(spec["orgs"], "orgs")
        p, pgt, o, ogt = generate_linked_collections(people, orgs)
        for coll, gt in ((p, pgt), (o, ogt)):
            catalog.register(coll)
            ds.ground_truth[coll.name] = gt
    else:
        coll, gt = generate_dirty_collection(people)
        catalog.register(coll)
        ds.ground_truth[coll.name] = gt
    return ds


def generator_config(spec: dict[str, Any], kind: str) -> GeneratorConfig:
    return GeneratorConfig(
        base_size=int(spec.get("size", 1000)),
        duplicate_rate=float(spec.get("dup_rate", 0.4)),
        seed=int(spec.get("seed", 0)),
        kind=kind,
        name=spec.get("name", kind),
    )


def selectivity_query(collection: EntityCollection, selectivity: float, dedup: bool = True,
                      columns: str = "*") -> str:
    """A range query on the id column selecting ``selectivity`` of the entities.

    Ids must be numeric; the bound is taken from the sorted ids, so the
    realised selectivity is exact up to rounding.
    """
    if not 0 < selectivity <= 1:
        raise WorkloadError(f"selectivity must be in (0, 1], got {selectivity}")
    ids = sorted((e.id for e in collection.entities), key=id_sort_key)
    try:
        numeric = [float(x) for x in ids]
    except ValueError:
        raise WorkloadError(f"collection {collection.name!r} has non-numeric ids") from None
    k = max(1, round(selectivity * len(ids)))
    if k >= len(ids):
        bound = numeric[-1] + 1
    else:
        bound = numeric[k]
    realised = sum(1 for x in numeric if x < bound) / len(ids)
    if abs(realised - selectivity) > SELECTIVITY_TOLERANCE:
        raise WorkloadError(f"cannot reach selectivity {selectivity} on {collection.name!r} (got {realised:.3f})")
    bound_text = str(int(bound)) if float(bound).is_integer() else str(bound)
    prefix = "SELECT DEDUP" if dedup else "SELECT"
    return f"{prefix} {columns} FROM {collection.name} WHERE {collection.id_column} < {bound_text}"


def query_text(spec: dict[str, Any], ds: Dataset) -> str:
    if "sql" in spec:
        return spec["sql"]
    if "selectivity" in spec:
        table = spec.get("table") or next(iter(ds.catalog.collections))
        return selectivity_query(ds.catalog.collection(table), float(spec["selectivity"]), spec.get("dedup", True))
    raise WorkloadError(f"query {spec.get('id')!r} needs 'sql' or 'selectivity'")


# ---------------------------------------------------------------- running


def _summary(results) -> dict[str, Any]:
    times = [r.metrics.total_time for r in results]
    comps = [r.metrics.executed_comparisons for r in results]
    stages: dict[str, float] = {}
    for r in results:
        for k, v in r.metrics.stage_breakdown.items():
            stages[k] = stages.get(k, 0.0) + v / len(results)
    return {
        "repetitions": len(results),
        "mean_total_time": statistics.fmean(times),
        "min_total_time": min(times),
        "mean_executed_comparisons": statistics.fmean(comps),
        "rows": len(results[-1].rows),
        "stage_breakdown": stages,
        "runs": [r.metrics.to_json() for r in results],
    }


def run_cell(catalog: Catalog, sql: str, planner: str, config: EngineConfig, repetitions: int = 1) -> dict[str, Any]:
    """Repeat one query, each time with fresh link indices, and average the metrics."""
    results = []
    for _ in range(max(1, repetitions)):
        catalog.reset_links()
        results.append(Engine(catalog, config).query(sql, planner))
    catalog.reset_links()
    return _summary(results)


def run_ladder(catalog: Catalog, table: str, selectivities: list[float], planner: str, config: EngineConfig,
               repetitions: int = 1) -> list[dict[str, Any]]:
    coll = catalog.collection(table)
    out = []
    for s in sorted(selectivities):
        sql = selectivity_query(coll, s)
        out.append({"selectivity": s, "sql": sql, **run_cell(catalog, sql, planner, config, repetitions)})
    return out


def overlapping_queries(collection: EntityCollection, start: float, growth: float, steps: int) -> list[str]:
    """Range queries whose selections each hold the previous one plus ``growth`` more entities."""
    fractions = [start]
    for _ in range(steps - 1):
        fractions.append(min(1.0, fractions[-1] * (1 + growth)))
    return [selectivity_query(collection, f) for f in fractions]


def run_li_effect(catalog: Catalog, table: str, config: EngineConfig, start: float = 0.44, growth: float = 0.3,
                  steps: int = 4, planner: str = "advanced") -> dict[str, Any]:
    """New comparisons per query of an overlapping sequence, with and without the link index.

    With the link index every query after the first also re-issues its
    predecessor; ``repeat_comparisons`` records what that re-issue cost.
    """
    queries = overlapping_queries(catalog.collection(table), start, growth, steps)
    with_li, repeats, times_li = [], [], []
    catalog.reset_links()
    engine = Engine(catalog, replace(config, use_link_index=True))
    for i, sql in enumerate(queries):
        r = engine.query(sql, planner)
        with_li.append(r.metrics.executed_comparisons)
        times_li.append(r.metrics.total_time)
        if i > 0:
            repeats.append(engine.query(queries[i - 1], planner).metrics.executed_comparisons)
    catalog.reset_links()
    without, times_without = [], []
    engine = Engine(catalog, replace(config, use_link_index=False))
    for sql in queries:
        r = engine.query(sql, planner)
        without.append(r.metrics.executed_comparisons)
        times_without.append(r.metrics.total_time)
    catalog.reset_links()
    return {
        "queries": queries,
        "with_li": with_li,
        "without_li": without,
        "repeat_comparisons": repeats,
        "with_li_time": times_li,
        "without_li_time": times_without,
    }


def run_experiment(path: str | Path, base_config: EngineConfig | None = None) -> dict[str, Any]:
    """Execute every cell, ladder and LI-effect sequence of a workload file."""
    path = Path(path)
    with path.open("rb") as fh:
        workload = tomllib.load(fh)
    return run_workload(workload, base_config, path.parent)


def run_workload(workload: dict[str, Any], base_config: EngineConfig | None = None,
                 base_dir: Path | None = None) -> dict[str, Any]:
    default_reps = int(workload.get("repetitions", 1))
    datasets = {d["id"]: build_dataset(d, base_dir) for d in workload.get("datasets", [])}
    queries = {q["id"]: q for q in workload.get("queries", [])}

    def dataset(did: str) -> Dataset:
        if did not in datasets:
            raise WorkloadError(f"unknown dataset {did!r}")
        return datasets[did]

    def config_for(spec: dict[str, Any]) -> EngineConfig:
        return engine_config(spec.get("config"), base_config)

    report: dict[str, Any] = {"cells": [], "ladders": [], "li_effect": []}
    for cell in workload.get("cells", []):
        qid = cell.get("query")
        if qid not in queries:
            raise WorkloadError(f"unknown query {qid!r}")
        q = queries[qid]
        ds = dataset(cell.get("dataset", q.get("dataset")))
        sql = query_text(q, ds)
        planner = cell.get("planner", "advanced")
        summary = run_cell(ds.catalog, sql, planner, config_for(cell), int(cell.get("repetitions", default_reps)))
        report["cells"].append({"query": qid, "dataset": ds.id, "planner": planner, "sql": sql,
                                "config": cell.get("config", {}), **summary})
    for lad in workload.get("ladders", []):
        ds = dataset(lad["dataset"])
        planner = lad.get("planner", "advanced")
        points = run_ladder(ds.catalog, lad["table"], lad["selectivities"], planner, config_for(lad),
                            int(lad.get("repetitions", default_reps)))
        report["ladders"].append({"dataset": ds.id, "table": lad["table"], "planner": planner, "points": points})
    for li in workload.get("li_effect", []):
        ds = dataset(li["dataset"])
        out = run_li_effect(ds.catalog, li["table"], config_for(li), float(li.get("start", 0.44)),
                            float(li.get("growth", 0.3)), int(li.get("steps", 4)), li.get("planner", "advanced"))
        report["li_effect"].append({"dataset": ds.id, "table": li["table"], **out})
    return report


def format_report(report: dict[str, Any]) -> str:
    """Plain-text tables of the headline numbers."""
    lines = []
    if report.get("cells"):
        lines.append(f"{'query':<16}{'dataset':<16}{'planner':<10}{'reps':>5}{'TT mean (s)':>14}{'comparisons':>14}{'rows':>8}")
        for c in report["cells"]:
            lines.append(f"{c['query']:<16}{c['dataset']:<16}{c['planner']:<10}{c['repetitions']:>5}"
                         f"{c['mean_total_time']:>14.4f}{c['mean_executed_comparisons']:>14.0f}{c['rows']:>8}")
    for lad in report.get("ladders", []):
        if lines:
            lines.append("")
        lines.append(f"selectivity ladder on {lad['dataset']}.{lad['table']} ({lad['planner']})")
        lines.append(f"{'selectivity':>12}{'TT mean (s)':>14}{'comparisons':>14}{'rows':>8}")
        for p in lad["points"]:
            lines.append(f"{p['selectivity']:>12.2f}{p['mean_total_time']:>14.4f}"
                         f"{p['mean_executed_comparisons']:>14.0f}{p['rows']:>8}")
    for li in report.get("li_effect", []):
        if lines:
            lines.append("")
        lines.append(f"link index effect on {li['dataset']}.{li['table']}")
        lines.append(f"{'query':>6}{'with LI':>12}{'without LI':>12}")
        for i, (a, b) in enumerate(zip(li["with_li"], li["without_li"]), 1):
            lines.append(f"{i:>6}{a:>12}{b:>12}")
        lines.append(f"re-issued predecessor comparisons: {li['repeat_comparisons']}")
    return "\n".join(lines)

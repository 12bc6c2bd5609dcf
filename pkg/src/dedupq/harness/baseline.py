"""Batch baseline: clean every referenced table completely, then run a plain query.

This deliberately does not reuse the executor's join or grouping operators;
it evaluates the query over grouped entities directly and serves as the
oracle for query-time resolution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from dedupq.catalog import Catalog, Entity, id_sort_key
from dedupq.executor import EngineConfig, GroupedEntity, QueryMetrics, QueryResult, deduplicate, group_cluster, mb_context
from dedupq.planner import output_columns
from dedupq.sqlfront import QueryAst, entity_matches, split_by_alias


@dataclass
class _Group:
    grouped: GroupedEntity
    members: list[Entity]

    def satisfies(self, pred) -> bool:
        return pred is None or any(entity_matches(pred, m) for m in self.members)

    def values(self, attr: str) -> set[str]:
        return {v for m in self.members if (v := m.attributes.get(attr)) is not None}


def clean_collection(catalog: Catalog, name: str, config: EngineConfig, metrics: QueryMetrics) -> list[_Group]:
    state = catalog.state(name)
    coll = state.collection
    dr = deduplicate([e.id for e in coll.entities], state, config, metrics)
    groups = []
    for cluster in dr.clusters:
        members = [dr.entities[x] for x in cluster]
        groups.append(_Group(group_cluster(members, coll.attribute_names), members))
    return groups


def run_batch_baseline(ast: QueryAst, catalog: Catalog, config: EngineConfig | None = None) -> QueryResult:
    config = config or EngineConfig()
    metrics = QueryMetrics()
    names = sorted({s.collection for s in ast.sources})
    states = {n: catalog.state(n) for n in names}
    if config.metablocking.scope == "table":
        for s in states.values():
            mb_context(s, config.metablocking)
    before = {n: s.ledger.counter for n, s in states.items()}
    start = time.perf_counter()

    cleaned = {n: clean_collection(catalog, n, config, metrics) for n in names}
    predicates = split_by_alias(ast.predicate)
    per_alias = {
        s.alias: [g for g in cleaned[s.collection] if g.satisfies(predicates.get(s.alias))] for s in ast.sources
    }
    aliases = ast.aliases
    rows: list[tuple[_Group, ...]] = [(g,) for g in per_alias[aliases[0]]]
    bound = [aliases[0]]
    for alias, cond in zip(aliases[1:], ast.joins):
        lpos = bound.index(cond.left.alias)
        index: dict[str, list[int]] = {}
        candidates = per_alias[alias]
        for i, g in enumerate(candidates):
            for v in g.values(cond.right.attr):
                index.setdefault(v, []).append(i)
        joined = []
        for row in rows:
            hits: set[int] = set()
            for v in row[lpos].values(cond.left.attr):
                hits.update(index.get(v, ()))
            joined.extend(row + (candidates[i],) for i in sorted(hits))
        rows = joined
        bound.append(alias)

    rows.sort(key=lambda r: tuple(id_sort_key(g.grouped.member_ids[0]) for g in r))
    cols, labels = output_columns(ast, catalog)
    positions = [(bound.index(c.alias), c.attr) for c in cols]
    out = [tuple(r[p].grouped.get(a) for p, a in positions) for r in rows]
    metrics.total_time = time.perf_counter() - start
    metrics.executed_comparisons = sum(s.ledger.counter - before[n] for n, s in states.items())
    return QueryResult(labels, out, metrics)

"""Iterator-model executor: scans, filters and the entity-resolution operators.

Rows flowing between operators are tuples aligned with the operator's
``aliases``.  Scans and filters emit ``(Entity,)``; resolution operators emit
tuples of clusters (each a tuple of member ids in ascending id order);
GroupEntities emits tuples of :class:`GroupedEntity`; Project emits tuples of
strings.
"""

from __future__ import annotations

import time
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from dedupq.blocking import block_join, build_query_block_index
from dedupq.catalog import Catalog, CollectionState, Entity, id_sort_key
from dedupq.matching import LinkSet, SimilarityConfig, execute_comparisons
from dedupq.metablocking import MetaBlockingConfig, MetaBlockingContext, build_context, restructure
from dedupq.sqlfront import AttrRef, entity_matches

if TYPE_CHECKING:
    from dedupq.planner import PlanNode

STAGE_NAMES = (
    "blocking", "block-join", "purging", "filtering", "edge-pruning", "comparison-execution", "grouping", "other",
)
GROUP_SEPARATOR = " | "


@dataclass(frozen=True)
class EngineConfig:
    """Everything that influences which duplicates a query finds.

    ``semantics="exact"`` resolves discovered duplicates until no new cluster
    member appears and seeds dirty join sides so that results agree with a
    batch clean.  ``semantics="paper"`` resolves only the query entities (one
    hop) and discards dirty-side entities that do not join before resolving.
    """

    metablocking: MetaBlockingConfig = field(default_factory=MetaBlockingConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    semantics: str = "exact"
    use_link_index: bool = True
    sample_fraction: float = 0.1
    stats_seed: int = 0

    def __post_init__(self) -> None:
        if self.semantics not in ("exact", "paper"):
            raise ValueError(f"unknown semantics {self.semantics!r}")

    @classmethod
    def literal(cls, **mb: Any) -> "EngineConfig":
        """Query-scope meta-blocking, one-hop resolution, co-occurrence matching."""
        mb.setdefault("scope", "query")
        return cls(MetaBlockingConfig(**mb), SimilarityConfig(mode="co-occurrence"), semantics="paper")


@dataclass
class QueryMetrics:
    total_time: float = 0.0
    executed_comparisons: int = 0
    stage_breakdown: dict[str, float] = field(default_factory=lambda: {s: 0.0 for s in STAGE_NAMES})
    new_links: int = 0
    resolved_entities: int = 0
    peak_buffered_rows: int = 0

    def add(self, stage: str, seconds: float) -> None:
        self.stage_breakdown[stage] = self.stage_breakdown.get(stage, 0.0) + seconds

    def to_json(self) -> dict:
        return {
            "total_time": self.total_time,
            "executed_comparisons": self.executed_comparisons,
            "new_links": self.new_links,
            "resolved_entities": self.resolved_entities,
            "peak_buffered_rows": self.peak_buffered_rows,
            "stage_breakdown": dict(self.stage_breakdown),
        }


class ExecutionError(RuntimeError):
    def __init__(self, operator: str, cause: Exception) -> None:
        super().__init__(f"{operator}: {cause}")
        self.operator = operator
        self.cause = cause


# ---------------------------------------------------------------- deduplicate


@dataclass
class DedupResult:
    """Query entities, the duplicates found for them and the links connecting them."""

    qe: frozenset[str]
    entities: dict[str, Entity]
    links: LinkSet
    clusters: list[tuple[str, ...]]

    def cluster_of(self, entity_id: str) -> tuple[str, ...]:
        for c in self.clusters:
            if entity_id in c:
                return c
        raise KeyError(entity_id)


def mb_context(state: CollectionState, cfg: MetaBlockingConfig) -> MetaBlockingContext:
    """Whole-table meta-blocking outcome, cached with the collection's indices."""
    key = ("mb", cfg)
    ctx = state.shared.get(key)
    if ctx is None:
        ctx = build_context(state.tbi, state.itbi, cfg)
        state.shared[key] = ctx
    return ctx


def _sorted_ids(ids: Iterable[str]) -> list[str]:
    return sorted(set(ids), key=id_sort_key)


def deduplicate(
    qe: Iterable[str | Entity],
    state: CollectionState,
    config: EngineConfig,
    metrics: QueryMetrics | None = None,
) -> DedupResult:
    """Resolve the query entities against the whole collection."""
    metrics = metrics if metrics is not None else QueryMetrics()
    coll = state.collection
    qe_ids = _sorted_ids(x.id if isinstance(x, Entity) else x for x in qe)
    for q in qe_ids:
        if q not in coll:
            raise KeyError(f"{coll.name}: unknown entity id {q!r}")
    li, ledger = state.links, state.ledger
    mb = config.metablocking
    context = mb_context(state, mb) if mb.scope == "table" else None

    frontier = [q for q in qe_ids if q not in li.resolved]
    while frontier:
        t0 = time.perf_counter()
        qbi = build_query_block_index((coll.entity(x) for x in frontier), coll.id_column)
        t1 = time.perf_counter()
        eqbi = block_join(qbi, state.tbi)
        t2 = time.perf_counter()
        metrics.add("blocking", t1 - t0)
        metrics.add("block-join", t2 - t1)
        pairs = restructure(eqbi, state.itbi, mb, context, focus=frontier, stage_seconds=metrics.stage_breakdown)
        t3 = time.perf_counter()
        links = execute_comparisons(pairs, eqbi.query_side, ledger, config.similarity, coll, li)
        metrics.new_links += li.merge(links)
        li.resolved.update(frontier)
        metrics.resolved_entities += len(frontier)
        metrics.add("comparison-execution", time.perf_counter() - t3)
        if config.semantics != "exact":
            break
        grown = {x for q in frontier for x in li.cluster(q)}
        frontier = _sorted_ids(x for x in grown if x not in li.resolved)

    member_ids: set[str] = set()
    clusters = {}
    for q in qe_ids:
        c = li.cluster(q)
        key = min(c, key=id_sort_key)
        if key not in clusters:
            clusters[key] = tuple(sorted(c, key=id_sort_key))
            member_ids.update(c)
    ordered = [clusters[k] for k in sorted(clusters, key=id_sort_key)]
    entities = {x: coll.entity(x) for x in _sorted_ids(member_ids)}
    return DedupResult(frozenset(qe_ids), entities, li.linkset_of(member_ids), ordered)


# ---------------------------------------------------------------- grouping


@dataclass(frozen=True)
class GroupedEntity:
    member_ids: tuple[str, ...]
    attributes: dict[str, str]

    def get(self, name: str) -> str:
        return self.attributes.get(name, "")


def group_cluster(members: Iterable[Entity], attribute_names: list[str]) -> GroupedEntity:
    """Merge a duplicate cluster: distinct values per attribute in ascending member-id order."""
    members = sorted(members, key=lambda e: id_sort_key(e.id))
    values: dict[str, str] = {}
    for attr in attribute_names:
        seen = dict.fromkeys(v for v in (e.attributes.get(attr) for e in members) if v is not None)
        values[attr] = GROUP_SEPARATOR.join(seen)
    return GroupedEntity(tuple(e.id for e in members), values)


def group_entities(dr: DedupResult, attribute_names: list[str]) -> Iterator[GroupedEntity]:
    for cluster in dr.clusters:
        yield group_cluster((dr.entities[x] for x in cluster), attribute_names)


# ---------------------------------------------------------------- operators


class ExecContext:
    def __init__(self, catalog: Catalog, config: EngineConfig, metrics: QueryMetrics | None = None) -> None:
        self.catalog = catalog
        self.config = config
        self.metrics = metrics or QueryMetrics()
        self.alias_collection: dict[str, str] = {}
        self.buffered = 0

    def state_for(self, alias: str) -> CollectionState:
        return self.catalog.state(self.alias_collection[alias])

    def buffer(self, n: int) -> None:
        self.buffered += n
        if self.buffered > self.metrics.peak_buffered_rows:
            self.metrics.peak_buffered_rows = self.buffered


class Operator:
    """open/next/close cursor; ``next`` returns ``None`` at end of stream."""

    name = "Operator"

    def __init__(self, ctx: ExecContext, children: list["Operator"], aliases: list[str]) -> None:
        self.ctx = ctx
        self.children = children
        self.aliases = aliases
        self._it: Iterator | None = None

    def open(self) -> None:
        for c in self.children:
            c.open()
        self._it = self.rows()

    def next(self):
        assert self._it is not None, f"{self.name} used before open()"
        try:
            return next(self._it)
        except StopIteration:
            return None
        except ExecutionError:
            raise
        except Exception as exc:  # attach the failing operator
            raise ExecutionError(self.name, exc) from exc

    def close(self) -> None:
        self._it = None
        for c in self.children:
            c.close()

    def __iter__(self):
        while True:
            row = self.next()
            if row is None:
                return
            yield row

    def rows(self) -> Iterator:
        raise NotImplementedError


class TableScan(Operator):
    name = "TableScan"

    def __init__(self, ctx: ExecContext, alias: str) -> None:
        super().__init__(ctx, [], [alias])

    def rows(self):
        for e in self.ctx.state_for(self.aliases[0]).collection.entities:
            yield (e,)


class Filter(Operator):
    name = "Filter"

    def __init__(self, ctx: ExecContext, child: Operator, predicate) -> None:
        super().__init__(ctx, [child], child.aliases)
        self.predicate = predicate

    def rows(self):
        pred = self.predicate
        for row in self.children[0]:
            if entity_matches(pred, row[0]):
                yield row


class Deduplicate(Operator):
    """Collects the query entities of one collection and emits their clusters."""

    name = "Deduplicate"

    def __init__(self, ctx: ExecContext, child: Operator) -> None:
        super().__init__(ctx, [child], child.aliases)
        self.result: DedupResult | None = None

    def rows(self):
        ids = [row[0].id for row in self.children[0]]
        self.ctx.buffer(len(ids))
        state = self.ctx.state_for(self.aliases[0])
        self.result = deduplicate(ids, state, self.ctx.config, self.ctx.metrics)
        self.ctx.buffer(len(self.result.clusters) - len(ids))
        for c in self.result.clusters:
            self.ctx.buffer(-1)
            yield (c,)


def _join_values(cluster: tuple[str, ...], state: CollectionState, attr: str) -> set[str]:
    coll = state.collection
    return {v for x in cluster if (v := coll.entity(x).attributes.get(attr)) is not None}


def dirty_side_seeds(
    clean_rows: list[tuple], clean_pos: int, clean_state: CollectionState, clean_attr: str,
    dirty_qe: list[str], dirty_state: CollectionState, dirty_attr: str, semantics: str,
) -> tuple[list[str], set[str]]:
    """Entities of the dirty side to resolve, plus the ids that join the clean side.

    The join keys include the values of every member of every clean cluster.
    """
    values: set[str] = set()
    for row in clean_rows:
        values |= _join_values(row[clean_pos], clean_state, clean_attr)
    index = dirty_state.value_index(dirty_attr)
    joining = {x for v in values for x in index.get(v, ())}
    qe = set(dirty_qe)
    if semantics == "paper":
        seeds = [x for x in dirty_qe if x in joining]
    elif joining <= qe:
        seeds = _sorted_ids(joining)
    else:
        seeds = list(dirty_qe)
    return seeds, joining


def join_operation(
    left_rows: list[tuple], left_pos: int, left_state: CollectionState, left_attr: str,
    right_rows: list[tuple], right_pos: int, right_state: CollectionState, right_attr: str,
) -> Iterator[tuple]:
    """Pair every left row with each right row whose cluster shares a join value."""
    by_value: dict[str, list[int]] = {}
    for i, row in enumerate(right_rows):
        for v in _join_values(row[right_pos], right_state, right_attr):
            by_value.setdefault(v, []).append(i)
    for lrow in left_rows:
        matches: set[int] = set()
        for v in _join_values(lrow[left_pos], left_state, left_attr):
            matches.update(by_value.get(v, ()))
        for i in sorted(matches):
            yield lrow + right_rows[i]


class DeduplicateJoin(Operator):
    name = "DeduplicateJoin"

    def __init__(self, ctx: ExecContext, left: Operator, right: Operator, on: tuple[AttrRef, AttrRef], join_type: str) -> None:
        super().__init__(ctx, [left, right], left.aliases + right.aliases)
        if join_type not in ("dirty-left", "dirty-right", "clean-both"):
            raise ValueError(f"unknown join type {join_type!r}")
        self.on = on
        self.join_type = join_type
        self.name = f"DeduplicateJoin[{join_type}]"

    def _resolve_dirty(self, clean_rows, clean_op, clean_ref, dirty_op, dirty_ref) -> list[tuple]:
        if len(dirty_op.aliases) != 1:
            raise ValueError("dirty side must be a single collection")
        ctx = self.ctx
        dirty_qe = [row[0].id for row in dirty_op]
        ctx.buffer(len(dirty_qe))
        dirty_state = ctx.state_for(dirty_ref.alias)
        seeds, joining = dirty_side_seeds(
            clean_rows, clean_op.aliases.index(clean_ref.alias), ctx.state_for(clean_ref.alias), clean_ref.attr,
            dirty_qe, dirty_state, dirty_ref.attr, ctx.config.semantics)
        dr = deduplicate(seeds, dirty_state, ctx.config, ctx.metrics)
        qe = set(dirty_qe)
        rows = [(c,) for c in dr.clusters if any(x in qe for x in c) and any(x in joining for x in c)]
        ctx.buffer(len(rows) - len(dirty_qe))
        return rows

    def rows(self):
        left, right = self.children
        lref, rref = self.on
        if lref.alias not in left.aliases or rref.alias not in right.aliases:
            raise ValueError(f"join condition {lref} = {rref} does not match the plan's sides")
        ctx = self.ctx
        if self.join_type == "dirty-right":
            left_rows = list(left)
            ctx.buffer(len(left_rows))
            right_rows = self._resolve_dirty(left_rows, left, lref, right, rref)
        elif self.join_type == "dirty-left":
            right_rows = list(right)
            ctx.buffer(len(right_rows))
            left_rows = self._resolve_dirty(right_rows, right, rref, left, lref)
        else:
            left_rows = list(left)
            right_rows = list(right)
            ctx.buffer(len(left_rows) + len(right_rows))
        yield from join_operation(
            left_rows, left.aliases.index(lref.alias), ctx.state_for(lref.alias), lref.attr,
            right_rows, right.aliases.index(rref.alias), ctx.state_for(rref.alias), rref.attr)
        ctx.buffer(-(len(left_rows) + len(right_rows)))


class HashJoin(Operator):
    """Plain equijoin over raw entity rows; the right input is the build side."""

    name = "HashJoin"

    def __init__(self, ctx: ExecContext, left: Operator, right: Operator, on: tuple[AttrRef, AttrRef]) -> None:
        super().__init__(ctx, [left, right], left.aliases + right.aliases)
        self.on = on

    def rows(self):
        left, right = self.children
        lref, rref = self.on
        lpos, rpos = left.aliases.index(lref.alias), right.aliases.index(rref.alias)
        table: dict[str, list[tuple]] = {}
        for row in right:
            v = row[rpos].attributes.get(rref.attr)
            if v is not None:
                table.setdefault(v, []).append(row)
        self.ctx.buffer(sum(map(len, table.values())))
        for row in left:
            v = row[lpos].attributes.get(lref.attr)
            for match in table.get(v, ()) if v is not None else ():
                yield row + match


class GroupEntities(Operator):
    name = "GroupEntities"

    def rows(self):
        ctx = self.ctx
        states = [ctx.state_for(a) for a in self.aliases]
        child = self.children[0]
        buffered = []
        t_group = 0.0
        for row in child:
            t0 = time.perf_counter()
            grouped = tuple(
                group_cluster((s.collection.entity(x) for x in cluster), s.collection.attribute_names)
                for s, cluster in zip(states, row))
            buffered.append(grouped)
            ctx.buffer(1)
            t_group += time.perf_counter() - t0
        t0 = time.perf_counter()
        buffered.sort(key=lambda g: tuple(id_sort_key(x.member_ids[0]) for x in g))
        ctx.metrics.add("grouping", t_group + time.perf_counter() - t0)
        for g in buffered:
            ctx.buffer(-1)
            yield g

    def __init__(self, ctx: ExecContext, child: Operator) -> None:
        super().__init__(ctx, [child], child.aliases)


class Project(Operator):
    name = "Project"

    def __init__(self, ctx: ExecContext, child: Operator, columns: list[AttrRef]) -> None:
        super().__init__(ctx, [child], child.aliases)
        self.columns = columns

    def rows(self):
        positions = [(self.aliases.index(c.alias), c.attr) for c in self.columns]
        for row in self.children[0]:
            out = []
            for pos, attr in positions:
                item = row[pos]
                if isinstance(item, GroupedEntity):
                    out.append(item.get(attr))
                else:
                    out.append(item.attributes.get(attr) or "")
            yield tuple(out)


# ---------------------------------------------------------------- plan execution


@dataclass
class QueryResult:
    columns: list[str]
    rows: list[tuple[str, ...]]
    metrics: QueryMetrics
    plan: Any = None


def build_operator(node: "PlanNode", ctx: ExecContext) -> Operator:
    kids = [build_operator(c, ctx) for c in node.children]
    kind = node.kind
    if kind == "TableScan":
        ctx.alias_collection[node.alias] = node.collection
        return TableScan(ctx, node.alias)
    if kind == "Filter":
        return Filter(ctx, kids[0], node.predicate)
    if kind == "Deduplicate":
        return Deduplicate(ctx, kids[0])
    if kind == "DeduplicateJoin":
        return DeduplicateJoin(ctx, kids[0], kids[1], node.on, node.join_type)
    if kind == "HashJoin":
        return HashJoin(ctx, kids[0], kids[1], node.on)
    if kind == "GroupEntities":
        return GroupEntities(ctx, kids[0])
    if kind == "Project":
        return Project(ctx, kids[0], list(node.columns))
    raise ValueError(f"unknown plan node {kind!r}")


def execute(plan: "PlanNode", catalog: Catalog, config: EngineConfig | None = None) -> QueryResult:
    config = config or EngineConfig()
    if not config.use_link_index:
        catalog = catalog.fresh()
    metrics = QueryMetrics()
    ctx = ExecContext(catalog, config, metrics)
    root = build_operator(plan, ctx)
    states = {id(catalog.state(n)): catalog.state(n) for n in set(ctx.alias_collection.values())}
    if config.metablocking.scope == "table":
        # part of index construction, like the block indices themselves
        for s in states.values():
            mb_context(s, config.metablocking)
    start = time.perf_counter()
    before = {k: s.ledger.counter for k, s in states.items()}
    root.open()
    try:
        rows = list(root)
    finally:
        root.close()
    metrics.total_time = time.perf_counter() - start
    metrics.executed_comparisons = sum(s.ledger.counter - before[k] for k, s in states.items())
    accounted = sum(v for k, v in metrics.stage_breakdown.items() if k != "other")
    metrics.stage_breakdown["other"] = max(0.0, metrics.total_time - accounted)
    labels = plan.labels or [str(c) for c in plan.columns]
    return QueryResult(list(labels), rows, metrics, plan)

"""Plan construction: naive placement of resolution operators and the cost-based variant."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from dedupq.blocking import tokenize
from dedupq.catalog import Catalog, CollectionState, CollectionStats
from dedupq.metablocking import Block, block_filtering, block_purging
from dedupq.sqlfront import And, AttrRef, Compare, InList, ModCompare, Or, QueryAst, print_predicate, split_by_alias

if TYPE_CHECKING:
    from dedupq.executor import EngineConfig


@dataclass
class PlanNode:
    kind: str
    children: list["PlanNode"] = field(default_factory=list)
    alias: str | None = None
    collection: str | None = None
    predicate: Any = None
    on: tuple[AttrRef, AttrRef] | None = None
    join_type: str | None = None
    columns: list[AttrRef] | None = None
    labels: list[str] | None = None
    annotations: dict[str, Any] = field(default_factory=dict)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def describe(self) -> str:
        if self.kind == "TableScan":
            head = f"TableScan {self.collection}" + (f" AS {self.alias}" if self.alias != self.collection else "")
        elif self.kind == "Filter":
            head = f"Filter {print_predicate(self.predicate)}"
        elif self.kind == "Deduplicate":
            head = f"Deduplicate {self.alias}"
        elif self.kind == "DeduplicateJoin":
            head = f"DeduplicateJoin[{self.join_type}] ON {self.on[0]} = {self.on[1]}"
        elif self.kind == "HashJoin":
            head = f"HashJoin ON {self.on[0]} = {self.on[1]}"
        elif self.kind == "Project":
            head = "Project " + ", ".join(self.labels or [])
        else:
            head = self.kind
        if self.annotations:
            head += "  {" + ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(self.annotations.items())) + "}"
        return head

    def explain(self, depth: int = 0) -> str:
        lines = ["  " * depth + self.describe()]
        for c in self.children:
            lines.append(c.explain(depth + 1))
        return "\n".join(lines)


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.1f}"
    return str(v)


# ---------------------------------------------------------------- estimation


@dataclass
class ComparisonEstimate:
    selected_size: int
    comparisons: float
    per_block: dict[str, float] = field(default_factory=dict)
    low_confidence: bool = False


_UNKNOWN = None  # marker: predicate branch contributes no blocking keys


def _literal_members(text: str, state: CollectionState) -> frozenset[str]:
    keys = tokenize(text)
    if not keys:
        return frozenset()
    sets = [state.tbi.get(k) or frozenset() for k in keys]
    out = sets[0]
    for s in sets[1:]:
        out = out & s
    return out


def _selected(pred, state: CollectionState):
    """Entity ids selected through literal blocks, or ``None`` when no key applies."""
    if isinstance(pred, Compare):
        if pred.op != "=":
            return _UNKNOWN
        return _literal_members(pred.value.text, state)
    if isinstance(pred, InList):
        out: frozenset[str] = frozenset()
        for lit in pred.values:
            out = out | _literal_members(lit.text, state)
        return out
    if isinstance(pred, ModCompare):
        return _UNKNOWN
    parts = [_selected(p, state) for p in pred.items]
    known = [p for p in parts if p is not _UNKNOWN]
    if isinstance(pred, And):
        if not known:
            return _UNKNOWN
        out = known[0]
        for p in known[1:]:
            out = out & p
        return out
    if len(known) < len(parts):
        return _UNKNOWN
    out = frozenset()
    for p in known:
        out = out | p
    return out


def _guess_selectivity(pred) -> float:
    """Fallback share of rows selected by predicates without blocking keys."""
    if isinstance(pred, ModCompare):
        try:
            c = float(pred.value.text)
        except ValueError:
            return 1 / 3
        k = pred.modulus
        residues = range(k)
        if pred.op == "<":
            hit = sum(r < c for r in residues)
        elif pred.op == ">":
            hit = sum(r > c for r in residues)
        else:
            hit = sum(r == c for r in residues)
        return hit / k
    if isinstance(pred, Compare):
        return 1 / 3 if pred.op != "=" else 0.1
    if isinstance(pred, InList):
        return min(1.0, 0.1 * len(pred.values))
    parts = [_guess_selectivity(p) for p in pred.items]
    if isinstance(pred, And):
        return math.prod(parts)
    return min(1.0, sum(parts))


def _block_formula(q_b: int, size: int) -> float:
    return q_b * (size - (q_b + 1) / 2)


def estimate_comparisons(pred, state: CollectionState, config: "EngineConfig") -> ComparisonEstimate:
    """Comparisons the query entities would need after purging and filtering."""
    from dedupq.executor import mb_context

    mb = config.metablocking
    coll = state.collection
    selected = frozenset(e.id for e in coll.entities) if pred is None else _selected(pred, state)
    low_confidence = False
    scale = 1.0
    if selected is _UNKNOWN:
        # No literal maps to a block: estimate over the whole table and scale.
        selected = frozenset(e.id for e in coll.entities)
        scale = _guess_selectivity(pred)
        low_confidence = True
    pending = [x for x in selected if x not in state.links.resolved]
    per_block: dict[str, float] = {}
    if mb.scope == "table":
        ctx = mb_context(state, mb)
        keys = {k for x in pending for k in ctx.retained.get(x, ())}
        pending_set = set(pending)
        for k in keys:
            members = ctx.members[k]
            q_b = sum(1 for x in members if x in pending_set)
            per_block[k] = _block_formula(q_b, len(members))
    else:
        keys = {k for x in pending for k in state.itbi.get(x)}
        blocks = [Block(k, state.tbi.get(k)) for k in keys]
        if "BP" in mb.stages:
            blocks, _ = block_purging(blocks, mb.smoothing_factor, mb.purge_mode)
        if "BF" in mb.stages:
            blocks = block_filtering(blocks, state.itbi, mb.filtering_ratio)
        pending_set = set(pending)
        for b in blocks:
            q_b = sum(1 for x in b.members if x in pending_set)
            per_block[b.key] = _block_formula(q_b, b.size)
    total = sum(per_block.values()) * scale
    size = len(selected) if not low_confidence else round(len(selected) * scale)
    return ComparisonEstimate(size, total, per_block, low_confidence)


def estimate_dedup_size(qe_size: int, stats: CollectionStats | None) -> int:
    """Expected result size once duplicates of ``qe_size`` query entities are added."""
    if stats is None:
        return qe_size
    return round(qe_size * (1 + stats.duplication_factor))


# ---------------------------------------------------------------- plans


def output_columns(ast: QueryAst, catalog: Catalog | None) -> tuple[list[AttrRef], list[str]]:
    multi = len(ast.sources) > 1
    if ast.projections is None:
        if catalog is None:
            raise ValueError("star projection needs a catalog")
        cols = [AttrRef(s.alias, a) for s in ast.sources for a in catalog.collection(s.collection).attribute_names]
    else:
        cols = list(ast.projections)
    labels = [str(c) if multi else c.attr for c in cols]
    return cols, labels


def _branch(ast: QueryAst, alias: str, predicates: dict, dedup: bool) -> PlanNode:
    src = ast.source(alias)
    node = PlanNode("TableScan", alias=alias, collection=src.collection)
    if predicates.get(alias) is not None:
        node = PlanNode("Filter", [node], alias=alias, predicate=predicates[alias])
    if dedup:
        node = PlanNode("Deduplicate", [node], alias=alias, collection=src.collection)
    return node


def _finish(ast: QueryAst, root: PlanNode, catalog: Catalog | None) -> PlanNode:
    cols, labels = output_columns(ast, catalog)
    if ast.dedup:
        root = PlanNode("GroupEntities", [root])
    return PlanNode("Project", [root], columns=cols, labels=labels)


def plan_naive(ast: QueryAst, catalog: Catalog | None = None) -> PlanNode:
    predicates = split_by_alias(ast.predicate)
    aliases = ast.aliases
    root = _branch(ast, aliases[0], predicates, ast.dedup)
    for alias, cond in zip(aliases[1:], ast.joins):
        right = _branch(ast, alias, predicates, ast.dedup)
        if ast.dedup:
            root = PlanNode("DeduplicateJoin", [root, right], on=(cond.left, cond.right), join_type="clean-both")
        else:
            root = PlanNode("HashJoin", [root, right], on=(cond.left, cond.right))
    return _finish(ast, root, catalog)


def _condition_between(ast: QueryAst, joined: set[str], alias: str) -> tuple[AttrRef, AttrRef] | None:
    for cond in ast.joins:
        if cond.left.alias in joined and cond.right.alias == alias:
            return cond.left, cond.right
        if cond.right.alias in joined and cond.left.alias == alias:
            return cond.right, cond.left
    return None


def plan_advanced(ast: QueryAst, catalog: Catalog, config: "EngineConfig") -> PlanNode:
    if not ast.dedup or len(ast.sources) == 1:
        return plan_naive(ast, catalog)
    missing = [s.collection for s in ast.sources if s.collection not in catalog.statistics]
    if missing:
        warnings.warn(f"no statistics for {sorted(set(missing))}; using the naive plan", stacklevel=2)
        return plan_naive(ast, catalog)
    predicates = split_by_alias(ast.predicate)
    aliases = ast.aliases
    order_index = {a: i for i, a in enumerate(aliases)}
    estimates = {}
    dedup_sizes = {}
    for a in aliases:
        src = ast.source(a)
        state = catalog.state(src.collection)
        est = estimate_comparisons(predicates.get(a), state, config)
        estimates[a] = est
        dedup_sizes[a] = estimate_dedup_size(est.selected_size, catalog.statistics.get(src.collection))

    def annotate(node: PlanNode, alias: str) -> PlanNode:
        est = estimates[alias]
        node.annotations.update(est_comparisons=est.comparisons, est_selected=est.selected_size,
                                est_dr=dedup_sizes[alias])
        if est.low_confidence:
            node.annotations["low_confidence"] = True
        return node

    first = min(aliases, key=lambda a: (estimates[a].comparisons, estimates[a].selected_size, order_index[a]))
    joined = {first}
    clean = annotate(_branch(ast, first, predicates, True), first)
    root = clean
    remaining = [a for a in aliases if a != first]
    while remaining:
        candidates = []
        for a in remaining:
            cond = _condition_between(ast, joined, a)
            if cond is None:
                continue
            other = next(r.alias for r in cond if r.alias != a)
            js = catalog.join_stats(ast.source(other).collection, cond[0].attr, ast.source(a).collection,
                                    cond[1].attr, config.sample_fraction, config.stats_seed)
            out = dedup_sizes[a] * js.right_join_fraction
            candidates.append((out, estimates[a].comparisons, order_index[a], a, cond))
        out, _, _, nxt, cond = min(candidates)
        dirty = annotate(_branch(ast, nxt, predicates, False), nxt)
        if root is clean and order_index[nxt] < order_index[first]:
            # keep the written orientation for the first join: the dirty table stays on the left
            root = PlanNode("DeduplicateJoin", [dirty, root], on=(cond[1], cond[0]), join_type="dirty-left")
        else:
            root = PlanNode("DeduplicateJoin", [root, dirty], on=cond, join_type="dirty-right")
        root.annotations["est_join_output"] = out
        joined.add(nxt)
        remaining.remove(nxt)
    return _finish(ast, root, catalog)


def check_plan(plan: PlanNode) -> None:
    """Structural invariants of resolution plans; raises AssertionError when violated."""
    if plan.kind != "Project":
        raise AssertionError("root must be Project")
    dedup = any(n.kind in ("Deduplicate", "DeduplicateJoin") for n in plan.walk())
    if dedup and (len(plan.children) != 1 or plan.children[0].kind != "GroupEntities"):
        raise AssertionError("GroupEntities must be the child of the final Project")

    def paths(node: PlanNode, crossed: int):
        if node.kind == "Deduplicate":
            crossed += 1
        if node.kind == "TableScan":
            yield crossed
            return
        for i, c in enumerate(node.children):
            extra = 0
            if node.kind == "DeduplicateJoin":
                dirty_index = {"dirty-left": 0, "dirty-right": 1}.get(node.join_type)
                extra = 1 if i == dirty_index else 0
            yield from paths(c, crossed + extra)

    if dedup:
        for n in paths(plan, 0):
            if n != 1:
                raise AssertionError(f"a leaf-to-root path crosses {n} resolution steps")

"""Block Purging, Block Filtering and Edge Pruning over block collections.

Stages are pure functions on lists of :class:`Block`.  ``restructure`` chains
them in the fixed order purge -> filter -> prune.  Two scopes are offered:

* ``query``: every stage runs on the enriched query blocks alone, so the
  purge threshold, the filtering prefixes and the pruning mean all depend on
  the query.
* ``table``: the same stages run once over the whole table index and the
  outcome is cached in a :class:`MetaBlockingContext`; a query then keeps
  exactly the candidate pairs the whole-table run would keep for its
  entities.  This makes query-time results independent of what else the
  query selected, which is what lets them agree with a batch clean.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

from dedupq.blocking import Block, EnrichedQueryBlockIndex, InverseTableBlockIndex, TableBlockIndex, block_order

STAGES = ("BP", "BF", "EP")
STAGE_PRESETS = {
    "all": frozenset(STAGES),
    "bp-bf": frozenset({"BP", "BF"}),
    "bp-ep": frozenset({"BP", "EP"}),
    "none": frozenset(),
}


def parse_stages(spec: str) -> frozenset[str]:
    """``all``, ``bp-bf``, ``bp-ep``, ``none`` or any dash/plus separated subset."""
    spec = spec.strip().lower()
    if spec in STAGE_PRESETS:
        return STAGE_PRESETS[spec]
    parts = {p.upper() for p in spec.replace("+", "-").split("-") if p}
    unknown = parts - set(STAGES)
    if unknown:
        raise ValueError(f"unknown meta-blocking stage(s): {sorted(unknown)}")
    return frozenset(parts)


def stages_label(stages: Iterable[str]) -> str:
    s = frozenset(stages)
    for name, preset in STAGE_PRESETS.items():
        if s == preset:
            return name
    return "-".join(x.lower() for x in STAGES if x in s)


@dataclass(frozen=True)
class MetaBlockingConfig:
    smoothing_factor: float = 1.025
    filtering_ratio: float = 0.5
    stages: frozenset[str] = frozenset(STAGES)
    purge_mode: str = "level"  # "adjacent" or "level"
    weighting: str = "cbs"  # "cbs" (common blocks) or "jaccard"
    scope: str = "table"  # "table" or "query"

    def __post_init__(self) -> None:
        if self.smoothing_factor < 1:
            raise ValueError("smoothing factor must be >= 1")
        if not 0 < self.filtering_ratio <= 1:
            raise ValueError("filtering ratio must be in (0, 1]")
        if not set(self.stages) <= set(STAGES):
            raise ValueError(f"unknown stages {set(self.stages) - set(STAGES)}")
        if self.purge_mode not in ("adjacent", "level"):
            raise ValueError(f"unknown purge mode {self.purge_mode!r}")
        if self.weighting not in ("cbs", "jaccard"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.scope not in ("table", "query"):
            raise ValueError(f"unknown scope {self.scope!r}")
        object.__setattr__(self, "stages", frozenset(self.stages))


def canonical_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


class ComparisonSet:
    """Unordered candidate pairs, no self-pairs, no repeats."""

    __slots__ = ("pairs",)

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()) -> None:
        self.pairs: set[tuple[str, str]] = set()
        for a, b in pairs:
            if a == b:
                raise ValueError(f"self-pair {a!r}")
            self.pairs.add(canonical_pair(a, b))

    @classmethod
    def _trusted(cls, pairs: set[tuple[str, str]]) -> "ComparisonSet":
        cs = cls.__new__(cls)
        cs.pairs = pairs
        return cs

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return canonical_pair(*pair) in self.pairs

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ComparisonSet) and self.pairs == other.pairs

    def __repr__(self) -> str:
        return f"ComparisonSet({len(self.pairs)} pairs)"

    def restricted_to(self, focus: set[str] | frozenset[str]) -> "ComparisonSet":
        return ComparisonSet._trusted({p for p in self.pairs if p[0] in focus or p[1] in focus})

    def sorted(self) -> list[tuple[str, str]]:
        return sorted(self.pairs)


# ---------------------------------------------------------------- purging


def _with_comparisons(blocks: Iterable[Block]) -> list[Block]:
    return sorted((b for b in blocks if b.size >= 2), key=lambda b: (b.cardinality, b.key))


def purge_threshold(blocks: Iterable[Block], smoothing_factor: float = 1.025, mode: str = "adjacent") -> int:
    """Largest block cardinality allowed to survive purging."""
    ordered = _with_comparisons(blocks)
    if not ordered:
        return 0
    if mode == "adjacent":
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.size * prev.cardinality < smoothing_factor * cur.cardinality * prev.size:
                return cur.cardinality
        return ordered[-1].cardinality
    if mode == "level":
        return _level_threshold(ordered, smoothing_factor)
    raise ValueError(f"unknown purge mode {mode!r}")


def _level_threshold(ordered: list[Block], sf: float) -> int:
    # Cumulative block assignments and comparisons per distinct cardinality level.
    levels: list[int] = []
    assignments: list[int] = []
    comparisons: list[int] = []
    for b in ordered:
        if not levels or levels[-1] != b.cardinality:
            levels.append(b.cardinality)
            assignments.append(assignments[-1] if assignments else 0)
            comparisons.append(comparisons[-1] if comparisons else 0)
        assignments[-1] += b.size
        comparisons[-1] += b.cardinality
    if len(levels) == 1:
        return levels[0]
    # Walk down from the largest level; stop where adding the next level up
    # barely changes the assignments-per-comparison ratio.
    for i in range(len(levels) - 2, -1, -1):
        if assignments[i] * comparisons[i + 1] < sf * comparisons[i] * assignments[i + 1]:
            return levels[i + 1]
    return levels[1]


def block_purging(
    blocks: Iterable[Block], smoothing_factor: float = 1.025, mode: str = "adjacent"
) -> tuple[list[Block], int]:
    """Drop oversized and comparison-free blocks; returns (kept blocks, threshold)."""
    blocks = list(blocks)
    t = purge_threshold(blocks, smoothing_factor, mode)
    kept = [b for b in blocks if 0 < b.cardinality <= t]
    return block_order(kept), t


# ---------------------------------------------------------------- filtering


def inverse_index(blocks: Iterable[Block]) -> InverseTableBlockIndex:
    """Per-entity key lists ordered by block size, for block lists built by hand."""
    postings: dict[str, list[str]] = {}
    for b in block_order(blocks):
        for e in b.members:
            postings.setdefault(e, []).append(b.key)
    return InverseTableBlockIndex(postings)


def retained_count(total: int, ratio: float) -> int:
    # round() guards against 0.3 * 10 == 3.0000000000000004
    return max(1, math.ceil(round(ratio * total, 9)))


def _filter_memberships(blocks: list[Block], itbi: InverseTableBlockIndex, ratio: float) -> dict[str, list[str]]:
    present = {b.key for b in blocks}
    entities: set[str] = set()
    for b in blocks:
        entities.update(b.members)
    kept: dict[str, list[str]] = {}
    for e in entities:
        keys = [k for k in itbi.get(e) if k in present]
        kept[e] = keys[: retained_count(len(keys), ratio)]
    return kept


def block_filtering(blocks: Iterable[Block], itbi: InverseTableBlockIndex, ratio: float = 0.5) -> list[Block]:
    """Keep every entity only in the smallest ``ratio`` share of its blocks."""
    blocks = list(blocks)
    memberships = _filter_memberships(blocks, itbi, ratio)
    rebuilt: dict[str, set[str]] = {}
    for e, keys in memberships.items():
        for k in keys:
            rebuilt.setdefault(k, set()).add(e)
    return block_order(Block(k, frozenset(m)) for k, m in rebuilt.items() if len(m) >= 2)


# ---------------------------------------------------------------- edge pruning


def blocking_graph(blocks: Iterable[Block]) -> dict[tuple[str, str], int]:
    """Edge -> number of shared blocks."""
    weights: Counter = Counter()
    for b in blocks:
        members = sorted(b.members)
        for i, a in enumerate(members):
            for c in members[i + 1:]:
                weights[(a, c)] += 1
    return dict(weights)


def _jaccard(weights: dict[tuple[str, str], int], blocks: list[Block]) -> dict[tuple[str, str], float]:
    count: Counter = Counter()
    for b in blocks:
        count.update(b.members)
    return {(a, c): w / (count[a] + count[c] - w) for (a, c), w in weights.items()}


def edge_pruning(blocks: Iterable[Block], weighting: str = "cbs") -> ComparisonSet:
    """Keep edges whose weight is at least the mean edge weight."""
    blocks = list(blocks)
    weights: dict = blocking_graph(blocks)
    if not weights:
        return ComparisonSet()
    if weighting == "jaccard":
        weights = _jaccard(weights, blocks)
    mean = sum(weights.values()) / len(weights)
    return ComparisonSet._trusted({e for e, w in weights.items() if w >= mean - 1e-12})


def block_pairs(blocks: Iterable[Block]) -> ComparisonSet:
    """All within-block pairs, deduplicated across blocks."""
    pairs: set[tuple[str, str]] = set()
    for b in blocks:
        members = sorted(b.members)
        for i, a in enumerate(members):
            for c in members[i + 1:]:
                pairs.add((a, c))
    return ComparisonSet._trusted(pairs)


# ---------------------------------------------------------------- whole-table context


@dataclass
class MetaBlockingContext:
    """Outcome of running purge and filter over a whole table index."""

    config: MetaBlockingConfig
    threshold: int | None
    members: dict[str, frozenset[str]]
    retained: dict[str, tuple[str, ...]]
    mean_weight: float | None = None
    build_seconds: dict[str, float] = field(default_factory=dict)

    def weight(self, a: str, b: str, shared: int) -> float:
        if self.config.weighting == "jaccard":
            return shared / (len(self.retained[a]) + len(self.retained[b]) - shared)
        return shared

    def neighbours(self, entity_id: str) -> Counter:
        counts: Counter = Counter()
        for k in self.retained.get(entity_id, ()):
            counts.update(self.members[k])
        counts.pop(entity_id, None)
        return counts


def build_context(tbi: TableBlockIndex, itbi: InverseTableBlockIndex, cfg: MetaBlockingConfig) -> MetaBlockingContext:
    seconds: dict[str, float] = {}
    t0 = time.perf_counter()
    blocks = list(tbi)
    threshold = None
    if "BP" in cfg.stages:
        blocks, threshold = block_purging(blocks, cfg.smoothing_factor, cfg.purge_mode)
    else:
        blocks = [b for b in blocks if b.size >= 2]
    t1 = time.perf_counter()
    seconds["purging"] = t1 - t0
    if "BF" in cfg.stages:
        blocks = block_filtering(blocks, itbi, cfg.filtering_ratio)
    t2 = time.perf_counter()
    seconds["filtering"] = t2 - t1
    members = {b.key: b.members for b in blocks}
    retained_lists: dict[str, list[str]] = {}
    for b in blocks:
        for e in b.members:
            retained_lists.setdefault(e, []).append(b.key)
    retained = {e: tuple(ks) for e, ks in retained_lists.items()}
    ctx = MetaBlockingContext(cfg, threshold, members, retained, None, seconds)
    if "EP" in cfg.stages:
        total = 0.0
        edges = 0
        for e in retained:
            for other, shared in ctx.neighbours(e).items():
                if e < other:
                    total += ctx.weight(e, other, shared)
                    edges += 1
        ctx.mean_weight = total / edges if edges else 0.0
    seconds["edge-pruning"] = time.perf_counter() - t2
    return ctx


def _context_pairs(ctx: MetaBlockingContext, focus: Iterable[str]) -> set[tuple[str, str]]:
    pairs: set[tuple[str, str]] = set()
    mean = ctx.mean_weight
    for q in focus:
        for other, shared in ctx.neighbours(q).items():
            if mean is not None and ctx.weight(q, other, shared) < mean - 1e-12:
                continue
            pairs.add((q, other) if q < other else (other, q))
    return pairs


# ---------------------------------------------------------------- restructure


def restructure(
    eqbi: EnrichedQueryBlockIndex | Iterable[Block],
    itbi: InverseTableBlockIndex,
    cfg: MetaBlockingConfig,
    context: MetaBlockingContext | None = None,
    focus: Iterable[str] | None = None,
    stage_seconds: dict[str, float] | None = None,
) -> ComparisonSet:
    """Apply the configured stages in the order purge -> filter -> prune.

    ``focus`` restricts the result to pairs touching at least one of the given
    ids (the query side by default when an enriched index is passed).  When a
    whole-table ``context`` is supplied, its cached decisions replace the
    per-query ones.
    """
    if focus is None and isinstance(eqbi, EnrichedQueryBlockIndex):
        focus = eqbi.query_side
    focus_set = frozenset(focus) if focus is not None else None
    clock = stage_seconds if stage_seconds is not None else {}

    if context is not None:
        t0 = time.perf_counter()
        if focus_set is None:
            blocks = eqbi.ordered() if isinstance(eqbi, EnrichedQueryBlockIndex) else list(eqbi)
            focus_set = frozenset(e for b in blocks for e in b.members)
        pairs = _context_pairs(context, sorted(focus_set))
        clock["edge-pruning"] = clock.get("edge-pruning", 0.0) + time.perf_counter() - t0
        return ComparisonSet._trusted(pairs)

    blocks = eqbi.ordered() if isinstance(eqbi, EnrichedQueryBlockIndex) else block_order(eqbi)
    t0 = time.perf_counter()
    if "BP" in cfg.stages:
        blocks, _ = block_purging(blocks, cfg.smoothing_factor, cfg.purge_mode)
    t1 = time.perf_counter()
    if "BF" in cfg.stages:
        blocks = block_filtering(blocks, itbi, cfg.filtering_ratio)
    t2 = time.perf_counter()
    if "EP" in cfg.stages:
        result = edge_pruning(blocks, cfg.weighting)
    else:
        result = block_pairs(blocks)
    if focus_set is not None:
        result = result.restricted_to(focus_set)
    t3 = time.perf_counter()
    clock["purging"] = clock.get("purging", 0.0) + t1 - t0
    clock["filtering"] = clock.get("filtering", 0.0) + t2 - t1
    clock["edge-pruning"] = clock.get("edge-pruning", 0.0) + t3 - t2
    return result

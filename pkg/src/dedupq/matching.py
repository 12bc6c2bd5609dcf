"""Comparison execution, the comparison ledger and the progressive link index."""

from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from rapidfuzz.distance import JaroWinkler

from dedupq.metablocking import ComparisonSet, canonical_pair

if TYPE_CHECKING:
    from dedupq.catalog import Entity, EntityCollection

MATCH_MODES = ("similarity", "co-occurrence")


def jaro_winkler(a: str, b: str) -> float:
    """Jaro similarity with the Winkler prefix boost (prefix up to 4, scaling 0.1).

    The boost is applied when the plain Jaro score exceeds 0.7, as in Winkler's
    original definition.  Two empty strings score 0 because there is nothing to match.
    """
    if not a or not b:
        return 0.0
    return JaroWinkler.similarity(a, b, prefix_weight=0.1)


@dataclass(frozen=True)
class SimilarityConfig:
    function: str = "jaro_winkler"
    threshold: float = 0.85
    mode: str = "similarity"  # or "co-occurrence": every surviving candidate pair matches

    def __post_init__(self) -> None:
        if not 0 <= self.threshold <= 1:
            raise ValueError("similarity threshold must be in [0, 1]")
        if self.function != "jaro_winkler":
            raise ValueError(f"unknown similarity function {self.function!r}")
        if self.mode not in MATCH_MODES:
            raise ValueError(f"unknown match mode {self.mode!r}")


def value_vector(entity: "Entity", skip: str | None) -> tuple[str | None, ...]:
    return tuple(v for k, v in entity.attributes.items() if k != skip)


def vector_similarity(x: tuple[str | None, ...], y: tuple[str | None, ...]) -> float:
    total = 0.0
    n = 0
    for a, b in zip(x, y):
        if a and b:
            total += 1.0 if a == b else JaroWinkler.similarity(a, b, prefix_weight=0.1)
            n += 1
    return total / n if n else 0.0


def entity_similarity(e1: "Entity", e2: "Entity", cfg: SimilarityConfig | None = None, skip: str | None = None) -> float:
    """Mean Jaro-Winkler over attributes present in both entities, ``skip`` excluded."""
    total = 0.0
    n = 0
    for attr, a in e1.attributes.items():
        if attr == skip:
            continue
        b = e2.attributes.get(attr)
        if a and b:
            total += jaro_winkler(a, b)
            n += 1
    return total / n if n else 0.0


# ---------------------------------------------------------------- link structures


@dataclass
class LinkSet:
    pairs: set[tuple[str, str]] = field(default_factory=set)

    def add(self, a: str, b: str) -> None:
        if a == b:
            raise ValueError(f"self-link {a!r}")
        self.pairs.add(canonical_pair(a, b))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return canonical_pair(*pair) in self.pairs

    def ids(self) -> set[str]:
        return {x for p in self.pairs for x in p}


class LinkIndex:
    """Union-find over duplicate links plus the set of ids whose links are known."""

    def __init__(self) -> None:
        self._parent: dict[str, str] = {}
        self._members: dict[str, set[str]] = {}
        self.pairs: set[tuple[str, str]] = set()
        self.adjacency: dict[str, set[str]] = {}
        self.resolved: set[str] = set()

    def _find(self, x: str) -> str:
        parent = self._parent
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while parent.get(x, x) != root:
            parent[x], x = root, parent[x]
        return root

    def add(self, a: str, b: str) -> bool:
        """Insert a direct link; returns True when the pair was not known before."""
        pair = canonical_pair(a, b)
        if a == b:
            raise ValueError(f"self-link {a!r}")
        if pair in self.pairs:
            return False
        self.pairs.add(pair)
        self.adjacency.setdefault(a, set()).add(b)
        self.adjacency.setdefault(b, set()).add(a)
        ra, rb = self._find(a), self._find(b)
        if ra != rb:
            ma = self._members.pop(ra, {ra})
            mb = self._members.pop(rb, {rb})
            if len(ma) < len(mb):
                ra, rb, ma, mb = rb, ra, mb, ma
            self._parent[rb] = ra
            self._parent.setdefault(ra, ra)
            ma |= mb
            self._members[ra] = ma
        return True

    def merge(self, links: Iterable[tuple[str, str]]) -> int:
        return sum(self.add(a, b) for a, b in links)

    def cluster(self, x: str) -> frozenset[str]:
        root = self._find(x)
        return frozenset(self._members.get(root, {x}))

    def links(self, x: str) -> frozenset[str]:
        """Every id transitively linked to ``x``."""
        return self.cluster(x) - {x}

    def __getitem__(self, x: str) -> frozenset[str]:
        return self.links(x)

    def same_cluster(self, a: str, b: str) -> bool:
        return self._find(a) == self._find(b)

    def is_resolved(self, x: str) -> bool:
        return x in self.resolved

    def linkset_of(self, ids: Iterable[str]) -> LinkSet:
        """Direct links with both ends inside ``ids``."""
        ids = set(ids)
        out: set[tuple[str, str]] = set()
        for x in ids:
            for y in self.adjacency.get(x, ()):
                if y in ids:
                    out.add(canonical_pair(x, y))
        return LinkSet(out)


def amend_link_index(li: LinkIndex, links: Iterable[tuple[str, str]], resolved: Iterable[str]) -> LinkIndex:
    li.merge(links)
    li.resolved.update(resolved)
    return li


class ComparisonLedger:
    """Pairs already compared; suppresses re-execution across queries."""

    def __init__(self) -> None:
        self.executed: set[tuple[str, str]] = set()
        self.counter = 0

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return canonical_pair(*pair) in self.executed

    def __len__(self) -> int:
        return len(self.executed)

    def record(self, pair: tuple[str, str]) -> bool:
        pair = canonical_pair(*pair)
        if pair in self.executed:
            return False
        self.executed.add(pair)
        self.counter += 1
        return True


def execute_comparisons(
    pairs: ComparisonSet | Iterable[tuple[str, str]],
    qe: Iterable[str],
    ledger: ComparisonLedger,
    cfg: SimilarityConfig,
    collection: "EntityCollection",
    link_index: LinkIndex | None = None,
) -> LinkSet:
    """Compare every not-yet-executed qe-incident pair; return the matches.

    Pairs with both ends outside ``qe`` are dropped, and pairs whose ends are
    already linked in ``link_index`` are skipped without being counted.
    """
    qe = qe if isinstance(qe, (set, frozenset)) else set(qe)
    skip = collection.id_column
    vectors: dict[str, tuple] = {}
    out = LinkSet()
    co_occurrence = cfg.mode == "co-occurrence"
    threshold = cfg.threshold
    executed = ledger.executed
    for pair in pairs:
        a, b = pair
        if a not in qe and b not in qe:
            continue
        if a not in collection or b not in collection:
            raise KeyError(f"{collection.name}: unknown entity in candidate pair {pair}")
        a, b = canonical_pair(a, b)
        if (a, b) in executed:
            continue
        if link_index is not None and link_index.same_cluster(a, b):
            continue
        executed.add((a, b))
        ledger.counter += 1
        if co_occurrence:
            out.pairs.add((a, b))
            continue
        va = vectors.get(a)
        if va is None:
            va = vectors[a] = value_vector(collection.entity(a), skip)
        vb = vectors.get(b)
        if vb is None:
            vb = vectors[b] = value_vector(collection.entity(b), skip)
        if vector_similarity(va, vb) >= threshold:
            out.pairs.add((a, b))
    return out

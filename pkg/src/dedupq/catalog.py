"""Entity data model, CSV loading and the per-collection state owned by a catalog."""

from __future__ import annotations

import csv
import json
import random
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

from dedupq.blocking import InverseTableBlockIndex, TableBlockIndex, build_table_block_index
from dedupq.matching import ComparisonLedger, LinkIndex


class CatalogError(ValueError):
    """Raised for malformed input files or unknown catalog names."""


def id_sort_key(entity_id: str) -> tuple:
    """Natural ordering for ids: numeric ids compare as numbers, before textual ones."""
    if entity_id.isdigit():
        return (0, int(entity_id), entity_id)
    return (1, 0, entity_id)


@dataclass
class Entity:
    id: str
    attributes: dict[str, str | None]

    def get(self, name: str) -> str | None:
        return self.attributes.get(name)


@dataclass
class EntityCollection:
    name: str
    attribute_names: list[str]
    entities: list[Entity]
    id_column: str = "id"
    _by_id: dict[str, Entity] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {}
        for entity in self.entities:
            if not entity.id:
                raise CatalogError(f"{self.name}: empty entity id")
            if entity.id in self._by_id:
                raise CatalogError(f"{self.name}: duplicate id {entity.id!r}")
            self._by_id[entity.id] = entity

    @property
    def size(self) -> int:
        return len(self.entities)

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self) -> Iterator[Entity]:
        return iter(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def entity(self, entity_id: str) -> Entity:
        try:
            return self._by_id[entity_id]
        except KeyError:
            raise KeyError(f"{self.name}: unknown entity id {entity_id!r}") from None

    @property
    def value_attributes(self) -> list[str]:
        """Attributes that carry data, i.e. everything except the id column."""
        return [a for a in self.attribute_names if a != self.id_column]

    def resolve_attribute(self, name: str) -> str | None:
        """Case-insensitive attribute lookup returning the canonical name."""
        if name in self.attribute_names:
            return name
        lowered = name.lower()
        for attr in self.attribute_names:
            if attr.lower() == lowered:
                return attr
        return None


def _resolve_id_column(header: list[str], id_column: str) -> str | None:
    if id_column in header:
        return id_column
    matches = [h for h in header if h.lower() == id_column.lower()]
    return matches[0] if len(matches) == 1 else None


def load_collection(path: str | Path, id_column: str = "id", name: str | None = None) -> EntityCollection:
    """Read a headed CSV file into an EntityCollection named after the file stem."""
    path = Path(path)
    if not path.is_file():
        raise CatalogError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CatalogError(f"{path}: missing header row") from None
        id_attr = _resolve_id_column(header, id_column)
        if id_attr is None:
            raise CatalogError(f"{path}: id column {id_column!r} not in header {header}")
        id_pos = header.index(id_attr)
        entities = []
        seen: set[str] = set()
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CatalogError(f"{path}: ragged row {rownum} ({len(row)} fields, expected {len(header)})")
            eid = row[id_pos]
            if not eid:
                raise CatalogError(f"{path}: empty id on row {rownum}")
            if eid in seen:
                raise CatalogError(f"{path}: duplicate id {eid!r} on row {rownum}")
            seen.add(eid)
            attrs = {h: (v if v != "" else None) for h, v in zip(header, row)}
            entities.append(Entity(eid, attrs))
    return EntityCollection(name or path.stem, list(header), entities, id_column=id_attr)


def write_collection(collection: EntityCollection, path: str | Path) -> None:
    """Write a collection as CSV; absent values become empty cells."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(collection.attribute_names)
        for e in collection.entities:
            writer.writerow([e.attributes.get(a) or "" for a in collection.attribute_names])


def collection_from_rows(name: str, header: list[str], rows: Iterable[Iterable[str]], id_column: str = "id") -> EntityCollection:
    """Build a collection from in-memory rows, applying the same rules as CSV loading."""
    header = list(header)
    id_attr = _resolve_id_column(header, id_column)
    if id_attr is None:
        raise CatalogError(f"id column {id_column!r} not in header {header}")
    entities = []
    for row in rows:
        row = list(row)
        if len(row) != len(header):
            raise CatalogError(f"{name}: ragged row {row!r}")
        attrs = {h: (v if v not in ("", None) else None) for h, v in zip(header, row)}
        entities.append(Entity(attrs[id_attr] or "", attrs))
    return EntityCollection(name, header, entities, id_column=id_attr)


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class CollectionStats:
    sample_size: int
    sample_dedup_size: int
    duplication_factor: float

    def to_json(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "sample_dedup_size": self.sample_dedup_size,
            "duplication_factor": self.duplication_factor,
        }


@dataclass(frozen=True)
class JoinStats:
    left_join_fraction: float
    right_join_fraction: float


def sample_ids(collection: EntityCollection, sample_fraction: float, seed: int) -> list[str]:
    if not 0 < sample_fraction <= 1:
        raise ValueError("sample_fraction must be in (0, 1]")
    ids = [e.id for e in collection.entities]
    k = max(1, round(sample_fraction * len(ids))) if ids else 0
    rng = random.Random(seed)
    picked = ids if k >= len(ids) else rng.sample(ids, k)
    return sorted(picked, key=id_sort_key)


def compute_collection_stats(
    collection: EntityCollection,
    sample_fraction: float = 0.1,
    seed: int = 0,
    state: "CollectionState | None" = None,
    config=None,
) -> CollectionStats:
    """Eagerly clean a seeded sample and measure how much it grows when duplicates are added.

    The sample is resolved against the whole table with a throwaway link index, so the
    session's cache is left untouched.  df is the share of the deduplicated result that
    the sample did not contain.
    """
    from dedupq.executor import EngineConfig, deduplicate

    if collection.size == 0:
        return CollectionStats(0, 0, 0.0)
    sample = sample_ids(collection, sample_fraction, seed)
    scratch = (state or CollectionState.build(collection)).scratch()
    result = deduplicate(sample, scratch, config or EngineConfig())
    dedup_size = len(result.entities)
    df = (dedup_size - len(sample)) / dedup_size if dedup_size else 0.0
    return CollectionStats(len(sample), dedup_size, df)


def compute_join_stats(
    left: EntityCollection,
    right: EntityCollection,
    on: tuple[str, str],
    sample_fraction: float = 0.1,
    seed: int = 0,
) -> JoinStats:
    """Share of sampled entities on each side with an equal join value in the other sample."""
    left_attr, right_attr = on
    for coll, attr in ((left, left_attr), (right, right_attr)):
        if attr not in coll.attribute_names:
            raise CatalogError(f"{coll.name}: unknown attribute {attr!r}")
    lsample = [left.entity(i) for i in sample_ids(left, sample_fraction, seed)] if left.size else []
    rsample = [right.entity(i) for i in sample_ids(right, sample_fraction, seed)] if right.size else []
    lvals = {e.attributes[left_attr] for e in lsample} - {None}
    rvals = {e.attributes[right_attr] for e in rsample} - {None}
    lf = sum(e.attributes[left_attr] in rvals for e in lsample) / len(lsample) if lsample else 0.0
    rf = sum(e.attributes[right_attr] in lvals for e in rsample) / len(rsample) if rsample else 0.0
    return JoinStats(lf, rf)


# ---------------------------------------------------------------- catalog


@dataclass
class CollectionState:
    """Indices and progressive caches for one collection."""

    collection: EntityCollection
    tbi: TableBlockIndex
    itbi: InverseTableBlockIndex
    links: LinkIndex
    ledger: ComparisonLedger
    shared: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, collection: EntityCollection) -> "CollectionState":
        tbi, itbi = build_table_block_index(collection)
        return cls(collection, tbi, itbi, LinkIndex(), ComparisonLedger())

    def scratch(self) -> "CollectionState":
        """Same immutable indices, empty link index and ledger."""
        return CollectionState(self.collection, self.tbi, self.itbi, LinkIndex(), ComparisonLedger(), self.shared)

    def value_index(self, attr: str) -> dict[str, list[str]]:
        """Exact-value hash index over one attribute, built on first use."""
        key = ("values", attr)
        index = self.shared.get(key)
        if index is None:
            index = {}
            for e in self.collection.entities:
                v = e.attributes.get(attr)
                if v is not None:
                    index.setdefault(v, []).append(e.id)
            self.shared[key] = index
        return index


class Catalog:
    def __init__(self) -> None:
        self.states: dict[str, CollectionState] = {}
        self.statistics: dict[str, CollectionStats] = {}
        self.pair_statistics: dict[tuple[str, str, str, str], JoinStats] = {}

    # registration
    def register(self, collection: EntityCollection) -> CollectionState:
        if collection.name in self.states:
            raise CatalogError(f"collection {collection.name!r} already registered")
        state = CollectionState.build(collection)
        self.states[collection.name] = state
        return state

    def load(self, path: str | Path, id_column: str = "id", name: str | None = None) -> EntityCollection:
        coll = load_collection(path, id_column, name)
        self.register(coll)
        return coll

    def load_dir(self, directory: str | Path, id_column: str = "id") -> list[str]:
        """Register every ``*.csv`` in a directory except ground-truth files."""
        names = []
        for path in sorted(Path(directory).glob("*.csv")):
            if path.name.endswith(".gt.csv"):
                continue
            coll = self.load(path, id_column)
            names.append(coll.name)
            sidecar = path.with_name(path.stem + ".stats.json")
            if sidecar.is_file():
                self._read_sidecar(coll.name, sidecar)
        return names

    # lookup
    @property
    def collections(self) -> dict[str, EntityCollection]:
        return {n: s.collection for n, s in self.states.items()}

    def resolve_name(self, name: str) -> str | None:
        if name in self.states:
            return name
        for n in self.states:
            if n.lower() == name.lower():
                return n
        return None

    def collection(self, name: str) -> EntityCollection:
        return self.state(name).collection

    def state(self, name: str) -> CollectionState:
        resolved = self.resolve_name(name)
        if resolved is None:
            raise CatalogError(f"unknown collection {name!r}")
        return self.states[resolved]

    def fresh(self) -> "Catalog":
        """A catalog over the same data and indices with empty link indices and ledgers."""
        other = Catalog()
        other.states = {n: s.scratch() for n, s in self.states.items()}
        other.statistics = dict(self.statistics)
        other.pair_statistics = dict(self.pair_statistics)
        return other

    def reset_links(self) -> None:
        for name, s in self.states.items():
            self.states[name] = s.scratch()

    # statistics
    def analyze(self, name: str, sample_fraction: float = 0.1, seed: int = 0, config=None) -> CollectionStats:
        state = self.state(name)
        stats = compute_collection_stats(state.collection, sample_fraction, seed, state, config)
        self.statistics[state.collection.name] = stats
        return stats

    def join_stats(self, left: str, left_attr: str, right: str, right_attr: str,
                   sample_fraction: float = 0.1, seed: int = 0) -> JoinStats:
        key = (left, left_attr, right, right_attr)
        if key not in self.pair_statistics:
            flipped = (right, right_attr, left, left_attr)
            if flipped in self.pair_statistics:
                js = self.pair_statistics[flipped]
                return JoinStats(js.right_join_fraction, js.left_join_fraction)
            self.pair_statistics[key] = compute_join_stats(
                self.collection(left), self.collection(right), (left_attr, right_attr), sample_fraction, seed)
        return self.pair_statistics[key]

    # sidecar persistence
    def sidecar_payload(self, name: str) -> dict:
        stats = self.statistics[name]
        payload = stats.to_json()
        payload["pairs"] = [
            {"other": r, "on": [la, ra], "left_fraction": js.left_join_fraction, "right_fraction": js.right_join_fraction}
            for (l, la, r, ra), js in sorted(self.pair_statistics.items()) if l == name
        ]
        return payload

    def write_sidecar(self, name: str, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.sidecar_payload(name), indent=2) + "\n", encoding="utf-8")

    def _read_sidecar(self, name: str, path: Path) -> None:
        data = json.loads(path.read_text(encoding="utf-8"))
        self.statistics[name] = CollectionStats(
            int(data["sample_size"]), int(data["sample_dedup_size"]), float(data["duplication_factor"]))
        for pair in data.get("pairs", []):
            la, ra = pair["on"]
            self.pair_statistics[(name, la, pair["other"], ra)] = JoinStats(
                float(pair["left_fraction"]), float(pair["right_fraction"]))

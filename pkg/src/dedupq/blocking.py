"""Schema-agnostic token blocking and the block indices built from it."""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass
from typing import IO, TYPE_CHECKING

if TYPE_CHECKING:
    from dedupq.catalog import Entity, EntityCollection

Normalizer = Callable[[str], str]


def tokenize(value: str | None, normalizer: Normalizer = str.lower) -> list[str]:
    """Whitespace tokens of a normalized value, deduplicated in first-seen order."""
    if not value:
        return []
    return list(dict.fromkeys(normalizer(value).split()))


def entity_tokens(entity: "Entity", skip: str | None = None, normalizer: Normalizer = str.lower) -> list[str]:
    """Distinct blocking keys over all attribute values of an entity except ``skip``."""
    keys: dict[str, None] = {}
    for attr, value in entity.attributes.items():
        if attr == skip or not value:
            continue
        for tok in tokenize(value, normalizer):
            keys[tok] = None
    return list(keys)


@dataclass(frozen=True)
class Block:
    key: str
    members: frozenset[str]

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def cardinality(self) -> int:
        n = len(self.members)
        return n * (n - 1) // 2


def block_order(blocks: Iterable[Block]) -> list[Block]:
    """Ascending by size, ties broken by key."""
    return sorted(blocks, key=lambda b: (len(b.members), b.key))


class TableBlockIndex:
    """Blocking key -> member ids, enumerated in ascending block size."""

    def __init__(self, blocks: dict[str, frozenset[str]]) -> None:
        self.blocks = blocks
        self.order = sorted(blocks, key=lambda k: (len(blocks[k]), k))

    def __iter__(self) -> Iterator[Block]:
        for k in self.order:
            yield Block(k, self.blocks[k])

    def __len__(self) -> int:
        return len(self.blocks)

    def __contains__(self, key: str) -> bool:
        return key in self.blocks

    def get(self, key: str) -> frozenset[str] | None:
        return self.blocks.get(key)

    def size_of(self, key: str) -> int:
        return len(self.blocks[key])


class InverseTableBlockIndex:
    """Entity id -> its blocking keys, each list ascending by referenced block size."""

    def __init__(self, postings: dict[str, list[str]]) -> None:
        self.postings = postings

    def __getitem__(self, entity_id: str) -> list[str]:
        return self.postings[entity_id]

    def get(self, entity_id: str) -> list[str]:
        return self.postings.get(entity_id, [])

    def __len__(self) -> int:
        return len(self.postings)


def build_table_block_index(
    collection: "EntityCollection", normalizer: Normalizer = str.lower
) -> tuple[TableBlockIndex, InverseTableBlockIndex]:
    raw: dict[str, set[str]] = {}
    tokens_of: dict[str, list[str]] = {}
    for entity in collection.entities:
        toks = entity_tokens(entity, collection.id_column, normalizer)
        tokens_of[entity.id] = toks
        for tok in toks:
            raw.setdefault(tok, set()).add(entity.id)
    blocks = {k: frozenset(v) for k, v in raw.items()}
    tbi = TableBlockIndex(blocks)
    rank = {k: i for i, k in enumerate(tbi.order)}
    postings = {eid: sorted(toks, key=rank.__getitem__) for eid, toks in tokens_of.items()}
    return tbi, InverseTableBlockIndex(postings)


@dataclass
class QueryBlockIndex:
    blocks: dict[str, frozenset[str]]

    def __len__(self) -> int:
        return len(self.blocks)


def build_query_block_index(
    query_entities: Iterable["Entity"], id_column: str | None = None, normalizer: Normalizer = str.lower
) -> QueryBlockIndex:
    raw: dict[str, set[str]] = {}
    for entity in query_entities:
        for tok in entity_tokens(entity, id_column, normalizer):
            raw.setdefault(tok, set()).add(entity.id)
    return QueryBlockIndex({k: frozenset(v) for k, v in raw.items()})


@dataclass
class EnrichedQueryBlockIndex:
    """Query blocks widened with every table member sharing the key.

    ``query_side`` holds the ids that came from the query index; all other
    members are table-side candidates.
    """

    blocks: dict[str, frozenset[str]]
    query_side: frozenset[str]

    def __len__(self) -> int:
        return len(self.blocks)

    def ordered(self) -> list[Block]:
        return block_order(Block(k, m) for k, m in self.blocks.items())

    def is_query_side(self, entity_id: str) -> bool:
        return entity_id in self.query_side

    def table_side(self, key: str) -> frozenset[str]:
        return self.blocks[key] - self.query_side


def block_join(qbi: QueryBlockIndex, tbi: TableBlockIndex) -> EnrichedQueryBlockIndex:
    """Hash-join query blocks with table blocks on their keys."""
    blocks: dict[str, frozenset[str]] = {}
    query_side: set[str] = set()
    for key, members in qbi.blocks.items():
        query_side.update(members)
        table_members = tbi.get(key)
        blocks[key] = members | table_members if table_members is not None else members
    return EnrichedQueryBlockIndex(blocks, frozenset(query_side))


def dump_index(tbi: TableBlockIndex, fh: IO[str], id_key=None) -> None:
    """Write one JSON line per block in enumeration order."""
    for block in tbi:
        members = sorted(block.members, key=id_key) if id_key else sorted(block.members)
        fh.write(json.dumps({"key": block.key, "size": block.size, "members": members}) + "\n")

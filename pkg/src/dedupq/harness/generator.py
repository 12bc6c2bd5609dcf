"""Seeded generator of dirty collections with known duplicates.

Base records are drawn from synthetic vocabularies with skewed (Zipf-like)
frequencies, so common tokens form large blocks and rare tokens small ones.
Duplicates are produced from a base record by a bounded number of
corruptions: typos, abbreviation to initials, swapping adjacent tokens, and
blanking a value.
"""

from __future__ import annotations

import csv
import itertools
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from dedupq.blocking import entity_tokens
from dedupq.catalog import Entity, EntityCollection
from dedupq.metablocking import canonical_pair

# Field layout follows the febrl person schema.
PEOPLE_ATTRIBUTES = ["id", "given_name", "surname", "street_number", "address_1", "address_2", "suburb", "postcode",
                     "state", "date_of_birth", "phone_number", "soc_sec_id", "org"]
ORG_ATTRIBUTES = ["id", "name", "city", "country", "founded", "rank"]

_SYLLABLES = ["ka", "ro", "li", "na", "ten", "mar", "shi", "do", "vel", "an", "bri", "cor", "el", "fa", "gan",
              "hol", "is", "jo", "kel", "lu", "mo", "nor", "or", "pa", "quin", "ra", "sa", "tor", "ul", "ven",
              "wil", "xa", "yo", "zed", "ber", "cha", "der", "eth", "fin", "gra"]
_STREET_TYPES = ["street", "road", "avenue", "place", "crescent", "drive", "lane", "court"]
_STATES = ["nsw", "vic", "qld", "wa", "sa", "tas", "act", "nt"]
_AREA_CODES = ["02", "03", "07", "08"]
_BUILDINGS = ["unit", "flat", "apartment", "villa", "block", "lot"]
_ORG_KINDS = ["University", "Institute", "Laboratory", "College", "Foundation", "Centre", "Academy", "Society"]
_ORG_WORDS = ["of", "for", "Advanced", "Applied", "National", "Technology", "Research", "Science", "Data",
              "Systems", "Studies", "Engineering"]
_COUNTRIES = ["Greece", "Italy", "France", "Spain", "Germany", "Norway", "Chile", "Japan", "Kenya", "Canada"]


@dataclass(frozen=True)
class GeneratorConfig:
    base_size: int = 1000  # total records, duplicates included
    duplicate_rate: float = 0.4  # share of records that are duplicates
    max_duplicates_per_record: int = 3
    max_mods_per_attribute: int = 2
    max_mods_per_record: int = 4
    seed: int = 0
    kind: str = "people"  # or "orgs"
    name: str = ""
    # share of originals receiving 1, 2, 3... duplicates (truncated to the maximum)
    duplicate_count_weights: tuple[float, ...] = (0.8, 0.15, 0.05)

    def __post_init__(self) -> None:
        if not 0 <= self.duplicate_rate < 1:
            raise ValueError("duplicate_rate must be in [0, 1)")
        if self.kind not in ("people", "orgs"):
            raise ValueError(f"unknown kind {self.kind!r}")


@dataclass
class GroundTruth:
    pairs: set[tuple[str, str]] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return canonical_pair(*pair) in self.pairs

    def in_scope(self, qe) -> set[tuple[str, str]]:
        return {p for p in self.pairs if p[0] in qe or p[1] in qe}

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for a, b in sorted(self.pairs):
                w.writerow([a, b])

    @classmethod
    def read(cls, path: str | Path) -> "GroundTruth":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            return cls({canonical_pair(a, b) for a, b in csv.reader(fh) if a and b})

    @classmethod
    def from_clusters(cls, clusters) -> "GroundTruth":
        pairs = set()
        for c in clusters:
            for a, b in itertools.combinations(sorted(c), 2):
                pairs.add(canonical_pair(a, b))
        return cls(pairs)


# ---------------------------------------------------------------- vocabularies


class _Vocab:
    def __init__(self, rng: random.Random, size: int, syllables: tuple[int, int], exponent: float = 1.0,
                 capitalize: bool = True) -> None:
        words: dict[str, None] = {}
        while len(words) < size:
            n = rng.randint(*syllables)
            w = "".join(rng.choice(_SYLLABLES) for _ in range(n))
            words[w.capitalize() if capitalize else w] = None
        self.words = list(words)
        self.weights = list(itertools.accumulate(1 / (r + 1) ** exponent for r in range(size)))

    def draw(self, rng: random.Random) -> str:
        return rng.choices(self.words, cum_weights=self.weights)[0]


class _Vocabularies:
    def __init__(self, seed: int) -> None:
        rng = random.Random(f"vocab-{seed}")
        self.given = _Vocab(rng, 600, (2, 3), 0.9)
        self.surname = _Vocab(rng, 4000, (2, 4), 0.7)
        self.street = _Vocab(rng, 1500, (2, 3), 0.6)
        self.suburb = _Vocab(rng, 700, (2, 4), 0.8)
        self.org_word = _Vocab(rng, 400, (2, 3), 0.5)
        self.city = _Vocab(rng, 150, (2, 3), 0.9)


def _person(rng: random.Random, v: _Vocabularies, orgs: list[str] | None) -> dict[str, str | None]:
    rec = {
        "given_name": v.given.draw(rng),
        "surname": v.surname.draw(rng),
        "street_number": str(rng.randint(1, 999)),
        "address_1": f"{v.street.draw(rng)} {rng.choice(_STREET_TYPES)}",
        "address_2": f"{rng.choice(_BUILDINGS)} {rng.randint(1, 60)}" if rng.random() < 0.3 else None,
        "suburb": v.suburb.draw(rng),
        "postcode": str(rng.randint(2000, 7999)),
        "state": rng.choice(_STATES),
        "date_of_birth": f"{rng.randint(1930, 2005)}{rng.randint(1, 12):02d}{rng.randint(1, 28):02d}",
        "phone_number": f"{rng.choice(_AREA_CODES)} {rng.randint(1000, 9999)} {rng.randint(1000, 9999)}",
        "soc_sec_id": str(rng.randint(1000000, 9999999)),
        "org": rng.choice(orgs) if orgs else None,
    }
    if rng.random() < 0.05:
        rec["street_number"] = None
    return rec


def _org(rng: random.Random, v: _Vocabularies) -> dict[str, str | None]:
    words = [v.org_word.draw(rng) for _ in range(rng.randint(1, 2))]
    kind = rng.choice(_ORG_KINDS)
    if rng.random() < 0.5:
        name = f"{kind} {rng.choice(_ORG_WORDS)} {' '.join(words)}"
    else:
        name = f"{' '.join(words)} {kind}"
    return {
        "name": name,
        "city": v.city.draw(rng),
        "country": rng.choice(_COUNTRIES),
        "founded": str(rng.randint(1850, 2020)),
        "rank": str(rng.randint(1, 5)),
    }


# ---------------------------------------------------------------- corruptions


def _typo(value: str, rng: random.Random) -> str:
    chars = list(value)
    positions = [i for i, c in enumerate(chars) if not c.isspace()]
    if not positions:
        return value
    i = rng.choice(positions)
    op = rng.randrange(4)
    letter = rng.choice("abcdefghijklmnopqrstuvwxyz") if not value[i].isdigit() else rng.choice("0123456789")
    if op == 0 and len(positions) > 1:
        del chars[i]
    elif op == 1:
        chars.insert(i, letter)
    elif op == 2:
        chars[i] = letter if letter != chars[i] else (chr(ord(letter) + 1) if letter not in "z9" else "a")
    elif i + 1 < len(chars) and not chars[i + 1].isspace():
        chars[i], chars[i + 1] = chars[i + 1], chars[i]
    else:
        chars.insert(i, letter)
    return "".join(chars)


def _abbreviate(value: str, rng: random.Random) -> str:
    tokens = value.split()
    long_tokens = [i for i, t in enumerate(tokens) if len(t) > 2 and t[0].isalpha()]
    if not long_tokens:
        return value
    if len(long_tokens) >= 2 and rng.random() < 0.5:
        # "Entity Resolution" -> "E.R"
        i = long_tokens[rng.randrange(len(long_tokens) - 1)]
        j = i + 1
        if j < len(tokens) and len(tokens[j]) > 2:
            merged = f"{tokens[i][0].upper()}.{tokens[j][0].upper()}"
            return " ".join(tokens[:i] + [merged] + tokens[j + 1:])
    i = rng.choice(long_tokens)
    tokens[i] = tokens[i][0].upper() + "."
    return " ".join(tokens)


def _swap(value: str, rng: random.Random) -> str:
    tokens = value.split()
    if len(tokens) < 2:
        return value
    i = rng.randrange(len(tokens) - 1)
    tokens[i], tokens[i + 1] = tokens[i + 1], tokens[i]
    return " ".join(tokens)


_CORRUPTIONS = (("typo", _typo, 0.55), ("abbreviate", _abbreviate, 0.2), ("swap", _swap, 0.1), ("blank", None, 0.15))


def _corrupt(record: dict[str, str | None], cfg: GeneratorConfig, rng: random.Random,
             protected: tuple[str, ...]) -> dict[str, str | None]:
    rec = dict(record)
    budget = rng.randint(1, max(1, cfg.max_mods_per_record))
    per_attr: dict[str, int] = {}
    names = [k for k, v in rec.items() if v is not None and k not in protected]
    ops = [c for c in _CORRUPTIONS]
    weights = [c[2] for c in _CORRUPTIONS]
    done = 0
    attempts = 0
    while done < budget and attempts < budget * 10 and names:
        attempts += 1
        attr = rng.choice(names)
        if per_attr.get(attr, 0) >= cfg.max_mods_per_attribute or rec[attr] is None:
            continue
        name, fn, _ = rng.choices(ops, weights=weights)[0]
        if name == "blank":
            rec[attr] = None
        else:
            new = fn(rec[attr], rng)
            if new == rec[attr]:
                continue
            rec[attr] = new
        per_attr[attr] = per_attr.get(attr, 0) + 1
        done += 1
    return rec


def _shares_token(a: Entity, b: Entity) -> bool:
    return bool(set(entity_tokens(a, "id")) & set(entity_tokens(b, "id")))


# ---------------------------------------------------------------- generation


def _duplicate_counts(n_originals: int, n_duplicates: int, cfg: GeneratorConfig, rng: random.Random) -> list[int]:
    counts = [0] * n_originals
    if n_duplicates == 0 or n_originals == 0:
        return counts
    cap = max(1, cfg.max_duplicates_per_record)
    weights = list(cfg.duplicate_count_weights[:cap]) or [1.0]
    order = list(range(n_originals))
    rng.shuffle(order)
    remaining = n_duplicates
    for i in order:
        if remaining <= 0:
            break
        k = min(remaining, rng.choices(range(1, len(weights) + 1), weights=weights)[0])
        counts[i] = k
        remaining -= k
    i = 0
    while remaining > 0:  # not enough originals for the requested share: top up
        if counts[order[i % n_originals]] < cap:
            counts[order[i % n_originals]] += 1
            remaining -= 1
        i += 1
        if i > n_originals * cap:
            break
    return counts


def generate_dirty_collection(cfg: GeneratorConfig, org_names: list[str] | None = None) -> tuple[EntityCollection, GroundTruth]:
    """Build a collection of ``cfg.base_size`` records of which ``duplicate_rate`` are duplicates."""
    rng = random.Random(cfg.seed)
    vocab = _Vocabularies(cfg.seed if cfg.kind == "people" else cfg.seed + 7919)
    n_dup = round(cfg.base_size * cfg.duplicate_rate)
    n_orig = cfg.base_size - n_dup
    counts = _duplicate_counts(n_orig, n_dup, cfg, rng)
    if cfg.kind == "people":
        attributes = list(PEOPLE_ATTRIBUTES)
        if org_names is None:
            attributes.remove("org")
        make = lambda: _person(rng, vocab, org_names)  # noqa: E731
        protected = ("org",)
    else:
        attributes = list(ORG_ATTRIBUTES)
        make = lambda: _org(rng, vocab)  # noqa: E731
        protected = ()

    records: list[tuple[int, dict]] = []  # (cluster number, values)
    for c in range(n_orig):
        base = make()
        base = {k: v for k, v in base.items() if k in attributes}
        records.append((c, base))
        base_entity = Entity("", base)
        for _ in range(counts[c]):
            for _attempt in range(20):
                dup = _corrupt(base, cfg, rng, protected)
                if _shares_token(base_entity, Entity("", dup)):
                    break
            else:
                dup = dict(base)
            records.append((c, dup))
    rng.shuffle(records)
    entities = []
    clusters: dict[int, list[str]] = {}
    for i, (c, values) in enumerate(records):
        eid = str(i)
        attrs = {"id": eid, **{a: values.get(a) for a in attributes if a != "id"}}
        entities.append(Entity(eid, attrs))
        clusters.setdefault(c, []).append(eid)
    name = cfg.name or cfg.kind
    coll = EntityCollection(name, attributes, entities, id_column="id")
    return coll, GroundTruth.from_clusters(clusters.values())


def generate_linked_collections(
    people: GeneratorConfig, orgs: GeneratorConfig
) -> tuple[EntityCollection, GroundTruth, EntityCollection, GroundTruth]:
    """A dirty organisation table and a dirty people table whose ``org`` cites organisation names."""
    org_coll, org_gt = generate_dirty_collection(replace(orgs, kind="orgs"))
    names = sorted({e.attributes["name"] for e in org_coll.entities if e.attributes.get("name")})
    people_coll, people_gt = generate_dirty_collection(replace(people, kind="people"), org_names=names)
    return people_coll, people_gt, org_coll, org_gt

"""Parser, binder and printer for the supported SELECT-PROJECT-JOIN dialect.

Grammar::

    SELECT [DEDUP] <ref, ...|*> FROM <table> [[AS] <alias>]
        ([INNER] JOIN <table> [[AS] <alias>] ON <ref> = <ref>)*
        [WHERE <predicate>]

Predicates combine ``AND``/``OR``/parentheses over leaves ``ref = lit``,
``ref < lit``, ``ref > lit``, ``ref IN (lit, ...)`` and ``MOD(ref, k) op lit``.
"""

from __future__ import annotations

import re
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Union

if TYPE_CHECKING:
    from dedupq.catalog import Catalog


class QueryError(ValueError):
    def __init__(self, message: str, position: int | None = None, token: str | None = None) -> None:
        self.position = position
        self.token = token
        where = f" at position {position}" if position is not None else ""
        near = f" near {token!r}" if token is not None else ""
        super().__init__(f"{message}{where}{near}")


class QuerySyntaxError(QueryError):
    pass


class UnknownTableError(QueryError):
    pass


class UnknownAttributeError(QueryError):
    pass


class AmbiguousAttributeError(QueryError):
    pass


class UnsupportedQueryError(QueryError):
    pass


class DisconnectedJoinError(QueryError):
    pass


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class AttrRef:
    alias: str | None
    attr: str

    def __str__(self) -> str:
        name = _ident(self.attr)
        return f"{_ident(self.alias)}.{name}" if self.alias else name


@dataclass(frozen=True)
class Literal:
    text: str
    quoted: bool = True

    def __str__(self) -> str:
        if self.quoted:
            return "'" + self.text.replace("'", "''") + "'"
        return self.text


@dataclass(frozen=True)
class Compare:
    ref: AttrRef
    op: str
    value: Literal


@dataclass(frozen=True)
class InList:
    ref: AttrRef
    values: tuple[Literal, ...]


@dataclass(frozen=True)
class ModCompare:
    ref: AttrRef
    modulus: int
    op: str
    value: Literal


@dataclass(frozen=True)
class And:
    items: tuple["Predicate", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Predicate", ...]


Predicate = Union[Compare, InList, ModCompare, And, Or]
Leaf = (Compare, InList, ModCompare)


@dataclass(frozen=True)
class Source:
    collection: str
    alias: str


@dataclass(frozen=True)
class JoinCondition:
    """Equijoin; ``left`` refers to an earlier source, ``right`` to the joined one."""

    left: AttrRef
    right: AttrRef
    kind: str = "inner"


@dataclass(frozen=True)
class QueryAst:
    dedup: bool
    projections: tuple[AttrRef, ...] | None  # None means *
    sources: tuple[Source, ...]
    joins: tuple[JoinCondition, ...] = ()
    predicate: Predicate | None = None
    checked: bool = field(default=False, compare=False)

    @property
    def aliases(self) -> list[str]:
        return [s.alias for s in self.sources]

    def source(self, alias: str) -> Source:
        for s in self.sources:
            if s.alias == alias:
                return s
        raise KeyError(alias)


# ---------------------------------------------------------------- lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>'(?:[^']|'')*'|"(?:[^"]|"")*")
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<qident>`[^`]+`)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<>|!=|[=<>])
  | (?P<punct>[,.()*;])
    """,
    re.VERBOSE,
)

KEYWORDS = {"SELECT", "DEDUP", "FROM", "WHERE", "INNER", "JOIN", "ON", "AND", "OR", "IN", "AS", "MOD"}
UNSUPPORTED = {
    "GROUP": "GROUP BY", "ORDER": "ORDER BY", "HAVING": "HAVING", "LEFT": "outer joins", "RIGHT": "outer joins",
    "FULL": "outer joins", "OUTER": "outer joins", "CROSS": "cross joins", "UNION": "UNION", "LIMIT": "LIMIT",
    "DISTINCT": "DISTINCT", "NOT": "NOT", "LIKE": "LIKE", "BETWEEN": "BETWEEN", "NATURAL": "natural joins",
    "COUNT": "aggregations", "SUM": "aggregations", "AVG": "aggregations", "MIN": "aggregations",
    "MAX": "aggregations",
}


@dataclass(frozen=True)
class Token:
    kind: str  # string, number, ident, op, punct, keyword, end
    text: str
    pos: int
    quoted: bool = False  # backtick identifiers are never keywords

    @property
    def upper(self) -> str:
        return self.text.upper()


def lex(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise QuerySyntaxError("unexpected character", pos, text[pos])
        kind = m.lastgroup
        value = m.group()
        if kind == "ws":
            pass
        elif kind == "string":
            quote = value[0]
            tokens.append(Token("string", value[1:-1].replace(quote * 2, quote), pos))
        elif kind == "qident":
            tokens.append(Token("ident", value[1:-1], pos, quoted=True))
        elif kind == "ident" and value.upper() in KEYWORDS:
            tokens.append(Token("keyword", value.upper(), pos))
        else:
            tokens.append(Token(kind, value, pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


_SIMPLE_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _ident(name: str) -> str:
    if _SIMPLE_IDENT.match(name) and name.upper() not in KEYWORDS and name.upper() not in UNSUPPORTED:
        return name
    return f"`{name}`"


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = lex(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None) -> QuerySyntaxError:
        tok = tok or self.tok
        return QuerySyntaxError(message, tok.pos, tok.text or "<end of input>")

    def check_unsupported(self) -> None:
        t = self.tok
        nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else t
        if t.kind == "keyword" and t.text == "SELECT" and self.i > 0:
            raise UnsupportedQueryError("unsupported: subqueries", t.pos, t.text)
        if t.kind != "ident" or t.quoted or t.upper not in UNSUPPORTED:
            return
        word = t.upper
        if word in ("COUNT", "SUM", "AVG", "MIN", "MAX"):
            hit = nxt.kind == "punct" and nxt.text == "("
        elif word in ("GROUP", "ORDER"):
            hit = nxt.kind == "ident" and nxt.upper == "BY"
        elif word in ("LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL"):
            hit = (nxt.kind == "keyword" and nxt.text == "JOIN") or (nxt.kind == "ident" and nxt.upper == "OUTER")
        else:
            hit = True
        if hit:
            raise UnsupportedQueryError(f"unsupported: {UNSUPPORTED[word]}", t.pos, t.text)

    def keyword(self, word: str) -> bool:
        if self.tok.kind == "keyword" and self.tok.text == word:
            self.i += 1
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        self.check_unsupported()
        if not self.keyword(word):
            raise self.error(f"expected {word}")

    def punct(self, ch: str) -> bool:
        if self.tok.kind == "punct" and self.tok.text == ch:
            self.i += 1
            return True
        return False

    def expect_punct(self, ch: str) -> None:
        if not self.punct(ch):
            self.check_unsupported()
            raise self.error(f"expected {ch!r}")

    def identifier(self, what: str) -> str:
        self.check_unsupported()
        if self.tok.kind != "ident":
            raise self.error(f"expected {what}")
        return self.advance().text

    # grammar
    def query(self) -> QueryAst:
        self.expect_keyword("SELECT")
        dedup = self.keyword("DEDUP")
        projections = self.projection_list()
        self.expect_keyword("FROM")
        sources = [self.source()]
        joins = []
        while True:
            self.check_unsupported()
            if self.keyword("INNER"):
                self.expect_keyword("JOIN")
            elif not self.keyword("JOIN"):
                break
            sources.append(self.source())
            self.expect_keyword("ON")
            left = self.ref()
            if not (self.tok.kind == "op" and self.tok.text == "="):
                raise self.error("only equijoins are supported; expected '='")
            self.advance()
            right = self.ref()
            joins.append(JoinCondition(left, right))
        predicate = None
        if self.keyword("WHERE"):
            predicate = self.disjunction()
        self.punct(";")
        if self.tok.kind != "end":
            self.check_unsupported()
            raise self.error("unexpected trailing input")
        return QueryAst(dedup, projections, tuple(sources), tuple(joins), predicate)

    def projection_list(self):
        if self.punct("*"):
            return None
        refs = [self.ref()]
        while self.punct(","):
            refs.append(self.ref())
        return tuple(refs)

    def source(self) -> Source:
        if self.tok.kind == "punct" and self.tok.text == "(":
            raise UnsupportedQueryError("unsupported: subqueries", self.tok.pos, self.tok.text)
        name = self.identifier("table name")
        alias = name
        if self.keyword("AS"):
            alias = self.identifier("alias")
        elif self.tok.kind == "ident" and (self.tok.quoted or self.tok.upper not in UNSUPPORTED):
            alias = self.advance().text
        return Source(name, alias)

    def ref(self) -> AttrRef:
        self.check_unsupported()
        if self.tok.kind == "punct" and self.tok.text == "(":
            raise self.error("expected attribute reference")
        first = self.identifier("attribute reference")
        if self.punct("."):
            return AttrRef(first, self.identifier("attribute name"))
        return AttrRef(None, first)

    def disjunction(self) -> Predicate:
        items = [self.conjunction()]
        while self.keyword("OR"):
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self) -> Predicate:
        items = [self.atom()]
        while self.keyword("AND"):
            items.append(self.atom())
        return items[0] if len(items) == 1 else And(tuple(items))

    def atom(self) -> Predicate:
        self.check_unsupported()
        if self.punct("("):
            inner = self.disjunction()
            self.expect_punct(")")
            return inner
        if self.keyword("MOD"):
            self.expect_punct("(")
            ref = self.ref()
            self.expect_punct(",")
            if self.tok.kind != "number" or not self.tok.text.lstrip("-").isdigit():
                raise self.error("expected integer modulus")
            modulus = int(self.advance().text)
            if modulus <= 0:
                raise self.error("modulus must be positive", self.tokens[self.i - 1])
            self.expect_punct(")")
            op = self.comparison_op()
            return ModCompare(ref, modulus, op, self.literal())
        ref = self.ref()
        if self.keyword("IN"):
            self.expect_punct("(")
            values = [self.literal()]
            while self.punct(","):
                values.append(self.literal())
            self.expect_punct(")")
            return InList(ref, tuple(values))
        op = self.comparison_op()
        return Compare(ref, op, self.literal())

    def comparison_op(self) -> str:
        t = self.tok
        if t.kind == "op":
            if t.text in ("=", "<", ">"):
                self.advance()
                return t.text
            raise UnsupportedQueryError(f"unsupported operator {t.text}", t.pos, t.text)
        self.check_unsupported()
        raise self.error("expected comparison operator")

    def literal(self) -> Literal:
        t = self.tok
        if t.kind == "string":
            self.advance()
            return Literal(t.text, True)
        if t.kind == "number":
            self.advance()
            return Literal(t.text, False)
        self.check_unsupported()
        raise self.error("expected literal")


def parse(text: str, catalog: "Catalog | None" = None) -> QueryAst:
    """Parse query text; when a catalog is given, names are bound and checked."""
    ast = _Parser(text).query()
    if catalog is not None:
        ast = bind(ast, catalog)
    return ast


# ---------------------------------------------------------------- binding


def _map_refs(pred: Predicate | None, fn: Callable[[AttrRef], AttrRef]) -> Predicate | None:
    if pred is None:
        return None
    if isinstance(pred, Compare):
        return Compare(fn(pred.ref), pred.op, pred.value)
    if isinstance(pred, InList):
        return InList(fn(pred.ref), pred.values)
    if isinstance(pred, ModCompare):
        return ModCompare(fn(pred.ref), pred.modulus, pred.op, pred.value)
    return type(pred)(tuple(_map_refs(p, fn) for p in pred.items))


def predicate_refs(pred: Predicate | None) -> list[AttrRef]:
    if pred is None:
        return []
    if isinstance(pred, Leaf):
        return [pred.ref]
    return [r for p in pred.items for r in predicate_refs(p)]


def bind(ast: QueryAst, catalog: "Catalog") -> QueryAst:
    """Resolve table, alias and attribute names to their canonical spelling."""
    sources = []
    seen: dict[str, Source] = {}
    for s in ast.sources:
        name = catalog.resolve_name(s.collection)
        if name is None:
            raise UnknownTableError(f"unknown table {s.collection!r}", token=s.collection)
        alias = name if s.alias == s.collection else s.alias
        if alias.lower() in {a.lower() for a in seen}:
            raise QueryError(f"duplicate alias {alias!r}", token=alias)
        src = Source(name, alias)
        seen[alias] = src
        sources.append(src)

    def resolve(ref: AttrRef) -> AttrRef:
        if ref.alias is not None:
            matches = [a for a in seen if a == ref.alias] or [a for a in seen if a.lower() == ref.alias.lower()]
            if not matches:
                raise UnknownAttributeError(f"unknown table or alias in {ref}", token=str(ref))
            alias = matches[0]
            attr = catalog.collection(seen[alias].collection).resolve_attribute(ref.attr)
            if attr is None:
                raise UnknownAttributeError(f"unknown attribute {ref}", token=str(ref))
            return AttrRef(alias, attr)
        found = []
        for alias, src in seen.items():
            attr = catalog.collection(src.collection).resolve_attribute(ref.attr)
            if attr is not None:
                found.append(AttrRef(alias, attr))
        if not found:
            raise UnknownAttributeError(f"unknown attribute {ref}", token=str(ref))
        if len(found) > 1:
            raise AmbiguousAttributeError(
                f"ambiguous attribute {ref.attr!r} (candidates: {', '.join(map(str, found))})", token=ref.attr)
        return found[0]

    projections = None if ast.projections is None else tuple(resolve(r) for r in ast.projections)
    joins = tuple(JoinCondition(resolve(j.left), resolve(j.right), j.kind) for j in ast.joins)
    predicate = _map_refs(ast.predicate, resolve)
    return validate(QueryAst(ast.dedup, projections, tuple(sources), joins, predicate))


def validate(ast: QueryAst, catalog: "Catalog | None" = None) -> QueryAst:
    """Check join connectivity and predicate placement; orient join conditions.

    Each JOIN clause must relate the table it introduces to one introduced
    earlier.  Conditions are rewritten so ``left`` names the earlier alias.
    Disjunctions spanning several aliases are rejected: every conjunct of the
    WHERE clause has to be evaluable on one table.
    """
    if catalog is not None and not ast.checked:
        return bind(ast, catalog)
    aliases = ast.aliases
    if len(ast.joins) != len(aliases) - 1:
        raise DisconnectedJoinError("every joined table needs exactly one ON condition")
    oriented = []
    for k, cond in enumerate(ast.joins, start=1):
        new_alias = aliases[k]
        earlier = set(aliases[:k])
        l, r = cond.left, cond.right
        if r.alias == new_alias and l.alias in earlier:
            oriented.append(cond)
        elif l.alias == new_alias and r.alias in earlier:
            oriented.append(JoinCondition(r, l, cond.kind))
        else:
            raise DisconnectedJoinError(
                f"join condition {l} = {r} does not connect {new_alias!r} to an earlier table", token=str(l))
    split_by_alias(ast.predicate)
    return QueryAst(ast.dedup, ast.projections, ast.sources, tuple(oriented), ast.predicate, checked=True)


def conjuncts(pred: Predicate | None) -> list[Predicate]:
    if pred is None:
        return []
    if isinstance(pred, And):
        return [c for p in pred.items for c in conjuncts(p)]
    return [pred]


def split_by_alias(pred: Predicate | None) -> dict[str | None, Predicate]:
    """Group the top-level conjuncts by the single alias each one references."""
    groups: dict[str | None, list[Predicate]] = {}
    for c in conjuncts(pred):
        aliases = {r.alias for r in predicate_refs(c)}
        if len(aliases) != 1:
            raise UnsupportedQueryError("unsupported: a disjunction may only reference one table", token=str(c))
        groups.setdefault(aliases.pop(), []).append(c)
    return {a: (items[0] if len(items) == 1 else And(tuple(items))) for a, items in groups.items()}


# ---------------------------------------------------------------- printing


def print_predicate(pred: Predicate) -> str:
    if isinstance(pred, Compare):
        return f"{pred.ref} {pred.op} {pred.value}"
    if isinstance(pred, InList):
        return f"{pred.ref} IN ({', '.join(map(str, pred.values))})"
    if isinstance(pred, ModCompare):
        return f"MOD({pred.ref}, {pred.modulus}) {pred.op} {pred.value}"
    joiner = " AND " if isinstance(pred, And) else " OR "
    parts = []
    for p in pred.items:
        text = print_predicate(p)
        parts.append(f"({text})" if isinstance(p, (And, Or)) else text)
    return joiner.join(parts)


def print_query(ast: QueryAst) -> str:
    def src(s: Source) -> str:
        return _ident(s.collection) if s.alias == s.collection else f"{_ident(s.collection)} {_ident(s.alias)}"

    out = ["SELECT"]
    if ast.dedup:
        out.append("DEDUP")
    out.append("*" if ast.projections is None else ", ".join(map(str, ast.projections)))
    out.append("FROM " + src(ast.sources[0]))
    for s, j in zip(ast.sources[1:], ast.joins):
        out.append(f"INNER JOIN {src(s)} ON {j.left} = {j.right}")
    if ast.predicate is not None:
        out.append("WHERE " + print_predicate(ast.predicate))
    return " ".join(out)


# ---------------------------------------------------------------- evaluation


def as_number(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    return value if value == value else None  # NaN never compares


def compare_values(value: str | None, op: str, literal: str) -> bool:
    """Numeric comparison when both sides parse as numbers, string comparison otherwise."""
    if value is None:
        return False
    a, b = as_number(value), as_number(literal)
    if a is None or b is None:
        a, b = value, literal
    if op == "=":
        return a == b
    if op == "<":
        return a < b
    if op == ">":
        return a > b
    raise ValueError(f"unknown operator {op!r}")


def _as_int(text: str | None) -> int | None:
    if text is None:
        return None
    try:
        return int(text.strip())
    except ValueError:
        return None


def evaluate(pred: Predicate | None, lookup: Callable[[AttrRef], str | None]) -> bool:
    if pred is None:
        return True
    if isinstance(pred, Compare):
        return compare_values(lookup(pred.ref), pred.op, pred.value.text)
    if isinstance(pred, InList):
        v = lookup(pred.ref)
        return any(compare_values(v, "=", lit.text) for lit in pred.values)
    if isinstance(pred, ModCompare):
        n = _as_int(lookup(pred.ref))
        if n is None:
            return False
        return compare_values(str(n % pred.modulus), pred.op, pred.value.text)
    if isinstance(pred, And):
        return all(evaluate(p, lookup) for p in pred.items)
    return any(evaluate(p, lookup) for p in pred.items)


def entity_matches(pred: Predicate | None, entity) -> bool:
    """Evaluate a single-table predicate against one entity."""
    attrs = entity.attributes
    return evaluate(pred, lambda ref: attrs.get(ref.attr))

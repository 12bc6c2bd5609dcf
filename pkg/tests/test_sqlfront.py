from __future__ import annotations

import pytest

from conftest import MOTIVATING_QUERY, entity
from dedupq.sqlfront import (
    AmbiguousAttributeError,
    And,
    AttrRef,
    Compare,
    DisconnectedJoinError,
    InList,
    Literal,
    ModCompare,
    Or,
    QueryError,
    QuerySyntaxError,
    UnknownAttributeError,
    UnknownTableError,
    UnsupportedQueryError,
    compare_values,
    entity_matches,
    parse,
    print_query,
    split_by_alias,
)


def test_motivating_query_parses_and_binds(motivating):
    ast = parse(MOTIVATING_QUERY, motivating)
    assert ast.dedup
    assert ast.projections == (AttrRef("P", "Title"), AttrRef("P", "Year"), AttrRef("V", "Rank"))
    assert [s.collection for s in ast.sources] == ["P", "V"]
    (join,) = ast.joins
    # attribute names take the catalog's spelling
    assert (join.left, join.right) == (AttrRef("P", "Venue"), AttrRef("V", "Title"))
    assert ast.predicate == Compare(AttrRef("P", "Venue"), "=", Literal("EDBT"))


def test_star_projection_and_no_dedup():
    ast = parse("SELECT * FROM P")
    assert ast.projections is None and not ast.dedup and ast.predicate is None


def test_predicate_forms():
    ast = parse("SELECT * FROM t WHERE MOD(id, 10) = 3 AND (a = 'x' OR b IN ('y', 2)) AND c > 4.5;")
    assert isinstance(ast.predicate, And)
    mod, disj, gt = ast.predicate.items
    assert mod == ModCompare(AttrRef(None, "id"), 10, "=", Literal("3", False))
    assert isinstance(disj, Or) and isinstance(disj.items[1], InList)
    assert gt == Compare(AttrRef(None, "c"), ">", Literal("4.5", False))


def test_quoted_literals_and_identifiers():
    ast = parse("SELECT `my col` FROM t WHERE x = 'it''s'")
    assert ast.projections == (AttrRef(None, "my col"),)
    assert ast.predicate.value.text == "it's"


def test_keywords_are_case_insensitive():
    assert parse("select dedup * from t where a = 1") == parse("SELECT DEDUP * FROM t WHERE a = 1")


def test_alias_forms(motivating):
    ast = parse("SELECT DEDUP x.Title FROM P AS x INNER JOIN V y ON x.Venue = y.Title", motivating)
    assert [s.alias for s in ast.sources] == ["x", "y"]


def test_self_join_needs_aliases(motivating):
    ast = parse("SELECT * FROM P a JOIN P b ON a.Year = b.Year", motivating)
    assert [s.collection for s in ast.sources] == ["P", "P"]
    with pytest.raises(QueryError, match="duplicate alias"):
        parse("SELECT * FROM P JOIN P ON P.Year = P.Year", motivating)


def test_unknown_names(motivating):
    with pytest.raises(UnknownTableError):
        parse("SELECT * FROM Nope", motivating)
    with pytest.raises(UnknownAttributeError):
        parse("SELECT P.Pages FROM P", motivating)
    with pytest.raises(UnknownAttributeError):
        parse("SELECT Q.Title FROM P", motivating)


def test_ambiguous_attribute(motivating):
    with pytest.raises(AmbiguousAttributeError, match="candidates"):
        parse("SELECT Title FROM P JOIN V ON P.Venue = V.Title", motivating)
    # unambiguous bare names resolve to their table
    ast = parse("SELECT Rank FROM P JOIN V ON P.Venue = V.Title", motivating)
    assert ast.projections == (AttrRef("V", "Rank"),)


def test_join_conditions_are_oriented(motivating):
    ast = parse("SELECT * FROM P JOIN V ON V.Title = P.Venue", motivating)
    assert ast.joins[0].left.alias == "P"


def test_disconnected_join(motivating):
    with pytest.raises(DisconnectedJoinError):
        parse("SELECT * FROM P JOIN V ON P.Venue = P.Title", motivating)


@pytest.mark.parametrize("sql, what", [
    ("SELECT * FROM t GROUP BY a", "GROUP BY"),
    ("SELECT * FROM t ORDER BY a", "ORDER BY"),
    ("SELECT * FROM t LEFT JOIN u ON t.a = u.a", "outer joins"),
    ("SELECT COUNT(a) FROM t", "aggregations"),
    ("SELECT * FROM (SELECT * FROM t)", "subqueries"),
    ("SELECT * FROM t WHERE a IN (SELECT b FROM u)", "subqueries"),
    ("SELECT * FROM t WHERE NOT a = 1", "NOT"),
    ("SELECT * FROM t WHERE a LIKE 'x'", "LIKE"),
    ("SELECT * FROM t WHERE a <= 1", "operator"),
    ("SELECT * FROM t LIMIT 3", "LIMIT"),
])
def test_unsupported_constructs(sql, what):
    with pytest.raises(UnsupportedQueryError, match=what):
        parse(sql)


def test_non_equijoin():
    with pytest.raises(QuerySyntaxError, match="equijoin"):
        parse("SELECT * FROM t JOIN u ON t.a > u.b")


def test_syntax_error_position():
    with pytest.raises(QuerySyntaxError) as err:
        parse("SELECT * FROM t WHERE a = ")
    assert err.value.position is not None


def test_cross_table_disjunction_rejected(motivating):
    with pytest.raises(UnsupportedQueryError, match="disjunction"):
        parse("SELECT * FROM P JOIN V ON P.Venue = V.Title WHERE P.Year = 1 OR V.Rank = 'A'", motivating)


def test_split_by_alias(motivating):
    ast = parse("SELECT * FROM P JOIN V ON P.Venue = V.Title WHERE P.Year > 2000 AND V.Rank = 'A' AND P.Year < 2010",
                motivating)
    parts = split_by_alias(ast.predicate)
    assert set(parts) == {"P", "V"}
    assert isinstance(parts["P"], And) and len(parts["P"].items) == 2


@pytest.mark.parametrize("sql", [
    MOTIVATING_QUERY,
    "SELECT * FROM t WHERE MOD(id, 10) = 3 AND (a = 'x' OR b IN ('y', 2))",
    "SELECT DEDUP a.x FROM t a INNER JOIN u b ON a.x = b.y WHERE a.z < 4",
    "SELECT `odd name` FROM t WHERE `odd name` = 'it''s'",
])
def test_print_then_parse_round_trip(sql):
    ast = parse(sql)
    assert parse(print_query(ast)) == ast


def test_value_comparison():
    assert compare_values("10", ">", "9")  # numeric, not lexicographic
    assert compare_values("b", ">", "a")
    assert compare_values("2008", "=", "2008.0")
    assert not compare_values(None, "=", "x")


def test_entity_predicate_evaluation():
    e = entity("7", year="2008", venue="EDBT")
    assert entity_matches(parse("SELECT * FROM t WHERE MOD(id, 4) = 3").predicate, e)
    assert entity_matches(parse("SELECT * FROM t WHERE venue IN ('VLDB', 'EDBT') AND year > 2000").predicate, e)
    assert not entity_matches(parse("SELECT * FROM t WHERE pages = 3").predicate, e)

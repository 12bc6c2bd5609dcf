"""Query facade tying parsing, planning and execution to one catalog."""

from __future__ import annotations

from pathlib import Path

from dedupq.catalog import Catalog
from dedupq.executor import EngineConfig, QueryResult, execute
from dedupq.planner import PlanNode, plan_advanced, plan_naive
from dedupq.sqlfront import QueryAst, parse

PLANNERS = ("naive", "advanced", "batch")


class Engine:
    def __init__(self, catalog: Catalog | None = None, config: EngineConfig | None = None, auto_analyze: bool = True) -> None:
        self.catalog = catalog or Catalog()
        self.config = config or EngineConfig()
        self.auto_analyze = auto_analyze

    @classmethod
    def from_dir(cls, directory: str | Path, id_column: str = "id", config: EngineConfig | None = None) -> "Engine":
        engine = cls(config=config)
        engine.catalog.load_dir(directory, id_column)
        return engine

    def parse(self, query: str | QueryAst) -> QueryAst:
        return query if isinstance(query, QueryAst) else parse(query, self.catalog)

    def ensure_statistics(self, ast: QueryAst) -> None:
        """Offline statistics for every table of the query, computed on first need."""
        for s in ast.sources:
            if s.collection not in self.catalog.statistics:
                self.catalog.analyze(s.collection, self.config.sample_fraction, self.config.stats_seed, self.config)

    def plan(self, query: str | QueryAst, planner: str = "advanced") -> PlanNode:
        ast = self.parse(query)
        if planner == "naive" or not ast.dedup:
            return plan_naive(ast, self.catalog)
        if planner == "advanced":
            if self.auto_analyze and len(ast.sources) > 1:
                self.ensure_statistics(ast)
            return plan_advanced(ast, self.catalog, self.config)
        raise ValueError(f"planner {planner!r} has no operator tree")

    def explain(self, query: str | QueryAst, planner: str = "advanced") -> str:
        return self.plan(query, planner).explain()

    def query(self, query: str | QueryAst, planner: str = "advanced") -> QueryResult:
        if planner not in PLANNERS:
            raise ValueError(f"unknown planner {planner!r}; choose from {PLANNERS}")
        ast = self.parse(query)
        if planner == "batch" and ast.dedup:
            from dedupq.harness.baseline import run_batch_baseline

            return run_batch_baseline(ast, self.catalog, self.config)
        plan = self.plan(ast, planner if planner != "batch" else "naive")
        return execute(plan, self.catalog, self.config)

from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
MOTIVATING = ROOT / "data" / "motivating"
sys.path.insert(0, str(Path(__file__).resolve().parent))

from dedupq import Catalog, Engine, EngineConfig  # noqa: E402
from dedupq.catalog import Entity, collection_from_rows  # noqa: E402

MOTIVATING_QUERY = (
    "SELECT DEDUP P.Title, P.Year, V.Rank FROM P INNER JOIN V ON P.venue = V.title WHERE P.venue='EDBT'"
)


def golden_config() -> EngineConfig:
    """Configuration under which the motivating example reproduces its published result."""
    return EngineConfig.literal(filtering_ratio=0.6)


@pytest.fixture
def motivating() -> Catalog:
    cat = Catalog()
    cat.load_dir(MOTIVATING, "Id")
    return cat


@pytest.fixture
def motivating_engine(motivating) -> Engine:
    return Engine(motivating, golden_config())


def make_collection(name: str, rows: list[list[str]], header: list[str] | None = None):
    header = header or ["id"] + [f"a{i}" for i in range(len(rows[0]) - 1)]
    return collection_from_rows(name, header, rows)


def entity(eid: str, **attrs: str) -> Entity:
    return Entity(eid, {"id": eid, **attrs})


# ---------------------------------------------------------------- acceptance verdicts

VERDICTS: list[str] = []


def record_verdict(label: str, ok: bool, detail: str) -> bool:
    """Remember one PASS/FAIL line for the end-of-session summary."""
    line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

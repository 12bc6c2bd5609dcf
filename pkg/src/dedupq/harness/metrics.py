"""Evaluation measures: pair completeness and the candidate pairs it is computed on."""

from __future__ import annotations

from collections.abc import Iterable

from dedupq.blocking import block_join, build_query_block_index
from dedupq.catalog import CollectionState
from dedupq.executor import EngineConfig, mb_context
from dedupq.harness.generator import GroundTruth
from dedupq.metablocking import ComparisonSet, restructure


def pair_completeness(comparisons: ComparisonSet | Iterable[tuple[str, str]], gt: GroundTruth, qe: Iterable[str]) -> float:
    """Share of ground-truth pairs touching ``qe`` that are still candidate pairs."""
    qe = set(qe)
    scope = gt.in_scope(qe)
    if not scope:
        return 1.0
    candidates = comparisons if isinstance(comparisons, ComparisonSet) else ComparisonSet(comparisons)
    return sum(1 for p in scope if p in candidates) / len(scope)


def candidate_pairs(qe: Iterable[str], state: CollectionState, config: EngineConfig) -> ComparisonSet:
    """Post meta-blocking candidate pairs touching ``qe``, ignoring any cache."""
    coll = state.collection
    qe = sorted(set(qe))
    qbi = build_query_block_index((coll.entity(x) for x in qe), coll.id_column)
    eqbi = block_join(qbi, state.tbi)
    mb = config.metablocking
    ctx = mb_context(state, mb) if mb.scope == "table" else None
    return restructure(eqbi, state.itbi, mb, ctx, focus=qe)


def measure_pc(qe: Iterable[str], state: CollectionState, config: EngineConfig, gt: GroundTruth) -> float:
    qe = list(qe)
    return pair_completeness(candidate_pairs(qe, state, config), gt, qe)

"""Deduplicating SELECT-PROJECT-JOIN queries over dirty CSV collections."""

from dedupq.catalog import Catalog, Entity, EntityCollection, load_collection
from dedupq.engine import Engine
from dedupq.executor import EngineConfig, QueryMetrics, QueryResult
from dedupq.matching import SimilarityConfig
from dedupq.metablocking import MetaBlockingConfig

__all__ = [
    "Catalog", "Engine", "EngineConfig", "Entity", "EntityCollection", "MetaBlockingConfig", "QueryMetrics",
    "QueryResult", "SimilarityConfig", "load_collection",
]
__version__ = "0.1.0"

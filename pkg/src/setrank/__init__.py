"""Zero-shot LLM re-ranking with setwise-accelerated top-k sorting."""

from .core import (
    CandidateList,
    CapabilityUnsupported,
    ConfigurationError,
    CostLedger,
    Document,
    Method,
    Query,
    RankerConfig,
    ScoringMode,
)
from .oracle import MockOracle, Oracle, OracleRequest
from .rankers import RankResult, rank

__all__ = [
    "CandidateList",
    "CapabilityUnsupported",
    "ConfigurationError",
    "CostLedger",
    "Document",
    "Method",
    "MockOracle",
    "Oracle",
    "OracleRequest",
    "Query",
    "RankResult",
    "RankerConfig",
    "ScoringMode",
    "rank",
]

__version__ = "0.1.0"

"""Domain types shared by every part of the re-ranking engine."""

from __future__ import annotations

import enum
import random
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

LABEL_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
LABEL_PREFIX = "Passage "

# Document truncation budget per set size; larger sets share the same prompt window.
DEFAULT_MAX_DOC_TOKENS = {2: 128, 3: 128, 5: 85, 7: 60, 9: 45}


class SetrankError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(SetrankError, ValueError):
    pass


class LabelOverflow(SetrankError, ValueError):
    pass


class ArityMismatch(SetrankError, ValueError):
    pass


class CapabilityUnsupported(SetrankError):
    """The oracle backend cannot answer a request of this shape (e.g. no logits)."""


class RetriableTransportError(SetrankError):
    pass


class Method(str, enum.Enum):
    POINTWISE_QLM = "pointwise.qlm"
    POINTWISE_YES_NO = "pointwise.yes_no"
    LISTWISE_GENERATION = "listwise.generation"
    LISTWISE_LIKELIHOOD = "listwise.likelihood"
    PAIRWISE_ALLPAIR = "pairwise.allpair"
    PAIRWISE_HEAPSORT = "pairwise.heapsort"
    PAIRWISE_BUBBLESORT = "pairwise.bubblesort"
    SETWISE_HEAPSORT = "setwise.heapsort"
    SETWISE_BUBBLESORT = "setwise.bubblesort"

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        try:
            return cls(value)
        except ValueError:
            raise ConfigurationError(f"unknown method {value!r}") from None

    @property
    def family(self) -> str:
        return self.value.split(".", 1)[0]

    @property
    def is_pairwise(self) -> bool:
        return self.family == "pairwise"

    @property
    def needs_logits(self) -> bool:
        return self in (Method.POINTWISE_QLM, Method.POINTWISE_YES_NO, Method.LISTWISE_LIKELIHOOD)


class ScoringMode(str, enum.Enum):
    GENERATION = "generation"
    LOGITS = "logits"


def _check_id(kind: str, value: str) -> None:
    if not value:
        raise ValueError(f"{kind} must be non-empty")
    if any(ch.isspace() for ch in value):
        raise ValueError(f"{kind} {value!r} contains whitespace")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str = ""

    def __post_init__(self) -> None:
        _check_id("doc_id", self.doc_id)


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str = ""

    def __post_init__(self) -> None:
        _check_id("query_id", self.query_id)


class ProvenanceKind(str, enum.Enum):
    AS_IS = "asis"
    INVERTED = "inverted"
    SHUFFLED = "shuffled"


@dataclass(frozen=True)
class Provenance:
    kind: ProvenanceKind = ProvenanceKind.AS_IS
    seed: Optional[int] = None

    def __str__(self) -> str:
        if self.kind is ProvenanceKind.SHUFFLED:
            return f"shuffled({self.seed})"
        return self.kind.value


@dataclass(frozen=True)
class CandidateList:
    query: Query
    items: Tuple[Document, ...]
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise ValueError("a candidate list needs at least one document")
        ids = [d.doc_id for d in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate doc_id in candidate list")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.items]

    def inverted(self) -> "CandidateList":
        return CandidateList(self.query, self.items[::-1], Provenance(ProvenanceKind.INVERTED))

    def shuffled(self, seed: int) -> "CandidateList":
        items = list(self.items)
        random.Random(seed).shuffle(items)
        return CandidateList(self.query, items, Provenance(ProvenanceKind.SHUFFLED, seed))

    def reordered(self, init: "str | ProvenanceKind", seed: int = 0) -> "CandidateList":
        kind = ProvenanceKind(init)
        if kind is ProvenanceKind.INVERTED:
            return self.inverted()
        if kind is ProvenanceKind.SHUFFLED:
            return self.shuffled(seed)
        return self


@dataclass(frozen=True)
class RankerConfig:
    method: Method = Method.SETWISE_HEAPSORT
    k: int = 10
    c: int = 3
    w: int = 4
    s: int = 2
    r: int = 5
    max_doc_tokens: Optional[int] = None
    scoring_mode: ScoringMode = ScoringMode.GENERATION

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "scoring_mode", ScoringMode(self.scoring_mode))
        if self.method.is_pairwise:
            object.__setattr__(self, "c", 2)
        if self.method is Method.LISTWISE_LIKELIHOOD:
            object.__setattr__(self, "scoring_mode", ScoringMode.LOGITS)
        if self.k < 1:
            raise ConfigurationError("k must be a positive integer")
        if self.c < 2:
            raise ConfigurationError("c must be at least 2")
        if self.c > len(LABEL_ALPHABET):
            raise LabelOverflow(f"c={self.c} exceeds the {len(LABEL_ALPHABET)}-letter label alphabet")
        if self.w < 2 or self.w > len(LABEL_ALPHABET):
            raise ConfigurationError("window size w must be in [2, 26]")
        if not 1 <= self.s <= self.w:
            raise ConfigurationError("step size must satisfy 1 <= s <= w")
        if self.r < 1:
            raise ConfigurationError("repetitions r must be >= 1")
        if self.max_doc_tokens is not None and self.max_doc_tokens < 1:
            raise ConfigurationError("max_doc_tokens must be positive")

    @property
    def doc_token_budget(self) -> int:
        if self.max_doc_tokens is not None:
            return self.max_doc_tokens
        return default_max_doc_tokens(self.c)


def default_max_doc_tokens(c: int) -> int:
    """Truncation length used when none is configured.

    Set sizes between the tabulated ones take the budget of the next larger
    tabulated size; beyond 9 the budget shrinks proportionally to 45 * 9 / c.
    """
    if c in DEFAULT_MAX_DOC_TOKENS:
        return DEFAULT_MAX_DOC_TOKENS[c]
    for size in sorted(DEFAULT_MAX_DOC_TOKENS):
        if c < size:
            return DEFAULT_MAX_DOC_TOKENS[size]
    return max(1, (45 * 9) // c)


class CostLedger:
    """Thread-safe inference and token accounting for one ranking run."""

    _FIELDS = ("num_inferences", "prompt_tokens", "generated_tokens", "parse_failures", "retries")

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.num_inferences = 0
        self.prompt_tokens = 0
        self.generated_tokens = 0
        self.parse_failures = 0
        self.retries = 0
        self.wall_time = 0.0

    def record(self, prompt_tokens: int = 0, generated_tokens: int = 0) -> None:
        if prompt_tokens < 0 or generated_tokens < 0:
            raise ValueError("token counts must be non-negative")
        with self._lock:
            self.num_inferences += 1
            self.prompt_tokens += prompt_tokens
            self.generated_tokens += generated_tokens

    def record_parse_failure(self) -> None:
        with self._lock:
            self.parse_failures += 1

    def record_retry(self) -> None:
        with self._lock:
            self.retries += 1

    def add_time(self, seconds: float) -> None:
        with self._lock:
            self.wall_time += max(0.0, seconds)

    def merge(self, other: "CostLedger") -> None:
        snap = other.as_dict()
        with self._lock:
            for name in self._FIELDS:
                setattr(self, name, getattr(self, name) + snap[name])
            self.wall_time += snap["wall_time"]

    def snapshot(self) -> "CostLedger":
        copy = CostLedger()
        copy.merge(self)
        return copy

    def as_dict(self) -> dict:
        with self._lock:
            out = {name: getattr(self, name) for name in self._FIELDS}
            out["wall_time"] = self.wall_time
        return out

    def __repr__(self) -> str:
        fields = ", ".join(f"{k}={v}" for k, v in self.as_dict().items())
        return f"CostLedger({fields})"


def render_label(index: int) -> str:
    """0 -> 'Passage A', 1 -> 'Passage B', ..."""
    return LABEL_PREFIX + label_letter(index)


def label_letter(index: int) -> str:
    if index < 0:
        raise ValueError("label index must be non-negative")
    if index >= len(LABEL_ALPHABET):
        raise LabelOverflow(f"label index {index} exceeds the label alphabet")
    return LABEL_ALPHABET[index]


def parse_label(text: str) -> int:
    """Inverse of :func:`render_label`; also accepts the bare letter."""
    token = text.strip()
    if token[: len(LABEL_PREFIX)].lower() == LABEL_PREFIX.lower():
        token = token[len(LABEL_PREFIX):].strip()
    token = token.strip("[]()\"'.: ")
    if len(token) != 1 or token.upper() not in LABEL_ALPHABET:
        raise ValueError(f"not a label: {text!r}")
    return LABEL_ALPHABET.index(token.upper())


def offered_labels(n: int) -> list[int]:
    if n > len(LABEL_ALPHABET):
        raise LabelOverflow(f"cannot label {n} documents")
    return list(range(n))


def true_top_k(doc_ids: Sequence[str], scores: dict, k: int) -> list[str]:
    """Descending sort by score, ties by original position."""
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[doc_ids[i]], i))
    return [doc_ids[i] for i in order[:k]]

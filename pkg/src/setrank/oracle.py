"""Relevance oracles: the request/response vocabulary and the ground-truth mock."""

from __future__ import annotations

import enum
import math
import random
import threading
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

from . import prompts
from .core import (
    ArityMismatch,
    CapabilityUnsupported,
    CostLedger,
    Document,
    Query,
    ScoringMode,
)
from .prompts import DEFAULT_TOKENIZER, Tokenizer


class RequestKind(str, enum.Enum):
    SCORE_QUERY_LIKELIHOOD = "score_query_likelihood"
    SCORE_YES_NO = "score_yes_no"
    SELECT_MOST_RELEVANT = "select_most_relevant"
    ORDER_WINDOW = "order_window"
    PREFER_PAIR = "prefer_pair"


_ARITY = {
    RequestKind.SCORE_QUERY_LIKELIHOOD: (1, 1),
    RequestKind.SCORE_YES_NO: (1, 1),
    RequestKind.SELECT_MOST_RELEVANT: (2, 26),
    RequestKind.ORDER_WINDOW: (2, 26),
    RequestKind.PREFER_PAIR: (2, 2),
}


@dataclass(frozen=True)
class OracleRequest:
    kind: RequestKind
    query: Query
    docs: tuple[Document, ...]
    mode: ScoringMode = ScoringMode.GENERATION
    max_doc_tokens: int = 128

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RequestKind(self.kind))
        object.__setattr__(self, "mode", ScoringMode(self.mode))
        object.__setattr__(self, "docs", tuple(self.docs))
        lo, hi = _ARITY[self.kind]
        if not lo <= len(self.docs) <= hi:
            raise ArityMismatch(f"{self.kind.value} carries {len(self.docs)} documents, expected {lo}..{hi}")

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d.doc_id for d in self.docs)

    @property
    def needs_logits(self) -> bool:
        return self.mode is ScoringMode.LOGITS or self.kind in (
            RequestKind.SCORE_QUERY_LIKELIHOOD,
            RequestKind.SCORE_YES_NO,
        )

    @property
    def shape(self) -> str:
        """Prompt shape; a likelihood-mode window is asked with the setwise prompt."""
        if self.kind is RequestKind.ORDER_WINDOW:
            return "select" if self.mode is ScoringMode.LOGITS else "order"
        return {
            RequestKind.SCORE_QUERY_LIKELIHOOD: "qlm",
            RequestKind.SCORE_YES_NO: "yes_no",
            RequestKind.SELECT_MOST_RELEVANT: "select",
            RequestKind.PREFER_PAIR: "pair",
        }[self.kind]

    def prompt(self, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> str:
        return prompts.render(self.shape, self.query, self.docs, self.max_doc_tokens, tokenizer)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    generated_tokens: int = 0


@dataclass(frozen=True)
class Score:
    value: float
    usage: Usage = Usage()


@dataclass(frozen=True)
class Selected:
    label: int
    usage: Usage = Usage()


@dataclass(frozen=True)
class Preferred:
    label: int
    usage: Usage = Usage()


@dataclass(frozen=True)
class LabelDistribution:
    probs: tuple[float, ...]
    usage: Usage = Usage()

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(p < 0 or math.isnan(p) for p in self.probs):
            raise ValueError("label probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"label probabilities sum to {sum(self.probs)}, not 1")

    def argmax(self) -> int:
        return max(range(len(self.probs)), key=lambda i: (self.probs[i], -i))

    def ranking(self) -> list[int]:
        return sorted(range(len(self.probs)), key=lambda i: (-self.probs[i], i))


@dataclass(frozen=True)
class Ordered:
    labels: tuple[int, ...]
    usage: Usage = Usage()
    repaired: bool = False


@dataclass(frozen=True)
class Failure:
    raw: str = ""
    usage: Usage = Usage()


OracleResponse = Union[Score, Selected, Preferred, LabelDistribution, Ordered, Failure]


def chosen_label(response: OracleResponse) -> Optional[int]:
    """Label picked as most relevant, or None when the answer failed to parse."""
    if isinstance(response, (Selected, Preferred)):
        return response.label
    if isinstance(response, LabelDistribution):
        return response.argmax()
    if isinstance(response, Ordered):
        return response.labels[0]
    return None


class Oracle:
    """Base class for relevance oracles.

    Subclasses implement :meth:`_answer`.  Accounting happens here so every
    backend charges exactly one inference per consumed response.
    """

    supports_logits: bool = True

    def ask(self, request: OracleRequest, ledger: Optional[CostLedger] = None) -> OracleResponse:
        if request.needs_logits and not self.supports_logits:
            raise CapabilityUnsupported(f"{type(self).__name__} cannot expose label likelihoods")
        response = self._answer(request, ledger)
        if ledger is not None:
            ledger.record(response.usage.prompt_tokens, response.usage.generated_tokens)
            if isinstance(response, Failure) or (isinstance(response, Ordered) and response.repaired):
                ledger.record_parse_failure()
        return response

    def ask_batch(
        self, requests: Sequence[OracleRequest], ledger: Optional[CostLedger] = None
    ) -> list[OracleResponse]:
        return [self.ask(r, ledger) for r in requests]

    def _answer(self, request: OracleRequest, ledger: Optional[CostLedger]) -> OracleResponse:
        raise NotImplementedError


class MockOracle(Oracle):
    """Answers from ground-truth scores, optionally flipping selections at random.

    With probability ``noise_p`` a selection is replaced by a uniformly random
    non-argmax label; for window orderings the promoted label goes to the
    front and the rest stay in descending score order.  ``malformed_p`` is the
    probability that a generated answer is replaced by unparseable text.
    """

    MALFORMED_TEXT = "Unable to determine relevance."

    def __init__(
        self,
        true_score: Mapping[str, float],
        noise_p: float = 0.0,
        rng_seed: int = 0,
        *,
        supports_logits: bool = True,
        malformed_p: float = 0.0,
        tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    ) -> None:
        if not 0.0 <= noise_p <= 1.0:
            raise ValueError("noise_p must lie in [0, 1]")
        if not 0.0 <= malformed_p <= 1.0:
            raise ValueError("malformed_p must lie in [0, 1]")
        self.true_score = dict(true_score)
        self.noise_p = noise_p
        self.malformed_p = malformed_p
        self.rng_seed = rng_seed
        self.supports_logits = supports_logits
        self.tokenizer = tokenizer
        self._rng = random.Random(rng_seed)
        self._lock = threading.Lock()

    def _scores(self, request: OracleRequest) -> list[float]:
        try:
            return [self.true_score[d] for d in request.doc_ids]
        except KeyError as exc:
            raise KeyError(f"mock oracle has no true score for document {exc.args[0]!r}") from None

    def _draw(self, p: float) -> bool:
        return p > 0.0 and self._rng.random() < p

    def _ranking(self, scores: Sequence[float]) -> list[int]:
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        if len(order) > 1 and self._draw(self.noise_p):
            promoted = self._rng.choice(order[1:])
            order.remove(promoted)
            order.insert(0, promoted)
        return order

    def _answer(self, request: OracleRequest, ledger: Optional[CostLedger]) -> OracleResponse:
        scores = self._scores(request)
        prompt_tokens = len(self.tokenizer.tokenize(request.prompt(self.tokenizer)))
        if request.kind in (RequestKind.SCORE_YES_NO, RequestKind.SCORE_QUERY_LIKELIHOOD):
            return Score(scores[0], Usage(prompt_tokens, 0))

        with self._lock:
            order = self._ranking(scores)
            malformed = request.mode is ScoringMode.GENERATION and self._draw(self.malformed_p)
        n = len(scores)

        if request.mode is ScoringMode.LOGITS:
            usage = Usage(prompt_tokens, 0)
            if request.kind is RequestKind.ORDER_WINDOW:
                # strictly decreasing mass down the ranking
                probs = [0.0] * n
                total = n * (n + 1) / 2
                for rank, label in enumerate(order):
                    probs[label] = (n - rank) / total
                return LabelDistribution(tuple(probs), usage)
            probs = [0.0] * n
            probs[order[0]] = 1.0
            return LabelDistribution(tuple(probs), usage)

        shape = request.shape
        raw = self.MALFORMED_TEXT if malformed else prompts.render_answer(shape, order)
        usage = Usage(prompt_tokens, len(self.tokenizer.tokenize(raw)))
        return response_from_parsed(request, prompts.parse_output(shape, raw, list(range(n))), usage)


def response_from_parsed(request: OracleRequest, parsed: prompts.ParsedOutput, usage: Usage) -> OracleResponse:
    if isinstance(parsed, prompts.ParseFailure):
        return Failure(parsed.raw, usage)
    if isinstance(parsed, prompts.OrderedLabels):
        return Ordered(parsed.labels, usage, repaired=parsed.repaired)
    if isinstance(parsed, prompts.SelectedLabel):
        if request.kind is RequestKind.PREFER_PAIR:
            return Preferred(parsed.label, usage)
        return Selected(parsed.label, usage)
    raise TypeError(f"unexpected parse result {parsed!r}")


class RecordingOracle(Oracle):
    """Wraps another oracle and keeps every request it forwards, in order."""

    def __init__(self, inner: Oracle) -> None:
        self.inner = inner
        self.requests: list[OracleRequest] = []
        self._lock = threading.Lock()

    @property
    def supports_logits(self) -> bool:  # type: ignore[override]
        return self.inner.supports_logits

    def ask(self, request: OracleRequest, ledger: Optional[CostLedger] = None) -> OracleResponse:
        with self._lock:
            self.requests.append(request)
        return self.inner.ask(request, ledger)

    def ask_batch(self, requests, ledger=None):
        with self._lock:
            self.requests.extend(requests)
        return self.inner.ask_batch(requests, ledger)

    @property
    def calls(self) -> int:
        return len(self.requests)

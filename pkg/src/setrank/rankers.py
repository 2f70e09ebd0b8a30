"""Ranking procedures: pointwise, sliding-window listwise, all-pairs, and the
heap/bubble top-k sorts driven by pairwise or setwise comparisons."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .core import (
    CandidateList,
    CapabilityUnsupported,
    ConfigurationError,
    CostLedger,
    Document,
    Method,
    RankerConfig,
    ScoringMode,
)
from .oracle import (
    LabelDistribution,
    Oracle,
    OracleRequest,
    Ordered,
    RequestKind,
    Score,
    chosen_label,
)


@dataclass
class RankResult:
    doc_ids: list[str]
    ledger: CostLedger
    k: int
    scores: Optional[list[float]] = None
    method: Optional[Method] = None

    @property
    def top_k(self) -> list[str]:
        return self.doc_ids[: self.k]


@dataclass
class _Asker:
    """Builds requests for one query and routes them through a ledger."""

    candidates: CandidateList
    oracle: Oracle
    config: RankerConfig
    ledger: CostLedger = field(default_factory=CostLedger)

    def request(self, kind: RequestKind, docs: Sequence[Document], mode: Optional[ScoringMode] = None) -> OracleRequest:
        return OracleRequest(
            kind=kind,
            query=self.candidates.query,
            docs=tuple(docs),
            mode=self.config.scoring_mode if mode is None else mode,
            max_doc_tokens=self.config.doc_token_budget,
        )

    def ask(self, kind: RequestKind, docs: Sequence[Document], mode: Optional[ScoringMode] = None):
        return self.oracle.ask(self.request(kind, docs, mode), self.ledger)


def _check_capability(oracle: Oracle, config: RankerConfig) -> None:
    if (config.method.needs_logits or config.scoring_mode is ScoringMode.LOGITS) and not oracle.supports_logits:
        raise CapabilityUnsupported(f"{config.method.value} needs label likelihoods, which this oracle does not expose")


# ------------------------------------------------------------------ pointwise


def rank_pointwise(
    candidates: CandidateList, oracle: Oracle, config: RankerConfig, ledger: Optional[CostLedger] = None
) -> RankResult:
    kind = {
        Method.POINTWISE_QLM: RequestKind.SCORE_QUERY_LIKELIHOOD,
        Method.POINTWISE_YES_NO: RequestKind.SCORE_YES_NO,
    }.get(config.method)
    if kind is None:
        raise ConfigurationError(f"{config.method.value} is not a pointwise method")
    asker = _Asker(candidates, oracle, config, ledger or CostLedger())
    docs = candidates.items
    requests = [asker.request(kind, [d], ScoringMode.LOGITS) for d in docs]
    responses = oracle.ask_batch(requests, asker.ledger)
    scores = [r.value if isinstance(r, Score) else -math.inf for r in responses]
    order = sorted(range(len(docs)), key=lambda i: (-scores[i], i))
    return RankResult(
        [docs[i].doc_id for i in order], asker.ledger, config.k, [scores[i] for i in order], config.method
    )


# ------------------------------------------------------------------- listwise


def listwise_windows(n: int, w: int, s: int) -> list[int]:
    """Start offsets of the windows of one pass, bottom window first."""
    if n < 2:
        return []
    if n <= w:
        return [0]
    starts = []
    start = n - w
    while True:
        starts.append(start)
        if start == 0:
            return starts
        start = max(0, start - s)


def rank_listwise(
    candidates: CandidateList, oracle: Oracle, config: RankerConfig, ledger: Optional[CostLedger] = None
) -> RankResult:
    asker = _Asker(candidates, oracle, config, ledger or CostLedger())
    arr = list(candidates.items)
    w = config.w
    for _ in range(config.r):
        for start in listwise_windows(len(arr), w, config.s):
            window = arr[start : start + w]
            response = asker.ask(RequestKind.ORDER_WINDOW, window)
            if isinstance(response, Ordered):
                order = list(response.labels)
            elif isinstance(response, LabelDistribution):
                order = response.ranking()
            else:
                order = list(range(len(window)))
            arr[start : start + w] = [window[i] for i in order]
    return RankResult([d.doc_id for d in arr], asker.ledger, config.k, None, config.method)


# ------------------------------------------------------------------ all pairs


def rank_pairwise_allpair(
    candidates: CandidateList, oracle: Oracle, config: RankerConfig, ledger: Optional[CostLedger] = None
) -> RankResult:
    asker = _Asker(candidates, oracle, config, ledger or CostLedger())
    docs = candidates.items
    n = len(docs)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    requests = [asker.request(RequestKind.PREFER_PAIR, (docs[i], docs[j])) for i, j in pairs]
    responses = oracle.ask_batch(requests, asker.ledger)
    wins = [0] * n
    for (i, j), response in zip(pairs, responses):
        label = chosen_label(response)
        # an unparseable answer awards no point to either side
        if label is not None:
            wins[(i, j)[label]] += 1
    order = sorted(range(n), key=lambda i: (-wins[i], i))
    return RankResult(
        [docs[i].doc_id for i in order], asker.ledger, config.k, [float(wins[i]) for i in order], config.method
    )


# ------------------------------------------------------------- sorting engines


def heap_arity(c: int) -> int:
    """Children per heap node. Pairwise comparison (c=2) still uses a binary heap."""
    return max(2, c - 1)


def _chunks(seq: Sequence[int], size: int):
    for i in range(0, len(seq), size):
        yield list(seq[i : i + size])


class _Comparator:
    """Selects the most relevant of a set of positions with sets of at most ``c``.

    Larger sets are resolved as a running tournament: the current winner is
    asked against the next ``c - 1`` contenders.  The current winner is always
    offered first, so an unparseable answer means "no change".
    """

    def __init__(self, asker: _Asker, c: int, pairwise: bool) -> None:
        self.asker = asker
        self.c = c
        # a two-document set is a pairwise preference whichever family asked
        self.kind = RequestKind.PREFER_PAIR if pairwise or c == 2 else RequestKind.SELECT_MOST_RELEVANT

    def best(self, arr: list[Document], positions: Sequence[int]) -> int:
        winner = positions[0]
        for chunk in _chunks(positions[1:], self.c - 1):
            group = [winner] + chunk
            label = chosen_label(self.asker.ask(self.kind, [arr[p] for p in group]))
            if label is not None:
                winner = group[label]
        return winner


def _sort_setup(candidates, oracle, config, ledger, pairwise):
    pairwise = config.method.is_pairwise if pairwise is None else pairwise
    c = 2 if pairwise else config.c
    asker = _Asker(candidates, oracle, config, ledger or CostLedger())
    return asker, _Comparator(asker, c, pairwise), c


def heapify(arr: list[Document], comparator: _Comparator, arity: int) -> None:
    """Build a max-heap in place by sifting down every internal node, last first."""
    n = len(arr)
    for i in range((n - 2) // arity, -1, -1):
        sift_down(arr, i, n, comparator, arity)


def sift_down(arr: list[Document], i: int, size: int, comparator: _Comparator, arity: int) -> None:
    while True:
        first = arity * i + 1
        if first >= size:
            return
        best = comparator.best(arr, [i, *range(first, min(first + arity, size))])
        if best == i:
            return
        arr[i], arr[best] = arr[best], arr[i]
        i = best


def rank_sorted_heap(
    candidates: CandidateList,
    oracle: Oracle,
    config: RankerConfig,
    ledger: Optional[CostLedger] = None,
    *,
    pairwise: Optional[bool] = None,
) -> RankResult:
    asker, comparator, c = _sort_setup(candidates, oracle, config, ledger, pairwise)
    arity = heap_arity(c)
    arr = list(candidates.items)
    k = min(config.k, len(arr))
    heapify(arr, comparator, arity)
    top: list[Document] = []
    size = len(arr)
    for popped in range(1, k + 1):
        top.append(arr[0])
        arr[0] = arr[size - 1]
        size -= 1
        # once the k-th document is out, the rest stays in heap-array order
        if popped < k and size > 1:
            sift_down(arr, 0, size, comparator, arity)
    ordered = top + arr[:size]
    return RankResult([d.doc_id for d in ordered], asker.ledger, config.k, None, config.method)


def rank_sorted_bubble(
    candidates: CandidateList,
    oracle: Oracle,
    config: RankerConfig,
    ledger: Optional[CostLedger] = None,
    *,
    pairwise: Optional[bool] = None,
) -> RankResult:
    asker, comparator, c = _sort_setup(candidates, oracle, config, ledger, pairwise)
    arr = list(candidates.items)
    n = len(arr)
    for p in range(min(config.k, n - 1)):
        moves = bubble_pass(arr, p, comparator, c)
        # adjacent-pair passes without a move certify the whole tail is ordered;
        # wider windows only certify position p, so they never stop early
        if moves == 0 and c == 2:
            break
    return RankResult([d.doc_id for d in arr], asker.ledger, config.k, None, config.method)


def bubble_pass(arr: list[Document], p: int, comparator: _Comparator, c: int) -> int:
    """Carry the most relevant document of ``arr[p:]`` up to position ``p``.

    Windows of up to ``c`` documents are taken from the bottom; the winner is
    moved to the window's top and becomes the bottom of the next window.
    Returns the number of windows whose winner moved.
    """
    moves = 0
    bottom = len(arr) - 1
    while bottom > p:
        top = max(p, bottom - (c - 1))
        group = list(range(top, bottom + 1))
        winner = comparator.best(arr, group)
        if winner != top:
            arr.insert(top, arr.pop(winner))
            moves += 1
        bottom = top
    return moves


# ------------------------------------------------------------------ dispatch


_DISPATCH: dict[Method, Callable[..., RankResult]] = {
    Method.POINTWISE_QLM: rank_pointwise,
    Method.POINTWISE_YES_NO: rank_pointwise,
    Method.LISTWISE_GENERATION: rank_listwise,
    Method.LISTWISE_LIKELIHOOD: rank_listwise,
    Method.PAIRWISE_ALLPAIR: rank_pairwise_allpair,
    Method.PAIRWISE_HEAPSORT: rank_sorted_heap,
    Method.PAIRWISE_BUBBLESORT: rank_sorted_bubble,
    Method.SETWISE_HEAPSORT: rank_sorted_heap,
    Method.SETWISE_BUBBLESORT: rank_sorted_bubble,
}


def rank(
    candidates: CandidateList, oracle: Oracle, config: RankerConfig, ledger: Optional[CostLedger] = None
) -> RankResult:
    """Re-rank ``candidates`` with the method named in ``config``."""
    method = Method.parse(config.method)
    if config.k > len(candidates):
        raise ConfigurationError(f"k={config.k} exceeds the {len(candidates)} candidates")
    _check_capability(oracle, config)
    ledger = ledger or CostLedger()
    started = time.perf_counter()
    try:
        result = _DISPATCH[method](candidates, oracle, config, ledger)
    finally:
        ledger.add_time(time.perf_counter() - started)
    return result


# ---------------------------------------------------------------- call counts


def _floor_log(x: int, base: int) -> int:
    """floor(log_base(x)) for integers x >= 1 without float error."""
    e = 0
    while base ** (e + 1) <= x:
        e += 1
    return e


def heap_call_ceiling(n: int, k: int, c: int) -> int:
    arity = heap_arity(c)
    per_step = math.ceil(arity / (c - 1))
    return per_step * (n + k * (1 + _floor_log(max(1, (arity - 1) * n), arity)))


def bubble_call_ceiling(n: int, k: int, c: int) -> int:
    return sum(math.ceil((n - 1 - p) / (c - 1)) for p in range(min(k, max(0, n - 1))))


def listwise_call_count(n: int, w: int, s: int, r: int) -> int:
    return r * len(listwise_windows(n, w, s))


def allpair_call_count(n: int) -> int:
    return n * n - n


def expected_call_bound(method: Method, n: int, config: RankerConfig) -> int:
    """Exact count (pointwise, listwise, allpair) or worst-case ceiling (sorts)."""
    method = Method.parse(method)
    if method.family == "pointwise":
        return n
    if method.family == "listwise":
        return listwise_call_count(n, config.w, config.s, config.r)
    if method is Method.PAIRWISE_ALLPAIR:
        return allpair_call_count(n)
    c = 2 if method.is_pairwise else config.c
    if method in (Method.PAIRWISE_HEAPSORT, Method.SETWISE_HEAPSORT):
        return heap_call_ceiling(n, config.k, c)
    return bubble_call_ceiling(n, config.k, c)

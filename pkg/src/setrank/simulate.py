"""Mock-oracle experiments: call-count, trade-off and initial-ordering sweeps."""

from __future__ import annotations

import itertools
import random
import statistics
from dataclasses import asdict, dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .core import CandidateList, Document, Method, ProvenanceKind, Query, RankerConfig
from .oracle import MockOracle
from .rankers import expected_call_bound, rank

_VOCAB = (
    "retrieval ranking query passage document model language relevance search "
    "index score token prompt sort heap bubble window label answer evidence"
).split()

# Spread of first-stage score noise around the true relevance (unit variance).
FIRST_STAGE_NOISE = 1.0


@dataclass(frozen=True)
class Instance:
    candidates: CandidateList
    true_score: dict[str, float]

    def true_top_k(self, k: int) -> list[str]:
        return sorted(self.true_score, key=lambda d: -self.true_score[d])[:k]


def make_instance(
    n: int,
    seed: int,
    *,
    first_stage_noise: Optional[float] = FIRST_STAGE_NOISE,
    doc_words: tuple[int, int] = (0, 0),
) -> Instance:
    """Random query with ``n`` candidates.

    True relevance is standard normal.  The as-is order comes from a simulated
    first-stage retriever whose score is the true score plus Gaussian noise of
    spread ``first_stage_noise``; ``None`` gives a uniformly shuffled order.
    """
    rng = random.Random(seed)
    true = [rng.gauss(0.0, 1.0) for _ in range(n)]
    lo, hi = doc_words
    docs = [
        Document(f"d{i}", " ".join(rng.choice(_VOCAB) for _ in range(rng.randint(lo, hi))))
        for i in range(n)
    ]
    if first_stage_noise is None:
        order = list(range(n))
        rng.shuffle(order)
    else:
        first_stage = [t + rng.gauss(0.0, first_stage_noise) for t in true]
        order = sorted(range(n), key=lambda i: -first_stage[i])
    query = Query(f"sim{seed}", "simulated query about " + " ".join(rng.sample(_VOCAB, 3)))
    return Instance(
        CandidateList(query, [docs[i] for i in order]),
        {docs[i].doc_id: true[i] for i in range(n)},
    )


@dataclass
class SimulationRecord:
    method: str
    n: int
    k: int
    c: Optional[int]
    w: int
    s: int
    r: int
    noise_p: float
    init: str
    seed: int
    inferences: int
    prompt_tokens: int
    generated_tokens: int
    parse_failures: int
    recall: float
    exact: bool
    call_bound: int

    def to_dict(self) -> dict:
        return asdict(self)


def run_once(
    method: Method | str,
    n: int,
    k: int,
    seed: int,
    *,
    c: int = 3,
    w: int = 4,
    s: int = 2,
    r: int = 5,
    noise_p: float = 0.0,
    init: str = "asis",
    first_stage_noise: Optional[float] = FIRST_STAGE_NOISE,
    doc_words: tuple[int, int] = (0, 0),
    max_doc_tokens: Optional[int] = None,
) -> SimulationRecord:
    method = Method.parse(method)
    inst = make_instance(n, seed, first_stage_noise=first_stage_noise, doc_words=doc_words)
    candidates = inst.candidates.reordered(init, seed)
    config = RankerConfig(method, k=k, c=c, w=w, s=s, r=r, max_doc_tokens=max_doc_tokens)
    oracle = MockOracle(inst.true_score, noise_p, rng_seed=seed)
    result = rank(candidates, oracle, config)
    truth = inst.true_top_k(k)
    ledger = result.ledger
    return SimulationRecord(
        method=method.value,
        n=n,
        k=k,
        c=config.c if _uses_c(method) else None,
        w=w,
        s=s,
        r=r,
        noise_p=noise_p,
        init=ProvenanceKind(init).value,
        seed=seed,
        inferences=ledger.num_inferences,
        prompt_tokens=ledger.prompt_tokens,
        generated_tokens=ledger.generated_tokens,
        parse_failures=ledger.parse_failures,
        recall=len(set(truth) & set(result.top_k)) / k,
        exact=result.top_k == truth,
        call_bound=expected_call_bound(method, n, config),
    )


def _uses_c(method: Method) -> bool:
    return method in (
        Method.SETWISE_HEAPSORT,
        Method.SETWISE_BUBBLESORT,
        Method.PAIRWISE_HEAPSORT,
        Method.PAIRWISE_BUBBLESORT,
    )


def sweep(
    methods: Sequence[Method | str],
    ns: Sequence[int],
    ks: Sequence[int],
    c_list: Sequence[int],
    noises: Sequence[float],
    inits: Sequence[str],
    seeds: Iterable[int],
    **kwargs,
) -> Iterator[SimulationRecord]:
    """Cartesian sweep; ``c`` only varies for setwise sorting methods."""
    seeds = list(seeds)
    for method in map(Method.parse, methods):
        cs = c_list if method in (Method.SETWISE_HEAPSORT, Method.SETWISE_BUBBLESORT) else [2]
        for n, k, c, noise, init in itertools.product(ns, ks, cs, noises, inits):
            if k > n:
                continue
            for seed in seeds:
                yield run_once(method, n, k, seed, c=c, noise_p=noise, init=init, **kwargs)


GROUP_KEYS = ("method", "n", "k", "c", "w", "s", "r", "noise_p", "init")
_MEAN_FIELDS = ("inferences", "prompt_tokens", "generated_tokens", "recall")


def aggregate(records: Iterable[dict | SimulationRecord]) -> list[dict]:
    """Mean and standard deviation per configuration, in first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        row = rec.to_dict() if isinstance(rec, SimulationRecord) else rec
        groups.setdefault(tuple(row[key] for key in GROUP_KEYS), []).append(row)
    summary = []
    for key, rows in groups.items():
        out = dict(zip(GROUP_KEYS, key))
        out["runs"] = len(rows)
        for name in _MEAN_FIELDS:
            values = [float(r[name]) for r in rows]
            out[f"{name}_mean"] = statistics.fmean(values)
            out[f"{name}_std"] = statistics.pstdev(values) if len(values) > 1 else 0.0
        out["exact_rate"] = statistics.fmean(1.0 if r["exact"] else 0.0 for r in rows)
        out["max_inferences"] = max(int(r["inferences"]) for r in rows)
        out["call_bound"] = max(int(r["call_bound"]) for r in rows)
        summary.append(out)
    return summary

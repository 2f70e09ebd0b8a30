"""TREC run/qrels I/O, corpus and query ingestion, and NDCG@k."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, TextIO, Union

from .core import Document, Query, SetrankError

PathLike = Union[str, Path]


class ParseError(SetrankError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None) -> None:
        where = f"{path or '<input>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.path = path


class Gain(str, enum.Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"

    def __call__(self, grade: int) -> float:
        if self is Gain.EXPONENTIAL:
            return float(2**grade - 1)
        return float(grade)


Qrels = dict[str, dict[str, int]]


@dataclass(frozen=True)
class RunEntry:
    doc_id: str
    score: float


@dataclass
class RunFile:
    """Per-query ranked lists; position i in a list has rank i + 1."""

    queries: dict[str, list[RunEntry]] = field(default_factory=dict)
    tag: str = "setrank"

    def add(self, query_id: str, ranked: Sequence[tuple[str, float]]) -> None:
        entries = [RunEntry(d, float(s)) for d, s in ranked]
        for prev, cur in zip(entries, entries[1:]):
            if cur.score > prev.score:
                raise ValueError(f"scores for {query_id} must be non-increasing")
        self.queries[query_id] = entries

    def doc_ids(self, query_id: str) -> list[str]:
        return [e.doc_id for e in self.queries[query_id]]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RunFile):
            return NotImplemented
        return self.tag == other.tag and self.queries == other.queries


def _open_lines(source: Union[PathLike, TextIO]) -> tuple[Iterable[str], str]:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8").splitlines(), str(source)
    return source.read().splitlines(), getattr(source, "name", "<stream>")


def read_run(source: Union[PathLike, TextIO]) -> RunFile:
    lines, name = _open_lines(source)
    run = RunFile()
    last_rank: dict[str, int] = {}
    tags = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields 'qid Q0 docid rank score tag', got {len(parts)}", lineno, name)
        qid, _q0, doc_id, rank_s, score_s, tag = parts
        try:
            rank_v = int(rank_s)
            score = float(score_s)
        except ValueError:
            raise ParseError(f"bad rank or score in {line!r}", lineno, name) from None
        if rank_v != last_rank.get(qid, 0) + 1:
            raise ParseError(f"rank {rank_v} for {qid} does not follow rank {last_rank.get(qid, 0)}", lineno, name)
        last_rank[qid] = rank_v
        entries = run.queries.setdefault(qid, [])
        if entries and score > entries[-1].score:
            raise ParseError(f"score {score} for {qid} increases down the ranking", lineno, name)
        entries.append(RunEntry(doc_id, score))
        tags.add(tag)
    if len(tags) == 1:
        run.tag = tags.pop()
    return run


def format_run(run: RunFile) -> str:
    lines = []
    for qid, entries in run.queries.items():
        for rank, e in enumerate(entries, 1):
            lines.append(f"{qid} Q0 {e.doc_id} {rank} {e.score!r} {run.tag}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_run(run: RunFile, dest: Union[PathLike, TextIO]) -> None:
    text = format_run(run)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


def read_qrels(source: Union[PathLike, TextIO]) -> Qrels:
    lines, name = _open_lines(source)
    qrels: Qrels = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields 'qid 0 docid grade', got {len(parts)}", lineno, name)
        qid, _it, doc_id, grade_s = parts
        try:
            grade = int(grade_s)
        except ValueError:
            raise ParseError(f"grade {grade_s!r} is not an integer", lineno, name) from None
        # negative grades (e.g. -1 spam labels) are treated as non-relevant
        qrels.setdefault(qid, {})[doc_id] = max(0, grade)
    return qrels


def write_qrels(qrels: Qrels, dest: PathLike) -> None:
    lines = [f"{q} 0 {d} {g}" for q, docs in qrels.items() for d, g in docs.items()]
    Path(dest).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(source: PathLike) -> dict[str, Document]:
    """Line-delimited JSON records with ``doc_id`` and ``text`` fields."""
    corpus: dict[str, Document] = {}
    name = str(source)
    with open(source, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = Document(str(rec["doc_id"]), str(rec.get("text", "")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad corpus record: {exc}", lineno, name) from None
            corpus[doc.doc_id] = doc
    return corpus


def read_queries(source: PathLike) -> dict[str, Query]:
    """Tab-separated ``query_id<TAB>text`` lines."""
    queries: dict[str, Query] = {}
    name = str(source)
    with open(source, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError("expected 'query_id<TAB>text'", lineno, name)
            qid, text = line.split("\t", 1)
            try:
                queries[qid] = Query(qid, text)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, name) from None
    return queries


# ------------------------------------------------------------------- metrics


def dcg(grades: Sequence[int], k: int, gain: Gain = Gain.EXPONENTIAL) -> float:
    return sum(gain(g) / math.log2(i + 2) for i, g in enumerate(grades[:k]))


@dataclass
class NdcgResult:
    per_query: dict[str, float]
    mean: float
    # query_id -> reason it scored 0 without a meaningful ideal ranking
    flagged: dict[str, str] = field(default_factory=dict)


def ndcg_for_ranking(ranked: Sequence[str], judgments: Mapping[str, int], k: int, gain: Gain = Gain.EXPONENTIAL) -> float:
    ideal = dcg(sorted(judgments.values(), reverse=True), k, gain)
    if ideal <= 0:
        return 0.0
    return dcg([judgments.get(d, 0) for d in ranked], k, gain) / ideal


def ndcg_at_k(run: RunFile, qrels: Qrels, k: int = 10, gain: Gain = Gain.EXPONENTIAL) -> NdcgResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    gain = Gain(gain)
    per_query: dict[str, float] = {}
    flagged: dict[str, str] = {}
    for qid in run.queries:
        judged = qrels.get(qid)
        if judged is None:
            flagged[qid] = "query absent from qrels"
            per_query[qid] = 0.0
            continue
        if not any(g > 0 for g in judged.values()):
            flagged[qid] = "no relevant documents"
            per_query[qid] = 0.0
            continue
        per_query[qid] = ndcg_for_ranking(run.doc_ids(qid), judged, k, gain)
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return NdcgResult(per_query, mean, flagged)

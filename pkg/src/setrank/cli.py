"""Command-line entry point: ``setrank {rerank,simulate,evaluate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import eval as evaluation
from . import plots, simulate
from .core import CandidateList, CostLedger, Method, RankerConfig, SetrankError
from .llm_client import API_KEY_ENV, ChatCompletionsOracle, EndpointConfig
from .oracle import MockOracle, Oracle
from .rankers import rank

log = logging.getLogger("setrank")

LEDGER_COLUMNS = ("num_inferences", "prompt_tokens", "generated_tokens", "parse_failures", "retries", "wall_time")


class CliError(Exception):
    """Fatal error reported as a one-line message with exit code 1."""


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be a positive integer")
    return value


def probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text!r} is not a probability")
    return value


def int_list(text: str) -> list[int]:
    return [positive_int(t) for t in text.split(",") if t.strip()]


def float_list(text: str) -> list[float]:
    return [probability(t) for t in text.split(",") if t.strip()]


def str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_ranker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=positive_int, default=10, help="top-k to identify (default 10)")
    p.add_argument("--c", type=positive_int, default=3, help="documents per setwise comparison (default 3)")
    p.add_argument("--w", type=positive_int, default=4, help="listwise window size (default 4)")
    p.add_argument("--s", type=positive_int, default=2, help="listwise step size (default 2)")
    p.add_argument("--r", type=positive_int, default=5, help="listwise repetitions (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setrank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rerank", help="re-rank a first-stage run with an LLM endpoint or mock scores")
    p.add_argument("--method", default=Method.SETWISE_HEAPSORT.value, choices=[m.value for m in Method])
    _add_ranker_flags(p)
    p.add_argument("--max-doc-tokens", type=positive_int, default=None)
    p.add_argument("--scoring-mode", choices=["generation", "logits"], default="generation")
    p.add_argument("--input", required=True, help="first-stage TREC run to re-rank")
    p.add_argument("--depth", type=positive_int, default=100, help="candidates per query taken from --input")
    p.add_argument("--corpus", required=True, help="JSONL records {doc_id, text}")
    p.add_argument("--queries", required=True, help="TSV lines query_id<TAB>text")
    p.add_argument("--output", required=True, help="re-ranked TREC run to write")
    p.add_argument("--tag", default=None, help="run tag (default: method name)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--endpoint", help="base URL of an OpenAI-compatible server")
    src.add_argument("--mock-scores", help="'qid docid score' or qrels lines used as ground truth")
    p.add_argument("--model", default="gpt-3.5-turbo", help="model name sent to --endpoint")
    p.add_argument("--api-key-env", default=API_KEY_ENV)
    p.add_argument("--logprobs", action="store_true", help="endpoint returns token log-probabilities")
    p.add_argument("--chat-only", action="store_true", help="endpoint has no /v1/completions")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--noise", type=probability, default=0.0, help="mock selection flip probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=positive_int, default=1, help="queries ranked concurrently")
    p.add_argument("--ledger", help="write the per-query cost ledger as TSV")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("simulate", help="mock-oracle cost and robustness experiments")
    p.add_argument("--methods", type=str_list, default=[m.value for m in Method if m.family in ("pairwise", "setwise") and m is not Method.PAIRWISE_ALLPAIR])
    p.add_argument("--n", type=int_list, default=[100], help="candidate list sizes")
    p.add_argument("--k", type=int_list, default=[10])
    p.add_argument("--c-list", type=int_list, default=[3], help="set sizes for setwise methods")
    p.add_argument("--w", type=positive_int, default=4)
    p.add_argument("--s", type=positive_int, default=2)
    p.add_argument("--r", type=positive_int, default=5)
    p.add_argument("--noise", type=float_list, default=[0.0])
    p.add_argument("--seeds", type=positive_int, default=100, help="instances per configuration")
    p.add_argument("--seed", type=int, default=0, help="first instance seed")
    p.add_argument("--init", type=str_list, default=["asis"], help="asis,inverted,shuffled")
    p.add_argument("--first-stage-noise", default=str(simulate.FIRST_STAGE_NOISE),
                   help="spread of the simulated first-stage score noise, or 'none' for shuffled instances")
    p.add_argument("--doc-words", type=int_list, default=None, help="min,max words per synthetic document")
    p.add_argument("--output", help="append JSONL records here (default stdout)")
    p.add_argument("--summary", help="write mean/std per configuration as TSV")
    p.add_argument("--plot-dir", help="render figures into this directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="NDCG@k of a run against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metric", default="ndcg@10")
    p.add_argument("--gain", choices=[g.value for g in evaluation.Gain], default="exponential")
    p.add_argument("--output", help="write per-query values as TSV")
    p.set_defaults(func=cmd_evaluate)
    return parser


# -------------------------------------------------------------------- rerank


def read_mock_scores(path: str) -> dict[str, dict[str, float]]:
    scores: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) == 3:
            qid, doc_id, value = parts
        elif len(parts) == 4:
            qid, _, doc_id, value = parts
        else:
            raise evaluation.ParseError("expected 'qid docid score' or qrels fields", lineno, path)
        try:
            scores.setdefault(qid, {})[doc_id] = float(value)
        except ValueError:
            raise evaluation.ParseError(f"bad score {value!r}", lineno, path) from None
    return scores


def _candidates(args, run, corpus, queries) -> list[CandidateList]:
    out = []
    for qid, entries in run.queries.items():
        if qid not in queries:
            raise CliError(f"query {qid} from {args.input} is missing from {args.queries}")
        docs = []
        for entry in entries[: args.depth]:
            doc = corpus.get(entry.doc_id)
            if doc is None:
                raise CliError(f"document {entry.doc_id} (query {qid}) is missing from {args.corpus}")
            docs.append(doc)
        out.append(CandidateList(queries[qid], docs))
    return out


def _oracle_factory(args):
    if args.mock_scores:
        truth = read_mock_scores(args.mock_scores)

        def make(cands: CandidateList) -> Oracle:
            judged = truth.get(cands.query.query_id, {})
            # unjudged candidates count as non-relevant
            scores = {d: judged.get(d, 0.0) for d in cands.doc_ids}
            seed = zlib.crc32(f"{args.seed}:{cands.query.query_id}".encode())
            return MockOracle(scores, args.noise, seed)

        return make, None
    client = ChatCompletionsOracle(
        EndpointConfig(
            base_url=args.endpoint,
            model=args.model,
            api_key_env=args.api_key_env,
            timeout=args.timeout,
            max_retries=args.max_retries,
            logprobs_requested=args.logprobs,
            completions_supported=not args.chat_only,
        )
    )
    return (lambda cands: client), client


def _rank_query(cands: CandidateList, make_oracle, args) -> tuple[CandidateList, object, CostLedger]:
    k = args.k
    if k > len(cands):
        log.warning("query %s has %d candidates; using k=%d", cands.query.query_id, len(cands), len(cands))
        k = len(cands)
    config = RankerConfig(
        args.method, k=k, c=args.c, w=args.w, s=args.s, r=args.r,
        max_doc_tokens=args.max_doc_tokens, scoring_mode=args.scoring_mode,
    )
    ledger = CostLedger()
    result = rank(cands, make_oracle(cands), config, ledger)
    return cands, result, ledger


def format_ledger(rows: list[tuple[str, dict]]) -> str:
    lines = ["\t".join(("query_id",) + LEDGER_COLUMNS)]
    for qid, d in rows:
        lines.append("\t".join([qid] + [_fmt(d[c]) for c in LEDGER_COLUMNS]))
    if rows:
        means = {c: sum(d[c] for _, d in rows) / len(rows) for c in LEDGER_COLUMNS}
        lines.append("\t".join(["mean"] + [_fmt(means[c]) for c in LEDGER_COLUMNS]))
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float) and not value.is_integer():
        return f"{value:.4f}"
    return str(int(value)) if isinstance(value, float) else str(value)


def cmd_rerank(args) -> int:
    run = evaluation.read_run(args.input)
    corpus = evaluation.read_corpus(args.corpus)
    queries = evaluation.read_queries(args.queries)
    candidates = _candidates(args, run, corpus, queries)
    make_oracle, client = _oracle_factory(args)
    method = Method.parse(args.method)
    try:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(lambda c: _rank_query(c, make_oracle, args), candidates))
    finally:
        if client is not None:
            client.close()

    out = evaluation.RunFile(tag=args.tag or method.value)
    rows = []
    for cands, result, ledger in results:
        if method.family == "pointwise" or method is Method.PAIRWISE_ALLPAIR:
            scores = result.scores
        else:
            scores = [1.0 / (i + 1) for i in range(len(result.doc_ids))]
        out.add(cands.query.query_id, list(zip(result.doc_ids, scores)))
        rows.append((cands.query.query_id, ledger.as_dict()))
    evaluation.write_run(out, args.output)
    table = format_ledger(rows)
    if args.ledger:
        Path(args.ledger).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


# ------------------------------------------------------------------ simulate


def cmd_simulate(args) -> int:
    for m in args.methods:
        Method.parse(m)
    for init in args.init:
        if init not in ("asis", "inverted", "shuffled"):
            raise CliError(f"unknown initial ordering {init!r}")
    fsn = None if args.first_stage_noise.lower() == "none" else float(args.first_stage_noise)
    doc_words = tuple(args.doc_words) if args.doc_words else (0, 0)
    if len(doc_words) != 2 or doc_words[0] > doc_words[1]:
        raise CliError("--doc-words takes 'min,max'")
    seeds = range(args.seed, args.seed + args.seeds)
    records = simulate.sweep(
        args.methods, args.n, args.k, args.c_list, args.noise, args.init, seeds,
        w=args.w, s=args.s, r=args.r, first_stage_noise=fsn, doc_words=doc_words,
    )
    kept = []
    sink = open(args.output, "a", encoding="utf-8") if args.output else sys.stdout
    try:
        for rec in records:
            row = rec.to_dict()
            kept.append(row)
            sink.write(json.dumps(row) + "\n")
    finally:
        if args.output:
            sink.close()
    summary = simulate.aggregate(kept)
    table = format_summary(summary)
    if args.summary:
        Path(args.summary).write_text(table, encoding="utf-8")
    sys.stderr.write(table)
    if args.plot_dir:
        out = Path(args.plot_dir)
        for fig in (
            plots.plot_inferences_vs_c(summary, out / "inferences_vs_c.png"),
            plots.plot_recall_by_init(summary, out / "recall_by_init.png"),
            plots.plot_tradeoff(summary, out / "tradeoff.png"),
        ):
            if fig is not None:
                log.info("wrote %s", fig)
    return 0


SUMMARY_COLUMNS = simulate.GROUP_KEYS + (
    "runs", "inferences_mean", "inferences_std", "max_inferences", "call_bound",
    "prompt_tokens_mean", "generated_tokens_mean", "recall_mean", "recall_std", "exact_rate",
)


def format_summary(summary: Sequence[dict]) -> str:
    lines = ["\t".join(SUMMARY_COLUMNS)]
    for row in summary:
        cells = []
        for col in SUMMARY_COLUMNS:
            v = row[col]
            cells.append("-" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ evaluate


def parse_metric(metric: str) -> int:
    name, _, cutoff = metric.lower().partition("@")
    if name != "ndcg":
        raise CliError(f"unsupported metric {metric!r}; only ndcg@k is available")
    try:
        k = int(cutoff or 10)
    except ValueError:
        raise CliError(f"bad cutoff in {metric!r}") from None
    if k < 1:
        raise CliError("metric cutoff must be >= 1")
    return k


def cmd_evaluate(args) -> int:
    k = parse_metric(args.metric)
    run = evaluation.read_run(args.run)
    qrels = evaluation.read_qrels(args.qrels)
    if not set(run.queries) & set(qrels):
        raise CliError("no overlapping queries between run and qrels")
    result = evaluation.ndcg_at_k(run, qrels, k, evaluation.Gain(args.gain))
    name = f"ndcg@{k}"
    lines = [f"{name}\t{qid}\t{value:.4f}" for qid, value in result.per_query.items()]
    lines.append(f"{name}\tall\t{result.mean:.4f}")
    text = "\n".join(lines) + "\n"
    for qid, reason in result.flagged.items():
        log.warning("query %s: %s", qid, reason)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, SetrankError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"setrank: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

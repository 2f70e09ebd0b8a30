"""Oracle backend for OpenAI-compatible chat-completions endpoints."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import httpx

from . import prompts
from .core import (
    CapabilityUnsupported,
    ConfigurationError,
    CostLedger,
    Document,
    Query,
    RetriableTransportError,
    ScoringMode,
    label_letter,
)
from .oracle import (
    Failure,
    LabelDistribution,
    Oracle,
    OracleRequest,
    OracleResponse,
    RequestKind,
    Score,
    Usage,
    response_from_parsed,
)
from .prompts import DEFAULT_TOKENIZER, Tokenizer

log = logging.getLogger(__name__)

API_KEY_ENV = "OPENAI_API_KEY"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5
    temperature: float = 0.0
    logprobs_requested: bool = False
    # chat-only deployments have no /v1/completions for query-likelihood scoring
    completions_supported: bool = True
    top_logprobs: int = 20
    max_concurrency: int = 8
    max_label_tokens: int = 8
    max_list_tokens: int = 64

    def __post_init__(self) -> None:
        if self.temperature != 0:
            raise ConfigurationError("ranking calls run at temperature 0")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")

    @property
    def api_key(self) -> str:
        return os.environ.get(self.api_key_env, "")

    def url(self, path: str) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/v1"):
            base = base[: -len("/v1")]
        return f"{base}/v1/{path}"


class ChatCompletionsOracle(Oracle):
    """Relevance oracle that prompts a remote LLM.

    Generation-mode requests are parsed from the returned text.  Logits-mode
    requests read the first generated token's ``top_logprobs`` and renormalise
    the probabilities of the offered label letters.
    """

    def __init__(
        self,
        config: EndpointConfig,
        tokenizer: Tokenizer = DEFAULT_TOKENIZER,
        client: Optional[httpx.Client] = None,
    ) -> None:
        self.config = config
        self.tokenizer = tokenizer
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)

    @property
    def supports_logits(self) -> bool:  # type: ignore[override]
        return self.config.logprobs_requested

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ChatCompletionsOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ----------------------------------------------------------- transport

    def _post(self, path: str, body: dict, ledger: Optional[CostLedger]) -> dict:
        url = self.config.url(path)
        attempt = 0
        while True:
            try:
                resp = self._client.post(url, json=body)
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                error: Exception = RetriableTransportError(f"POST {url}: {exc}")
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    error = RetriableTransportError(f"POST {url}: HTTP {resp.status_code}")
                elif resp.status_code in (404, 405) and path == "completions":
                    raise CapabilityUnsupported(f"{url} is not served (HTTP {resp.status_code})")
                elif resp.status_code >= 400:
                    raise ConfigurationError(f"POST {url}: HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return resp.json()
            if attempt >= self.config.max_retries:
                raise error
            attempt += 1
            if ledger is not None:
                ledger.record_retry()
            delay = self.config.backoff * 2 ** (attempt - 1)
            log.warning("%s; retry %d/%d in %.2fs", error, attempt, self.config.max_retries, delay)
            time.sleep(delay)

    def _usage(self, payload: dict, prompt: str, completion: str) -> Usage:
        usage = payload.get("usage") or {}
        p = usage.get("prompt_tokens")
        g = usage.get("completion_tokens")
        return Usage(
            int(p) if p is not None else prompts.count_tokens(prompt, self.tokenizer),
            int(g) if g is not None else prompts.count_tokens(completion, self.tokenizer),
        )

    def _chat(self, prompt: str, max_tokens: int, logprobs: bool, ledger: Optional[CostLedger]) -> dict:
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": max_tokens,
        }
        if logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = self.config.top_logprobs
        return self._post("chat/completions", body, ledger)

    # ------------------------------------------------------------ answering

    def _answer(self, request: OracleRequest, ledger: Optional[CostLedger]) -> OracleResponse:
        if request.kind is RequestKind.SCORE_QUERY_LIKELIHOOD:
            return self._score_qlm(request, ledger)

        prompt = request.prompt(self.tokenizer)
        logits = request.needs_logits
        if logits or request.kind is RequestKind.SCORE_YES_NO:
            max_tokens = 1
        elif request.shape == "order":
            max_tokens = self.config.max_list_tokens
        else:
            max_tokens = self.config.max_label_tokens
        payload = self._chat(prompt, max_tokens, logits, ledger)
        text = _message_text(payload)
        usage = self._usage(payload, prompt, text)

        if not logits:
            parsed = prompts.parse_output(request.shape, text, list(range(len(request.docs))))
            return response_from_parsed(request, parsed, usage)

        top = _first_token_logprobs(payload)
        if request.kind is RequestKind.SCORE_YES_NO:
            return Score(_yes_probability(top), usage)
        probs = _label_distribution(top, len(request.docs))
        if probs is None:
            return Failure(text, usage)
        return LabelDistribution(probs, usage)

    def _score_qlm(self, request: OracleRequest, ledger: Optional[CostLedger]) -> OracleResponse:
        if not self.config.completions_supported:
            raise CapabilityUnsupported("query likelihood needs a completions endpoint with echo")
        prefix = request.prompt(self.tokenizer) + "\n"
        body = {
            "model": self.config.model,
            "prompt": prefix + request.query.text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": self.config.temperature,
        }
        payload = self._post("completions", body, ledger)
        try:
            lp = payload["choices"][0]["logprobs"]
            token_logprobs = lp["token_logprobs"]
            offsets = lp.get("text_offset")
        except (KeyError, IndexError, TypeError):
            raise CapabilityUnsupported("completions endpoint returned no token log-probabilities") from None
        if offsets is not None:
            values = [v for v, off in zip(token_logprobs, offsets) if off >= len(prefix) and v is not None]
        else:
            values = [v for v in token_logprobs if v is not None]
        if not values:
            raise CapabilityUnsupported("completions endpoint returned no query token log-probabilities")
        return Score(sum(values) / len(values), self._usage(payload, body["prompt"], ""))

    def score_query_likelihood(self, query: Query, doc: Document, ledger: Optional[CostLedger] = None) -> float:
        response = self.ask(OracleRequest(RequestKind.SCORE_QUERY_LIKELIHOOD, query, (doc,), ScoringMode.LOGITS), ledger)
        assert isinstance(response, Score)
        return response.value

    def ask_batch(self, requests: Sequence[OracleRequest], ledger: Optional[CostLedger] = None) -> list[OracleResponse]:
        if len(requests) <= 1 or self.config.max_concurrency <= 1:
            return super().ask_batch(requests, ledger)
        with ThreadPoolExecutor(max_workers=self.config.max_concurrency) as pool:
            return list(pool.map(lambda r: self.ask(r, ledger), requests))


def _message_text(payload: dict) -> str:
    try:
        return payload["choices"][0]["message"].get("content") or ""
    except (KeyError, IndexError, TypeError, AttributeError):
        raise ConfigurationError("response is not a chat completion") from None


def _first_token_logprobs(payload: dict) -> dict[str, float]:
    """token -> logprob for the alternatives at the first generated position."""
    try:
        first = payload["choices"][0]["logprobs"]["content"][0]
    except (KeyError, IndexError, TypeError):
        raise CapabilityUnsupported("endpoint did not return per-token log-probabilities") from None
    alternatives = first.get("top_logprobs") or [first]
    out: dict[str, float] = {}
    for alt in alternatives:
        token, lp = alt.get("token"), alt.get("logprob")
        if token is None or lp is None:
            continue
        out[token] = max(out.get(token, -math.inf), float(lp))
    if not out:
        raise CapabilityUnsupported("endpoint did not return per-token log-probabilities")
    return out


def _label_distribution(top: dict[str, float], n: int) -> Optional[tuple[float, ...]]:
    mass = [0.0] * n
    letters = {label_letter(i): i for i in range(n)}
    for token, lp in top.items():
        idx = letters.get(token.strip())
        if idx is not None:
            mass[idx] += math.exp(lp)
    total = sum(mass)
    if total <= 0:
        return None
    return tuple(m / total for m in mass)


def _yes_probability(top: dict[str, float]) -> float:
    yes = sum(math.exp(lp) for t, lp in top.items() if t.strip().lower() == "yes")
    no = sum(math.exp(lp) for t, lp in top.items() if t.strip().lower() == "no")
    if yes + no == 0:
        return 0.0
    return yes / (yes + no)

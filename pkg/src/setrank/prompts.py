"""Prompt rendering and output parsing for every prompting strategy.

Template wording lives in ``templates/<version>/*.txt``; the code only fills
the named slots ``{query}``, ``{document}``, ``{passages}``, ``{num}``,
``{labels}``, ``{letters}`` and ``{example}``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Protocol, Sequence, Union

from .core import (
    ArityMismatch,
    Document,
    Method,
    Query,
    RankerConfig,
    label_letter,
    render_label,
)

TEMPLATE_VERSION = "v1"


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...

    def detokenize(self, tokens: Sequence[str]) -> str: ...


class WhitespaceTokenizer:
    """Splits on runs of whitespace; the default for mock runs."""

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def detokenize(self, tokens: Sequence[str]) -> str:
        return " ".join(tokens)

    def count(self, text: str) -> int:
        return len(self.tokenize(text))


DEFAULT_TOKENIZER = WhitespaceTokenizer()


def count_tokens(text: str, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> int:
    return len(tokenizer.tokenize(text))


def truncate(document: Document | str, max_tokens: int, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> str:
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    text = document.text if isinstance(document, Document) else document
    tokens = tokenizer.tokenize(text)
    if len(tokens) <= max_tokens:
        return text
    return tokenizer.detokenize(tokens[:max_tokens])


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> str:
    path = resources.files("setrank") / "templates" / version / f"{name}.txt"
    return path.read_text(encoding="utf-8").rstrip("\n")


# Template used for each request shape; listwise.likelihood reuses the setwise prompt.
_TEMPLATE_FOR_SHAPE = {
    "qlm": "pointwise_qlm",
    "yes_no": "pointwise_yes_no",
    "pair": "pairwise",
    "select": "setwise",
    "order": "listwise",
}


def shape_of(method: Method | str) -> str:
    """Map a method (or an already-resolved shape name) to its answer shape."""
    if isinstance(method, str) and method in _TEMPLATE_FOR_SHAPE:
        return method
    method = Method.parse(method)
    return {
        Method.POINTWISE_QLM: "qlm",
        Method.POINTWISE_YES_NO: "yes_no",
        Method.LISTWISE_GENERATION: "order",
        Method.LISTWISE_LIKELIHOOD: "select",
        Method.PAIRWISE_ALLPAIR: "pair",
        Method.PAIRWISE_HEAPSORT: "pair",
        Method.PAIRWISE_BUBBLESORT: "pair",
        Method.SETWISE_HEAPSORT: "select",
        Method.SETWISE_BUBBLESORT: "select",
    }[method]


def _passages_block(texts: Sequence[str]) -> str:
    return "\n".join(f'{render_label(i)}: "{text}"' for i, text in enumerate(texts))


def render(
    shape: str,
    query: Query,
    docs: Sequence[Document],
    max_doc_tokens: int,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    version: str = TEMPLATE_VERSION,
) -> str:
    """Render the prompt for a request shape with already-validated arity."""
    template = load_template(_TEMPLATE_FOR_SHAPE[shape], version)
    texts = [truncate(d, max_doc_tokens, tokenizer) for d in docs]
    if shape in ("qlm", "yes_no"):
        return template.format(query=query.text, document=texts[0])
    n = len(texts)
    letters = [label_letter(i) for i in range(n)]
    return template.format(
        query=query.text,
        passages=_passages_block(texts),
        num=n,
        labels=", ".join(render_label(i) for i in range(n)),
        letters=", ".join(letters),
        example=" > ".join(letters[:2] if n >= 2 else letters),
    )


def check_arity(shape: str, n: int, config: RankerConfig | None = None) -> None:
    if shape in ("qlm", "yes_no"):
        ok = n == 1
    elif shape == "pair":
        ok = n == 2
    elif shape == "order":
        ok = 2 <= n <= (config.w if config else 26)
    else:
        ok = 2 <= n <= (config.c if config else 26)
    if not ok:
        raise ArityMismatch(f"{n} documents cannot fill a {shape} prompt")


def render_prompt(
    method: Method | str,
    query: Query,
    docs: Sequence[Document],
    config: RankerConfig,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> str:
    shape = shape_of(method)
    # listwise.likelihood windows are bounded by w, not c
    likelihood = method in (Method.LISTWISE_LIKELIHOOD, Method.LISTWISE_LIKELIHOOD.value)
    check_arity("order" if likelihood else shape, len(docs), config)
    return render(shape, query, docs, config.doc_token_budget, tokenizer)


# ---------------------------------------------------------------- parsing


@dataclass(frozen=True)
class YesNo:
    value: bool


@dataclass(frozen=True)
class SelectedLabel:
    label: int


@dataclass(frozen=True)
class OrderedLabels:
    labels: tuple[int, ...]
    # True when labels had to be dropped or back-filled to form a permutation
    repaired: bool = False


@dataclass(frozen=True)
class ParseFailure:
    raw: str


ParsedOutput = Union[YesNo, SelectedLabel, OrderedLabels, ParseFailure]

_PASSAGE_RE = re.compile(r"passage\s*[\[(]?\s*([a-z])(?![a-z])", re.IGNORECASE)
_LEADING_LETTER_RE = re.compile(r"^\W*([A-Za-z])(?![A-Za-z])")
_UPPER_TOKEN_RE = re.compile(r"(?<![A-Za-z])([A-Z])(?![A-Za-z])")
_LOWER_TOKEN_RE = re.compile(r"(?<![A-Za-z])([a-z])(?![A-Za-z])")


def render_answer(shape: str, labels: Sequence[int]) -> str:
    """Canonical generated text for an answer; what an obedient model would emit."""
    if shape == "order":
        return " > ".join(label_letter(i) for i in labels)
    return label_letter(labels[0])


def _letters_to_indices(letters: Sequence[str]) -> list[int]:
    return [ord(ch.upper()) - ord("A") for ch in letters]


def _parse_select(raw: str, offered: Sequence[int]) -> ParsedOutput:
    allowed = set(offered)
    for m in _PASSAGE_RE.finditer(raw):
        idx = _letters_to_indices(m.group(1))[0]
        if idx in allowed:
            return SelectedLabel(idx)
    m = _LEADING_LETTER_RE.match(raw)
    if m:
        idx = _letters_to_indices(m.group(1))[0]
        if idx in allowed:
            return SelectedLabel(idx)
    return ParseFailure(raw)


def _parse_order(raw: str, offered: Sequence[int]) -> OrderedLabels:
    if _PASSAGE_RE.search(raw):
        found = [m.group(1) for m in _PASSAGE_RE.finditer(raw)]
    else:
        found = _UPPER_TOKEN_RE.findall(raw) or _LOWER_TOKEN_RE.findall(raw)
    allowed = set(offered)
    seen: list[int] = []
    stray = False
    for idx in _letters_to_indices(found):
        if idx in allowed and idx not in seen:
            seen.append(idx)
        else:
            stray = True
    missing = [i for i in offered if i not in seen]
    return OrderedLabels(tuple(seen + missing), repaired=stray or bool(missing))


def _parse_yes_no(raw: str) -> ParsedOutput:
    m = re.match(r"\W*(yes|no)\b", raw, re.IGNORECASE)
    if not m:
        return ParseFailure(raw)
    return YesNo(m.group(1).lower() == "yes")


def parse_output(method: Method | str, raw: str, offered: Sequence[int]) -> ParsedOutput:
    """Parse generated text into a structured answer; never raises on bad text."""
    if not offered:
        raise ValueError("offered labels must be non-empty")
    shape = shape_of(method)
    if shape == "order":
        return _parse_order(raw, offered)
    if shape == "yes_no":
        return _parse_yes_no(raw)
    if shape == "qlm":
        raise ValueError("query-likelihood scoring has no generated answer to parse")
    return _parse_select(raw, offered)


def is_failure(parsed: ParsedOutput) -> bool:
    return isinstance(parsed, ParseFailure) or (isinstance(parsed, OrderedLabels) and parsed.repaired)

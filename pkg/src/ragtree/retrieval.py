"""Interleaved retrieval pipeline: necessity check, query generation,
lexical/scripted/web retrieval, knowledge reflection, and summarization,
plus the consistency-pruning signal."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .actions import ReasoningState, context_block, fill_template, load_template
from .config import BudgetReport
from .generation import Backend, sample_completions
from .reward import NodeReward

log = logging.getLogger(__name__)


class RetrievalError(Exception):
    pass


class QueryExtractionError(RetrievalError):
    """Model output lacked the 'The query is:' marker."""


class SummaryError(RetrievalError):
    """Summarization produced no usable text."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    score: float = 0.0


@dataclass(frozen=True)
class Verdict:
    admit: bool
    sufficient: bool
    rationale: str


@dataclass(frozen=True)
class RetrievalRecord:
    """One full retrieval cycle: query, documents, reflection, summary."""

    record_id: str
    query: str
    documents: tuple[Document, ...]
    verdict: Verdict
    summary: str | None

    def __post_init__(self):
        if (self.summary is not None) != self.verdict.admit:
            raise ValueError("summary present iff the verdict admits")

    @property
    def sufficient(self) -> bool:
        return self.verdict.admit and self.verdict.sufficient

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "query": self.query,
            "documents": [d.doc_id for d in self.documents],
            "verdict": "admit" if self.verdict.admit else "reject",
            "rationale": self.verdict.rationale,
            "summary": self.summary,
        }


class Retriever(Protocol):
    def search(self, query: str, top_k: int) -> list[Document]:
        ...


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class LocalIndex:
    """In-memory lexical index scoring sum(tf * ln(1 + N/df)) over query
    terms. Immutable after construction."""

    def __init__(self, documents: list[tuple[str, str]]):
        self._docs = [(doc_id, text, tokenize(text)) for doc_id, text in documents]
        self._df: dict[str, int] = {}
        for _, _, terms in self._docs:
            for term in set(terms):
                self._df[term] = self._df.get(term, 0) + 1

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "LocalIndex":
        documents = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    documents.append((str(row["doc_id"]), str(row["text"])))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise RetrievalError(f"{path}:{lineno}: bad corpus line: {exc}") from exc
        return cls(documents)

    def __len__(self) -> int:
        return len(self._docs)

    def search(self, query: str, top_k: int) -> list[Document]:
        n_docs = len(self._docs)
        query_terms = tokenize(query)
        scored = []
        for doc_id, text, terms in self._docs:
            score = 0.0
            for term in query_terms:
                df = self._df.get(term, 0)
                if df == 0:
                    continue
                tf = terms.count(term)
                if tf:
                    score += tf * math.log(1.0 + n_docs / df)
            if score > 0.0:
                scored.append(Document(doc_id=doc_id, text=text, score=score))
        scored.sort(key=lambda d: (-d.score, d.doc_id))
        return scored[:top_k]


class ScriptedRetriever:
    """Canned query -> document-list map for deterministic tests."""

    def __init__(self, script: dict[str, list[tuple[str, str]]]):
        self._script = {
            query: tuple(
                Document(doc_id=doc_id, text=text, score=1.0 / (rank + 1))
                for rank, (doc_id, text) in enumerate(docs)
            )
            for query, docs in script.items()
        }
        self.calls = 0

    def search(self, query: str, top_k: int) -> list[Document]:
        self.calls += 1
        return list(self._script.get(query, ()))[:top_k]


class WebSearchRetriever:
    """Thin HTTP GET search client; expects {"results": [{id, text, score}]}."""

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "SEARCH_API_KEY",
        max_retries: int = 3,
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.timeout = timeout
        self._session = session or requests.Session()

    def search(self, query: str, top_k: int) -> list[Document]:
        import os

        params = {"query": query, "count": top_k}
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        for attempt in range(self.max_retries):
            try:
                resp = self._session.get(
                    self.endpoint, params=params, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                rows = resp.json().get("results", [])
                return [
                    Document(
                        doc_id=str(r.get("id", i)),
                        text=str(r.get("text", "")),
                        score=float(r.get("score", 0.0)),
                    )
                    for i, r in enumerate(rows[:top_k])
                ]
            except (requests.RequestException, ValueError) as exc:
                log.warning("search attempt %d failed: %s", attempt + 1, exc)
        return []


def needs_retrieval(
    state: ReasoningState, backend: Backend, seed: int, budget: BudgetReport | None = None
) -> tuple[bool, bool]:
    """Ask the model whether external retrieval is required.

    Returns (verdict, model_called). Skips the model entirely when an
    already-admitted knowledge item was judged sufficient for the current
    question; unparseable verdicts default to True (retrieve).
    """
    if any(item.sufficient for item in state.knowledge):
        return False, False
    prompt = fill_template(load_template("necessity.txt"), {"instruction": context_block(state)})
    outcome = sample_completions(prompt, 1, seed, backend, tag="necessity")
    if budget is not None:
        budget.add_generation(outcome.tokens_consumed)
    text = outcome.completions[0].text.strip().lower()
    if text.startswith("no"):
        return False, True
    return True, True


_QUERY_MARKER = re.compile(r"[Tt]he query is:?")


def generate_query(
    state: ReasoningState, backend: Backend, seed: int, budget: BudgetReport | None = None
) -> str:
    prompt = fill_template(load_template("a4.txt"), {"question": context_block(state)})
    outcome = sample_completions(prompt, 1, seed, backend, tag="query")
    if budget is not None:
        budget.add_generation(outcome.tokens_consumed)
    text = outcome.completions[0].text
    last = None
    for m in _QUERY_MARKER.finditer(text):
        last = m
    if last is None:
        raise QueryExtractionError("output lacks 'The query is:' marker")
    query = text[last.end():].strip().rstrip(".").strip().strip('"').strip()
    if not query:
        raise QueryExtractionError("extracted query is empty")
    return query


def execute_query(query: str, retriever: Retriever, top_k: int) -> list[Document]:
    if not query:
        raise RetrievalError("query must be nonempty")
    if top_k < 1:
        raise RetrievalError("top_k must be >= 1")
    return retriever.search(query, top_k)[:top_k]


_NEGATIVE_MARKERS = ("irrelevant", "not relevant", "unrelated", "not related")


def reflect(
    query: str,
    documents: list[Document],
    question: str,
    backend: Backend,
    seed: int,
    budget: BudgetReport | None = None,
) -> Verdict:
    """Admit or reject the retrieved batch; empty batches and unparseable
    evaluations reject (knowledge must earn admission)."""
    if not documents:
        return Verdict(admit=False, sufficient=False, rationale="no documents retrieved")
    context = "\n".join(f"[{d.doc_id}] {d.text}" for d in documents)
    prompt = fill_template(
        load_template("a5.txt"),
        {"query": query, "question": question, "retrieved_context": context},
    )
    outcome = sample_completions(prompt, 1, seed, backend, tag="reflect")
    if budget is not None:
        budget.add_generation(outcome.tokens_consumed)
    text = outcome.completions[0].text
    lowered = text.lower()
    if "evaluation" not in lowered:
        return Verdict(admit=False, sufficient=False, rationale=text.strip())
    admit = "relevant" in lowered and not any(m in lowered for m in _NEGATIVE_MARKERS)
    sufficient = admit and "sufficient" in lowered and "insufficient" not in lowered
    return Verdict(admit=admit, sufficient=sufficient, rationale=text.strip())


def summarize(
    documents: list[Document],
    question: str,
    backend: Backend,
    seed: int,
    budget: BudgetReport | None = None,
) -> str:
    context = "; ".join(d.text for d in documents)
    prompt = fill_template(
        load_template("a6.txt"),
        {"original_question": question, "retrieved_context": context},
    )
    outcome = sample_completions(prompt, 1, seed, backend, tag="summarize")
    if budget is not None:
        budget.add_generation(outcome.tokens_consumed)
    summary = outcome.completions[0].text.strip()
    if not summary:
        raise SummaryError("summarization returned empty text")
    return summary


def consistency_prune(reward: NodeReward, tau: float) -> bool:
    """Prune (strictly) low-agreement branches as hallucination signals."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return reward.confidence < tau

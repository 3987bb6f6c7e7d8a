"""Language-model backends, answer extraction, and answer equivalence.

Two backends ship: a deterministic scripted backend keyed by prompt
content hashes (the test oracle layer) and a chat-completions HTTP
backend for real models.
"""
from __future__ import annotations

import hashlib
import os
import re
import time
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Protocol

import requests


class GenerationError(Exception):
    pass


class BackendUnreachableError(GenerationError):
    """Remote backend failed after bounded retries."""


class UnknownPromptError(GenerationError):
    """Scripted backend has no entry for a rendered prompt (closed-world break)."""

    def __init__(self, key: str, prompt: str, tag: str):
        self.key = key
        self.prompt = prompt
        self.tag = tag
        super().__init__(f"no script entry for prompt key {key} (tag={tag or '?'})")


@dataclass(frozen=True)
class Completion:
    text: str
    answer: str | None
    log_likelihood: float = 0.0

    def __post_init__(self):
        if self.log_likelihood != self.log_likelihood or self.log_likelihood in (
            float("inf"),
            float("-inf"),
        ):
            raise ValueError("log_likelihood must be finite")


@dataclass(frozen=True)
class GenerationOutcome:
    completions: tuple[Completion, ...]
    tokens_consumed: int

    def __post_init__(self):
        if not self.completions:
            raise ValueError("an outcome must hold at least one completion")
        if self.tokens_consumed < 0:
            raise ValueError("tokens_consumed must be nonnegative")


_ANSWER_MARKER = re.compile(r"[Tt]he answer is:?")


def extract_answer(text: str) -> str | None:
    """Text after the last 'The answer is' marker, trimmed; None if absent."""
    last = None
    for m in _ANSWER_MARKER.finditer(text):
        last = m
    if last is None:
        return None
    answer = text[last.end():].strip()
    answer = answer.rstrip(".").strip()
    answer = answer.strip('"').strip()
    return answer or None


_ARTICLES = frozenset({"a", "an", "the"})
_NON_ALNUM = re.compile(r"[^0-9a-z\s]")


def normalize_answer(text: str) -> str:
    """Canonical form for equivalence: numerals collapse to a canonical
    decimal; otherwise lowercase, punctuation and articles stripped."""
    raw = text.strip()
    numeric = raw.rstrip(".").strip()
    try:
        value = Decimal(numeric)
    except InvalidOperation:
        pass
    else:
        if value.is_finite():
            return format(value.normalize(), "f")
    lowered = _NON_ALNUM.sub(" ", raw.lower())
    words = [w for w in lowered.split() if w not in _ARTICLES]
    return " ".join(words)


def equivalent(a: str, b: str) -> bool:
    return normalize_answer(a) == normalize_answer(b)


def prompt_key(prompt: str) -> str:
    """16-hex-char content hash; template edits change keys, surfacing
    stale scripts as missing-key failures instead of silent drift."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def count_tokens(text: str) -> int:
    return len(text.split())


class Backend(Protocol):
    def sample(self, prompt: str, k: int, seed: int, tag: str = "") -> GenerationOutcome:
        ...


def sample_completions(
    prompt: str, k: int, seed: int, backend: Backend, tag: str = ""
) -> GenerationOutcome:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not prompt:
        raise ValueError("prompt must be nonempty")
    return backend.sample(prompt, k, seed, tag=tag)


class ScriptedBackend:
    """Immutable prompt-key -> scripted outputs map.

    ``script`` maps a 16-hex prompt key to a list of (text, log_likelihood)
    pairs. Requests for k completions cycle the scripted list. Unknown keys
    raise, naming the key: scripted tests run closed-world.
    """

    def __init__(self, script: dict[str, list[tuple[str, float]]]):
        frozen: dict[str, tuple[tuple[str, float], ...]] = {}
        for key, outputs in script.items():
            if not outputs:
                raise ValueError(f"script entry {key} has no outputs")
            frozen[key] = tuple((str(t), float(ll)) for t, ll in outputs)
        self._script = frozen

    def __contains__(self, key: str) -> bool:
        return key in self._script

    def sample(self, prompt: str, k: int, seed: int, tag: str = "") -> GenerationOutcome:
        key = prompt_key(prompt)
        outputs = self._lookup(key, prompt, tag)
        chosen = [outputs[i % len(outputs)] for i in range(k)]
        completions = tuple(
            Completion(text=t, answer=extract_answer(t), log_likelihood=ll) for t, ll in chosen
        )
        tokens = sum(count_tokens(t) for t, _ in chosen)
        return GenerationOutcome(completions=completions, tokens_consumed=tokens)

    def _lookup(self, key: str, prompt: str, tag: str) -> tuple[tuple[str, float], ...]:
        try:
            return self._script[key]
        except KeyError:
            raise UnknownPromptError(key, prompt, tag) from None


class HttpBackend:
    """OpenAI-style chat-completions client.

    Sums token log-probabilities when the endpoint returns them; otherwise
    falls back to 0.0 and lets answer agreement alone drive rewards.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "LM_API_KEY",
        max_retries: int = 3,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.timeout = timeout
        self._session = session or requests.Session()

    def sample(self, prompt: str, k: int, seed: int, tag: str = "") -> GenerationOutcome:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": k,
            "logprobs": True,
            "seed": seed,
        }
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return self._parse(resp.json(), k)
            except (requests.RequestException, ValueError, KeyError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(min(2.0**attempt, 8.0))
        raise BackendUnreachableError(f"backend failed after {self.max_retries} attempts: {last_error}")

    @staticmethod
    def _parse(data: dict, k: int) -> GenerationOutcome:
        completions = []
        for choice in data["choices"][:k]:
            text = choice["message"]["content"]
            logprobs = choice.get("logprobs") or {}
            content = logprobs.get("content") or []
            ll = sum(tok.get("logprob", 0.0) for tok in content) if content else 0.0
            completions.append(
                Completion(text=text, answer=extract_answer(text), log_likelihood=ll)
            )
        if not completions:
            raise ValueError("backend returned no choices")
        usage = data.get("usage") or {}
        tokens = int(usage.get("completion_tokens", sum(count_tokens(c.text) for c in completions)))
        return GenerationOutcome(completions=tuple(completions), tokens_consumed=tokens)

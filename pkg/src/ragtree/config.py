"""Run configuration and budget accounting."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .actions import ActionKind


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    rollouts: int = 4
    max_depth: int = 5
    max_subquestions: int = 2
    k_completions: int = 4
    c_uct: float = 1.414
    top_k_docs: int = 10
    tau_prune: float = 0.25
    disabled_actions: frozenset[ActionKind] = frozenset()
    seed: int = 0
    parallel_expansion: bool = True

    def validate(self) -> "RunConfig":
        if self.rollouts < 1:
            raise ConfigError("rollouts must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.max_subquestions < 0:
            raise ConfigError("max_subquestions must be >= 0")
        if self.k_completions < 1:
            raise ConfigError("k_completions must be >= 1")
        if self.c_uct < 0:
            raise ConfigError("c_uct must be >= 0")
        if self.top_k_docs < 1:
            raise ConfigError("top_k_docs must be >= 1")
        if not 0.0 <= self.tau_prune <= 1.0:
            raise ConfigError("tau_prune must lie in [0, 1]")
        if ActionKind.SUMMARIZED_ANSWER in self.disabled_actions:
            raise ConfigError("A6 cannot be disabled")
        if {ActionKind.DIRECT_ANSWER, ActionKind.QUICK_REASONING} <= self.disabled_actions:
            raise ConfigError("A1 and A2 cannot both be disabled")
        return self

    def to_dict(self) -> dict:
        return {
            "rollouts": self.rollouts,
            "max_depth": self.max_depth,
            "max_subquestions": self.max_subquestions,
            "k_completions": self.k_completions,
            "c_uct": self.c_uct,
            "top_k_docs": self.top_k_docs,
            "tau_prune": self.tau_prune,
            "disabled_actions": sorted(a.code for a in self.disabled_actions),
            "seed": self.seed,
            "parallel_expansion": self.parallel_expansion,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        kwargs = dict(data)
        if "disabled_actions" in kwargs:
            kwargs["disabled_actions"] = frozenset(
                ActionKind(code) for code in kwargs["disabled_actions"]
            )
        return cls(**kwargs).validate()


@dataclass
class BudgetReport:
    """Monotone counters for one search run.

    Wall time is tracked in memory but deliberately kept out of dumped
    traces and metrics files so that repeated runs are byte-identical.
    """

    tokens_generated: int = 0
    lm_calls: int = 0
    retriever_calls: int = 0
    wall_time_ms: int = 0
    _started: float = field(default_factory=time.monotonic, repr=False)

    def add_generation(self, tokens: int, calls: int = 1) -> None:
        if tokens < 0 or calls < 0:
            raise ValueError("budget increments must be nonnegative")
        self.tokens_generated += tokens
        self.lm_calls += calls

    def add_retrieval(self, calls: int = 1) -> None:
        if calls < 0:
            raise ValueError("budget increments must be nonnegative")
        self.retriever_calls += calls

    def merge(self, other: "BudgetReport") -> None:
        self.tokens_generated += other.tokens_generated
        self.lm_calls += other.lm_calls
        self.retriever_calls += other.retriever_calls

    def stop_clock(self) -> None:
        self.wall_time_ms = int((time.monotonic() - self._started) * 1000)

    def to_dict(self) -> dict:
        return {
            "lm_calls": self.lm_calls,
            "retriever_calls": self.retriever_calls,
            "tokens_generated": self.tokens_generated,
        }

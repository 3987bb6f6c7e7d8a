"""Command-line benchmark harness: JSONL datasets in, per-example JSON
traces and a metrics file out."""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .actions import ActionKind
from .config import ConfigError, RunConfig
from .generation import Backend, HttpBackend, ScriptedBackend, equivalent
from .orchestrator import NO_ANSWER, Backends, SearchResult, run_search
from .retrieval import LocalIndex, Retriever, ScriptedRetriever, WebSearchRetriever
from .worlds import build_world


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class Example:
    id: str
    question: str
    gold_answer: str
    choices: tuple[tuple[str, str], ...] = ()
    corpus_ref: str | None = None


@dataclass
class Metrics:
    accuracy: float
    avg_tokens: float
    avg_lm_calls: float
    avg_retriever_calls: float
    wall_time_ms_total: int

    def to_dict(self) -> dict:
        # Wall time is excluded so metrics files are byte-stable across runs.
        return {
            "accuracy": self.accuracy,
            "avg_tokens": self.avg_tokens,
            "avg_lm_calls": self.avg_lm_calls,
            "avg_retriever_calls": self.avg_retriever_calls,
        }


def load_dataset(path: str | Path) -> list[Example]:
    """Parse a JSONL dataset; errors carry the offending line number."""
    path = Path(path)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for field in ("question", "gold_answer"):
                if not row.get(field):
                    raise DatasetError(f"{path}:{lineno}: missing or empty '{field}'")
            choices = tuple(
                (str(label), str(text)) for label, text in row.get("choices", [])
            )
            examples.append(
                Example(
                    id=str(row.get("id", lineno)),
                    question=str(row["question"]),
                    gold_answer=str(row["gold_answer"]),
                    choices=choices,
                    corpus_ref=row.get("corpus_ref"),
                )
            )
    if not examples:
        raise DatasetError(f"{path}: dataset is empty")
    return examples


def grade(prediction: str, example: Example, equiv=equivalent) -> bool:
    """Multiple-choice: match the gold label or its choice text; free-form:
    normalized equivalence against the gold answer."""
    if prediction == NO_ANSWER:
        return False
    if example.choices:
        gold_label = example.gold_answer
        gold_text = next(
            (text for label, text in example.choices if equiv(label, gold_label)), None
        )
        if equiv(prediction, gold_label):
            return True
        return gold_text is not None and equiv(prediction, gold_text)
    return equiv(prediction, example.gold_answer)


def dump_trace(result: SearchResult, path: str | Path) -> None:
    """Write the trace JSON with stable key order; byte-identical across
    identical runs."""
    try:
        Path(path).write_text(
            json.dumps(result.trace, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def run_benchmark(
    examples: list[Example],
    config: RunConfig,
    backends_for: Callable[[Example], Backends],
    config_for: Callable[[Example], RunConfig] | None = None,
    out_dir: str | Path | None = None,
) -> tuple[Metrics, list[dict]]:
    """Run the search per example (sequentially), grade, and aggregate.
    One example's failure never aborts the batch."""
    started = time.monotonic()
    records = []
    correct = 0
    totals = {"tokens": 0, "lm_calls": 0, "retriever_calls": 0}
    for example in examples:
        record: dict = {"id": example.id, "gold": example.gold_answer}
        try:
            cfg = config_for(example) if config_for else config
            result = run_search(example.question, cfg, backends_for(example))
        except Exception as exc:  # per-example isolation
            record.update({"prediction": None, "correct": False, "error": str(exc)})
            records.append(record)
            continue
        ok = grade(result.answer, example)
        correct += ok
        totals["tokens"] += result.budget.tokens_generated
        totals["lm_calls"] += result.budget.lm_calls
        totals["retriever_calls"] += result.budget.retriever_calls
        record.update({"prediction": result.answer, "correct": ok})
        records.append(record)
        if out_dir is not None:
            dump_trace(result, Path(out_dir) / f"{example.id}.trace.json")
    n = len(examples)
    metrics = Metrics(
        accuracy=correct / n,
        avg_tokens=totals["tokens"] / n,
        avg_lm_calls=totals["lm_calls"] / n,
        avg_retriever_calls=totals["retriever_calls"] / n,
        wall_time_ms_total=int((time.monotonic() - started) * 1000),
    )
    if out_dir is not None:
        payload = {"metrics": metrics.to_dict(), "examples": records}
        (Path(out_dir) / "metrics.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return metrics, records


def _parse_disabled(value: str) -> frozenset[ActionKind]:
    if not value:
        return frozenset()
    out = set()
    for code in value.split(","):
        code = code.strip().upper()
        if code not in {"A1", "A2", "A3", "A4", "A5"}:
            raise argparse.ArgumentTypeError(f"cannot disable {code!r} (A1..A5 only)")
        out.add(ActionKind(code))
    return frozenset(out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragtree",
        description="Retrieval-augmented tree search over a question set.",
    )
    parser.add_argument("--dataset", help="JSONL dataset of examples")
    parser.add_argument("--worlds", help="directory of scripted world JSON files")
    parser.add_argument("--out-dir", required=True, help="directory for traces and metrics")
    parser.add_argument("--rollouts", type=int, default=4)
    parser.add_argument("--max-depth", type=int, default=5)
    parser.add_argument("--max-subquestions", type=int, default=2)
    parser.add_argument("--k-completions", type=int, default=4)
    parser.add_argument("--c-uct", type=float, default=1.414)
    parser.add_argument("--top-k", type=int, default=10)
    parser.add_argument("--tau-prune", type=float, default=0.25)
    parser.add_argument(
        "--disable-actions",
        type=_parse_disabled,
        default=frozenset(),
        metavar="A4,A5",
        help="comma-separated actions (A1..A5) to ablate",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--sequential", action="store_true", help="disable parallel sibling expansion"
    )
    parser.add_argument("--lm-endpoint", help="chat-completions base URL")
    parser.add_argument("--lm-model", default="default", help="model name for --lm-endpoint")
    parser.add_argument("--lm-scripted", help="JSON file mapping prompt keys to outputs")
    parser.add_argument(
        "--retriever", choices=["local", "remote", "scripted"], default="local"
    )
    parser.add_argument("--corpus", help="JSONL corpus for the local retriever")
    parser.add_argument("--retriever-script", help="JSON query->documents map")
    parser.add_argument("--search-endpoint", help="search URL for --retriever remote")
    return parser


def _build_lm(args) -> Backend:
    if args.lm_scripted:
        script = json.loads(Path(args.lm_scripted).read_text(encoding="utf-8"))
        return ScriptedBackend({k: [(t, ll) for t, ll in v] for k, v in script.items()})
    if args.lm_endpoint:
        return HttpBackend(base_url=args.lm_endpoint, model=args.lm_model)
    raise ConfigError("one of --lm-scripted or --lm-endpoint is required")


def _build_retriever(args) -> Retriever | None:
    if args.retriever == "scripted":
        if not args.retriever_script:
            raise ConfigError("--retriever scripted requires --retriever-script")
        script = json.loads(Path(args.retriever_script).read_text(encoding="utf-8"))
        return ScriptedRetriever({q: [(d, t) for d, t in docs] for q, docs in script.items()})
    if args.retriever == "remote":
        if not args.search_endpoint:
            raise ConfigError("--retriever remote requires --search-endpoint")
        return WebSearchRetriever(endpoint=args.search_endpoint)
    if args.corpus:
        return LocalIndex.from_jsonl(args.corpus)
    return None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = RunConfig(
        rollouts=args.rollouts,
        max_depth=args.max_depth,
        max_subquestions=args.max_subquestions,
        k_completions=args.k_completions,
        c_uct=args.c_uct,
        top_k_docs=args.top_k,
        tau_prune=args.tau_prune,
        disabled_actions=args.disable_actions,
        seed=args.seed,
        parallel_expansion=not args.sequential,
    )
    try:
        config.validate()
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.worlds:
            world_paths = sorted(Path(args.worlds).glob("*.json"))
            if not world_paths:
                raise DatasetError(f"no world files under {args.worlds}")
            worlds = {p.stem: build_world(p) for p in world_paths}
            examples = [
                Example(id=w.name, question=w.question, gold_answer=w.gold)
                for w in worlds.values()
            ]
            explicit = _explicit_flags(argv if argv is not None else sys.argv[1:])

            def config_for(example: Example) -> RunConfig:
                overrides = {
                    k: v
                    for k, v in worlds[example.id].config_overrides.items()
                    if k not in explicit
                }
                merged = {**config.to_dict(), **overrides}
                return RunConfig.from_dict(merged)

            metrics, _ = run_benchmark(
                examples,
                config,
                backends_for=lambda ex: worlds[ex.id].backends(),
                config_for=config_for,
                out_dir=out_dir,
            )
        else:
            if not args.dataset:
                raise DatasetError("one of --dataset or --worlds is required")
            examples = load_dataset(args.dataset)
            lm = _build_lm(args)
            retriever = _build_retriever(args)
            backends = Backends(lm=lm, retriever=retriever)
            metrics, _ = run_benchmark(
                examples, config, backends_for=lambda ex: backends, out_dir=out_dir
            )
    except (ConfigError, DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"accuracy={metrics.accuracy:.4f} avg_tokens={metrics.avg_tokens:.1f} "
        f"avg_lm_calls={metrics.avg_lm_calls:.1f} "
        f"avg_retriever_calls={metrics.avg_retriever_calls:.1f} "
        f"wall_time_ms={metrics.wall_time_ms_total}"
    )
    return 0


_FLAG_TO_FIELD = {
    "--rollouts": "rollouts",
    "--max-depth": "max_depth",
    "--max-subquestions": "max_subquestions",
    "--k-completions": "k_completions",
    "--c-uct": "c_uct",
    "--top-k": "top_k_docs",
    "--tau-prune": "tau_prune",
    "--disable-actions": "disabled_actions",
    "--seed": "seed",
    "--sequential": "parallel_expansion",
}


def _explicit_flags(argv: list[str]) -> set[str]:
    """Config fields the user set explicitly; these beat world overrides."""
    fields = set()
    for token in argv:
        flag = token.split("=", 1)[0]
        if flag in _FLAG_TO_FIELD:
            fields.add(_FLAG_TO_FIELD[flag])
    return fields


if __name__ == "__main__":
    raise SystemExit(main())

"""Search driver: the rollout loop, parallel sibling expansion, and trace
assembly.

Determinism under parallelism: every LM call gets a seed derived from
(config seed, node id, action, purpose), sibling evaluations run
concurrently but are committed to the tree strictly in canonical action
order, and per-evaluation budget deltas are merged at commit time. The
parallel and sequential modes therefore produce identical traces.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace as dc_replace

from .actions import (
    ActionKind,
    MalformedCompletionError,
    ReasoningState,
    ReasoningStep,
    RETRIEVAL_ACTIONS,
    apply_action,
    is_terminal,
    legal_actions,
    render_prompt,
)
from .aggregation import extract_trajectories, group_answers, score_answers, select_best
from .config import BudgetReport, RunConfig
from .generation import Backend, BackendUnreachableError, sample_completions
from .retrieval import (
    QueryExtractionError,
    RetrievalRecord,
    Retriever,
    SummaryError,
    consistency_prune,
    execute_query,
    generate_query,
    needs_retrieval,
    reflect,
    summarize,
)
from .reward import EmptyBatchError, cluster_completions, compute_reward
from .tree import RealizedAction, SearchTree

NO_ANSWER = "<no-answer>"


class PartialResultError(Exception):
    """A backend hard-failed mid-search; carries the trace built so far."""

    def __init__(self, message: str, trace: dict):
        super().__init__(message)
        self.trace = trace


@dataclass
class Backends:
    lm: Backend
    retriever: Retriever | None = None


@dataclass
class SearchResult:
    answer: str
    scored_answers: list[tuple[str, float]]
    trace: dict
    budget: BudgetReport


def derive_seed(base: int, *parts) -> int:
    material = ":".join([str(base), *(str(p) for p in parts)])
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class _Evaluated:
    action: ActionKind
    state: ReasoningState
    raw_reward: float
    positive_reward: float
    terminal: bool
    pruned: bool
    record: RetrievalRecord | None
    budget: BudgetReport
    failure: str | None = None


def _failed(
    action: ActionKind,
    state: ReasoningState,
    prompt: str,
    output_text: str,
    budget: BudgetReport,
    reason: str,
) -> _Evaluated:
    step = ReasoningStep(
        action=action,
        prompt_rendered=prompt,
        output_text=output_text or "(no output)",
        extracted_answer=None,
    )
    failed_state = dc_replace(state, steps=state.steps + (step,))
    return _Evaluated(
        action=action,
        state=failed_state,
        raw_reward=0.0,
        positive_reward=0.0,
        terminal=True,
        pruned=True,
        record=None,
        budget=budget,
        failure=reason,
    )


def _evaluate_action(
    state: ReasoningState,
    action: ActionKind,
    node_id: int,
    config: RunConfig,
    lm: Backend,
    retriever: Retriever | None,
) -> _Evaluated:
    """Run one action end to end: optional retrieval cycle, K-sample
    generation, majority-cluster reward, and successor-state construction.
    Branch failures become pruned children, never exceptions."""
    budget = BudgetReport()
    record: RetrievalRecord | None = None
    pending_summary: str | None = None
    if action in RETRIEVAL_ACTIONS:
        if retriever is None:
            return _failed(action, state, "", "", budget, "no retriever configured")
        try:
            query = generate_query(
                state, lm, derive_seed(config.seed, node_id, action.code, "query"), budget
            )
        except QueryExtractionError:
            # No usable query: the action degrades to plain reasoning.
            record = None
        else:
            documents = execute_query(query, retriever, config.top_k_docs)
            budget.add_retrieval()
            verdict = reflect(
                query,
                documents,
                state.question,
                lm,
                derive_seed(config.seed, node_id, action.code, "reflect"),
                budget,
            )
            summary = None
            if verdict.admit:
                try:
                    summary = summarize(
                        documents,
                        state.question,
                        lm,
                        derive_seed(config.seed, node_id, action.code, "summarize"),
                        budget,
                    )
                except SummaryError:
                    return _failed(action, state, "", "", budget, "empty summary")
            record = RetrievalRecord(
                record_id=f"n{node_id}-{action.code}",
                query=query,
                documents=tuple(documents),
                verdict=verdict,
                summary=summary,
            )
            pending_summary = summary
    prompt = render_prompt(action, state, pending_summary)
    outcome = sample_completions(
        prompt,
        config.k_completions,
        derive_seed(config.seed, node_id, action.code, "main"),
        lm,
        tag=action.code,
    )
    budget.add_generation(outcome.tokens_consumed)
    answered = [c for c in outcome.completions if c.answer is not None]
    try:
        clusters = cluster_completions(answered)
    except EmptyBatchError:
        # Every completion was marker-free: the branch is dead on arrival.
        return _failed(
            action, state, prompt, outcome.completions[0].text, budget, "malformed batch"
        )
    node_reward = compute_reward(clusters, answered)
    majority = max(
        clusters.clusters, key=lambda c: len(c.members)
    )  # max() keeps the earliest on ties, matching compute_reward
    representative = answered[majority.members[0]]
    try:
        new_state = apply_action(state, action, representative, prompt=prompt, retrieval=record)
    except MalformedCompletionError as exc:
        return _failed(action, state, prompt, representative.text, budget, str(exc))
    pruned = consistency_prune(node_reward, config.tau_prune)
    terminal = pruned or is_terminal(new_state, config)
    return _Evaluated(
        action=action,
        state=new_state,
        raw_reward=node_reward.raw_reward,
        positive_reward=node_reward.positive_reward,
        terminal=terminal,
        pruned=pruned,
        record=record,
        budget=budget,
    )


def rollout(
    tree: SearchTree,
    config: RunConfig,
    backends: Backends,
    budget: BudgetReport,
    index: int,
) -> dict:
    """One search iteration: descend to a leaf, expand it (all legal
    actions, concurrently when enabled), and backpropagate."""
    node = tree.root
    while node.children:
        node = tree.select_child(node, config.c_uct)
    event: dict = {"rollout": index, "selected": node.id}
    if node.terminal:
        tree.backpropagate(node.id, node.last_raw_reward)
        event.update({"expanded": False, "children": []})
        return event
    state = node.state
    retrieval_enabled = bool(RETRIEVAL_ACTIONS - config.disabled_actions)
    needs = False
    if retrieval_enabled and backends.retriever is not None:
        needs, _ = needs_retrieval(
            state, backends.lm, derive_seed(config.seed, node.id, "necessity"), budget
        )
    actions = legal_actions(state, config, needs)
    if not actions:
        node.terminal = True
        tree.backpropagate(node.id, node.last_raw_reward)
        event.update({"expanded": False, "children": []})
        return event

    def evaluate(action: ActionKind) -> _Evaluated:
        return _evaluate_action(state, action, node.id, config, backends.lm, backends.retriever)

    if config.parallel_expansion and len(actions) > 1:
        with ThreadPoolExecutor(max_workers=len(actions)) as pool:
            results = list(pool.map(evaluate, actions))
    else:
        results = [evaluate(a) for a in actions]

    realized = []
    for ev in results:  # commit in canonical action order for determinism
        budget.merge(ev.budget)
        realized.append(
            RealizedAction(
                action=ev.action,
                state=ev.state,
                raw_reward=ev.raw_reward,
                positive_reward=ev.positive_reward,
                terminal=ev.terminal,
                pruned=ev.pruned,
            )
        )
    children = tree.expand(node, realized)
    event.update({"expanded": True, "children": [c.id for c in children]})
    retrievals = []
    for ev, child in zip(results, children):
        if ev.record is not None:
            entry = ev.record.to_dict()
            entry["node"] = child.id
            retrievals.append(entry)
        if ev.failure is not None:
            event.setdefault("failures", []).append({"node": child.id, "reason": ev.failure})
    if retrievals:
        event["retrieval"] = retrievals
    return event


def _build_trace(
    question: str,
    config: RunConfig,
    tree: SearchTree,
    events: list[dict],
    final: dict,
    budget: BudgetReport,
) -> dict:
    return {
        "question": question,
        "config": config.to_dict(),
        "nodes": tree.to_trace_nodes(),
        "rollouts": events,
        "backprops": [[leaf, reward] for leaf, reward in tree.backprop_log],
        "final": final,
        "budget": budget.to_dict(),
    }


def run_search(question: str, config: RunConfig, backends: Backends) -> SearchResult:
    """Full search: config.rollouts iterations, then reward-weighted voting
    over answered trajectories."""
    if not question.strip():
        raise ValueError("question must be nonempty")
    config.validate()
    budget = BudgetReport()
    tree = SearchTree(ReasoningState(question=question), max_depth=config.max_depth)
    events: list[dict] = []
    try:
        for i in range(config.rollouts):
            events.append(rollout(tree, config, backends, budget, i))
    except BackendUnreachableError as exc:
        budget.stop_clock()
        trace = _build_trace(question, config, tree, events, {"error": str(exc)}, budget)
        raise PartialResultError(str(exc), trace) from exc
    trajectories = extract_trajectories(tree)
    if trajectories:
        groups = group_answers(trajectories)
        scored = score_answers(groups)
        answer = select_best(scored)
    else:
        scored = []
        answer = NO_ANSWER
    budget.stop_clock()
    final = {"answer": answer, "scored": [[a, s] for a, s in scored]}
    trace = _build_trace(question, config, tree, events, final, budget)
    return SearchResult(answer=answer, scored_answers=scored, trace=trace, budget=budget)


def validate_trace(trace: dict) -> None:
    """Structural checks every emitted trace must satisfy: depth and
    sub-question bounds, parent/child coherence, terminal leaves."""
    config = RunConfig.from_dict(trace["config"])
    nodes = {n["id"]: n for n in trace["nodes"]}
    child_count = {nid: 0 for nid in nodes}
    for n in trace["nodes"]:
        if n["depth"] > config.max_depth:
            raise ValueError(f"node {n['id']} exceeds max depth")
        subq = int(n["state_summary"].split("subq=")[1].split(";")[0])
        if subq > config.max_subquestions:
            raise ValueError(f"node {n['id']} exceeds max subquestions")
        if n["parent"] is not None:
            parent = nodes[n["parent"]]
            if n["depth"] != parent["depth"] + 1:
                raise ValueError(f"node {n['id']} has inconsistent depth")
            child_count[n["parent"]] += 1
        if n["action"] is not None and ActionKind(n["action"]) in config.disabled_actions:
            raise ValueError(f"node {n['id']} used disabled action {n['action']}")
    for nid, n in nodes.items():
        if n["terminal"] and child_count[nid]:
            raise ValueError(f"terminal node {nid} has children")

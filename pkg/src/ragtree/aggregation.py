"""Final-answer selection: trajectory extraction, semantic grouping,
normalized reward-sum scoring, and deterministic argmax."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .generation import equivalent
from .tree import SearchTree


class AggregationError(Exception):
    pass


@dataclass(frozen=True)
class Trajectory:
    node_path: tuple[int, ...]
    answer: str
    reward: float
    terminal_id: int


@dataclass(frozen=True)
class AnswerGroup:
    representative: str
    members: tuple[Trajectory, ...]


def extract_trajectories(tree: SearchTree) -> list[Trajectory]:
    """One trajectory per answered, non-pruned terminal node; its reward is
    the product of positive rewards along the path, root excluded (the root
    has no incoming action, hence no evaluation)."""
    trajectories = []
    for node in tree.nodes:
        if not node.terminal or node.pruned or node.state.answered is None:
            continue
        path = tuple(reversed(tree.path_to_root(node.id)))
        reward = math.prod(tree.node(nid).positive_reward for nid in path[1:])
        trajectories.append(
            Trajectory(
                node_path=path,
                answer=node.state.answered,
                reward=reward,
                terminal_id=node.id,
            )
        )
    return trajectories


def group_answers(
    trajectories: list[Trajectory], equiv: Callable[[str, str], bool] = equivalent
) -> list[AnswerGroup]:
    """Greedy first-match grouping by answer equivalence, in input order."""
    if not trajectories:
        raise AggregationError("no trajectories to group")
    reps: list[str] = []
    members: list[list[Trajectory]] = []
    for trajectory in trajectories:
        for pos, rep in enumerate(reps):
            if equiv(trajectory.answer, rep):
                members[pos].append(trajectory)
                break
        else:
            reps.append(trajectory.answer)
            members.append([trajectory])
    return [AnswerGroup(representative=r, members=tuple(m)) for r, m in zip(reps, members)]


def score_answers(groups: list[AnswerGroup]) -> list[tuple[str, float]]:
    """Each group's share of the total trajectory reward; shares sum to 1."""
    if not groups:
        raise AggregationError("no answer groups to score")
    totals = [math.fsum(t.reward for t in g.members) for g in groups]
    grand_total = math.fsum(totals)
    if grand_total <= 0.0:
        raise AggregationError("total trajectory reward is not positive")
    return [(g.representative, total / grand_total) for g, total in zip(groups, totals)]


def select_best(scored: list[tuple[str, float]]) -> str:
    """Maximal score; exact ties keep the earlier entry, which corresponds
    to the group whose first trajectory terminated earliest."""
    if not scored:
        raise AggregationError("no scored answers")
    best_answer, best_score = scored[0]
    for answer, score in scored[1:]:
        if score > best_score:
            best_answer, best_score = answer, score
    return best_answer

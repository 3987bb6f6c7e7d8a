"""Node reward computation: cluster completions by answer agreement, take
the majority cluster, and derive confidence plus the aggregation reward."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .generation import Completion, equivalent
from .tree import SearchTree


class RewardError(Exception):
    pass


class EmptyBatchError(RewardError):
    """Every completion in the batch was malformed; the branch is pruned."""


@dataclass(frozen=True)
class Cluster:
    representative: str
    members: tuple[int, ...]


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    total: int


@dataclass(frozen=True)
class NodeReward:
    representative: str
    confidence: float
    raw_reward: float
    positive_reward: float


def cluster_completions(
    completions: list[Completion], equiv: Callable[[str, str], bool] = equivalent
) -> ClusterSet:
    """Greedy first-match clustering in input order: each completion joins
    the first cluster whose representative its answer matches, else founds
    a new cluster. Callers drop answerless completions beforehand."""
    if not completions:
        raise EmptyBatchError("no completions to cluster")
    reps: list[str] = []
    members: list[list[int]] = []
    for idx, completion in enumerate(completions):
        if completion.answer is None:
            raise RewardError(f"completion {idx} has no extracted answer")
        for pos, rep in enumerate(reps):
            if equiv(completion.answer, rep):
                members[pos].append(idx)
                break
        else:
            reps.append(completion.answer)
            members.append([idx])
    clusters = tuple(
        Cluster(representative=r, members=tuple(m)) for r, m in zip(reps, members)
    )
    return ClusterSet(clusters=clusters, total=len(completions))


def compute_reward(clusters: ClusterSet, completions: list[Completion]) -> NodeReward:
    """Majority-cluster confidence and mean log-likelihood.

    The raw reward is the mean log-likelihood over the majority cluster
    (what UCT sees via Q). The positive reward conf*exp(min(raw, 0)) maps
    it into (0, 1] so trajectory products stay positive and monotone.
    """
    if not clusters.clusters:
        raise RewardError("empty cluster set")
    best = clusters.clusters[0]
    for cluster in clusters.clusters[1:]:
        if len(cluster.members) > len(best.members):  # ties keep earliest-founded
            best = cluster
    n_star = len(best.members)
    confidence = n_star / clusters.total
    raw = math.fsum(completions[i].log_likelihood for i in best.members) / n_star
    positive = confidence * math.exp(min(raw, 0.0))
    return NodeReward(
        representative=best.representative,
        confidence=confidence,
        raw_reward=raw,
        positive_reward=positive,
    )


def update_stats(tree: SearchTree, node_id: int, reward: NodeReward) -> None:
    """Apply the evaluation to the node and propagate the raw reward up."""
    node = tree.node(node_id)
    node.positive_reward = reward.positive_reward
    node.last_raw_reward = reward.raw_reward
    tree.backpropagate(node_id, reward.raw_reward)

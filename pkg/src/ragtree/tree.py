"""MCTS tree: nodes, UCT selection, backpropagation, expansion.

Every node evaluation backpropagates its reward through the full ancestor
path, so for any internal node the visit count is exactly one (its own
creation) plus the sum of its children's visit counts. All mutation goes
through a single lock; concurrent readers see consistent snapshots because
commits happen under the same lock.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

from .actions import ActionKind, ReasoningState


class TreeError(Exception):
    pass


@dataclass
class SearchNode:
    id: int
    state: ReasoningState
    incoming_action: ActionKind | None = None
    q_value: float = 0.0
    visit_count: int = 0
    positive_reward: float = 1.0
    parent: int | None = None
    depth: int = 0
    terminal: bool = False
    pruned: bool = False
    last_raw_reward: float = 0.0
    children: list[int] = field(default_factory=list)

    @property
    def mean_reward(self) -> float:
        return self.q_value / self.visit_count if self.visit_count else 0.0


@dataclass(frozen=True)
class RealizedAction:
    """One materialized child: the action, its successor state, and the
    rewards computed by the node evaluation that created it."""

    action: ActionKind
    state: ReasoningState
    raw_reward: float
    positive_reward: float = 1.0
    terminal: bool = False
    pruned: bool = False


def uct_score(q_value: float, visit_count: int, parent_visits: int, c: float) -> float:
    """Mean reward plus the exploration bonus c*sqrt(ln(N)/n)."""
    if visit_count < 1:
        raise TreeError("uct_score requires visit_count >= 1")
    if parent_visits < 1:
        raise TreeError("uct_score requires parent_visits >= 1")
    if c < 0:
        raise TreeError("exploration constant must be nonnegative")
    return q_value / visit_count + c * math.sqrt(math.log(parent_visits) / visit_count)


class SearchTree:
    def __init__(self, root_state: ReasoningState, max_depth: int):
        self.max_depth = max_depth
        self._nodes: list[SearchNode] = [SearchNode(id=0, state=root_state)]
        self._lock = threading.Lock()
        # (leaf_id, reward) per backpropagation, in commit order; paths are
        # immutable so the full increment history is replayable from this log.
        self.backprop_log: list[tuple[int, float]] = []

    @property
    def root(self) -> SearchNode:
        return self._nodes[0]

    def node(self, node_id: int) -> SearchNode:
        try:
            return self._nodes[node_id]
        except IndexError:
            raise TreeError(f"no node with id {node_id}") from None

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def nodes(self) -> tuple[SearchNode, ...]:
        return tuple(self._nodes)

    def path_to_root(self, node_id: int) -> list[int]:
        """Node ids from the given node up to and including the root."""
        path = []
        current: int | None = node_id
        while current is not None:
            path.append(current)
            current = self._nodes[current].parent
        return path

    def select_child(self, node: SearchNode, c: float) -> SearchNode:
        """Unvisited children first (in expansion order), then UCT argmax
        with ties broken by lowest child id."""
        if not node.children:
            raise TreeError(f"node {node.id} has no children to select from")
        if node.visit_count < 1:
            raise TreeError("cannot select from an unvisited parent")
        children = [self._nodes[cid] for cid in node.children]
        for child in children:
            if child.visit_count == 0:
                return child
        best = children[0]
        best_score = uct_score(best.q_value, best.visit_count, node.visit_count, c)
        for child in children[1:]:
            score = uct_score(child.q_value, child.visit_count, node.visit_count, c)
            if score > best_score:
                best, best_score = child, score
        return best

    def backpropagate(self, leaf_id: int, reward: float) -> None:
        """Add reward and one visit to every node from leaf to root."""
        with self._lock:
            self._backpropagate_locked(leaf_id, reward)

    def _backpropagate_locked(self, leaf_id: int, reward: float) -> None:
        for node_id in self.path_to_root(leaf_id):
            node = self._nodes[node_id]
            node.q_value += reward
            node.visit_count += 1
        self.backprop_log.append((leaf_id, reward))

    def expand(self, node: SearchNode, realized: list[RealizedAction]) -> list[SearchNode]:
        """Append one child per realized action and backpropagate each
        child's raw reward; an empty action list marks the node terminal."""
        with self._lock:
            if node.terminal:
                raise TreeError(f"cannot expand terminal node {node.id}")
            if node.children:
                raise TreeError(f"node {node.id} is already expanded")
            if not realized:
                node.terminal = True
                return []
            if node.depth + 1 > self.max_depth:
                raise TreeError(f"expansion of node {node.id} would exceed max depth")
            created = []
            for item in realized:
                child = SearchNode(
                    id=len(self._nodes),
                    state=item.state,
                    incoming_action=item.action,
                    parent=node.id,
                    depth=node.depth + 1,
                    positive_reward=item.positive_reward,
                    terminal=item.terminal,
                    pruned=item.pruned,
                    last_raw_reward=item.raw_reward,
                )
                self._nodes.append(child)
                node.children.append(child.id)
                self._backpropagate_locked(child.id, item.raw_reward)
                created.append(child)
            return created

    def to_trace_nodes(self) -> list[dict]:
        return [
            {
                "id": n.id,
                "parent": n.parent,
                "action": n.incoming_action.code if n.incoming_action else None,
                "depth": n.depth,
                "q": n.q_value,
                "n": n.visit_count,
                "positive": n.positive_reward,
                "terminal": n.terminal,
                "pruned": n.pruned,
                "state_summary": n.state.summary(),
            }
            for n in self._nodes
        ]

import json

import pytest

from ragtree.generation import prompt_key
from ragtree.worlds import WorldError, build_world, materialize, shipped_worlds

from conftest import FIXTURES, run_world


class TestFixtureFiles:
    def test_twenty_worlds_shipped(self, worlds):
        assert len(worlds) == 20
        kinds = {w.expectations["kind"] for w in worlds.values()}
        assert kinds == {
            "retrieval_gated",
            "no_retrieval",
            "consistency_trap",
            "hallucination_trap",
        }

    def test_script_keys_are_prompt_hashes(self, worlds):
        for world in worlds.values():
            for key in world.lm_script:
                assert len(key) == 16
                assert int(key, 16) >= 0

    def test_regeneration_matches_shipped_files(self):
        for rule_world in shipped_worlds():
            regenerated = materialize(rule_world).to_dict()
            shipped = json.loads(
                (FIXTURES / f"{rule_world.name}.json").read_text(encoding="utf-8")
            )
            assert regenerated == shipped, rule_world.name

    def test_build_world_rejects_missing_fields(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"name": "x"}', encoding="utf-8")
        with pytest.raises(WorldError, match="question"):
            build_world(path)

    def test_build_world_rejects_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(WorldError, match="invalid JSON"):
            build_world(path)


class TestWorldExpectations:
    def winning_terminal(self, result):
        best_answer = result.answer
        nodes = {n["id"]: n for n in result.trace["nodes"]}
        for node in result.trace["nodes"]:
            summary = node["state_summary"]
            if node["terminal"] and not node["pruned"] and summary.endswith(
                f"answered={best_answer}"
            ):
                return node, nodes
        raise AssertionError("no terminal node carries the winning answer")

    def test_retrieval_gated_worlds_win_through_retrieval(self, worlds):
        for name, world in worlds.items():
            if world.expectations.get("kind") != "retrieval_gated":
                continue
            backends = world.backends()
            from ragtree.orchestrator import run_search

            result = run_search(world.question, world.config(), backends)
            assert result.answer == world.gold, name
            assert backends.retriever.calls >= world.expectations["min_retriever_calls"]
            node, nodes = self.winning_terminal(result)
            path_actions = set()
            while node["parent"] is not None:
                path_actions.add(node["action"])
                node = nodes[node["parent"]]
            assert path_actions & set(world.expectations["winning_action_in"]), name

    def test_no_retrieval_worlds_never_call_retriever(self, worlds):
        for name, world in worlds.items():
            if world.expectations.get("kind") != "no_retrieval":
                continue
            backends = world.backends()
            from ragtree.orchestrator import run_search

            result = run_search(world.question, world.config(), backends)
            assert result.answer == world.gold, name
            assert backends.retriever.calls == world.expectations["retriever_calls"]

    def test_consistency_traps_prune(self, worlds):
        for name, world in worlds.items():
            if world.expectations.get("kind") != "consistency_trap":
                continue
            result = run_world(world)
            pruned = sum(1 for n in result.trace["nodes"] if n["pruned"])
            assert pruned >= world.expectations["min_pruned"], name
            assert result.answer == world.gold, name

    def test_hallucination_traps_resist_mirage(self, worlds):
        for name, world in worlds.items():
            if world.expectations.get("kind") != "hallucination_trap":
                continue
            result = run_world(world)
            assert result.answer == world.gold, name
            assert result.answer != world.expectations["mirage"], name
            # The mirage may appear in voting but must not win.
            mirage_scores = [
                s for a, s in result.scored_answers if a == world.expectations["mirage"]
            ]
            gold_score = next(s for a, s in result.scored_answers if a == world.gold)
            for mirage_score in mirage_scores:
                assert gold_score > mirage_score, name


class TestWorldClosure:
    """Shipped scripts must cover every prompt the acceptance suite reaches."""

    @pytest.mark.parametrize(
        "overrides",
        [
            {"rollouts": 4},
            {"rollouts": 8},
            {"rollouts": 16},
            {"rollouts": 16, "parallel_expansion": False},
            {"rollouts": 16, "disabled_actions": ["A4", "A5"]},
        ],
        ids=["r4", "r8", "r16", "r16-seq", "r16-ablated"],
    )
    def test_closed_under_acceptance_configs(self, worlds, overrides):
        for name, world in worlds.items():
            run_world(world, **dict(overrides))  # raises UnknownPromptError on a gap

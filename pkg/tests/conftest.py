import json
from pathlib import Path

import pytest

from ragtree.orchestrator import run_search
from ragtree.worlds import World, build_world

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "worlds"


@pytest.fixture(scope="session")
def worlds() -> dict[str, World]:
    paths = sorted(FIXTURES.glob("*.json"))
    assert paths, f"no world fixtures under {FIXTURES}; run python -m ragtree.worlds"
    return {p.stem: build_world(p) for p in paths}


def run_world(world: World, **config_overrides):
    config = world.config(**config_overrides)
    return run_search(world.question, config, world.backends())


def trace_json(trace: dict) -> str:
    return json.dumps(trace, indent=2, sort_keys=True)

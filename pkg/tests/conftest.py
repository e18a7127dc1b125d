import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coneladder.engine import ScenarioEngine
from coneladder.scenario import load_scenario

_ENGINES: dict[str, ScenarioEngine] = {}


def engine_for(name: str) -> ScenarioEngine:
    """Session-wide engine cache so expensive windows are built once."""
    if name not in _ENGINES:
        _ENGINES[name] = ScenarioEngine(load_scenario(name))
    return _ENGINES[name]


@pytest.fixture(scope="session")
def engines():
    return engine_for

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pathlets import toy
from pathlets.graph import build_initial_pathlet_graph


@pytest.fixture
def toy_net():
    return toy.network()


@pytest.fixture
def toy_trajs(toy_net):
    return toy.trajectories(toy_net)


@pytest.fixture
def toy_graph(toy_net, toy_trajs):
    return build_initial_pathlet_graph(toy_net, toy_trajs)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])

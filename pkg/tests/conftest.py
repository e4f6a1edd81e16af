import pytest

from susgrade.corpus import load_annotations
from susgrade.pipeline import resolve
from susgrade.toy import build_world
from susgrade.victim import train


@pytest.fixture(scope="session")
def world():
    return build_world(500, seed=0)


@pytest.fixture(scope="session")
def resources(world):
    return world.resources


@pytest.fixture(scope="session")
def toy_split(world):
    return world.split(0.2)


@pytest.fixture(scope="session")
def victim(toy_split):
    tr, _ = toy_split
    return train([t for t, _ in tr], [y for _, y in tr], lam=1e-3, seed=0)


@pytest.fixture(scope="session")
def likert_path():
    return resolve("builtin:likert")


@pytest.fixture(scope="session")
def likert(likert_path):
    return load_annotations(likert_path, "main")


@pytest.fixture(scope="session")
def likert_non_mturk(likert_path):
    return load_annotations(likert_path, "non_mturk")


@pytest.fixture(scope="session")
def toy_regressor(victim, toy_split, resources):
    from susgrade.toy import toy_suspicion_regressor
    tr, _ = toy_split
    return toy_suspicion_regressor([t for t, _ in tr[:150]], victim, resources, seed=0, params={"n_trees": 50})


@pytest.fixture(scope="session")
def toy_regressor_scorer(toy_regressor, victim, resources):
    from susgrade.susgen import ensemble_scorer
    return ensemble_scorer(toy_regressor, victim, resources)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "CRITERIA", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])

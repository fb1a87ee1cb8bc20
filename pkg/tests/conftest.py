import warnings

import pytest

from lane_pareto.scenario import build_scenario

PAPER_DOC = {
    "platoon_size": 20,
    "penetration_ratio": 0.5,
    "lc_initial_speed": 20.0,
    "lc_initial_gap": 20.0,
}


def paper_config(**overrides):
    return build_scenario({**PAPER_DOC, **overrides})


@pytest.fixture(scope="session")
def paper_cfg():
    return paper_config()


@pytest.fixture(scope="session")
def paper_warm(paper_cfg):
    from lane_pareto.engine import prepare

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return prepare(paper_cfg)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)

from __future__ import annotations

from pathlib import Path

import pytest

from sarcexplain.dataset_io import Sample, Variety

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

WHITLAM = "Whitlam wanted to shut it down did he not? Nek Minit"
CRIME_PATROL = "This case seriously is now sounding like a badly written Crime Patrol episode."


def pytest_addoption(parser):
    parser.addoption("--online", action="store_true", help="run live endpoint smoke tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--online"):
        return
    skip = pytest.mark.skip(reason="needs --online")
    for item in items:
        if "online" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def au_sample() -> Sample:
    return Sample("au-1", WHITLAM, Variety.AUSTRALIAN, "sarcastic", "Pokes fun at Whitlam's dismissal.")


@pytest.fixture
def in_sample() -> Sample:
    return Sample("in-1", CRIME_PATROL, Variety.INDIAN, "sarcastic", "Compares the case to a bad TV episode.")


@pytest.fixture
def us_sample() -> Sample:
    return Sample("us-1", "I love waiting in line for hours", Variety.STANDARD_AMERICAN, "sarcastic",
                  "Nobody enjoys waiting in line for hours.")


PIPELINE = FIXTURES / "pipeline"


def pipeline_config(tmp_path: Path, **changes):
    """Fixture-run config with cache and runs redirected into ``tmp_path``."""
    import dataclasses

    from sarcexplain.config import load_config

    cfg = load_config(PIPELINE / "config.toml")
    changes.setdefault("cache_dir", tmp_path / "cache")
    changes.setdefault("runs_dir", tmp_path / "runs")
    return dataclasses.replace(cfg, **changes)


def fixture_endpoint():
    from sarcexplain.mock_backend import FixtureModel

    return FixtureModel.from_file(PIPELINE / "responses.json").endpoint()


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")

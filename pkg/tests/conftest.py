import numpy as np
import pytest

from motionforge.dataset import ingest_assets
from motionforge.toy import write_toy_assets

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_asset_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("assets")
    return write_toy_assets(root, n_persons=6, n_backgrounds=3, seed=11)


@pytest.fixture(scope="session")
def toy_assets(toy_asset_dirs):
    return ingest_assets(*toy_asset_dirs)


@pytest.fixture
def criterion():
    """Record a named acceptance criterion's outcome for the summary table."""

    class Recorder:
        def __init__(self):
            self.name = None

        def __call__(self, name):
            self.name = name
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            detail = "" if exc is None else f"{exc_type.__name__}: {str(exc).splitlines()[0][:120] if str(exc) else ''}"
            ACCEPTANCE_RESULTS.append((self.name, exc is None, detail))
            return False

    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)

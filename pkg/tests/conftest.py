import numpy as np
import pytest

from lfldnet import autodiff as ad


@pytest.fixture
def f64():
    with ad.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def monodomain_dir(tmp_path_factory):
    """Default monodomain preset (50 samples, 64 nodes x 60 steps) written by the CLI."""
    from lfldnet.cli import main
    out = tmp_path_factory.mktemp("data") / "monodomain"
    assert main(["datagen", "--out", str(out)]) == 0
    return out


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

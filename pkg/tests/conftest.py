from __future__ import annotations

import numpy as np
import pytest

from tap import ndcompute as nd


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with nd.precision(64):
        yield


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two clouds per shape kind, 4 views, 32x32 images, 256 points."""
    from tap import dataset

    root = tmp_path_factory.mktemp("small_ds")
    return dataset.build_dataset("2", 4, root, seed=3, n_points=256, image_size=32)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record (and print) one acceptance line: ``report(n, ok, detail)``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])

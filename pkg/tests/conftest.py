import sys

import numpy as np
import pytest

from shapelift import experiments as ex


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pose_model():
    """Skeleton training data and the k=128 dictionary learned from it.

    Shared by every test that needs realistic pose instances; learning it
    takes on the order of a minute.
    """
    D, train, motions = ex.skeleton_dictionary(0, k=128, outer_iters=100)
    return D, train, motions


@pytest.fixture(scope="session")
def small_pose_model():
    """A quick k=16 dictionary for smoke tests and CLI fixtures."""
    D, train, motions = ex.skeleton_dictionary(1, k=16, n=120, outer_iters=30)
    return D, train, motions



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

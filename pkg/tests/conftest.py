import numpy as np
import pytest

from interdim.fixtures import fixture


@pytest.fixture(scope="session")
def cantor():
    return fixture("cantor")


@pytest.fixture(scope="session")
def product_cantor():
    return fixture("product_cantor")


@pytest.fixture(scope="session")
def dust():
    return fixture("cantor_dust")


def random_ifs(rng, d, m, top=0.45):
    """Random invertible contractions with norms below ``top``."""
    mats = []
    for _ in range(m):
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        sv = np.sort(rng.uniform(0.05, top, size=d))[::-1]
        q2, _ = np.linalg.qr(rng.normal(size=(d, d)))
        mats.append(q @ np.diag(sv) @ q2)
    return mats


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")

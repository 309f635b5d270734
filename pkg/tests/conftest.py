import numpy as np
import pytest

from quadguard.config import default_config


@pytest.fixture
def cfg():
    return default_config()


@pytest.fixture
def params(cfg):
    return cfg.vehicle


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, pos_scale=5.0, vel_scale=2.0, rate_scale=1.0):
    """A random 13-state with a unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return np.concatenate([rng.normal(0, pos_scale, 3), rng.normal(0, vel_scale, 3), q,
                           rng.normal(0, rate_scale, 3)])


# one line per acceptance criterion, printed after the test session
ACCEPTANCE = {}


def report(cid: int, ok: bool, detail: str):
    line = f"C{cid} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE[cid] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[cid])

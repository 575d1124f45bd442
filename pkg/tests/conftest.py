from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddkf.system import LtiSystem, dc_motor_preset

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def motor():
    return dc_motor_preset()


@pytest.fixture
def fixture_batch_path():
    return FIXTURES / "dc_motor_N1000_L20_seed0.batch"


def random_system(rng, n=2, m=1, p=1, noise=0.1, radius=0.9):
    """Random stable observable plant with PD covariances."""
    while True:
        A = rng.standard_normal((n, n))
        A *= radius / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-3) * rng.uniform(0.3, 1.0)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        O = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
        if np.linalg.svd(O, compute_uv=False)[-1] > 1e-2:
            break
    Mq = rng.standard_normal((n, n))
    Mr = rng.standard_normal((p, p))
    return LtiSystem(
        A=A,
        B=B,
        C=C,
        Q=noise * (Mq @ Mq.T + np.eye(n)),
        R=noise * (Mr @ Mr.T + np.eye(p)),
        x0_mean=rng.standard_normal(n),
        P0=np.eye(n),
    )


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from otmesh.mesh import build_cubed_sphere, build_icosahedral, build_periodic_plane

settings.register_profile(
    "otmesh", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("otmesh")


@pytest.fixture(scope="session")
def plane8():
    return build_periodic_plane(8)


@pytest.fixture(scope="session")
def cubed4():
    return build_cubed_sphere(4, 2)


@pytest.fixture(scope="session")
def ico2():
    return build_icosahedral(2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def x2_relaxation():
    """Converged X2 relaxation runs on degree-2 cubed spheres, keyed by resolution."""
    from otmesh.monitor import xk_monitor
    from otmesh.solver import NonlinearConfig, relaxation_solve
    from otmesh.sphere import SphereProblem

    runs = {}
    for n in (8, 16):
        p = SphereProblem(build_cubed_sphere(n, 2), xk_monitor(2), oracle=True)
        runs[n] = (p, relaxation_solve(p, None, NonlinearConfig("relaxation", dt=2.0)))
    return runs


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

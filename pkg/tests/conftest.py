import numpy as np
import pytest
from hypothesis import settings

from bearing_dyn import planar as pl
from bearing_dyn import spherical as sp

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# criterion tag -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(ACCEPTANCE_RESULTS, key=lambda t: int(t[2:])):
        passed, detail = ACCEPTANCE_RESULTS[tag]
        terminalreporter.write_line(f"{tag} {'PASS' if passed else 'FAIL'} {detail}")


def make_spherical(spins=(0.1, -0.4), R=2.0, r=0.5, A=2.0, B=3.0, C=4.0, **kw):
    balls = [sp.Ball(inertia=0.1, mass=1.0, spin=c) for c in spins]
    return sp.SphericalParams(R=R, r=r, A=A, B=B, C=C, balls=balls, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sph2():
    return make_spherical()


@pytest.fixture
def planar3():
    return pl.PlanarParams.solid_balls()

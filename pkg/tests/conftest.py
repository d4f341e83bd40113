import numpy as np
import pytest

from equimesh.mesh import Mesh
from equimesh.synth import icosphere


def single_triangle() -> Mesh:
    return Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


def two_triangles() -> Mesh:
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    return Mesh(v, np.array([[0, 1, 2], [1, 3, 2]]))


def unit_icosphere(level: int = 2) -> Mesh:
    v, f = icosphere(level)
    return Mesh(v, f)


def random_proper_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere():
    return unit_icosphere(2)


# (criterion, title, passed, seconds, detail) rows filled by the acceptance suite
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, secs, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {secs:7.1f}s  {title}  {detail}")

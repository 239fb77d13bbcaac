from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from coordcond.energy import EnergyAssembly, MaterialParams, assemble, make_state
from coordcond.mesh import BoundaryConditions, Scene, Spring, make_grid, make_rod

# Acceptance lines collected by tests/test_acceptance.py, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def central_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.zeros(x.size)
    flat = x.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        fp = f(x)
        flat[k] = old - eps
        fm = f(x)
        flat[k] = old
        g[k] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_spd(rng: np.random.Generator, n: int, cond: float = 1e3) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (Q * w) @ Q.T


def spd_assembly(H: np.ndarray, g: np.ndarray, dim: int) -> EnergyAssembly:
    """Wrap a dense SPD system as an assembly over ``n / dim`` unpinned vertices."""
    n = H.shape[0]
    bc = BoundaryConditions(n // dim, dim)
    return EnergyAssembly(0.0, np.asarray(g, dtype=float), sp.csr_matrix(H), bc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def stretched_rod() -> Scene:
    mesh, bc = make_rod(12, 1.0, [{"vertices": "left"}, {"vertices": "right", "offset": [0.3]}])
    return Scene(mesh, bc, MaterialParams(1e3))


@pytest.fixture
def dynamic_rod() -> Scene:
    mesh, bc = make_rod(10, 1.0)
    return Scene(mesh, bc, MaterialParams(1e3, 0.0, 2.0), mode="dynamic", timestep=0.01)


@pytest.fixture
def stretched_grid() -> Scene:
    mesh, bc = make_grid(5, 4, 1.0, 0.75, [{"vertices": "left"}, {"vertices": "right", "offset": [0.15, 0.05]}])
    return Scene(mesh, bc, MaterialParams(1e3, 0.3))


@pytest.fixture
def spring_grid() -> Scene:
    mesh, bc = make_grid(7, 3, 1.0, 0.25, [{"vertices": "center_column"}])
    springs = [Spring(20, 14, 1e3, 0.5)]
    return Scene(mesh, bc, MaterialParams(1e3, 0.4), extra_springs=springs, gravity=np.array([0.0, -9.81]))


def deformed_assembly(scene: Scene, rng: np.random.Generator, amp: float = 0.02, terms=None):
    x = scene.bc.project(scene.mesh.rest_positions + amp * rng.standard_normal(scene.mesh.rest_positions.shape))
    state = make_state(scene, x=x)
    return state, assemble(state, scene, terms)

"""Potential energy terms and assembly of the objective over free DOFs.

Every term returns a :class:`Contribution` in the full DOF space; :func:`assemble`
sums the requested terms, applies the ``h**2`` weight to non-inertial terms in
dynamic mode, and restricts everything to the free DOFs of the boundary
conditions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from coordcond.mesh import BoundaryConditions, Mesh, Scene, Spring


class EnergyError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    young: float
    poisson: float = 0.0
    density: float = 1.0

    def __post_init__(self):
        if not self.young > 0:
            raise EnergyError("Young's modulus must be positive")
        if not 0.0 <= self.poisson < 0.5:
            raise EnergyError("Poisson ratio must lie in [0, 0.5)")

    @property
    def lame_mu(self) -> float:
        return self.young / (2.0 * (1.0 + self.poisson))

    @property
    def lame_lambda(self) -> float:
        nu = self.poisson
        return self.young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


@dataclass
class SimState:
    """Positions are full-space ``(n, dim)`` arrays; ``masses`` is per vertex."""

    x: np.ndarray
    v: np.ndarray
    x_prev: np.ndarray
    x_tilde: np.ndarray
    h: float
    masses: np.ndarray
    step: int = 0

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def with_positions(self, x: np.ndarray) -> "SimState":
        return SimState(x, self.v, self.x_prev, self.x_tilde, self.h, self.masses, self.step)


def make_state(scene: "Scene", x: np.ndarray | None = None, v: np.ndarray | None = None, step: int = 0) -> SimState:
    """State at the start of a step; ``x_tilde = x + h v`` (Backward Euler predictor)."""
    mesh = scene.mesh
    x = np.array(mesh.rest_positions if x is None else x, dtype=float)
    v = np.zeros_like(x) if v is None else np.array(v, dtype=float)
    masses = scene.material.density * mesh.vertex_volumes
    h = scene.timestep if scene.dynamic else 0.0
    return SimState(x=x, v=v, x_prev=x.copy(), x_tilde=x + h * v, h=h, masses=masses, step=step)


class Contribution(NamedTuple):
    value: float
    gradient: np.ndarray
    hessian: sp.coo_matrix


def _coo(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, n: int) -> sp.coo_matrix:
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def _element_dofs(elements: np.ndarray, dim: int) -> np.ndarray:
    return (elements[:, :, None] * dim + np.arange(dim)).reshape(elements.shape[0], -1)


def _scatter(dofs: np.ndarray, ke: np.ndarray, ge: np.ndarray, n: int) -> tuple[np.ndarray, sp.coo_matrix]:
    g = np.zeros(n)
    np.add.at(g, dofs.ravel(), ge.ravel())
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1)
    cols = np.tile(dofs, (1, k))
    return g, _coo(rows, cols, ke, n)


def inertia_energy(state: SimState) -> Contribution:
    """``0.5 (x - x_tilde)^T M (x - x_tilde)`` with lumped M."""
    m = np.repeat(state.masses, state.dim)
    dx = (state.x - state.x_tilde).ravel()
    n = dx.size
    idx = np.arange(n)
    return Contribution(0.5 * float(dx @ (m * dx)), m * dx, _coo(idx, idx, m, n))


def spring_energy_1d(state: SimState, mesh: "Mesh", material: MaterialParams) -> Contribution:
    """Rod segments ``0.5 k (x_b - x_a - L)^2`` with ``k = E / L`` (unit area)."""
    if mesh.dim != 1:
        raise EnergyError("spring_energy_1d needs a 1D mesh")
    e = mesh.elements
    L = mesh.element_volumes
    k = material.young / L
    x = state.x[:, 0]
    delta = x[e[:, 1]] - x[e[:, 0]] - L
    f = k * delta
    ge = np.stack([-f, f], axis=1)
    ke = k[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    g, H = _scatter(e, ke, ge, x.size)
    return Contribution(0.5 * float(np.sum(k * delta**2)), g, H)


def _shape_gradients(mesh: "Mesh") -> np.ndarray:
    """(m, 4, 6) maps from element vertex positions to row-major vec(F)."""
    X = mesh.rest_positions
    e = mesh.elements
    Dm = np.stack([X[e[:, 1]] - X[e[:, 0]], X[e[:, 2]] - X[e[:, 0]]], axis=2)
    B = np.linalg.inv(Dm)
    G = np.einsum("vc,mcb->mvb", np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), B)
    D = np.zeros((e.shape[0], 4, 6))
    for a in range(2):
        for b in range(2):
            for v in range(3):
                D[:, 2 * a + b, 2 * v + a] = G[:, v, b]
    return D


_CACHE: dict[int, tuple["Mesh", np.ndarray]] = {}


def _cached_shape_gradients(mesh: "Mesh") -> np.ndarray:
    hit = _CACHE.get(id(mesh))
    if hit is None or hit[0] is not mesh:
        if len(_CACHE) > 64:
            _CACHE.clear()
        hit = (mesh, _shape_gradients(mesh))
        _CACHE[id(mesh)] = hit
    return hit[1]


def fcr_density(F: np.ndarray, mu: float, lam: float, hessian: bool = True, project: bool = False):
    """Fixed corotated energy density, PK1 stress and dP/dF for (m, 2, 2) F.

    The rotation is the 2D polar factor ``theta = atan2(F10 - F01, F00 + F11)``,
    so ``mu * ||F - R||^2`` equals ``mu * sum (sigma_i - 1)^2`` with signed
    singular values.
    """
    f00, f01, f10, f11 = F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1]
    a, b = f00 + f11, f10 - f01
    trS = np.hypot(a, b)
    safe = np.maximum(trS, 1e-300)
    c = np.where(trS > 0, a / safe, 1.0)
    s = np.where(trS > 0, b / safe, 0.0)
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    J = f00 * f11 - f01 * f10
    cof = np.stack([np.stack([f11, -f10], -1), np.stack([-f01, f00], -1)], -2)
    psi = mu * np.sum((F - R) ** 2, axis=(1, 2)) + 0.5 * lam * (J - 1.0) ** 2
    P = 2.0 * mu * (F - R) + lam * (J - 1.0)[:, None, None] * cof
    if not hessian:
        return psi, P, None
    m = F.shape[0]
    r = np.stack([-s, -c, c, -s], axis=1)
    q = cof.reshape(m, 4)
    HJ = np.zeros((4, 4))
    HJ[0, 3] = HJ[3, 0] = 1.0
    HJ[1, 2] = HJ[2, 1] = -1.0
    inv_tr = 1.0 / np.maximum(trS, 1e-12)
    dP = (
        2.0 * mu * (np.eye(4) - inv_tr[:, None, None] * r[:, :, None] * r[:, None, :])
        + lam * q[:, :, None] * q[:, None, :]
        + lam * (J - 1.0)[:, None, None] * HJ
    )
    if project:
        dP = project_spd(dP)
    return psi, P, dP


def project_spd(A: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Batched eigen-clamp: negative eigenvalues of symmetric (m, k, k) are raised to ``floor``."""
    w, V = np.linalg.eigh(A)
    if np.all(w >= 0.0):
        return A
    w = np.where(w < 0.0, floor, w)
    return np.einsum("mij,mj,mkj->mik", V, w, V)


def deformation_gradients(x: np.ndarray, mesh: "Mesh") -> np.ndarray:
    D = _cached_shape_gradients(mesh)
    xe = x[mesh.elements].reshape(mesh.elements.shape[0], 6)
    return np.einsum("mij,mj->mi", D, xe).reshape(-1, 2, 2)


def fcr_energy_2d(state: SimState, mesh: "Mesh", material: MaterialParams, project: bool = False, hessian: bool = True) -> Contribution:
    """Area-weighted fixed corotated elasticity over triangles."""
    if mesh.dim != 2:
        raise EnergyError("fcr_energy_2d needs a 2D mesh")
    D = _cached_shape_gradients(mesh)
    F = deformation_gradients(state.x, mesh)
    A = mesh.element_volumes
    psi, P, dP = fcr_density(F, material.lame_mu, material.lame_lambda, hessian, project)
    ge = A[:, None] * np.einsum("mij,mi->mj", D, P.reshape(-1, 4))
    dofs = _element_dofs(mesh.elements, 2)
    n = state.x.size
    if hessian:
        ke = A[:, None, None] * np.einsum("mai,mab,mbj->mij", D, dP, D)
        g, H = _scatter(dofs, ke, ge, n)
    else:
        g = np.zeros(n)
        np.add.at(g, dofs.ravel(), ge.ravel())
        H = _coo(np.zeros(0, int), np.zeros(0, int), np.zeros(0), n)
    return Contribution(float(A @ psi), g, H)


def coupling_spring_energy(state: SimState, springs: Sequence["Spring"], project: bool = False) -> Contribution:
    """Zero-or-positive rest length springs ``0.5 k (|x_a - x_b| - L0)^2``."""
    dim = state.dim
    n = state.x.size
    g = np.zeros(n)
    rows, cols, vals = [], [], []
    value = 0.0
    for s in springs:
        if s.a == s.b:
            raise EnergyError("spring endpoints must be distinct")
        if not s.k > 0:
            raise EnergyError("spring stiffness must be positive")
        d = state.x[s.a] - state.x[s.b]
        l = float(np.linalg.norm(d))
        if l == 0.0:
            raise EnergyError(f"coincident spring endpoints {s.a}, {s.b}")
        u = d / l
        value += 0.5 * s.k * (l - s.rest_length) ** 2
        f = s.k * (l - s.rest_length) * u
        ia = np.arange(dim) + s.a * dim
        ib = np.arange(dim) + s.b * dim
        g[ia] += f
        g[ib] -= f
        t = 1.0 - s.rest_length / l
        if project:
            t = max(t, 0.0)
        K = s.k * (np.outer(u, u) + t * (np.eye(dim) - np.outer(u, u)))
        dofs = np.concatenate([ia, ib])
        ke = np.block([[K, -K], [-K, K]])
        rows.append(np.repeat(dofs, 2 * dim))
        cols.append(np.tile(dofs, 2 * dim))
        vals.append(ke.ravel())
    if not springs:
        return Contribution(0.0, g, _coo(np.zeros(0, int), np.zeros(0, int), np.zeros(0), n))
    return Contribution(value, g, _coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n))


def gravity_energy(state: SimState, gravity: np.ndarray, scale: float = 1.0) -> Contribution:
    """Linear potential ``-sum_v m_v g . x_v``."""
    w = -scale * state.masses[:, None] * np.asarray(gravity, dtype=float)[None, :]
    n = state.x.size
    return Contribution(float(np.sum(w * state.x)), w.ravel().copy(), _coo(np.zeros(0, int), np.zeros(0, int), np.zeros(0), n))


@dataclass
class EnergyAssembly:
    value: float
    gradient: np.ndarray
    hessian: sp.csr_matrix | None
    bc: "BoundaryConditions"

    @property
    def dim(self) -> int:
        return self.bc.dim


class Blocks(NamedTuple):
    H_ii: np.ndarray
    H_iC: np.ndarray
    H_CC: sp.csr_matrix
    g_i: np.ndarray
    g_C: np.ndarray
    local: np.ndarray
    complement: np.ndarray


def default_terms(scene: "Scene") -> tuple[str, ...]:
    terms = ["elastic"]
    if scene.dynamic:
        terms.insert(0, "inertia")
    if scene.extra_springs:
        terms.append("springs")
    if scene.gravity is not None:
        terms.append("gravity")
    return tuple(terms)


def assemble(
    state: SimState,
    scene: "Scene",
    terms: Iterable[str] | None = None,
    *,
    bc: "BoundaryConditions | None" = None,
    project: bool = True,
    hessian: bool = True,
    load_scale: float = 1.0,
) -> EnergyAssembly:
    """Objective ``E = inertia + h^2 (elastic + springs + gravity)`` over free DOFs.

    In quasistatic mode the inertial term is dropped and the weight is 1.
    """
    bc = scene.bc if bc is None else bc
    terms = default_terms(scene) if terms is None else tuple(terms)
    w = state.h**2 if scene.dynamic else 1.0
    n = state.x.size
    value = 0.0
    g = np.zeros(n)
    parts = []
    for name in terms:
        if name == "inertia":
            if not scene.dynamic:
                raise EnergyError("inertia term requires dynamic mode")
            c, scale = inertia_energy(state), 1.0
        elif name == "elastic":
            if scene.mesh.dim == 1:
                c = spring_energy_1d(state, scene.mesh, scene.material)
            else:
                c = fcr_energy_2d(state, scene.mesh, scene.material, project=project, hessian=hessian)
            scale = w
        elif name == "springs":
            c, scale = coupling_spring_energy(state, scene.extra_springs, project=project), w
        elif name == "gravity":
            if scene.gravity is None:
                continue
            c, scale = gravity_energy(state, scene.gravity, load_scale), w
        else:
            raise EnergyError(f"unknown energy term {name!r}")
        if not np.isfinite(c.value):
            raise EnergyError(f"non-finite {name} energy")
        value += scale * c.value
        g += scale * c.gradient
        if hessian:
            parts.append((c.hessian, scale))
    H = None
    if hessian:
        H = _restrict(parts, bc, n)
    return EnergyAssembly(value, bc.reduce(g), H, bc)


def _restrict(parts, bc: "BoundaryConditions", n: int) -> sp.csr_matrix:
    nf = bc.n_free
    if not parts:
        return sp.csr_matrix((nf, nf))
    rows = np.concatenate([p.row for p, _ in parts])
    cols = np.concatenate([p.col for p, _ in parts])
    vals = np.concatenate([s * p.data for p, s in parts])
    r, c = bc.full_to_free[rows], bc.full_to_free[cols]
    keep = (r >= 0) & (c >= 0)
    H = sp.coo_matrix((vals[keep], (r[keep], c[keep])), shape=(nf, nf)).tocsr()
    H.sum_duplicates()
    return H


def extract_blocks(assembly: EnergyAssembly, vertex: int) -> Blocks:
    """Partition H and g into vertex ``vertex``'s DOF block and its complement."""
    bc = assembly.bc
    if bc.is_pinned(int(vertex)):
        raise EnergyError(f"vertex {vertex} is pinned")
    if not 0 <= vertex < bc.n_vertices:
        raise EnergyError(f"vertex {vertex} out of range")
    d = bc.dim
    k = bc.vertex_to_free[vertex]
    local = np.arange(k * d, (k + 1) * d)
    mask = np.ones(bc.n_free, dtype=bool)
    mask[local] = False
    comp = np.flatnonzero(mask)
    H = assembly.hessian
    rows = H[local]
    H_ii = rows[:, local].toarray()
    H_iC = rows[:, comp].toarray()
    H_CC = H[comp][:, comp].tocsr()
    g = assembly.gradient
    return Blocks(H_ii, H_iC, H_CC, g[local], g[comp], local, comp)

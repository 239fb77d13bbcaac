"""Per-vertex perturbation bases: construction, corotation, restarts and noise.

For free vertex ``i`` the basis ``U_i`` gives the equilibrium response of all
other free DOFs to a unit displacement of vertex ``i``; it solves
``H_CC U_i = -H_Ci``. Bases are stored embedded in the full free-DOF space with
the vertex's own block held at zero, so ``U[k]`` has shape ``(n_free, dim)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from coordcond.energy import EnergyAssembly
from coordcond.linalg import NotPositiveDefiniteError, delete_rowcol, factorize

logger = logging.getLogger(__name__)


class BasisError(RuntimeError):
    pass


@dataclass
class PerturbationBasis:
    U: np.ndarray
    free_vertices: np.ndarray
    dim: int
    built_step: int = 0
    built_x: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return self.U.shape[0]

    @property
    def n_free(self) -> int:
        return self.U.shape[1]

    def blocks(self) -> np.ndarray:
        """View of shape ``(n_v, n_v, dim, dim)``; ``[i, j]`` is vertex j's block of U_i."""
        d = self.dim
        return self.U.reshape(self.n_vertices, self.n_vertices, d, d)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.blocks()[i, j]

    def complementary(self, i: int) -> np.ndarray:
        """U_i restricted to the complementary DOFs, shape ``(n_free - dim, dim)``."""
        d = self.dim
        return np.delete(self.U[i], np.s_[i * d:(i + 1) * d], axis=0)

    def stacked(self) -> np.ndarray:
        """All bases side by side, ``(n_free, n_v * dim)``; columns of U_i at ``i*dim``."""
        return self.U.transpose(1, 0, 2).reshape(self.n_free, -1)


def build_basis(assembly: EnergyAssembly, *, step: int = 0, x: np.ndarray | None = None,
                method: str = "inverse") -> PerturbationBasis:
    """Solve ``H_CC U_i = -H_Ci`` for every free vertex.

    ``method="inverse"`` factors H once: with ``Z = H^{-1}[:, i]`` the block
    ``Z_C Z_ii^{-1}`` is exactly ``-H_CC^{-1} H_Ci``. ``method="schur"`` factors
    every ``H_CC`` separately.
    """
    H = assembly.hessian
    bc = assembly.bc
    d, nv, n = bc.dim, bc.n_free_vertices, bc.n_free
    if method == "inverse":
        try:
            fac = factorize(H)
        except NotPositiveDefiniteError as exc:
            raise BasisError(f"Hessian not SPD at basis construction: {exc}") from exc
        X = fac.solve(np.eye(n))
        X = 0.5 * (X + X.T)
        Z = X.reshape(nv, d, nv, d).transpose(2, 0, 1, 3)  # [i, j, a, c]: H^{-1}[(j,a), (i,c)]
        diag = Z[np.arange(nv), np.arange(nv)]
        U4 = np.einsum("ijac,icb->ijab", Z, np.linalg.inv(diag))
        U4[np.arange(nv), np.arange(nv)] = 0.0
        U = U4.reshape(nv, n, d)
    elif method == "schur":
        U = np.zeros((nv, n, d))
        Hc = sp.csr_matrix(H)
        for i in range(nv):
            local = np.arange(i * d, (i + 1) * d)
            H_CC, comp = delete_rowcol(Hc, local)
            try:
                fac = factorize(H_CC)
            except NotPositiveDefiniteError as exc:
                raise BasisError(f"H_CC not SPD for vertex {bc.free_vertices[i]}: {exc}") from exc
            H_Ci = Hc[comp][:, local].toarray()
            U[i, comp] = -fac.solve(H_Ci)
    else:
        raise ValueError(f"unknown basis method {method!r}")
    return PerturbationBasis(U, bc.free_vertices.copy(), d, step, None if x is None else np.array(x))


def basis_residuals(basis: PerturbationBasis, H) -> np.ndarray:
    """Per-vertex ``||H_CC U_i + H_Ci|| / ||H_Ci||`` (0 where H_Ci vanishes)."""
    d, nv = basis.dim, basis.n_vertices
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    R = (Hd @ basis.stacked() + Hd).reshape(nv, d, nv, d)
    Hb = Hd.reshape(nv, d, nv, d).copy()
    idx = np.arange(nv)
    R[idx, :, idx, :] = 0.0
    Hb[idx, :, idx, :] = 0.0
    num = np.sqrt(np.einsum("jaic,jaic->i", R, R))
    den = np.sqrt(np.einsum("jaic,jaic->i", Hb, Hb))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)


@dataclass
class RotationField:
    R: np.ndarray
    degenerate: np.ndarray


def _angle_rotation(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest proper rotation to each 2x2 ``A`` (polar factor with det +1)."""
    a = A[:, 0, 0] + A[:, 1, 1]
    b = A[:, 1, 0] - A[:, 0, 1]
    r = np.hypot(a, b)
    ok = r > 1e-14 * np.maximum(1.0, np.abs(A).reshape(len(A), -1).max(axis=1))
    c = np.where(ok, a / np.where(ok, r, 1.0), 1.0)
    s = np.where(ok, b / np.where(ok, r, 1.0), 0.0)
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return R, ~ok


def estimate_rotations(x: np.ndarray, mesh) -> RotationField:
    """Per-vertex rotation from the one-ring (uniform edge weights).

    Fits ``A = argmin sum_k |A e_k - e'_k|^2`` over rest edges ``e_k`` and
    current edges ``e'_k`` and keeps the polar rotation of ``A``. Collinear
    one-rings fall back to the identity and are flagged.
    """
    n, dim = mesh.n_vertices, mesh.dim
    if dim == 1:
        return RotationField(np.ones((n, 1, 1)), np.zeros(n, dtype=bool))
    edges = mesh.edges()
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    X = mesh.rest_positions
    er = X[dst] - X[src]
    ec = x[dst] - x[src]
    Crr = np.zeros((n, 2, 2))
    Ccr = np.zeros((n, 2, 2))
    np.add.at(Crr, src, er[:, :, None] * er[:, None, :])
    np.add.at(Ccr, src, ec[:, :, None] * er[:, None, :])
    det = np.linalg.det(Crr)
    scale = np.einsum("nii->n", Crr) ** 2
    degenerate = det <= 1e-12 * scale
    Crr[degenerate] = np.eye(2)
    A = Ccr @ np.linalg.inv(Crr)
    R, bad = _angle_rotation(A)
    degenerate |= bad
    R[degenerate] = np.eye(2)
    if np.any(degenerate):
        logger.debug("identity rotation on %d degenerate one-rings", int(degenerate.sum()))
    return RotationField(R, degenerate)


def corotate_basis(basis: PerturbationBasis, rotations: RotationField) -> PerturbationBasis:
    """New basis with ``U_i[j] <- R_j U_i[j]``; the input is left untouched."""
    Rf = rotations.R[basis.free_vertices]
    U4 = np.einsum("jab,ijbc->ijac", Rf, basis.blocks())
    return replace(basis, U=U4.reshape(basis.U.shape))


def restart_basis(basis: PerturbationBasis, assembly: EnergyAssembly, step: int, period: int,
                  x: np.ndarray | None = None) -> tuple[PerturbationBasis, bool]:
    """Rebuild at the current configuration once ``period`` steps have elapsed."""
    if period < 1:
        raise ValueError("restart period must be >= 1")
    if step - basis.built_step >= period:
        return build_basis(assembly, step=step, x=x), True
    return basis, False


def inject_noise(basis: PerturbationBasis, sigma: float, seed: int = 0, law: str = "uniform") -> PerturbationBasis:
    """Degrade every complementary entry of every U_i.

    ``law="uniform"`` adds i.i.d. noise from ``[-sigma, sigma]``;
    ``law="constant"`` adds ``sigma`` to every entry.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return replace(basis, U=basis.U.copy())
    if law == "uniform":
        noise = np.random.default_rng(seed).uniform(-sigma, sigma, size=basis.U.shape)
    elif law == "constant":
        noise = np.full(basis.U.shape, float(sigma))
    else:
        raise ValueError(f"unknown noise law {law!r}")
    U4 = (basis.U + noise).reshape(basis.blocks().shape)
    idx = np.arange(basis.n_vertices)
    U4[idx, idx] = 0.0
    return replace(basis, U=U4.reshape(basis.U.shape))


def cache_key(scene_doc: Any, x: np.ndarray, terms: tuple[str, ...] = ()) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(scene_doc, sort_keys=True, default=str).encode())
    h.update(np.ascontiguousarray(x, dtype=float).tobytes())
    h.update(",".join(terms).encode())
    return h.hexdigest()


def save_basis(path: str | Path, basis: PerturbationBasis, key: str) -> None:
    np.savez_compressed(
        path, U=basis.U, free_vertices=basis.free_vertices, dim=basis.dim,
        built_step=basis.built_step, key=np.array(key),
        built_x=np.zeros(0) if basis.built_x is None else basis.built_x,
    )


def load_basis(path: str | Path, key: str | None = None) -> PerturbationBasis | None:
    """Load a cached basis; ``None`` when missing or keyed to another scene/configuration."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as f:
        if key is not None and str(f["key"]) != key:
            return None
        bx = f["built_x"]
        return PerturbationBasis(f["U"], f["free_vertices"], int(f["dim"]), int(f["built_step"]),
                                 None if bx.size == 0 else bx)

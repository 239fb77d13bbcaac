"""Newton, Jacobi coordinate descent, JGS2 and Coordinate Condensation.

All coordinate methods share one Jacobi sweep: every vertex update is computed
against the same frozen gradient and Hessian and written to its own slot of the
global direction ``d``. The per-vertex functions (:func:`cd_update`,
:func:`jgs2_update`, :func:`cc_update`) are the readable reference; the sweep
evaluates the same formulas for all vertices at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from coordcond.basis import PerturbationBasis, corotate_basis, estimate_rotations
from coordcond.energy import EnergyAssembly, EnergyError, SimState, assemble, extract_blocks
from coordcond.linalg import SingularBlockError, batched_solve, block_conditions, factorize, small_solve

logger = logging.getLogger(__name__)

METHODS = ("newton", "cd", "jgs2", "cc")

# Reduced subspace blocks beyond this condition number trigger the CD fallback.
SUBSPACE_COND_LIMIT = 1e12


class SolverError(RuntimeError):
    pass


class SolverDivergence(SolverError):
    def __init__(self, iteration: int, msg: str):
        super().__init__(f"iteration {iteration}: {msg}")
        self.iteration = iteration


@dataclass
class SolverConfig:
    method: str = "cc"
    max_iters: int = 500
    tol: float = 1e-2
    use_line_search: bool = False
    corotated: bool = False
    restart_period: int | None = None
    convergence_mode: str = "normalized_gradient"
    record_displacements: bool = False
    divergence_factor: float = 1e10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.convergence_mode not in ("normalized_gradient", "distance_to_reference"):
            raise ValueError(f"unknown convergence mode {self.convergence_mode!r}")
        if self.restart_period is not None and self.restart_period < 1:
            raise ValueError("restart_period must be >= 1")

    @property
    def needs_basis(self) -> bool:
        return self.method in ("jgs2", "cc")


@dataclass
class IterationRecord:
    iteration: int
    energy: float
    grad_norm: float
    residual: float
    step_norm: float
    alpha: float
    fallbacks: int = 0


@dataclass
class ConvergenceTrace:
    records: list[IterationRecord] = field(default_factory=list)
    displacements: list[np.ndarray] = field(default_factory=list)
    outcome: str = "running"
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.outcome == "converged"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


class SchurUpdate(NamedTuple):
    S: np.ndarray
    H_tilde: np.ndarray
    g_tilde: np.ndarray
    dx: np.ndarray
    dalpha: np.ndarray
    fallback: bool


class SolveResult(NamedTuple):
    x: np.ndarray
    trace: ConvergenceTrace


class LineSearchResult(NamedTuple):
    alpha: float
    evaluations: int
    stagnated: bool


# Termination -------------------------------------------------------------


def check_convergence(assembly: EnergyAssembly, scene, config: SolverConfig,
                      x: np.ndarray | None = None, reference: np.ndarray | None = None) -> tuple[bool, float]:
    """Return ``(residual < tol, residual)``.

    ``normalized_gradient``: ``|g| / (V n E)``, further divided by ``h`` for
    dynamic scenes. ``distance_to_reference``: ``|x - x_ref| / n``.
    """
    n = scene.mesh.n_vertices
    if config.convergence_mode == "distance_to_reference":
        if reference is None or x is None:
            raise SolverError("distance_to_reference needs positions and a reference solution")
        res = float(np.linalg.norm(np.asarray(x) - np.asarray(reference))) / n
    else:
        scale = scene.mesh.total_volume * n * scene.material.young
        if scene.dynamic:
            scale *= scene.timestep
        res = float(np.linalg.norm(assembly.gradient)) / scale
    return res < config.tol, res


# Per-coordinate updates ------------------------------------------------------


def newton_step(assembly: EnergyAssembly) -> np.ndarray:
    """Solve ``H d = -g`` with a sparse SPD factorization."""
    g = assembly.gradient
    if not np.any(g):
        return np.zeros_like(g)
    return -factorize(assembly.hessian).solve(g)


def _local_basis(basis: PerturbationBasis, assembly: EnergyAssembly, vertex: int) -> np.ndarray:
    k = assembly.bc.vertex_to_free[vertex]
    return basis.complementary(int(k))


def cd_update(assembly: EnergyAssembly, vertex: int) -> np.ndarray:
    b = extract_blocks(assembly, vertex)
    try:
        return -small_solve(b.H_ii, b.g_i)
    except SingularBlockError as exc:
        raise SolverError(f"singular diagonal block at vertex {vertex}; missing mass or stiffness") from exc


def jgs2_update(assembly: EnergyAssembly, basis: PerturbationBasis, vertex: int) -> np.ndarray:
    """``-(H_ii + U^T H_CC U)^{-1} (g_i + U^T g_C)``."""
    b = extract_blocks(assembly, vertex)
    U = _local_basis(basis, assembly, vertex)
    A = b.H_ii + U.T @ (b.H_CC @ U)
    return -small_solve(A, b.g_i + U.T @ b.g_C)


def cc_update(assembly: EnergyAssembly, basis: PerturbationBasis, vertex: int) -> SchurUpdate:
    """Condensed local solve: eliminate the subspace amplitude, keep ``dx``.

    With ``Ht = U^T H_CC U``: ``S = H_iC U Ht^{-1} U^T H_Ci`` and
    ``g~ = g_i - H_iC U Ht^{-1} U^T g_C``; ``dx = -(H_ii - S)^{-1} g~``.
    A singular ``Ht`` (for instance ``U = 0``) falls back to plain CD.
    """
    b = extract_blocks(assembly, vertex)
    U = _local_basis(basis, assembly, vertex)
    d = b.H_ii.shape[0]
    Ht = U.T @ (b.H_CC @ U)
    C = b.H_iC @ U
    try:
        if not np.any(U):
            raise SingularBlockError("zero basis", np.inf)
        X = small_solve(Ht, np.column_stack([C.T, U.T @ b.g_C]), max_cond=SUBSPACE_COND_LIMIT)
    except SingularBlockError:
        dx = -small_solve(b.H_ii, b.g_i)
        return SchurUpdate(np.zeros((d, d)), Ht, b.g_i.copy(), dx, np.zeros(d), True)
    S = C @ X[:, :d]
    g_t = b.g_i - C @ X[:, d]
    dx = -small_solve(b.H_ii - S, g_t)
    dalpha = -X[:, d] - X[:, :d] @ dx
    return SchurUpdate(S, Ht, g_t, dx, dalpha, False)


# Sweeps ---------------------------------------------------------------


def diagonal_blocks(assembly: EnergyAssembly) -> np.ndarray:
    """Per-free-vertex ``H_ii`` blocks, shape ``(n_v, dim, dim)``."""
    d = assembly.dim
    nv = assembly.bc.n_free_vertices
    H = assembly.hessian.tocoo()
    keep = (H.row // d) == (H.col // d)
    out = np.zeros((nv, d, d))
    np.add.at(out, (H.row[keep] // d, H.row[keep] % d, H.col[keep] % d), H.data[keep])
    return out


class SweepResult(NamedTuple):
    d: np.ndarray
    fallbacks: np.ndarray


def jacobi_sweep(assembly: EnergyAssembly, method: str, basis: PerturbationBasis | None = None,
                 order: Sequence[int] | None = None) -> SweepResult:
    """Direction from independent per-vertex updates against a frozen (g, H).

    ``order`` only permutes the processing sequence; Jacobi results are
    order-independent, which tests rely on.
    """
    d = assembly.dim
    nv = assembly.bc.n_free_vertices
    g = assembly.gradient.reshape(nv, d)
    H_ii = diagonal_blocks(assembly)
    perm = np.arange(nv) if order is None else np.asarray(order)
    fallback = np.zeros(nv, dtype=bool)
    if method == "cd":
        dx = -batched_solve(H_ii[perm], g[perm])
    elif method in ("jgs2", "cc"):
        if basis is None:
            raise SolverError(f"{method} needs a perturbation basis")
        W = basis.stacked()
        HW = assembly.hessian @ W
        n = W.shape[0]
        C = HW.reshape(nv, d, nv, d)[perm, :, perm, :]                 # H_iC U_i
        Ht = np.einsum("rib,ric->ibc", W.reshape(n, nv, d), HW.reshape(n, nv, d))[perm]
        Ug = (W.T @ assembly.gradient).reshape(nv, d)[perm]            # U_i^T g_C
        gp = g[perm]
        if method == "jgs2":
            dx = -batched_solve(H_ii[perm] + Ht, gp + Ug)
        else:
            fb = block_conditions(Ht) > SUBSPACE_COND_LIMIT
            Ht_safe = np.where(fb[:, None, None], np.eye(d), Ht)
            CT = np.swapaxes(C, 1, 2)
            Y = batched_solve(Ht_safe, np.concatenate([CT, Ug[:, :, None]], axis=2))
            S = C @ Y[:, :, :d]
            gt = gp - (C @ Y[:, :, d:])[:, :, 0]
            S[fb] = 0.0
            gt[fb] = gp[fb]
            dx = -batched_solve(H_ii[perm] - S, gt)
            fallback[perm] = fb
            if fb.any():
                logger.debug("CD fallback on %d vertices", int(fb.sum()))
    else:
        raise SolverError(f"jacobi_sweep does not handle method {method!r}")
    out = np.empty((nv, d))
    out[perm] = dx
    return SweepResult(out.ravel(), fallback)


# Line search ----------------------------------------------------------------


def line_search(objective: Callable[[np.ndarray], float], x: np.ndarray, g: np.ndarray, d: np.ndarray,
                f0: float | None = None, c: float = 1e-4, max_halvings: int = 30) -> LineSearchResult:
    """Armijo backtracking from ``alpha = 1`` with halving.

    A non-descent direction (``g.d >= 0``) or exhausting the halvings returns
    ``alpha = 0`` with ``stagnated`` set.
    """
    slope = float(g @ d)
    if not slope < 0.0:
        return LineSearchResult(0.0, 0, True)
    f0 = objective(x) if f0 is None else f0
    alpha = 1.0
    for k in range(max_halvings + 1):
        f = objective(x + alpha * d)
        if np.isfinite(f) and f <= f0 + c * alpha * slope:
            return LineSearchResult(alpha, k + 1, False)
        alpha *= 0.5
    return LineSearchResult(0.0, max_halvings + 1, True)


# Driver --------------------------------------------------------------------


def solve(scene, state: SimState, config: SolverConfig, basis: PerturbationBasis | None = None, *,
          bc=None, terms=None, load_scale: float = 1.0, reference: np.ndarray | None = None) -> SolveResult:
    """Run one nonlinear solve until convergence or ``max_iters``.

    ``trace.records[k]`` describes the iterate after ``k`` updates; record 0 is
    the starting point. ``trace.iterations`` is the number of updates applied.
    """
    bc = scene.bc if bc is None else bc
    if not scene.dynamic and not bc.pinned:
        raise SolverError("quasistatic scene without pinned vertices: rigid motions make the Hessian singular")
    if config.needs_basis and basis is None:
        raise SolverError(f"{config.method} needs a perturbation basis")
    if config.convergence_mode == "distance_to_reference" and reference is None:
        raise SolverError("distance_to_reference needs a reference solution")
    line_search_on = config.use_line_search or config.method == "newton"
    x = bc.project(state.x)
    x0 = x.copy()
    trace = ConvergenceTrace()
    step_norm, alpha, nfall = 0.0, 0.0, 0
    res0 = None

    def energy_at(xf: np.ndarray) -> float:
        xx = bc.expand(xf, x)
        try:
            return assemble(state.with_positions(xx), scene, terms, bc=bc, hessian=False, load_scale=load_scale).value
        except EnergyError:
            return np.inf

    for k in range(config.max_iters + 1):
        try:
            asm = assemble(state.with_positions(x), scene, terms, bc=bc, load_scale=load_scale)
        except EnergyError as exc:
            trace.outcome = "diverged"
            raise SolverDivergence(k, str(exc)) from exc
        if not (np.isfinite(asm.value) and np.all(np.isfinite(asm.gradient))):
            trace.outcome = "diverged"
            raise SolverDivergence(k, "non-finite energy")
        converged, res = check_convergence(asm, scene, config, x=x, reference=reference)
        trace.records.append(IterationRecord(k, asm.value, float(np.linalg.norm(asm.gradient)), res,
                                             step_norm, alpha, nfall))
        if config.record_displacements:
            trace.displacements.append(np.linalg.norm((x - x0)[bc.free_vertices], axis=1))
        trace.iterations = k
        if converged:
            trace.outcome = "converged"
            break
        if res0 is None:
            res0 = max(res, np.finfo(float).tiny)
        elif res > config.divergence_factor * res0:
            trace.outcome = "diverged"
            break
        if k == config.max_iters:
            trace.outcome = "max_iters"
            break
        try:
            if config.method == "newton":
                d = newton_step(asm)
                nfall = 0
            else:
                b = basis
                if b is not None and config.corotated and scene.mesh.dim == 2:
                    b = corotate_basis(basis, estimate_rotations(x, scene.mesh))
                sweep = jacobi_sweep(asm, config.method, b)
                d, nfall = sweep.d, int(sweep.fallbacks.sum())
        except np.linalg.LinAlgError as exc:
            # a singular local system on a run-away iterate
            logger.debug("linear solve failed at iteration %d: %s", k, exc)
            trace.outcome = "diverged"
            break
        xf = bc.reduce(x)
        if line_search_on:
            ls = line_search(energy_at, xf, asm.gradient, d, f0=asm.value)
            if ls.stagnated:
                trace.outcome = "stagnated"
                break
            alpha = ls.alpha
        else:
            alpha = 1.0
        step = alpha * d
        step_norm = float(np.linalg.norm(step))
        x = bc.expand(xf + step, x)
    return SolveResult(x, trace)


def newton_reference(scene, state: SimState, *, bc=None, terms=None, load_scale: float = 1.0,
                     tol: float = 1e-10, max_iters: int = 200) -> np.ndarray:
    """Tight Newton solve used as the distance-to-reference target."""
    cfg = SolverConfig(method="newton", max_iters=max_iters, tol=tol)
    x, trace = solve(scene, state, cfg, bc=bc, terms=terms, load_scale=load_scale)
    if not trace.converged:
        last = trace.records[-1].residual
        if last > 1e3 * tol:
            raise SolverError(f"Newton reference did not converge (residual {last:.3e})")
    return x

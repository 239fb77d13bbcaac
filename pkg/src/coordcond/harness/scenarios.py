"""Convergence experiments driven by versioned JSON repro configs.

A repro config has two sections: ``scene`` (the scene document, see
:func:`coordcond.mesh.scene_from_dict`) and ``scenario`` (solver matrix, sweep
axis, caps and tolerances). Every default lives in the shipped configs under
``coordcond/scenes``; the functions here only interpret them.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from coordcond.basis import PerturbationBasis, build_basis, inject_noise, restart_basis
from coordcond.energy import assemble, make_state
from coordcond.mesh import Scene, apply_schedule_step, initial_positions, scene_from_dict
from coordcond.solvers import METHODS, ConvergenceTrace, SolverConfig, newton_reference, solve

SCENE_DIR = Path(__file__).resolve().parent.parent / "scenes"

# Sweep axes that map onto a scene override; "sigma" perturbs the basis instead.
_AXIS_OVERRIDES: dict[str, Callable[[Any], dict]] = {
    "young": lambda v: {"material": {"young": float(v)}},
    "grid": lambda v: {"mesh": {"nx": int(v), "ny": int(v)}},
}


class ScenarioError(ValueError):
    pass


@dataclass
class SolverVariant:
    label: str
    config: SolverConfig
    basis_terms: tuple[str, ...] | None = None


@dataclass
class SummaryRecord:
    """One solve: ``iterations`` is the update count when it stopped.

    ``converged`` separates convergence from hitting the cap (or stagnating or
    diverging, see ``outcome``).
    """

    scenario: str
    solver: str
    sweep_value: float | int | None
    iterations: int
    converged: bool
    final_residual: float
    wall_ms: float
    seed: int | None = None
    outcome: str = ""


@dataclass
class StepOutcome:
    step: int
    x: np.ndarray
    trace: ConvergenceTrace
    wall_ms: float
    rebuilt: bool = False


@dataclass
class ScenarioResult:
    name: str
    axis: str | None
    records: list[SummaryRecord] = field(default_factory=list)
    traces: dict[str, ConvergenceTrace] = field(default_factory=dict)
    heatmaps: dict[str, np.ndarray] = field(default_factory=dict)
    configurations: dict[str, np.ndarray] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)

    def select(self, solver: str) -> list[SummaryRecord]:
        return [r for r in self.records if r.solver == solver]

    def iterations(self, solver: str) -> list[int]:
        return [r.iterations for r in self.select(solver)]


@dataclass
class ScenarioConfig:
    name: str
    scene: dict
    solvers: list[dict]
    max_iters: int
    tol: float
    convergence_mode: str = "normalized_gradient"
    axis: str | None = None
    values: list[float] = field(default_factory=list)
    seed: int = 0
    seeds: int = 1
    noise_law: str = "uniform"
    heatmap: dict | None = None

    def variants(self) -> list[SolverVariant]:
        out = []
        for entry in self.solvers:
            terms = entry.get("basis_terms")
            cfg = SolverConfig(
                method=entry["method"],
                max_iters=self.max_iters,
                tol=self.tol,
                use_line_search=bool(entry.get("use_line_search", False)),
                corotated=bool(entry.get("corotated", False)),
                restart_period=entry.get("restart_period"),
                convergence_mode=self.convergence_mode,
            )
            out.append(SolverVariant(entry["label"], cfg, None if terms is None else tuple(terms)))
        return out


def list_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENE_DIR.glob("*.json"))


def _read_doc(name_or_path: str | Path) -> tuple[str, dict]:
    path = Path(name_or_path)
    if not path.suffix:
        path = SCENE_DIR / f"{name_or_path}.json"
    if not path.exists():
        raise ScenarioError(f"unknown scenario {str(name_or_path)!r}; available: {', '.join(list_scenarios())}")
    with open(path) as fh:
        doc = json.load(fh)
    if "scene" not in doc:
        doc = {"scene": doc, "scenario": {}}
    return path.stem, doc


def load_config(name_or_path: str | Path, *, solver: str | None = None, max_iters: int | None = None,
                tol: float | None = None, line_search: bool = False, corotated: bool = False,
                restart_period: int | None = None, values: Sequence[float] | None = None,
                seed: int = 0) -> ScenarioConfig:
    """Read a repro config (by scenario name or path) and apply command-line overrides.

    ``solver`` keeps the variants whose label or method matches; a method the
    config does not list becomes a single plain variant. The boolean flags
    switch the option on for every variant and never switch it off.
    """
    name, doc = _read_doc(name_or_path)
    sc = doc.get("scenario", {})
    solvers = copy.deepcopy(sc.get("solvers") or [{"label": m, "method": m} for m in ("newton", "cd", "jgs2", "cc")])
    if solver is not None:
        picked = [s for s in solvers if solver in (s["label"], s["method"])]
        if not picked:
            if solver not in METHODS:
                raise ScenarioError(f"unknown solver {solver!r}; choose from {', '.join(METHODS)}")
            picked = [{"label": solver, "method": solver}]
        solvers = picked
    for s in solvers:
        if line_search:
            s["use_line_search"] = True
        if corotated:
            s["corotated"] = True
        if restart_period is not None:
            s["restart_period"] = restart_period
    sweep = sc.get("sweep") or {}
    axis = sweep.get("axis")
    if values is not None and axis is None:
        raise ScenarioError(f"scenario {name!r} has no sweep axis")
    return ScenarioConfig(
        name=name,
        scene=doc["scene"],
        solvers=solvers,
        max_iters=int(max_iters if max_iters is not None else sc.get("max_iters", 500)),
        tol=float(tol if tol is not None else sc.get("tol", 1e-2)),
        convergence_mode=sc.get("convergence_mode", "normalized_gradient"),
        axis=axis,
        values=list(values if values is not None else sweep.get("values", [])),
        seed=int(seed),
        seeds=int(sc.get("seeds", 1)),
        noise_law=sc.get("noise_law", "uniform"),
        heatmap=sc.get("heatmap"),
    )


# Simulation --------------------------------------------------------------------


def _basis_at(scene: Scene, x: np.ndarray, v: np.ndarray, terms, *, bc=None, step: int = 0,
              load_scale: float = 1.0) -> PerturbationBasis:
    state = make_state(scene, x=x, v=v, step=step)
    return build_basis(assemble(state, scene, terms, bc=bc, load_scale=load_scale), step=step, x=x)


def simulate(scene: Scene, variant: SolverVariant, *, basis: PerturbationBasis | None = None,
             trajectory: Sequence[np.ndarray] | None = None, record_displacements: bool = False,
             reference_tol: float = 1e-10) -> list[StepOutcome]:
    """Advance ``scene.n_steps`` steps with one solver variant.

    With ``trajectory`` given, step ``k`` starts from ``trajectory[k]`` rather
    than from the variant's own previous result, so every variant faces the
    same sequence of problems. A missing basis is built at the initial state.
    """
    cfg = variant.config
    if record_displacements:
        cfg = SolverConfig(**{**cfg.__dict__, "record_displacements": True})
    x = initial_positions(scene)
    v = np.zeros_like(x) if scene.initial_velocity is None else np.array(scene.initial_velocity, dtype=float)
    if cfg.needs_basis and basis is None:
        basis = _basis_at(scene, x, v, variant.basis_terms)
    out = []
    for k in range(scene.n_steps):
        upd = apply_schedule_step(scene, k)
        v = v + upd.impulse
        start = x if trajectory is None else np.array(trajectory[k])
        state = make_state(scene, x=start, v=v, step=k)
        rebuilt = False
        if cfg.needs_basis and cfg.restart_period is not None and k > 0:
            asm = assemble(state, scene, variant.basis_terms, bc=upd.bc, load_scale=upd.load_scale)
            basis, rebuilt = restart_basis(basis, asm, k, cfg.restart_period, x=start)
        reference = None
        if cfg.convergence_mode == "distance_to_reference":
            reference = newton_reference(scene, state, bc=upd.bc, load_scale=upd.load_scale, tol=reference_tol)
        t0 = time.perf_counter()
        x, trace = solve(scene, state, cfg, basis, bc=upd.bc, load_scale=upd.load_scale, reference=reference)
        wall = 1e3 * (time.perf_counter() - t0)
        if scene.dynamic:
            v = (x - start) / scene.timestep
        out.append(StepOutcome(k, x, trace, wall, rebuilt))
    return out


def _record(name: str, label: str, sweep_value, step: StepOutcome, seed: int | None = None) -> SummaryRecord:
    tr = step.trace
    return SummaryRecord(name, label, sweep_value, tr.iterations, tr.converged, tr.records[-1].residual,
                         step.wall_ms, seed, tr.outcome)


def heatmap(trace: ConvergenceTrace) -> np.ndarray:
    """Displacement magnitude per free vertex after each executed update."""
    if not trace.displacements:
        raise ScenarioError("trace has no recorded displacements")
    width = trace.displacements[0].size
    return np.array(trace.displacements[1:]).reshape(len(trace.displacements) - 1, width)


def _key(label: str, axis: str | None = None, value=None, step: int | None = None, seed: int | None = None) -> str:
    parts = [label]
    if axis is not None:
        parts.append(f"{axis}{value:g}")
    if step is not None:
        parts.append(f"step{step:02d}")
    if seed is not None:
        parts.append(f"seed{seed}")
    return "_".join(parts)


def _sweep_scene(cfg: ScenarioConfig, value) -> Scene:
    over = _AXIS_OVERRIDES[cfg.axis](value) if cfg.axis in _AXIS_OVERRIDES else {}
    return scene_from_dict(cfg.scene, over)


def _shared_bases(scene: Scene, variants: Sequence[SolverVariant]) -> dict:
    x = initial_positions(scene)
    v = np.zeros_like(x)
    cache: dict = {}
    for var in variants:
        if var.config.needs_basis and var.basis_terms not in cache:
            cache[var.basis_terms] = _basis_at(scene, x, v, var.basis_terms)
    return cache


# Scenarios -----------------------------------------------------------------------


def run_sweep(cfg: ScenarioConfig) -> ScenarioResult:
    """Every variant at every sweep value (one step each, shared basis per value)."""
    if cfg.axis not in _AXIS_OVERRIDES:
        raise ScenarioError(f"scenario {cfg.name!r} does not sweep a scene parameter")
    res = ScenarioResult(cfg.name, cfg.axis)
    variants = cfg.variants()
    hm = cfg.heatmap or {}
    for value in cfg.values:
        scene = _sweep_scene(cfg, value)
        bases = _shared_bases(scene, variants)
        want_heatmap = cfg.axis in hm and float(hm[cfg.axis]) == float(value)
        for var in variants:
            step = simulate(scene, var, basis=bases.get(var.basis_terms), record_displacements=want_heatmap)[-1]
            res.records.append(_record(cfg.name, var.label, value, step))
            res.traces[_key(var.label, cfg.axis, value)] = step.trace
            if want_heatmap:
                res.heatmaps[var.label] = heatmap(step.trace)
                res.configurations[var.label] = step.x
        if want_heatmap:
            res.extras["heatmap_value"] = value
    return res


def scenario_rod_impulse(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    """Single dynamic step of an impulsively loaded rod, swept over stiffness.

    Convergence is measured as distance to a tight Newton solution; a Newton
    reference that fails to converge aborts the scenario.
    """
    return run_sweep(cfg or load_config("rod-impulse", **overrides))


def scenario_stretch_resolution(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    """Quasistatic stretch of a square, swept over grid resolution."""
    return run_sweep(cfg or load_config("stretch-resolution", **overrides))


def run_steps(cfg: ScenarioConfig, *, deflection: bool = False) -> ScenarioResult:
    """Per-step solves along a shared Newton trajectory.

    Newton runs first on its own; every other variant then solves step ``k``
    from Newton's configuration at the start of that step.
    """
    scene = scene_from_dict(cfg.scene)
    res = ScenarioResult(cfg.name, "step")
    variants = cfg.variants()
    newton = next((v for v in variants if v.config.method == "newton"), None)
    if newton is None:
        newton = SolverVariant("newton", SolverConfig("newton", max_iters=cfg.max_iters, tol=cfg.tol))
    ref_steps = simulate(scene, newton)
    trajectory = [initial_positions(scene)] + [s.x for s in ref_steps[:-1]]
    bases = _shared_bases(scene, variants)
    rest_y = scene.mesh.rest_positions[:, -1]
    defl: dict[str, list[float]] = {}
    for var in variants:
        steps = ref_steps if var is newton else simulate(scene, var, basis=bases.get(var.basis_terms),
                                                          trajectory=trajectory)
        for s in steps:
            res.records.append(_record(cfg.name, var.label, s.step, s))
            res.traces[_key(var.label, step=s.step)] = s.trace
        res.configurations[var.label] = steps[-1].x
        if var.config.restart_period is not None:
            res.extras.setdefault("rebuild_steps", {})[var.label] = [s.step for s in steps if s.rebuilt]
        if deflection:
            defl[var.label] = [float(np.abs(s.x[:, -1] - rest_y).max()) for s in steps]
    if deflection:
        y0 = float(np.abs(initial_positions(scene)[:, -1] - rest_y).max())
        res.extras["deflection"] = defl
        res.extras["buckling_step"] = {k: int(np.argmax(np.diff([y0] + d))) for k, d in defl.items()}
    return res


def scenario_cantilever_staleness(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    """Gravity-loaded cantilever under a load ramp; fixed, restarted and corotated bases."""
    return run_steps(cfg or load_config("cantilever-staleness", **overrides))


def scenario_buckling(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    """Progressively compressed beam; records lateral deflection and each run's buckling step.

    The buckling step of a run is where its maximum lateral deflection jumps the most.
    """
    return run_steps(cfg or load_config("buckling", **overrides), deflection=True)


def scenario_basis_noise(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    """CC with a randomly degraded basis, swept over the noise amplitude and seeds."""
    cfg = cfg or load_config("basis-noise", **overrides)
    scene = scene_from_dict(cfg.scene)
    res = ScenarioResult(cfg.name, cfg.axis)
    variants = cfg.variants()
    bases = _shared_bases(scene, variants)
    for sigma in cfg.values:
        for seed in range(cfg.seed, cfg.seed + cfg.seeds):
            for var in variants:
                basis = bases.get(var.basis_terms)
                if basis is not None:
                    basis = inject_noise(basis, float(sigma), seed, cfg.noise_law)
                step = simulate(scene, var, basis=basis)[-1]
                res.records.append(_record(cfg.name, var.label, sigma, step, seed))
                res.traces[_key(var.label, cfg.axis, sigma, seed=seed)] = step.trace
    return res


def scenario_spring_coupling(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioResult:
    """Single quasistatic solve with a long-range spring the basis may or may not include."""
    cfg = cfg or load_config("spring-coupling", **overrides)
    scene = scene_from_dict(cfg.scene)
    res = ScenarioResult(cfg.name, None)
    variants = cfg.variants()
    bases = _shared_bases(scene, variants)
    for var in variants:
        step = simulate(scene, var, basis=bases.get(var.basis_terms))[-1]
        res.records.append(_record(cfg.name, var.label, None, step))
        res.traces[var.label] = step.trace
        res.configurations[var.label] = step.x
    return res


def run_single(cfg: ScenarioConfig) -> ScenarioResult:
    """Each configured variant on the scene as written (no sweep), with heatmaps."""
    scene = scene_from_dict(cfg.scene)
    res = ScenarioResult(cfg.name, "step" if scene.n_steps > 1 else None)
    variants = cfg.variants()
    bases = _shared_bases(scene, variants)
    for var in variants:
        steps = simulate(scene, var, basis=bases.get(var.basis_terms), record_displacements=True)
        for s in steps:
            key = var.label if scene.n_steps == 1 else _key(var.label, step=s.step)
            res.records.append(_record(cfg.name, var.label, s.step if scene.n_steps > 1 else None, s))
            res.traces[key] = s.trace
            res.heatmaps[key] = heatmap(s.trace)
        res.configurations[var.label] = steps[-1].x
    return res


SCENARIOS: dict[str, Callable[..., ScenarioResult]] = {
    "rod-impulse": scenario_rod_impulse,
    "stretch-resolution": scenario_stretch_resolution,
    "cantilever-staleness": scenario_cantilever_staleness,
    "basis-noise": scenario_basis_noise,
    "buckling": scenario_buckling,
    "spring-coupling": scenario_spring_coupling,
}


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Dispatch on the config's name; unknown names with a sweep axis run as a plain sweep."""
    fn = SCENARIOS.get(cfg.name)
    if fn is not None:
        return fn(cfg)
    if cfg.axis in _AXIS_OVERRIDES:
        return run_sweep(cfg)
    return run_steps(cfg) if scene_from_dict(cfg.scene).n_steps > 1 else run_single(cfg)

"""Meshes, Dirichlet boundary conditions and scene descriptions.

Degrees of freedom are ordered vertex-major: ``[x0, y0, x1, y1, ...]`` in 2D
and ``[x0, x1, ...]`` on a 1D rod. Pinned vertices are eliminated from the
reduced (free) system entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np

from coordcond.energy import MaterialParams


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    dim: int
    rest_positions: np.ndarray
    elements: np.ndarray
    element_volumes: np.ndarray
    vertex_volumes: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.rest_positions.shape[0]

    @property
    def total_volume(self) -> float:
        return float(self.element_volumes.sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (n_edges, 2), sorted pairs."""
        k = self.elements.shape[1]
        pairs = [self.elements[:, [a, b]] for a in range(k) for b in range(a + 1, k)]
        e = np.sort(np.concatenate(pairs, axis=0), axis=1)
        return np.unique(e, axis=0)

    def neighbors(self) -> list[np.ndarray]:
        adj: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for a, b in self.edges():
            adj[a].append(b)
            adj[b].append(a)
        return [np.array(sorted(n), dtype=int) for n in adj]


def element_volumes(dim: int, positions: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed segment lengths (1D) or signed triangle areas (2D)."""
    if dim == 1:
        return positions[elements[:, 1], 0] - positions[elements[:, 0], 0]
    p0 = positions[elements[:, 0]]
    e1 = positions[elements[:, 1]] - p0
    e2 = positions[elements[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_mesh(rest_positions: np.ndarray, elements: np.ndarray) -> Mesh:
    rest_positions = np.asarray(rest_positions, dtype=float)
    if rest_positions.ndim == 1:
        rest_positions = rest_positions[:, None]
    elements = np.asarray(elements, dtype=int)
    n, dim = rest_positions.shape
    if dim not in (1, 2):
        raise MeshError(f"unsupported dimension {dim}")
    if elements.ndim != 2 or elements.shape[1] != dim + 1:
        raise MeshError(f"{dim}D elements need {dim + 1} vertices each")
    if elements.size and (elements.min() < 0 or elements.max() >= n):
        raise MeshError("element index out of range")
    vols = element_volumes(dim, rest_positions, elements)
    if np.any(vols <= 0.0):
        bad = np.flatnonzero(vols <= 0.0)
        raise MeshError(f"non-positive rest volume on elements {bad[:5].tolist()}")
    vv = np.zeros(n)
    np.add.at(vv, elements.ravel(), np.repeat(vols / (dim + 1), dim + 1))
    return Mesh(dim, rest_positions, elements, vols, vv)


class BoundaryConditions:
    """Pinned vertices with prescribed positions, and the free-DOF map.

    ``free_dof_index[k]`` is the full DOF index of reduced DOF ``k``;
    ``full_to_free`` is its inverse with ``-1`` on pinned DOFs.
    """

    def __init__(self, n_vertices: int, dim: int, pinned: Mapping[int, Sequence[float]] | None = None):
        self.n_vertices = n_vertices
        self.dim = dim
        self.pinned: dict[int, np.ndarray] = {}
        for v, p in (pinned or {}).items():
            v = int(v)
            if not 0 <= v < n_vertices:
                raise MeshError(f"pinned vertex {v} out of range")
            self.pinned[v] = np.asarray(p, dtype=float).reshape(dim)
        mask = np.ones(n_vertices, dtype=bool)
        mask[list(self.pinned)] = False
        self.free_vertices = np.flatnonzero(mask)
        self.vertex_to_free = np.full(n_vertices, -1, dtype=int)
        self.vertex_to_free[self.free_vertices] = np.arange(self.free_vertices.size)
        self.free_dof_index = (self.free_vertices[:, None] * dim + np.arange(dim)).ravel()
        self.full_to_free = np.full(n_vertices * dim, -1, dtype=int)
        self.full_to_free[self.free_dof_index] = np.arange(self.free_dof_index.size)

    @property
    def n_free(self) -> int:
        return self.free_dof_index.size

    @property
    def n_free_vertices(self) -> int:
        return self.free_vertices.size

    def is_pinned(self, v: int) -> bool:
        return v in self.pinned

    def reduce(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full).reshape(-1)[self.free_dof_index]

    def expand(self, free: np.ndarray, full: np.ndarray) -> np.ndarray:
        """Scatter reduced values into a copy of ``full`` (pinned entries kept)."""
        out = np.array(full, dtype=float).reshape(-1)
        out[self.free_dof_index] = free
        return out.reshape(np.shape(full))

    def project(self, x: np.ndarray) -> np.ndarray:
        """Copy of positions ``x`` (n, dim) with pinned entries at their targets."""
        out = np.array(x, dtype=float)
        for v, p in self.pinned.items():
            out[v] = p
        return out

    def with_targets(self, targets: Mapping[int, np.ndarray]) -> "BoundaryConditions":
        pinned = dict(self.pinned)
        for v, p in targets.items():
            if v not in pinned:
                raise MeshError(f"vertex {v} is not pinned")
            pinned[v] = p
        return BoundaryConditions(self.n_vertices, self.dim, pinned)

    def __repr__(self) -> str:
        return f"BoundaryConditions(n_vertices={self.n_vertices}, pinned={len(self.pinned)})"


def select_vertices(mesh: Mesh, selector: Any, tol: float = 1e-9) -> np.ndarray:
    """Resolve a vertex selector to indices.

    Accepts an explicit index list or one of ``left``, ``right``, ``top``,
    ``bottom``, ``center_column``, ``ends``, ``top_left``, ``top_right``,
    ``all``.
    """
    if isinstance(selector, (list, tuple, np.ndarray)):
        return np.asarray(selector, dtype=int)
    if isinstance(selector, (int, np.integer)):
        return np.array([int(selector)])
    X = mesh.rest_positions
    lo, hi = X.min(axis=0), X.max(axis=0)
    x = X[:, 0]
    if selector == "all":
        return np.arange(mesh.n_vertices)
    if selector == "left":
        return np.flatnonzero(np.abs(x - lo[0]) < tol)
    if selector == "right":
        return np.flatnonzero(np.abs(x - hi[0]) < tol)
    if selector == "ends":
        return np.flatnonzero((np.abs(x - lo[0]) < tol) | (np.abs(x - hi[0]) < tol))
    if selector == "center_column":
        xs = np.unique(np.round(x, 12))
        mid = xs[np.argmin(np.abs(xs - 0.5 * (lo[0] + hi[0])))]
        return np.flatnonzero(np.abs(x - mid) < tol)
    if mesh.dim < 2:
        raise MeshError(f"selector {selector!r} needs a 2D mesh")
    y = X[:, 1]
    if selector == "top":
        return np.flatnonzero(np.abs(y - hi[1]) < tol)
    if selector == "bottom":
        return np.flatnonzero(np.abs(y - lo[1]) < tol)
    if selector == "top_left":
        return np.flatnonzero((np.abs(y - hi[1]) < tol) & (np.abs(x - lo[0]) < tol))
    if selector == "top_right":
        return np.flatnonzero((np.abs(y - hi[1]) < tol) & (np.abs(x - hi[0]) < tol))
    raise MeshError(f"unknown vertex selector {selector!r}")


def _pins_from_spec(mesh: Mesh, bc_spec: Any) -> dict[int, np.ndarray]:
    """``bc_spec`` is None, a selector, or a list of ``{"vertices", "offset"}``."""
    if bc_spec is None:
        return {}
    if not isinstance(bc_spec, list) or (bc_spec and not isinstance(bc_spec[0], Mapping)):
        bc_spec = [{"vertices": bc_spec}]
    pins: dict[int, np.ndarray] = {}
    for entry in bc_spec:
        offset = np.zeros(mesh.dim)
        offset[:] = entry.get("offset", np.zeros(mesh.dim))
        for v in select_vertices(mesh, entry["vertices"]):
            pins[int(v)] = mesh.rest_positions[v] + offset
    return pins


def make_rod(n_vertices: int, length: float, bc_spec: Any = None) -> tuple[Mesh, BoundaryConditions]:
    """Uniform chain of ``n_vertices - 1`` segments along x (unit cross-section)."""
    if n_vertices < 2:
        raise MeshError("a rod needs at least 2 vertices")
    if length <= 0:
        raise MeshError("rod length must be positive")
    X = np.linspace(0.0, length, n_vertices)[:, None]
    elems = np.stack([np.arange(n_vertices - 1), np.arange(1, n_vertices)], axis=1)
    mesh = build_mesh(X, elems)
    return mesh, BoundaryConditions(n_vertices, 1, _pins_from_spec(mesh, bc_spec))


def make_grid(nx: int, ny: int, width: float, height: float, bc_spec: Any = None) -> tuple[Mesh, BoundaryConditions]:
    """Regular ``nx`` x ``ny`` vertex grid, every quad split along the same diagonal."""
    if nx < 2 or ny < 2:
        raise MeshError("grid needs at least 2 vertices per side")
    if width <= 0 or height <= 0:
        raise MeshError("grid extent must be positive")
    xs, ys = np.linspace(0.0, width, nx), np.linspace(0.0, height, ny)
    X = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1).reshape(-1, 2)
    j, i = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
    v00 = (j * nx + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + nx, v00 + nx + 1
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    mesh = build_mesh(X, tris)
    return mesh, BoundaryConditions(nx * ny, 2, _pins_from_spec(mesh, bc_spec))


@dataclass(frozen=True)
class Spring:
    a: int
    b: int
    k: float
    rest_length: float


@dataclass
class Scene:
    mesh: Mesh
    bc: BoundaryConditions
    material: MaterialParams
    mode: str = "quasistatic"
    timestep: float = 0.0
    schedule: list[dict] = field(default_factory=list)
    extra_springs: list[Spring] = field(default_factory=list)
    gravity: np.ndarray | None = None
    n_steps: int = 1
    initial_velocity: np.ndarray | None = None
    perturbation: dict | None = None
    source: dict | None = None

    def __post_init__(self):
        if self.mode not in ("quasistatic", "dynamic"):
            raise MeshError(f"unknown mode {self.mode!r}")
        if self.mode == "dynamic" and not self.timestep > 0:
            raise MeshError("dynamic scenes need a positive timestep")

    @property
    def dynamic(self) -> bool:
        return self.mode == "dynamic"

    @property
    def h(self) -> float:
        return self.timestep if self.dynamic else 1.0


class StepUpdate(NamedTuple):
    bc: BoundaryConditions
    impulse: np.ndarray
    load_scale: float


def apply_schedule_step(scene: Scene, step: int) -> StepUpdate:
    """Boundary targets, velocity impulse and load scale at ``step``.

    Schedule entries:

    Step ``k`` is the ``k + 1``-th solved step, so loads are applied at its end.

    * ``{"type": "translate", "vertices": sel, "delta": [...]}`` moves the
      selected pins to ``base + (step + 1) * delta``.
    * ``{"type": "impulse", "step": k, "vertices": sel, "velocity": [...]}``
      adds a velocity change at step ``k``.
    * ``{"type": "load_ramp", "steps": N}`` scales body loads by
      ``min(step + 1, N) / N``.
    """
    mesh, bc = scene.mesh, scene.bc
    impulse = np.zeros((mesh.n_vertices, mesh.dim))
    load_scale = 1.0
    targets: dict[int, np.ndarray] = {}
    for entry in scene.schedule:
        kind = entry["type"]
        if kind == "translate":
            delta = np.asarray(entry["delta"], dtype=float).reshape(mesh.dim)
            for v in select_vertices(mesh, entry["vertices"]):
                if not bc.is_pinned(int(v)):
                    raise MeshError(f"translate schedule on free vertex {v}")
                base = targets.get(int(v), bc.pinned[int(v)])
                targets[int(v)] = base + (step + 1) * delta
        elif kind == "impulse":
            if int(entry.get("step", 0)) == step:
                dv = np.asarray(entry["velocity"], dtype=float).reshape(mesh.dim)
                impulse[select_vertices(mesh, entry["vertices"])] += dv
        elif kind == "load_ramp":
            n = int(entry["steps"])
            load_scale = min(step + 1, n) / n
        else:
            raise MeshError(f"unknown schedule entry {kind!r}")
    new_bc = bc.with_targets(targets) if targets else bc
    return StepUpdate(new_bc, impulse, load_scale)


def initial_positions(scene: Scene) -> np.ndarray:
    """Rest positions plus the optional symmetry-breaking nudge."""
    x = np.array(scene.mesh.rest_positions)
    pert = scene.perturbation
    if pert:
        sel = pert.get("vertex", "middle")
        v = _mid_vertex(scene.mesh) if sel == "middle" else int(select_vertices(scene.mesh, sel)[0])
        x[v] += np.asarray(pert["offset"], dtype=float)
    return x


def _mid_vertex(mesh: Mesh) -> int:
    c = 0.5 * (mesh.rest_positions.min(0) + mesh.rest_positions.max(0))
    return int(np.argmin(np.linalg.norm(mesh.rest_positions - c, axis=1)))


# Scene files -------------------------------------------------------------


def scene_from_dict(doc: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> Scene:
    """Build a Scene from the JSON document layout described in the README."""
    doc = _merge(dict(doc), overrides or {})
    m = doc["mesh"]
    if m["type"] == "rod":
        mesh, _ = make_rod(int(m["n"]), float(m.get("length", 1.0)))
    elif m["type"] == "grid":
        mesh, _ = make_grid(int(m["nx"]), int(m["ny"]), float(m.get("width", 1.0)), float(m.get("height", 1.0)))
    else:
        raise MeshError(f"unknown mesh type {m['type']!r}")
    mat = doc.get("material", {})
    material = MaterialParams(
        young=float(mat.get("young", 1e5)),
        poisson=float(mat.get("poisson", 0.0 if mesh.dim == 1 else 0.4)),
        density=float(mat.get("density", 1.0)),
    )
    bcd = doc.get("bc", {})
    bc = BoundaryConditions(mesh.n_vertices, mesh.dim, _pins_from_spec(mesh, bcd.get("pins")))
    springs = []
    for s in doc.get("springs", []):
        a = int(select_vertices(mesh, s["a"])[0])
        b = int(select_vertices(mesh, s["b"])[0])
        rest = s.get("rest_length")
        if rest is None:
            rest = float(np.linalg.norm(mesh.rest_positions[a] - mesh.rest_positions[b])) * float(s.get("rest_fraction", 1.0))
        springs.append(Spring(a, b, float(s["k"]), float(rest)))
    gravity = doc.get("gravity")
    pert = doc.get("perturbation")
    if pert is not None and "relative_offset" in pert:
        extent = mesh.rest_positions.max(0) - mesh.rest_positions.min(0)
        pert = {"vertex": pert.get("vertex", "middle"),
                "offset": (np.asarray(pert["relative_offset"], dtype=float) * extent[-1]).tolist()}
    return Scene(
        mesh=mesh,
        bc=bc,
        material=material,
        mode=doc.get("mode", "quasistatic"),
        timestep=float(doc.get("timestep", 0.0)),
        schedule=list(bcd.get("schedules", [])),
        extra_springs=springs,
        gravity=None if gravity is None else np.asarray(gravity, dtype=float),
        n_steps=int(doc.get("steps", 1)),
        perturbation=pert,
        source=doc,
    )


def load_scene(path: str | Path, overrides: Mapping[str, Any] | None = None) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh), overrides)


def _merge(base: dict, over: Mapping[str, Any]) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(dict(out[k]), v)
        else:
            out[k] = v
    return out


def with_material(scene: Scene, **kw) -> Scene:
    return replace(scene, material=replace(scene.material, **kw))

"""SVG figures for scenario results (matplotlib, headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from coordcond.harness.scenarios import ScenarioResult  # noqa: E402

# Stable output: no timestamps or random ids in the SVG.
matplotlib.rcParams["svg.hashsalt"] = "coordcond"
_SVG_META = {"Date": None, "Creator": None}

_LOG_AXES = {"young", "sigma"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def _labels(result: ScenarioResult) -> list[str]:
    return list(dict.fromkeys(r.solver for r in result.records))


def iterations_plot(result: ScenarioResult, path: Path) -> Path:
    """Iterations against the sweep axis (or step); capped runs drawn hollow."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in _labels(result):
        recs = result.select(label)
        xs = sorted({r.sweep_value for r in recs})
        ys = [np.mean([r.iterations for r in recs if r.sweep_value == x]) for x in xs]
        ok = [all(r.converged for r in recs if r.sweep_value == x) for x in xs]
        line, = ax.plot(xs, ys, "-", label=label)
        ax.plot([x for x, o in zip(xs, ok) if o], [y for y, o in zip(ys, ok) if o], "o", color=line.get_color())
        ax.plot([x for x, o in zip(xs, ok) if not o], [y for y, o in zip(ys, ok) if not o], "o",
                mfc="none", color=line.get_color())
    if result.axis in _LOG_AXES:
        ax.set_xscale("symlog", linthresh=min((r.sweep_value for r in result.records if r.sweep_value), default=1))
    ax.set_yscale("log")
    ax.set_xlabel(result.axis or "")
    ax.set_ylabel("iterations")
    ax.set_title(result.name)
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def trace_plot(result: ScenarioResult, path: Path) -> Path:
    """Gradient norm and energy per iteration for every trace."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    for key, tr in result.traces.items():
        a1.semilogy(tr.column("iteration"), tr.column("grad_norm"), label=key)
        a2.plot(tr.column("iteration"), tr.column("energy"), label=key)
    a1.set_xlabel("iteration")
    a1.set_ylabel("gradient norm")
    a2.set_xlabel("iteration")
    a2.set_ylabel("energy")
    a2.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def heatmap_plot(data: np.ndarray, title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    if data.size:
        im = ax.imshow(data, aspect="auto", origin="lower", interpolation="nearest", cmap="viridis")
        fig.colorbar(im, ax=ax, label="displacement")
    ax.set_xlabel("vertex")
    ax.set_ylabel("iteration")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def configuration_plot(result: ScenarioResult, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, x in result.configurations.items():
        x = np.asarray(x)
        if x.shape[1] == 1:
            ax.plot(x[:, 0], np.zeros(len(x)), ".", label=label)
        else:
            ax.plot(x[:, 0], x[:, 1], ".", ms=3, label=label)
    ax.set_aspect("equal" if np.asarray(next(iter(result.configurations.values()))).shape[1] == 2 else "auto")
    ax.legend(fontsize="small")
    ax.set_title("final configurations")
    fig.tight_layout()
    return _save(fig, path)


def render_figures(result: ScenarioResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if result.axis is not None:
        paths.append(iterations_plot(result, out / "iterations.svg"))
    if result.axis is None or len(result.traces) <= 8:
        paths.append(trace_plot(result, out / "traces.svg"))
    for key, data in result.heatmaps.items():
        paths.append(heatmap_plot(data, key, out / f"heatmap_{key}.svg"))
    if result.configurations:
        paths.append(configuration_plot(result, out / "configurations.svg"))
    return paths

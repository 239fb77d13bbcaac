"""CSV and JSON writers for traces, summaries, heatmaps and configurations.

Numbers are formatted explicitly so identical runs give byte-identical files.
Wall time is left blank unless requested, since it is the only
non-deterministic field.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from coordcond.harness.scenarios import ScenarioResult, SummaryRecord
from coordcond.solvers import ConvergenceTrace

TRACE_COLUMNS = ("iteration", "energy", "grad_norm", "residual", "step_norm", "alpha")
SUMMARY_COLUMNS = ("scenario", "solver", "sweep_value", "iterations", "converged", "final_residual", "wall_ms", "seed")


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_trace(path: str | Path, trace: ConvergenceTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace.records:
            w.writerow([r.iteration] + [_num(getattr(r, c)) for c in TRACE_COLUMNS[1:]])


def read_trace(path: str | Path) -> dict[str, np.ndarray]:
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    return {c: data[:, k] for k, c in enumerate(TRACE_COLUMNS)}


def summary_row(rec: SummaryRecord, timing: bool = False) -> list[str]:
    return [rec.scenario, rec.solver, _num(rec.sweep_value), str(rec.iterations), _num(rec.converged),
            _num(rec.final_residual), f"{rec.wall_ms:.3f}" if timing else "", _num(rec.seed)]


def write_summary(path: str | Path, records: Iterable[SummaryRecord], timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for rec in records:
            w.writerow(summary_row(rec, timing))


def read_summary(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_heatmap(path: str | Path, data: np.ndarray) -> None:
    """One row per executed iteration, one column per free vertex."""
    data = np.asarray(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"v{j}" for j in range(data.shape[1])])
        for row in data:
            w.writerow([_num(v) for v in row])


def write_configuration(path: str | Path, x: np.ndarray) -> None:
    x = np.asarray(x).reshape(len(x), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex"] + ["x", "y", "z"][: x.shape[1]])
        for i, p in enumerate(x):
            w.writerow([i] + [_num(c) for c in p])


def summary_document(result: ScenarioResult, timing: bool = False) -> dict:
    recs = []
    for r in result.records:
        recs.append({
            "solver": r.solver, "sweep_value": r.sweep_value, "iterations": r.iterations,
            "converged": r.converged, "outcome": r.outcome, "final_residual": r.final_residual,
            "wall_ms": r.wall_ms if timing else None, "seed": r.seed,
        })
    extras = json.loads(json.dumps(result.extras, default=_jsonable))
    return {"scenario": result.name, "axis": result.axis, "records": recs, "extras": extras}


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_summary_json(path: str | Path, result: ScenarioResult, timing: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(summary_document(result, timing), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_result(out_dir: str | Path, result: ScenarioResult, emit: Iterable[str] = ("csv",),
                 timing: bool = False) -> list[Path]:
    """Write every artifact of a scenario run; returns the created paths.

    ``csv`` gives ``summary.csv``, ``traces/*.csv``, ``heatmaps/*.csv`` and
    ``configurations/*.csv``; ``json`` gives ``summary.json``; ``svg``
    renders figures under ``figures/``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit = set(emit)
    written: list[Path] = []
    if "csv" in emit:
        p = out / "summary.csv"
        write_summary(p, result.records, timing)
        written.append(p)
        for sub, items, fn in (("traces", result.traces, write_trace),
                               ("heatmaps", result.heatmaps, write_heatmap),
                               ("configurations", result.configurations, write_configuration)):
            if not items:
                continue
            (out / sub).mkdir(exist_ok=True)
            for key, item in items.items():
                p = out / sub / f"{key}.csv"
                fn(p, item)
                written.append(p)
    if "json" in emit:
        p = out / "summary.json"
        write_summary_json(p, result, timing)
        written.append(p)
    if "svg" in emit:
        from coordcond.harness.plotting import render_figures

        written.extend(render_figures(result, out / "figures"))
    return written

"""Readers for the documented trace/aggregate CSV and boundary-grid text
schemas. Implemented standalone so rendering has no dependency on the
experiment engine that produced the files.

Trace CSV columns:
    step, weight_label, seed, population, fraction_positive, accuracy,
    loss, boundary_angle
Aggregate CSV columns:
    step, weight_label, population, n_seeds, then <metric>_mean and
    <metric>_std for fraction_positive, accuracy, loss, boundary_angle.
Boundary grid: "# boundary-grid v1" header with bounds / resolution /
step lines, then one 0/1 digit row per y-row (row 0 at the ymin edge).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

AGG_METRICS = ("fraction_positive", "accuracy", "loss", "boundary_angle")


class SchemaError(ValueError):
    pass


def _require_columns(header: list[str], needed, path) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing} in header {header}")


def read_trace_csv(path) -> list[dict]:
    """Per-run trace rows; numeric fields parsed, blanks become None."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames or [],
                         ("step", "weight_label", "seed", "population",
                          "fraction_positive", "accuracy", "loss",
                          "boundary_angle"), path)
        for raw in reader:
            rows.append({
                "step": int(raw["step"]),
                "weight_label": raw["weight_label"],
                "seed": int(raw["seed"]),
                "population": raw["population"],
                "fraction_positive": _opt_float(raw["fraction_positive"]),
                "accuracy": _opt_float(raw["accuracy"]),
                "loss": _opt_float(raw["loss"]),
                "boundary_angle": _opt_float(raw["boundary_angle"]),
            })
    return rows


def read_aggregate_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = ["step", "weight_label", "population", "n_seeds"]
        needed += [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "std")]
        _require_columns(reader.fieldnames or [], needed, path)
        for raw in reader:
            row = {"step": int(raw["step"]), "weight_label": raw["weight_label"],
                   "population": raw["population"], "n_seeds": int(raw["n_seeds"])}
            for m in AGG_METRICS:
                row[f"{m}_mean"] = _opt_float(raw[f"{m}_mean"])
                row[f"{m}_std"] = _opt_float(raw[f"{m}_std"])
            rows.append(row)
    return rows


def _opt_float(text: str):
    return None if text == "" else float(text)


@dataclass
class Grid:
    bounds: tuple[float, float, float, float]
    resolution: tuple[int, int]
    values: np.ndarray
    step: int


def read_grid(path) -> Grid:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "# boundary-grid v1":
        raise SchemaError(f"{path}: not a boundary-grid v1 file")
    bounds = tuple(float(v) for v in lines[1].split(":", 1)[1].split())
    nx, ny = (int(v) for v in lines[2].split(":", 1)[1].split())
    step = int(lines[3].split(":", 1)[1])
    values = np.array([[int(ch) for ch in row] for row in lines[4:4 + ny]])
    if values.shape != (ny, nx):
        raise SchemaError(f"{path}: grid body {values.shape} != resolution {(ny, nx)}")
    return Grid(bounds, (nx, ny), values, step)


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """x1,x2,label dataset export."""
    xs, ys = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x1,x2,label":
            raise SchemaError(f"{path}: expected header x1,x2,label")
        for line in fh:
            a, b, c = line.strip().split(",")
            xs.append((float(a), float(b)))
            ys.append(int(c))
    return np.asarray(xs), np.asarray(ys)


def sanitize_label(label: str) -> str:
    """Mirror of the run-file naming rule used by the experiment engine."""
    for ch in (":", "/", "|", " "):
        label = label.replace(ch, "-")
    return label.replace("--", "-")


def weight_value(label: str) -> float:
    """Numeric position of a weight label 'a:b' on the weight axis."""
    a, b = label.split(":")
    return float(a) / float(b)

"""Figure rendering from trace/aggregate CSVs and boundary grids.

Each renderer writes one raster image and returns the plotted numeric
series, so every drawn element can be cross-checked against the CSVs it
came from. No statistic is computed here beyond reading mean/std columns;
rendering twice from the same inputs produces identical bytes.
"""

from __future__ import annotations

from configparser import ConfigParser
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .schemas import (Grid, SchemaError, read_aggregate_csv, read_grid,
                      read_points_csv, sanitize_label, weight_value)

PNG_METADATA = {"Software": "iwplots"}


class FigureSpecError(ValueError):
    pass


def load_figure_spec(path) -> dict:
    parser = ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise FigureSpecError(f"figure spec not found: {path}")
    if "figure" not in parser:
        raise FigureSpecError(f"{path}: missing [figure] section")
    spec = {"kind": parser["figure"].get("kind", ""),
            "output": parser["figure"].get("output", "figure.png"),
            "inputs": dict(parser["inputs"]) if "inputs" in parser else {},
            "oracle": dict(parser["oracle"]) if "oracle" in parser else None,
            "base_dir": str(Path(path).resolve().parent)}
    if spec["kind"] not in ("boundary-panels", "trace-curves", "weight-sweep",
                            "covariate-compare"):
        raise FigureSpecError(f"{path}: unknown figure kind {spec['kind']!r}")
    return spec


def render(spec: dict) -> dict:
    kind = spec["kind"]
    if kind == "boundary-panels":
        return render_boundary_panels(spec)
    if kind == "trace-curves":
        return render_trace_curves(spec)
    if kind == "weight-sweep":
        return render_weight_sweep(spec)
    return render_covariate_compare(spec)


def _resolve(spec: dict, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(spec["base_dir"]) / p


def _save(fig, spec: dict) -> Path:
    out = _resolve(spec, spec["output"])
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)
    return out


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# -- boundary panels -----------------------------------------------------------

def _draw_panel(ax, points, labels, mlp_grid: Grid | None, lr_grid: Grid | None,
                oracle: dict | None) -> None:
    if mlp_grid is not None:
        xmin, xmax, ymin, ymax = mlp_grid.bounds
        ax.imshow(mlp_grid.values, origin="lower", extent=(xmin, xmax, ymin, ymax),
                  cmap="coolwarm", alpha=0.3, aspect="auto",
                  interpolation="nearest", vmin=0, vmax=1)
    if points is not None:
        pos, neg = labels == 1, labels == 0
        ax.scatter(points[pos, 0], points[pos, 1], s=4, c="#7fb8e6", lw=0)
        ax.scatter(points[neg, 0], points[neg, 1], s=4, c="#1f4e79", lw=0)
    if lr_grid is not None:
        xmin, xmax, ymin, ymax = lr_grid.bounds
        nx, ny = lr_grid.resolution
        xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
        ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
        ax.contour(xs, ys, lr_grid.values, levels=[0.5], colors="red",
                   linewidths=1.2)
    if oracle is not None:
        _draw_line(ax, float(oracle["normal_x"]), float(oracle["normal_y"]),
                   float(oracle["offset"]))
    ax.set_xticks([])
    ax.set_yticks([])


def _draw_line(ax, nx: float, ny: float, offset: float) -> None:
    """Draw {x : n . x + offset = 0} across the current axes."""
    xmin, xmax = ax.get_xlim()
    ymin, ymax = ax.get_ylim()
    if abs(ny) > abs(nx):
        xs = np.linspace(xmin, xmax, 2)
        ys = -(offset + nx * xs) / ny
    else:
        ys = np.linspace(ymin, ymax, 2)
        xs = -(offset + ny * ys) / nx
    ax.plot(xs, ys, "k--", lw=1.2)
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)


def render_boundary_panels(spec: dict) -> dict:
    """Rows = sweep labels, columns = checkpoint steps; each panel shows
    the data scatter, the shaded MLP surface, the LR boundary contour,
    and optionally the dashed oracle line."""
    inputs = spec["inputs"]
    rows = _csv_list(inputs.get("rows", ""))
    cols = _csv_list(inputs.get("cols", ""))
    if not rows or not cols:
        raise FigureSpecError("boundary-panels needs rows and cols")
    points = labels = None
    if inputs.get("data_csv"):
        points, labels = read_points_csv(_resolve(spec, inputs["data_csv"]))
    missing = []
    panels = {}
    for row in rows:
        for col in cols:
            cell = {}
            for key in ("mlp_grid_pattern", "lr_grid_pattern"):
                if key not in inputs:
                    continue
                path = _resolve(spec, inputs[key].format(
                    row=sanitize_label(row), col=col))
                if not path.exists():
                    missing.append(str(path))
                else:
                    cell[key[:3]] = read_grid(path)
            panels[(row, col)] = cell
    if missing:
        raise FigureSpecError("missing grid file(s): " + ", ".join(missing))
    fig, axes = plt.subplots(len(rows), len(cols),
                             figsize=(2.2 * len(cols), 2.2 * len(rows)),
                             squeeze=False)
    for i, row in enumerate(rows):
        for j, col in enumerate(cols):
            cell = panels[(row, col)]
            _draw_panel(axes[i][j], points, labels, cell.get("mlp"),
                        cell.get("lr_"), spec["oracle"])
            if i == 0:
                axes[i][j].set_title(f"step {col}", fontsize=8)
        axes[i][0].set_ylabel(row, fontsize=8)
    out = _save(fig, spec)
    return {"output": out, "n_panels": len(rows) * len(cols)}


# -- trace curves ---------------------------------------------------------------

def render_trace_curves(spec: dict) -> dict:
    """One mean line per weight label with a +-std band, x = step."""
    inputs = spec["inputs"]
    agg = read_aggregate_csv(_resolve(spec, inputs["aggregate_csv"]))
    population = inputs.get("population", "test")
    metric = inputs.get("metric", "fraction_positive")
    if f"{metric}_mean" not in (agg[0] if agg else {}):
        raise SchemaError(f"unknown metric column {metric}_mean")
    rows = [r for r in agg if r["population"] == population
            and r[f"{metric}_mean"] is not None]
    if not rows:
        raise SchemaError(f"no rows for population {population!r}")
    labels = sorted({r["weight_label"] for r in rows}, key=_label_sort_key)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    series = {}
    for label in labels:
        mine = sorted((r for r in rows if r["weight_label"] == label),
                      key=lambda r: r["step"])
        steps = np.array([r["step"] for r in mine])
        mean = np.array([r[f"{metric}_mean"] for r in mine])
        std = np.array([r[f"{metric}_std"] for r in mine])
        ax.plot(steps, mean, label=label, lw=1.4)
        ax.fill_between(steps, mean - std, mean + std, alpha=0.25, lw=0)
        series[label] = {"steps": steps, "mean": mean,
                         "lower": mean - std, "upper": mean + std}
    ax.set_xscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(f"{metric} ({population})")
    ax.legend(fontsize=7)
    fig.tight_layout()
    out = _save(fig, spec)
    return {"output": out, "series": series}


def _label_sort_key(label: str):
    try:
        return (0, weight_value(label))
    except (ValueError, ZeroDivisionError):
        return (1, label)


# -- weight sweep ----------------------------------------------------------------

def render_weight_sweep(spec: dict) -> dict:
    """Final-checkpoint metric vs weight on a log axis, one series per
    population, mean +- std error bars over seeds."""
    inputs = spec["inputs"]
    agg = read_aggregate_csv(_resolve(spec, inputs["aggregate_csv"]))
    populations = _csv_list(inputs.get("populations", "catdog_test"))
    metric = inputs.get("metric", "fraction_positive")
    final = max(r["step"] for r in agg)
    rows = [r for r in agg if r["step"] == final]
    labels = sorted({r["weight_label"] for r in rows}, key=_label_sort_key)
    try:
        xs = np.array([weight_value(l) for l in labels])
    except ValueError as exc:
        raise SchemaError(f"weight labels are not ratios: {labels}") from exc
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    series = {}
    for pop in populations:
        ys, errs = [], []
        for label in labels:
            match = [r for r in rows if r["weight_label"] == label
                     and r["population"] == pop]
            if not match:
                raise SchemaError(f"no final row for weight {label!r} "
                                  f"population {pop!r}")
            ys.append(match[0][f"{metric}_mean"])
            errs.append(match[0][f"{metric}_std"])
        ax.errorbar(xs, ys, yerr=errs, marker="o", ms=3, lw=1.2, capsize=2,
                    label=pop)
        series[pop] = {"weights": xs, "labels": labels,
                       "mean": np.array(ys), "std": np.array(errs)}
    ax.set_xscale("log")
    ax.set_xlabel("weight (w_pos / w_neg)")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    out = _save(fig, spec)
    return {"output": out, "series": series, "final_step": final}


# -- covariate comparison ----------------------------------------------------------

def render_covariate_compare(spec: dict) -> dict:
    """Two panels (train left, test right): accuracy curves per condition."""
    inputs = spec["inputs"]
    agg = read_aggregate_csv(_resolve(spec, inputs["aggregate_csv"]))
    metric = inputs.get("metric", "accuracy")
    conditions = sorted({r["weight_label"] for r in agg})
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
    series = {}
    for ax, pop in zip(axes, ("train", "test")):
        for cond in conditions:
            mine = sorted((r for r in agg
                           if r["weight_label"] == cond and r["population"] == pop
                           and r[f"{metric}_mean"] is not None),
                          key=lambda r: r["step"])
            if not mine:
                continue
            steps = np.array([r["step"] for r in mine])
            mean = np.array([r[f"{metric}_mean"] for r in mine])
            std = np.array([r[f"{metric}_std"] for r in mine])
            ax.plot(steps, mean, label=cond, lw=1.4)
            ax.fill_between(steps, mean - std, mean + std, alpha=0.25, lw=0)
            series[(cond, pop)] = {"steps": steps, "mean": mean, "std": std}
        ax.set_title(pop)
        ax.set_xscale("log")
        ax.set_xlabel("step")
    axes[0].set_ylabel(metric)
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    out = _save(fig, spec)
    return {"output": out, "series": series}

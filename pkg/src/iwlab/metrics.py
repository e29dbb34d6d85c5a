"""Measurements: prediction fractions, accuracies, decision-boundary
grids, exact 2-D hard-margin separators, and importance-weighted means.

The tie rule is fixed everywhere: a logit of exactly 0 counts as the
negative class, so a zero model has fraction_positive 0 deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .errors import ConfigError, ContractError
from .nets import Model, logits


@dataclass
class SeparatorLine:
    """Oriented line: predict positive where normal . x + offset > 0."""

    normal: np.ndarray  # unit 2-vector
    offset: float
    margin: float
    support_indices: tuple[int, ...] = ()

    def signed_distances(self, points: np.ndarray) -> np.ndarray:
        return points @ self.normal + self.offset


@dataclass
class TraceRecord:
    """One measurement row: a population at a checkpoint of one run."""

    step: int
    weight_label: str
    seed: int
    population: str
    fraction_positive: float
    accuracy: float | None
    loss: float
    boundary_angle: float | None


@dataclass
class BoundaryGrid:
    """Predicted class at each cell center of a 2-D rectangle."""

    bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    resolution: tuple[int, int]  # nx, ny cells
    values: np.ndarray  # (ny, nx) ints in {0, 1}; row 0 is the ymin edge
    step: int = 0


def fraction_positive(model: Model, population: Dataset) -> float:
    """Share of examples with logit > 0 (ties count as negative)."""
    if len(population) == 0:
        raise ContractError("fraction_positive on an empty population")
    return float(np.mean(logits(model, population.features) > 0.0))


def accuracy(model: Model, population: Dataset) -> float:
    if population.labels is None:
        raise ContractError("accuracy on an unlabeled population")
    preds = (logits(model, population.features) > 0.0).astype(np.int64)
    return float(np.mean(preds == population.labels))


def iw_estimate(f_values: np.ndarray, weights: np.ndarray) -> float:
    """Mean of w_i * f(x_i): with w = p/q over samples from q this
    estimates the expectation of f under p without bias."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ContractError("importance weights must be finite and >= 0")
    return float(np.mean(w * np.asarray(f_values, dtype=np.float64)))


def boundary_angle(a: SeparatorLine, b: SeparatorLine) -> float:
    """Angle between two lines' directions in degrees, in [0, 90]."""
    dot = abs(float(np.dot(a.normal, b.normal)))
    return float(np.degrees(np.arccos(np.clip(dot, 0.0, 1.0))))


def linear_separator(model: Model, points: np.ndarray | None = None,
                     labels: np.ndarray | None = None) -> SeparatorLine:
    """The decision line of a single-dense-layer model, unit-normalized.

    Margin is the achieved minimum signed class distance on (points,
    labels) when given (may be negative before convergence), else 0.
    """
    w = model.parameters[0].data.reshape(-1)
    b = float(model.parameters[1].data[0])
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise ContractError("zero weight vector has no decision line")
    line = SeparatorLine(normal=w / norm, offset=b / norm, margin=0.0)
    if points is not None and labels is not None:
        signs = np.where(np.asarray(labels) == 1, 1.0, -1.0)
        line.margin = float(np.min(signs * line.signed_distances(points)))
    return line


# -- exact 2-D hard-margin separator ------------------------------------------

def _hull_indices(points: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Convex hull vertices (monotone chain) of points[idx], as original
    indices. Degenerate inputs (1-2 points, collinear sets) fall through
    naturally."""
    pts = points[idx]
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    sorted_idx = idx[order]
    if len(sorted_idx) <= 2:
        return sorted_idx

    def cross(o, a, b):
        return ((points[a][0] - points[o][0]) * (points[b][1] - points[o][1])
                - (points[a][1] - points[o][1]) * (points[b][0] - points[o][0]))

    def half(seq):
        out = []
        for i in seq:
            while len(out) >= 2 and cross(out[-2], out[-1], i) <= 0:
                out.pop()
            out.append(i)
        return out

    lower = half(sorted_idx)
    upper = half(sorted_idx[::-1])
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def max_margin_2d(points: np.ndarray, labels: np.ndarray,
                  feasible_eps: float = 1e-12) -> SeparatorLine | None:
    """The exact hard-margin separating line, or None when infeasible.

    Candidate support sets are enumerated: opposite-class pairs give
    perpendicular-bisector candidates, and (two same-class, one opposite)
    triples give parallel-tangent candidates. Support points of the
    optimal separator are convex-hull vertices of their class, and the
    two same-class supports lie on a common supporting line of the hull,
    so the enumeration may restrict itself to hull vertices without losing
    exactness; that keeps 1024-point instances fast. Among candidates, the
    feasible one with the largest achieved (minimum signed) distance wins.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ContractError(f"max_margin_2d needs (n,2) points, got {points.shape}")
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ContractError("max_margin_2d needs at least one point per class")
    signs = np.where(labels == 1, 1.0, -1.0)
    hp = _hull_indices(points, pos)
    hn = _hull_indices(points, neg)

    normals: list[np.ndarray] = []
    offsets: list[float] = []
    supports: list[tuple[int, ...]] = []

    # Pair candidates: bisector of one positive and one negative point.
    for i in hp:
        for j in hn:
            d = points[i] - points[j]
            norm = np.linalg.norm(d)
            if norm < 1e-300:
                continue
            n = d / norm
            mid = 0.5 * (points[i] + points[j])
            normals.append(n)
            offsets.append(-float(n @ mid))
            supports.append((int(i), int(j)))

    # Triple candidates: separator parallel to a same-class support pair,
    # halfway to the opposite point.
    for same_hull, other_hull, same_positive in ((hp, hn, True), (hn, hp, False)):
        for a_i in range(len(same_hull)):
            for b_i in range(a_i + 1, len(same_hull)):
                a, b = same_hull[a_i], same_hull[b_i]
                e = points[b] - points[a]
                norm = np.linalg.norm(e)
                if norm < 1e-300:
                    continue
                perp = np.array([-e[1], e[0]]) / norm
                for k in other_hull:
                    h = float(perp @ (points[k] - points[a]))
                    if abs(h) < 1e-300:
                        continue
                    toward_other = perp if h > 0 else -perp
                    line_point = points[a] + toward_other * (abs(h) / 2.0)
                    n = toward_other if same_positive is False else -toward_other
                    normals.append(n)
                    offsets.append(-float(n @ line_point))
                    supports.append((int(a), int(b), int(k)))

    if not normals:
        return None
    nmat = np.asarray(normals)
    offs = np.asarray(offsets)
    margins = np.empty(len(nmat))
    chunk = max(1, 2 ** 22 // max(1, len(points)))  # cap the margin matrix size
    for lo in range(0, len(nmat), chunk):
        hi = lo + chunk
        margins[lo:hi] = np.min(
            signs[None, :] * (nmat[lo:hi] @ points.T + offs[lo:hi, None]), axis=1)
    best = int(np.argmax(margins))
    if margins[best] <= feasible_eps:
        return None
    return SeparatorLine(normal=nmat[best], offset=float(offs[best]),
                         margin=float(margins[best]),
                         support_indices=supports[best])


# -- decision-surface grids ----------------------------------------------------

def eval_grid(model: Model, bounds: tuple[float, float, float, float],
              resolution: tuple[int, int], step: int = 0) -> BoundaryGrid:
    """Predicted class at each cell center of an nx-by-ny grid."""
    xmin, xmax, ymin, ymax = bounds
    nx, ny = resolution
    if not (xmax > xmin and ymax > ymin):
        raise ConfigError(f"degenerate grid bounds {bounds}")
    if nx < 2 or ny < 2:
        raise ConfigError(f"grid resolution must be >= 2 per axis, got {resolution}")
    xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
    ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    gx, gy = np.meshgrid(xs, ys)
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    values = (logits(model, cells) > 0.0).astype(np.int64).reshape(ny, nx)
    return BoundaryGrid(bounds=tuple(float(v) for v in bounds),
                        resolution=(nx, ny), values=values, step=step)


def grid_to_text(grid: BoundaryGrid) -> str:
    """Dense text serialization: header lines then one 0/1 row per y-row."""
    lines = ["# boundary-grid v1",
             "# bounds: " + " ".join(repr(v) for v in grid.bounds),
             f"# resolution: {grid.resolution[0]} {grid.resolution[1]}",
             f"# step: {grid.step}"]
    for row in grid.values:
        lines.append("".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def grid_from_text(text: str) -> BoundaryGrid:
    lines = text.strip().splitlines()
    if not lines or lines[0] != "# boundary-grid v1":
        raise ConfigError("not a boundary-grid v1 file")
    bounds = tuple(float(v) for v in lines[1].split(":", 1)[1].split())
    nx, ny = (int(v) for v in lines[2].split(":", 1)[1].split())
    step = int(lines[3].split(":", 1)[1])
    values = np.array([[int(ch) for ch in row] for row in lines[4:4 + ny]],
                      dtype=np.int64)
    return BoundaryGrid(bounds=bounds, resolution=(nx, ny), values=values, step=step)

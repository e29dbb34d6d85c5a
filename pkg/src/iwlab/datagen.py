"""Deterministic synthetic dataset generators.

Every generator is a pure function of (spec, seed) and stamps enough
provenance on its Dataset to regenerate it bitwise. 2-D families:
a truncated-Gaussian linearly separable pair and two interleaving moons.
Image families: uniform random-noise images and a mode-template image
corpus in the 10-class batch layout, used when the real image archive is
not on disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rngs import stream


@dataclass
class Dataset:
    """Features + binary labels + per-example weights + split tag.

    `labels` is None for unlabeled populations (noise images) that are
    only ever measured for prediction fractions.
    """

    features: np.ndarray
    labels: np.ndarray | None
    weights: np.ndarray
    split: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.features)
        if self.labels is not None:
            if len(self.labels) != n:
                raise ConfigError("features and labels lengths disagree")
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise ConfigError("labels must be in {0, 1}")
        if len(self.weights) != n:
            raise ConfigError("features and weights lengths disagree")
        if not np.all(self.weights > 0):
            raise ConfigError("weights must be positive")

    def __len__(self) -> int:
        return len(self.features)

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 1)), int(np.sum(self.labels == 0))


def _unit_weights(n: int) -> np.ndarray:
    return np.ones(n)


@dataclass(frozen=True)
class SeparablePairSpec:
    n_per_class: int = 512
    truncation_radius: float = 2.0
    rotation_angle: float = np.pi / 4
    translation: tuple[float, float] = (6.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if np.hypot(*self.translation) <= 2 * self.truncation_radius:
            raise ConfigError(
                "translation magnitude must exceed 2*truncation_radius "
                "to guarantee a positive-margin separable pair")


@dataclass(frozen=True)
class MoonsSpec:
    n_total: int = 1024
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_total % 2:
            raise ConfigError("n_total must be even (classes are equal halves)")


def _truncated_gaussian(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """Standard bivariate normals rejection-sampled to ||x|| <= radius."""
    out = np.empty((0, 2))
    while len(out) < n:
        draw = rng.standard_normal((2 * n, 2))
        keep = draw[np.hypot(draw[:, 0], draw[:, 1]) <= radius]
        out = np.vstack([out, keep])
    return out[:n]


def gen_separable(spec: SeparablePairSpec, split: str = "train") -> Dataset:
    """Positives: truncated standard normals in a disc; negatives: the same
    points rotated by rotation_angle and shifted by translation. The spec
    invariant (translation > 2*radius) makes the two discs disjoint, so the
    set is linearly separable with margin at least (|t| - 2r)/2."""
    rng = stream(spec.seed, f"separable-{split}")
    pos = _truncated_gaussian(rng, spec.n_per_class, spec.truncation_radius)
    c, s = np.cos(spec.rotation_angle), np.sin(spec.rotation_angle)
    rot = np.array([[c, -s], [s, c]])
    neg = pos @ rot.T + np.asarray(spec.translation)
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(spec.n_per_class, dtype=np.int64),
                        np.zeros(spec.n_per_class, dtype=np.int64)])
    return Dataset(x, y, _unit_weights(len(x)), split,
                   {"generator": "separable", "spec": spec, "split": split})


def gen_moons(spec: MoonsSpec, split: str = "train") -> Dataset:
    """Two interleaving unit half-circles with isotropic Gaussian noise.

    Class 0 sits on the upper arc (cos t, sin t); class 1 on the reflected
    arc (1 - cos t, 0.5 - sin t). Each split draws independent noise.
    """
    half = spec.n_total // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower])
    if spec.noise_sigma > 0:
        rng = stream(spec.seed, f"moons-{split}")
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    return Dataset(x, y, _unit_weights(len(x)), split,
                   {"generator": "moons", "spec": spec, "split": split})


def subsample_ratio(ds: Dataset, r_pos: int, r_neg: int, seed: int = 0) -> Dataset:
    """Impose a pos:neg ratio by keeping the full majority class and a
    uniform minority subset of size floor(majority * min(r) / max(r)).
    Kept rows stay in their original order."""
    if r_pos <= 0 or r_neg <= 0:
        raise ConfigError(f"ratio components must be positive, got {r_pos}:{r_neg}")
    if r_pos == r_neg:
        return Dataset(ds.features.copy(), ds.labels.copy(), ds.weights.copy(),
                       ds.split, {**ds.provenance, "subsample": (r_pos, r_neg, seed)})
    pos_idx = np.flatnonzero(ds.labels == 1)
    neg_idx = np.flatnonzero(ds.labels == 0)
    majority, minority = (pos_idx, neg_idx) if r_pos > r_neg else (neg_idx, pos_idx)
    want = int(len(majority) * min(r_pos, r_neg) // max(r_pos, r_neg))
    if want < 1 or want > len(minority):
        raise ConfigError(
            f"cannot subsample to {r_pos}:{r_neg}: need {want} minority examples, "
            f"have {len(minority)}")
    rng = stream(seed, "subsample")
    chosen = rng.choice(minority, size=want, replace=False)
    keep = np.sort(np.concatenate([majority, chosen]))
    return Dataset(ds.features[keep], ds.labels[keep], ds.weights[keep], ds.split,
                   {**ds.provenance, "subsample": (r_pos, r_neg, seed)})


def gen_noise_images(n: int = 1000, shape: tuple[int, int, int] = (3, 32, 32),
                     seed: int = 0) -> Dataset:
    """Uniform random byte images scaled to [0, 1]; unlabeled population."""
    rng = stream(seed, "noise-images")
    pixels = rng.integers(0, 256, size=(n, *shape)).astype(np.float64) / 255.0
    return Dataset(pixels, None, _unit_weights(n), "test",
                   {"generator": "noise-images", "n": n, "shape": shape, "seed": seed})


def downsample_images(x: np.ndarray, factor: int = 2) -> np.ndarray:
    """Center-crop to a multiple of `factor`, then box-average downsample."""
    n, c, h, w = x.shape
    hc, wc = (h // factor) * factor, (w // factor) * factor
    top, left = (h - hc) // 2, (w - wc) // 2
    x = x[:, :, top:top + hc, left:left + wc]
    x = x.reshape(n, c, hc // factor, factor, wc // factor, factor)
    return x.mean(axis=(3, 5))


def dataset_to_csv(ds: Dataset, path) -> None:
    """2-D dataset export, schema v1: header `x1,x2,label`, one row per
    example, shortest-roundtrip float formatting."""
    if ds.features.ndim != 2 or ds.features.shape[1] != 2:
        raise ConfigError("dataset_to_csv handles 2-D feature sets only")
    with open(path, "w", newline="") as fh:
        fh.write("x1,x2,label\n")
        for (x1, x2), y in zip(ds.features, ds.labels):
            fh.write(f"{float(x1)!r},{float(x2)!r},{int(y)}\n")


def dataset_from_csv(path, split: str = "train") -> Dataset:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x1,x2,label":
            raise ConfigError(f"{path}: expected header x1,x2,label, got {header!r}")
        for line in fh:
            a, b, c = line.strip().split(",")
            rows.append((float(a), float(b), int(c)))
    x = np.array([(a, b) for a, b, _ in rows])
    y = np.array([c for _, _, c in rows], dtype=np.int64)
    return Dataset(x, y, _unit_weights(len(x)), split, {"generator": "csv", "path": str(path)})


# -- mode-template image corpus ----------------------------------------------

def _smooth_field(rng: np.random.Generator, hw: int = 32, coarse: int = 4) -> np.ndarray:
    """A smooth random (3,hw,hw) field: coarse uniform grid, bilinearly
    upsampled. Low-frequency structure survives box downsampling."""
    grid = rng.random((3, coarse, coarse))
    xs = np.linspace(0, coarse - 1, hw)
    i0 = np.clip(np.floor(xs).astype(int), 0, coarse - 2)
    frac = xs - i0
    rows = (grid[:, i0, :] * (1 - frac)[None, :, None]
            + grid[:, i0 + 1, :] * frac[None, :, None])
    field = (rows[:, :, i0] * (1 - frac)[None, None, :]
             + rows[:, :, i0 + 1] * frac[None, None, :])
    return field


def synth_image_classes(per_class: int, seed: int = 0, split: str = "train",
                        shared_modes: bool = True, modes_per_class: int = 4,
                        template_weight: float = 0.55,
                        pixel_sigma: float = 0.12) -> tuple[np.ndarray, np.ndarray]:
    """Class-structured stand-in images in the 10-class 32x32 layout.

    Each class owns `modes_per_class` smooth templates; an image is its
    template blended toward mid-gray plus pixel noise, quantized to bytes.
    With `shared_modes` the train and test splits draw from one template
    pool (splits generalize); without it each split gets a disjoint pool,
    a deliberately heterogeneous corpus with no transferable signal.

    Returns (pixels uint8 (N,3,32,32), labels (N,)) ordered by class.
    """
    pool = "shared" if shared_modes else split
    images = []
    labels = []
    for cls in range(10):
        trng = stream(seed, f"synth-templates-{pool}-{cls}")
        templates = [_smooth_field(trng) for _ in range(modes_per_class)]
        irng = stream(seed, f"synth-images-{split}-{cls}")
        for _ in range(per_class):
            t = templates[int(irng.integers(modes_per_class))]
            img = template_weight * t + (1 - template_weight) * 0.5
            img = img + irng.normal(0.0, pixel_sigma, size=img.shape)
            images.append(np.clip(np.round(img * 255), 0, 255).astype(np.uint8))
            labels.append(cls)
    return np.stack(images), np.asarray(labels, dtype=np.int64)

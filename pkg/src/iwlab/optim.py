"""Weighted binary cross-entropy risk, SGD with momentum and L2 decay,
and the data-dependent learning-rate rule lr = 0.01 / sigma_max(X).

Class weights multiply per-example losses raw (no normalization): scaling
both weights by c scales the loss and every gradient by exactly c, which
with a fixed learning rate changes the trajectory. weights_from_ratio is
the only place any normalization happens, and it only rescales the pair
so the smaller weight is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .grad import Tape, Tensor
from .nets import Model


@dataclass(frozen=True)
class ClassWeights:
    w_pos: float
    w_neg: float

    def __post_init__(self):
        for v in (self.w_pos, self.w_neg):
            if not (np.isfinite(v) and v > 0):
                raise ContractError(f"class weights must be positive finite, got {self}")

    def per_example(self, labels: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(labels) == 1, self.w_pos, self.w_neg)

    def label(self) -> str:
        def fmt(v: float) -> str:
            return str(int(v)) if float(v).is_integer() else repr(float(v))
        return f"{fmt(self.w_pos)}:{fmt(self.w_neg)}"


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 8
    momentum: float = 0.0
    l2_lambda: float = 0.0
    dropout_rate: float = 0.0
    step_budget: int = 10000
    checkpoint_schedule: list[int] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must be in [0, 1)")
        if self.l2_lambda < 0:
            raise ContractError("l2_lambda must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must be in [0, 1)")
        sched = list(self.checkpoint_schedule)
        if any(a >= b for a, b in zip(sched, sched[1:])):
            raise ContractError("checkpoint_schedule must be strictly increasing")


class OptState:
    """Per-parameter momentum velocities, zero-initialized."""

    def __init__(self, model: Model):
        self.velocity = [np.zeros_like(p.data) for p in model.parameters]


def weighted_bce(tape: Tape, logits: Tensor, labels: np.ndarray,
                 weights: ClassWeights,
                 sample_weights: np.ndarray | None = None) -> Tensor:
    """Mean over the batch of w_y_i * BCE(sigmoid(z_i), y_i).

    `sample_weights` (per-example importance weights carried by a dataset)
    multiply the class weights when given, so label-shift and covariate-
    shift corrections flow through the same loss.
    """
    w = weights.per_example(labels).astype(np.float64)
    if sample_weights is not None:
        w = w * np.asarray(sample_weights, dtype=np.float64)
    return tape.weighted_bce(logits, labels, w)


def weights_from_ratio(r_pos: int, r_neg: int) -> ClassWeights:
    """Minority-favoring inverse weights for a pos:neg sampling ratio,
    normalized so the smaller weight is 1 (10:1 data -> weights (1, 10))."""
    if r_pos <= 0 or r_neg <= 0:
        raise ContractError(f"ratio components must be positive, got {r_pos}:{r_neg}")
    raw_pos, raw_neg = 1.0 / r_pos, 1.0 / r_neg
    low = min(raw_pos, raw_neg)
    return ClassWeights(raw_pos / low, raw_neg / low)


def lr_from_data(x: np.ndarray, base: float = 0.01, tol: float = 1e-8,
                 max_iter: int = 100000) -> float:
    """base / sigma_max(X), the largest singular value found by power
    iteration on X^T X to relative tolerance `tol`."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ContractError("lr_from_data requires a non-empty matrix")
    gram = x.T @ x
    d = gram.shape[0]
    v = np.ones(d) / np.sqrt(d)
    lam = 0.0
    for _ in range(max_iter):
        av = gram @ v
        norm = np.linalg.norm(av)
        if norm == 0.0:
            raise ContractError("lr_from_data: sigma_max(X) is 0 for all-zero X")
        v = av / norm
        lam_new = float(v @ gram @ v)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    sigma_max = np.sqrt(lam)
    if sigma_max == 0.0:
        raise ContractError("lr_from_data: sigma_max(X) is 0 for all-zero X")
    return base / sigma_max


def sgd_step(model: Model, state: OptState, config: TrainConfig) -> None:
    """v <- mu*v + (g + lambda*theta); theta <- theta - eta*v.

    L2 decay applies to weights and biases alike; gradients must already
    be populated on every parameter.
    """
    mu, lam, eta = config.momentum, config.l2_lambda, config.learning_rate
    for p, v in zip(model.parameters, state.velocity):
        if p.grad is None:
            raise ContractError("sgd_step: parameter has no gradient")
        g = p.grad + lam * p.data if lam else p.grad
        v *= mu
        v += g
        p.data -= eta * v

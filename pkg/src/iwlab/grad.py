"""Reverse-mode differentiation on a flat operation tape.

Every computation runs through a Tape: forward calls append operation
records, `Tape.backward` replays them in reverse and accumulates adjoints
into the `.grad` slot of every tensor it reaches. All data is float64.
Any NaN/Inf produced by a forward or backward rule aborts with a
NumericsError naming the offending op; silent divergence is never allowed
to leak into long training traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, NumericsError


class Tensor:
    """An n-d float64 array with an optional same-shape gradient."""

    __slots__ = ("data", "grad", "tid", "is_leaf")

    def __init__(self, data, is_leaf: bool = True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tid: int = -1
        self.is_leaf = is_leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, leaf={self.is_leaf}, tid={self.tid})"


@dataclass
class TapeRecord:
    kind: str
    input_ids: tuple[int, ...]
    output_id: int
    inputs: tuple[Tensor, ...]
    output: Tensor
    saved: dict = field(default_factory=dict)


def _check_finite(kind: str, arr: np.ndarray, phase: str = "forward") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite value in {phase} of op '{kind}'")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N,C,Hp,Wp) padded input -> (N*H'*W', C*kh*kw) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def _col2im(gcols: np.ndarray, n: int, c: int, hp: int, wp: int, kh: int, kw: int) -> np.ndarray:
    """Scatter-add patch gradients back onto the padded input."""
    ho, wo = hp - kh + 1, wp - kw + 1
    g = gcols.reshape(n, ho, wo, c, kh, kw)
    gx = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + ho, j:j + wo] += g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gx


class Tape:
    """Ordered op records; inputs of record k always precede it."""

    def __init__(self, grad_enabled: bool = True):
        self.records: list[TapeRecord] = []
        self.grad_enabled = grad_enabled
        self._next_id = 0
        self._watched: list[Tensor] = []

    # -- graph bookkeeping ------------------------------------------------

    def watch(self, t: Tensor) -> Tensor:
        """Register an existing tensor as a leaf of this tape."""
        t.tid = self._take_id()
        t.is_leaf = True
        self._watched.append(t)
        return t

    def leaf(self, data) -> Tensor:
        return self.watch(Tensor(data))

    def _take_id(self) -> int:
        tid = self._next_id
        self._next_id += 1
        return tid

    def _record(self, kind: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
                saved: dict | None = None) -> Tensor:
        _check_finite(kind, out_data)
        out = Tensor(out_data, is_leaf=False)
        out.tid = self._take_id()
        if self.grad_enabled:
            self.records.append(TapeRecord(
                kind=kind,
                input_ids=tuple(t.tid for t in inputs),
                output_id=out.tid,
                inputs=inputs,
                output=out,
                saved=saved or {},
            ))
        return out

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
        return self._record("matmul", (a, b), a.data @ b.data)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data + b.data
        except ValueError as exc:
            raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}") from exc
        return self._record("add", (a, b), out)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data * b.data
        except ValueError as exc:
            raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}") from exc
        return self._record("mul", (a, b), out)

    def scale(self, a: Tensor, c: float) -> Tensor:
        return self._record("scale", (a,), a.data * float(c), {"c": float(c)})

    def relu(self, a: Tensor) -> Tensor:
        return self._record("relu", (a,), np.maximum(a.data, 0.0))

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        return self._record("reshape", (a,), a.data.reshape(shape),
                            {"old_shape": a.shape})

    def flatten(self, a: Tensor) -> Tensor:
        """(N, ...) -> (N, prod(...))."""
        if a.data.ndim < 2:
            raise DimensionError(f"flatten needs a batched input, got shape {a.shape}")
        n = a.shape[0]
        return self.reshape(a, (n, int(np.prod(a.shape[1:]))))

    def dropout(self, a: Tensor, mask: np.ndarray) -> Tensor:
        """Multiply by a fixed (non-differentiated) mask array."""
        if mask.shape != a.shape:
            raise DimensionError(f"dropout mask shape {mask.shape} != input {a.shape}")
        return self._record("dropout", (a,), a.data * mask, {"mask": mask})

    def conv2d(self, x: Tensor, kernels: Tensor, bias: Tensor,
               padding: str = "same") -> Tensor:
        """3x3 stride-1 cross-correlation with per-filter bias.

        Accepts (C,H,W) single images or (N,C,H,W) batches; padding is
        "same" (pad 1, output HxW) or "valid" (no pad, output H-2 x W-2).
        """
        squeeze = x.data.ndim == 3
        xd = x.data[None] if squeeze else x.data
        if xd.ndim != 4:
            raise DimensionError(f"conv2d input must be (C,H,W) or (N,C,H,W), got {x.shape}")
        k = kernels.data
        if k.ndim != 4 or k.shape[2:] != (3, 3):
            raise DimensionError(f"conv2d kernels must be (F,C,3,3), got {kernels.shape}")
        if k.shape[1] != xd.shape[1]:
            raise DimensionError(
                f"conv2d channel mismatch: input has {xd.shape[1]} channels, "
                f"kernels expect {k.shape[1]}")
        if padding not in ("same", "valid"):
            raise ContractError(f"unknown padding mode: {padding!r}")
        pad = 1 if padding == "same" else 0
        n, c, h, w = xd.shape
        if pad:
            xp = np.zeros((n, c, h + 2, w + 2))
            xp[:, :, 1:-1, 1:-1] = xd
        else:
            xp = xd
        cols = _im2col(xp, 3, 3)
        f = k.shape[0]
        out = cols @ k.reshape(f, -1).T + bias.data
        ho, wo = xp.shape[2] - 2, xp.shape[3] - 2
        out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
        saved = {"cols": cols, "pad": pad, "xshape": xd.shape, "squeeze": squeeze}
        out_data = out[0] if squeeze else out
        return self._record("conv2d", (x, kernels, bias), out_data, saved)

    def maxpool2(self, x: Tensor) -> Tensor:
        """Max over disjoint 2x2 windows; ties go to the first element in
        row-major window order."""
        squeeze = x.data.ndim == 3
        xd = x.data[None] if squeeze else x.data
        if xd.ndim != 4:
            raise DimensionError(f"maxpool2 input must be (C,H,W) or (N,C,H,W), got {x.shape}")
        n, c, h, w = xd.shape
        if h % 2 or w % 2:
            raise DimensionError(f"maxpool2 needs even spatial extents, got {h}x{w}")
        win = xd.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, h // 2, w // 2, 4)
        arg = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        saved = {"arg": arg, "xshape": xd.shape, "squeeze": squeeze}
        return self._record("maxpool2", (x,), out[0] if squeeze else out, saved)

    def mean(self, a: Tensor) -> Tensor:
        return self._record("mean", (a,), np.asarray(a.data.mean()),
                            {"size": a.data.size, "shape": a.shape})

    def weighted_bce(self, logits: Tensor, labels: np.ndarray,
                     weights: np.ndarray) -> Tensor:
        """Mean over the batch of w_i * BCE(sigmoid(z_i), y_i).

        Labels and weights are constants; gradients flow to logits only.
        Computed from logits directly (log1p(exp) form) for stability.
        """
        z = logits.data
        if z.ndim != 1:
            raise DimensionError(f"weighted_bce expects 1-D logits, got shape {logits.shape}")
        y = np.asarray(labels, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        if y.shape != z.shape or w.shape != z.shape:
            raise DimensionError(
                f"weighted_bce length mismatch: logits {z.shape}, labels {y.shape}, "
                f"weights {w.shape}")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ContractError("weighted_bce labels must be in {0, 1}")
        per_example = np.logaddexp(0.0, z) - y * z
        out = np.asarray(np.mean(w * per_example))
        return self._record("weighted_bce", (logits,), out, {"y": y, "w": w})

    # -- reverse pass -------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Reverse-accumulate d(loss)/d(tensor) into `.grad` slots.

        Repeated calls accumulate; call `zero_grads` to reset.
        """
        if not self.grad_enabled:
            raise ContractError("backward on a tape with grad disabled")
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        adjoint: dict[int, np.ndarray] = {loss.tid: np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {loss.tid: loss}
        for rec in reversed(self.records):
            g = adjoint.pop(rec.output_id, None)
            if g is None:
                continue
            grads = _BACKWARD[rec.kind](rec, g)
            for t, gin in zip(rec.inputs, grads):
                if gin is None:
                    continue
                _check_finite(rec.kind, gin, phase="backward")
                if t.tid in adjoint:
                    adjoint[t.tid] = adjoint[t.tid] + gin
                else:
                    adjoint[t.tid] = gin
                touched[t.tid] = t
        for tid, t in touched.items():
            g = adjoint.get(tid)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g

    def zero_grads(self) -> None:
        for t in self._watched:
            t.zero_grad()
        for rec in self.records:
            rec.output.zero_grad()


# -- backward rules, dispatched by op kind ----------------------------------

def _bwd_matmul(rec: TapeRecord, g: np.ndarray):
    a, b = rec.inputs
    return g @ b.data.T, a.data.T @ g


def _bwd_add(rec: TapeRecord, g: np.ndarray):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bwd_mul(rec: TapeRecord, g: np.ndarray):
    a, b = rec.inputs
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def _bwd_scale(rec: TapeRecord, g: np.ndarray):
    return (g * rec.saved["c"],)


def _bwd_relu(rec: TapeRecord, g: np.ndarray):
    return (g * (rec.inputs[0].data > 0.0),)


def _bwd_reshape(rec: TapeRecord, g: np.ndarray):
    return (g.reshape(rec.saved["old_shape"]),)


def _bwd_dropout(rec: TapeRecord, g: np.ndarray):
    return (g * rec.saved["mask"],)


def _bwd_conv2d(rec: TapeRecord, g: np.ndarray):
    x, kernels, bias = rec.inputs
    cols = rec.saved["cols"]
    pad = rec.saved["pad"]
    n, c, h, w = rec.saved["xshape"]
    if rec.saved["squeeze"]:
        g = g[None]
    f = kernels.shape[0]
    gmat = g.transpose(0, 2, 3, 1).reshape(-1, f)
    gk = (gmat.T @ cols).reshape(kernels.shape)
    gb = gmat.sum(axis=0)
    gcols = gmat @ kernels.data.reshape(f, -1)
    gxp = _col2im(gcols, n, c, h + 2 * pad, w + 2 * pad, 3, 3)
    gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
    if rec.saved["squeeze"]:
        gx = gx[0]
    return gx, gk, gb


def _bwd_maxpool2(rec: TapeRecord, g: np.ndarray):
    arg = rec.saved["arg"]
    n, c, h, w = rec.saved["xshape"]
    if rec.saved["squeeze"]:
        g = g[None]
    gwin = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
    gx = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    gx = gx.reshape(n, c, h, w)
    if rec.saved["squeeze"]:
        gx = gx[0]
    return (gx,)


def _bwd_mean(rec: TapeRecord, g: np.ndarray):
    return (np.full(rec.saved["shape"], float(g) / rec.saved["size"]),)


def _bwd_weighted_bce(rec: TapeRecord, g: np.ndarray):
    z = rec.inputs[0].data
    y, w = rec.saved["y"], rec.saved["w"]
    return (float(g) * w * (_sigmoid(z) - y) / z.size,)


_BACKWARD = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "mul": _bwd_mul,
    "scale": _bwd_scale,
    "relu": _bwd_relu,
    "reshape": _bwd_reshape,
    "dropout": _bwd_dropout,
    "conv2d": _bwd_conv2d,
    "maxpool2": _bwd_maxpool2,
    "mean": _bwd_mean,
    "weighted_bce": _bwd_weighted_bce,
}

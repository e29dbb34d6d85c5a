"""Model construction: logistic regression, the 64-unit MLP, and CNNs.

A ModelSpec is an ordered layer list validated at build time; building a
Model from (spec, seed) is a pure function, so parameters regenerate
bitwise. Initialization is Kaiming-uniform fan-in scaling with zero
biases. Dropout is inverted (kept units scaled by 1/(1-rate) at train
time), so eval-mode forwards need no rescale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .grad import Tape, Tensor
from .rngs import stream


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class Conv3x3:
    in_ch: int
    out_ch: int


@dataclass(frozen=True)
class MaxPool2:
    pass


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Layer stack plus input shape; binary tasks end in a single logit."""

    input_shape: tuple[int, ...]
    layers: tuple
    padding: str = "same"
    name: str = "model"

    def validate(self) -> None:
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if len(shape) != 1 or shape[0] != layer.in_dim:
                    raise ConfigError(
                        f"layer {i} dense({layer.in_dim},{layer.out_dim}) cannot follow "
                        f"shape {shape}")
                shape = (layer.out_dim,)
            elif isinstance(layer, Conv3x3):
                if len(shape) != 3 or shape[0] != layer.in_ch:
                    raise ConfigError(
                        f"layer {i} conv3x3({layer.in_ch},{layer.out_ch}) cannot follow "
                        f"shape {shape}")
                c, h, w = shape
                if self.padding == "same":
                    shape = (layer.out_ch, h, w)
                else:
                    shape = (layer.out_ch, h - 2, w - 2)
            elif isinstance(layer, MaxPool2):
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise ConfigError(f"layer {i} maxpool2 cannot follow shape {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dropout):
                if not 0.0 <= layer.rate < 1.0:
                    raise ConfigError(f"layer {i} dropout rate {layer.rate} not in [0, 1)")
            elif isinstance(layer, Relu):
                pass
            else:
                raise ConfigError(f"unknown layer type at index {i}: {layer!r}")
        if shape != (1,):
            raise ConfigError(f"spec must end in a single logit, final shape is {shape}")

    def param_count(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                total += layer.in_dim * layer.out_dim + layer.out_dim
            elif isinstance(layer, Conv3x3):
                total += layer.out_ch * layer.in_ch * 9 + layer.out_ch
        return total


@dataclass
class Model:
    spec: ModelSpec
    parameters: list[Tensor]
    init_seed: int

    def param_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters]


def build_model(spec: ModelSpec, init_seed: int) -> Model:
    """Instantiate parameters for `spec`; pure in (spec, init_seed)."""
    spec.validate()
    rng = np.random.default_rng(init_seed)
    params: list[Tensor] = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            bound = np.sqrt(6.0 / layer.in_dim)
            w = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
            params.append(Tensor(w))
            params.append(Tensor(np.zeros(layer.out_dim)))
        elif isinstance(layer, Conv3x3):
            bound = np.sqrt(6.0 / (layer.in_ch * 9))
            k = rng.uniform(-bound, bound, size=(layer.out_ch, layer.in_ch, 3, 3))
            params.append(Tensor(k))
            params.append(Tensor(np.zeros(layer.out_ch)))
    model = Model(spec=spec, parameters=params, init_seed=init_seed)
    assert sum(p.data.size for p in params) == spec.param_count()
    return model


def forward(model: Model, batch: np.ndarray, mode: str = "eval",
            mask_seed: int = 0, tape: Tape | None = None) -> tuple[Tensor, Tape]:
    """Run the layer stack on a batch; returns (logits of shape (N,), tape).

    Train mode samples fresh dropout masks from `mask_seed`; eval mode
    applies no masks and ignores `mask_seed`.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"forward mode must be train or eval, got {mode!r}")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != tuple(model.spec.input_shape):
        raise DimensionError(
            f"batch shape {batch.shape} does not match spec input "
            f"{model.spec.input_shape}")
    if tape is None:
        tape = Tape(grad_enabled=(mode == "train"))
    for p in model.parameters:
        tape.watch(p)
    mask_rng = stream(mask_seed, "dropout") if mode == "train" else None

    x = tape.leaf(batch)
    it = iter(model.parameters)
    for layer in model.spec.layers:
        if isinstance(layer, Dense):
            w, b = next(it), next(it)
            x = tape.add(tape.matmul(x, w), b)
        elif isinstance(layer, Conv3x3):
            k, b = next(it), next(it)
            x = tape.conv2d(x, k, b, padding=model.spec.padding)
        elif isinstance(layer, MaxPool2):
            x = tape.maxpool2(x)
        elif isinstance(layer, Relu):
            x = tape.relu(x)
        elif isinstance(layer, Flatten):
            x = tape.flatten(x)
        elif isinstance(layer, Dropout):
            if mode == "train" and layer.rate > 0.0:
                keep = 1.0 - layer.rate
                mask = (mask_rng.random(x.shape) >= layer.rate) / keep
                x = tape.dropout(x, mask)
    return tape.reshape(x, (batch.shape[0],)), tape


def logits(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits over a full dataset, computed in chunks."""
    out = np.empty(len(x))
    for i in range(0, len(x), batch_size):
        t, _ = forward(model, x[i:i + batch_size], mode="eval")
        out[i:i + len(t.data)] = t.data
    return out


# -- the three model families ------------------------------------------------

def build_lr(input_dim: int = 2, init_seed: int = 0) -> Model:
    spec = ModelSpec(input_shape=(input_dim,),
                     layers=(Dense(input_dim, 1),),
                     name="lr")
    return build_model(spec, init_seed)


def build_mlp64(input_dim: int = 2, dropout_rate: float | None = None,
                init_seed: int = 0) -> Model:
    layers: list = [Dense(input_dim, 64), Relu()]
    if dropout_rate:
        layers.append(Dropout(dropout_rate))
    layers.append(Dense(64, 1))
    spec = ModelSpec(input_shape=(input_dim,), layers=tuple(layers), name="mlp64")
    return build_model(spec, init_seed)


def cnn_spec(input_hw: int = 32, conv_filters: tuple[int, int] = (64, 128),
             dense_units: tuple[int, int] = (512, 128),
             dropout: bool = False, name: str = "cnn") -> ModelSpec:
    """Five-conv/two-pool stack: two f1-filter convs, pool, three f2-filter
    convs, pool, then two hidden dense layers and a single-logit head.

    With same-padding the flatten size is f2 * (hw/4)^2; dropout (rate 0.5)
    sits before each hidden dense layer.
    """
    f1, f2 = conv_filters
    d1, d2 = dense_units
    flat = f2 * (input_hw // 4) ** 2
    layers: list = [
        Conv3x3(3, f1), Relu(),
        Conv3x3(f1, f1), Relu(),
        MaxPool2(),
        Conv3x3(f1, f2), Relu(),
        Conv3x3(f2, f2), Relu(),
        Conv3x3(f2, f2), Relu(),
        MaxPool2(),
        Flatten(),
    ]
    if dropout:
        layers.append(Dropout(0.5))
    layers += [Dense(flat, d1), Relu()]
    if dropout:
        layers.append(Dropout(0.5))
    layers += [Dense(d1, d2), Relu(), Dense(d2, 1)]
    return ModelSpec(input_shape=(3, input_hw, input_hw), layers=tuple(layers),
                     padding="same", name=name)


def build_paper_cnn(dropout: bool = False, init_seed: int = 0) -> Model:
    """Full-scale CNN on 3x32x32 inputs (flatten size 128*8*8 = 8192)."""
    return build_model(cnn_spec(32, (64, 128), (512, 128), dropout, "paper-cnn"),
                       init_seed)


def build_mini_cnn(dropout: bool = False, init_seed: int = 0,
                   input_hw: int = 16) -> Model:
    """Desk-scale CNN: half-width filters and dense layers on 16x16 inputs."""
    return build_model(cnn_spec(input_hw, (32, 64), (128, 64), dropout, "mini-cnn"),
                       init_seed)


def model_manifest(model: Model) -> str:
    """Human-readable layer/shape/parameter report for run manifests."""
    spec = model.spec
    lines = [f"model: {spec.name}",
             f"input_shape: {spec.input_shape}",
             f"padding: {spec.padding}",
             f"init_seed: {model.init_seed}",
             f"init_scheme: kaiming-uniform fan-in, zero biases"]
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            shape = (layer.out_dim,)
            n = layer.in_dim * layer.out_dim + layer.out_dim
            lines.append(f"layer {i}: dense({layer.in_dim},{layer.out_dim}) "
                         f"-> {shape} params={n}")
        elif isinstance(layer, Conv3x3):
            c, h, w = shape
            if spec.padding == "valid":
                h, w = h - 2, w - 2
            shape = (layer.out_ch, h, w)
            n = layer.out_ch * layer.in_ch * 9 + layer.out_ch
            lines.append(f"layer {i}: conv3x3({layer.in_ch},{layer.out_ch}) "
                         f"-> {shape} params={n}")
        elif isinstance(layer, MaxPool2):
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
            lines.append(f"layer {i}: maxpool2 -> {shape}")
        elif isinstance(layer, Relu):
            lines.append(f"layer {i}: relu")
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
            lines.append(f"layer {i}: flatten -> {shape}")
        elif isinstance(layer, Dropout):
            lines.append(f"layer {i}: dropout(rate={layer.rate}, inverted)")
    lines.append(f"total_params: {spec.param_count()}")
    return "\n".join(lines) + "\n"

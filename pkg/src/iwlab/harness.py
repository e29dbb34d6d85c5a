"""Declarative experiment runner.

A config file (INI sections) names a scenario, a model, a weight sweep,
and a training recipe; run_experiment trains every (sweep label, seed)
pair, measures every population at every checkpoint, and writes one CSV
per run plus a seed-aggregated CSV, boundary grids for 2-D scenarios, and
a manifest that pins every decision needed to regenerate the outputs
byte for byte. Runs are independent units; a process pool may execute
them in parallel without changing any output.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from configparser import ConfigParser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, cifar, datagen, metrics, nets, optim
from .datagen import Dataset
from .errors import ConfigError
from .metrics import SeparatorLine, TraceRecord
from .optim import ClassWeights, TrainConfig
from .rngs import derive_seed, stream

try:
    from threadpoolctl import threadpool_limits as _thread_limits
except ImportError:  # fall back to default BLAS threading
    from contextlib import nullcontext

    def _thread_limits(limits=None):
        return nullcontext()


SCENARIOS = ("separable-2d", "moons", "moons-imbalanced",
             "cifar-binary", "cifar-imbalanced", "covariate-shift")
IMAGE_SCENARIOS = ("cifar-binary", "cifar-imbalanced", "covariate-shift")
TWO_D_MODELS = ("lr", "mlp64")
SNAPSHOT_STEPS = (1, 10, 100, 1000, 10000)

TRACE_COLUMNS = ("step", "weight_label", "seed", "population",
                 "fraction_positive", "accuracy", "loss", "boundary_angle")
AGG_METRICS = ("fraction_positive", "accuracy", "loss", "boundary_angle")


@dataclass
class ExperimentConfig:
    name: str
    scenario: str
    model: str
    seeds: list[int]
    weight_sweep: list[str]
    train: TrainConfig
    scale: str = "desk"
    dropout: bool = False
    lr_mode: str = "auto"  # "auto" => 0.01 / sigma_max(X); else literal value
    init_scale: float = 1.0  # multiplies the Kaiming init
    epochs: int = 0  # when > 0, budget is epochs * floor(n_train / batch)
    ratio_sweep: list[tuple[int, int]] = field(default_factory=list)
    data: dict = field(default_factory=dict)
    output_dir: str = "runs"
    grids: bool = True
    grid_resolution: int = 80
    workers: int = 1

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.weight_sweep:
            raise ConfigError("weight_sweep must be non-empty")
        if self.scale not in ("desk", "full"):
            raise ConfigError(f"scale must be desk or full, got {self.scale!r}")
        image = self.scenario in IMAGE_SCENARIOS
        if image and self.model != "paper-cnn":
            raise ConfigError(f"model {self.model!r} is not valid for image "
                              f"scenario {self.scenario!r} (use paper-cnn)")
        if not image and self.model not in TWO_D_MODELS:
            raise ConfigError(f"model {self.model!r} is not valid for 2-D "
                              f"scenario {self.scenario!r} (use lr or mlp64)")
        if self.scenario == "cifar-imbalanced" and not self.ratio_sweep:
            raise ConfigError("cifar-imbalanced needs a ratio_sweep")


def parse_ratio(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        r = int(a.strip()), int(b.strip())
    except ValueError as exc:
        raise ConfigError(f"malformed ratio {text!r}, expected like 10:1") from exc
    if r[0] <= 0 or r[1] <= 0:
        raise ConfigError(f"ratio components must be positive: {text!r}")
    return r


def parse_weights(text: str) -> ClassWeights:
    a, b = text.split(":")
    return ClassWeights(float(a), float(b))


def _parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config(path) -> ExperimentConfig:
    """Parse an experiment config file (key/value with [sections])."""
    parser = ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if "experiment" not in parser:
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = parser["experiment"]
    train_sec = parser["train"] if "train" in parser else {}
    data_sec = parser["data"] if "data" in parser else {}
    out_sec = parser["output"] if "output" in parser else {}

    lr_mode = str(train_sec.get("learning_rate", "auto"))
    checkpoints = str(train_sec.get("checkpoints", "auto"))
    train = TrainConfig(
        learning_rate=1.0 if lr_mode == "auto" else float(lr_mode),
        batch_size=int(train_sec.get("batch_size", 8)),
        momentum=float(train_sec.get("momentum", 0.0)),
        l2_lambda=float(train_sec.get("l2_lambda", 0.0)),
        dropout_rate=float(train_sec.get("dropout_rate", 0.0)),
        step_budget=int(train_sec.get("step_budget", 10000)),
        checkpoint_schedule=([] if checkpoints == "auto"
                             else [int(v) for v in _parse_list(checkpoints)]),
        seed=0,
    )
    data = {k: v for k, v in data_sec.items()}
    config = ExperimentConfig(
        name=str(exp.get("name", Path(path).stem)),
        scenario=str(exp.get("scenario", "")),
        model=str(exp.get("model", "")),
        seeds=[int(v) for v in _parse_list(exp.get("seeds", "0,1,2"))],
        weight_sweep=_parse_list(exp.get("weight_sweep", "1:1")),
        train=train,
        scale=str(exp.get("scale", "desk")),
        dropout=exp.getboolean("dropout", fallback=False),
        lr_mode=lr_mode,
        init_scale=float(train_sec.get("init_scale", 1.0)),
        epochs=int(train_sec.get("epochs", 0)),
        ratio_sweep=[parse_ratio(v) for v in _parse_list(exp.get("ratio_sweep", ""))],
        data=data,
        output_dir=str(out_sec.get("dir", "runs")),
        grids=ConfigParser.BOOLEAN_STATES.get(
            str(out_sec.get("grids", "true")).lower(), True),
        grid_resolution=int(out_sec.get("grid_resolution", 80)),
        workers=int(out_sec.get("workers", 1)),
    )
    config.validate()
    return config


# -- scenario assembly ---------------------------------------------------------

@dataclass
class Scenario:
    """Everything a run needs: data, measurement populations, geometry."""

    train: Dataset
    populations: dict[str, Dataset]
    oracle: SeparatorLine | None
    input_kind: str  # "2d" | "image"
    input_shape: tuple[int, ...]
    grid_bounds: tuple[float, float, float, float] | None
    notes: dict = field(default_factory=dict)


def _grid_bounds(x: np.ndarray) -> tuple[float, float, float, float]:
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    pad = 0.1 * (hi - lo)
    return (float(lo[0] - pad[0]), float(hi[0] + pad[0]),
            float(lo[1] - pad[1]), float(hi[1] + pad[1]))


def _int_opt(data: dict, key: str, default: int) -> int:
    return int(data.get(key, default))


def _float_opt(data: dict, key: str, default: float) -> float:
    return float(data.get(key, default))


def prepare_scenario(config: ExperimentConfig,
                     ratio: tuple[int, int] | None = None,
                     data_dir: str | None = None) -> Scenario:
    data = config.data
    data_seed = _int_opt(data, "data_seed", 7)
    if config.scenario == "separable-2d":
        spec = datagen.SeparablePairSpec(
            n_per_class=_int_opt(data, "n_per_class", 512),
            truncation_radius=_float_opt(data, "truncation_radius", 2.0),
            rotation_angle=_float_opt(data, "rotation_angle", float(np.pi / 4)),
            translation=(_float_opt(data, "translation_x", 6.0),
                         _float_opt(data, "translation_y", 0.0)),
            seed=data_seed)
        train = datagen.gen_separable(spec, "train")
        test = datagen.gen_separable(replace(spec, seed=data_seed + 1), "test")
        oracle = metrics.max_margin_2d(train.features, train.labels)
        if oracle is None:
            raise ConfigError("separable-2d produced an inseparable set")
        return Scenario(train, {"train": train, "test": test}, oracle, "2d",
                        (2,), _grid_bounds(train.features))

    if config.scenario in ("moons", "moons-imbalanced"):
        spec = datagen.MoonsSpec(
            n_total=_int_opt(data, "n_total", 1024),
            noise_sigma=_float_opt(data, "noise_sigma", 0.1),
            seed=data_seed)
        train = datagen.gen_moons(spec, "train")
        test = datagen.gen_moons(spec, "test")
        notes = {}
        if config.scenario == "moons-imbalanced":
            r = ratio or parse_ratio(str(data.get("ratio", "10:1")))
            train = datagen.subsample_ratio(train, r[0], r[1], seed=data_seed)
            notes["ratio"] = r
        return Scenario(train, {"train": train, "test": test}, None, "2d",
                        (2,), _grid_bounds(test.features), notes)

    return _prepare_image_scenario(config, ratio, data_dir)


def _prepare_image_scenario(config: ExperimentConfig,
                            ratio: tuple[int, int] | None,
                            data_dir: str | None) -> Scenario:
    data = config.data
    data_seed = _int_opt(data, "data_seed", 7)
    source = str(data.get("source", "synthetic"))
    desk = config.scale == "desk"
    per_class = _int_opt(data, "per_class", 500 if desk else 5000)
    per_class_test = _int_opt(data, "per_class_test", 200 if desk else 1000)
    hw = _int_opt(data, "image_hw", 16 if desk else 32)

    train_records, test_records = _load_records(config, source, data_dir,
                                                per_class, per_class_test,
                                                data_seed)
    cat, dog = cifar.CLASS_NAMES.index("cat"), cifar.CLASS_NAMES.index("dog")

    def shrink(ds: Dataset) -> Dataset:
        if hw == 32:
            return ds
        feats = datagen.downsample_images(ds.features, factor=32 // hw)
        return Dataset(feats, ds.labels, ds.weights, ds.split, ds.provenance)

    notes = {"source": source, "image_hw": hw, "per_class": per_class}

    if config.scenario in ("cifar-binary", "cifar-imbalanced"):
        train = cifar.select_pair(train_records, cat, dog, "train")
        catdog_test = cifar.select_pair(test_records, cat, dog, "test")
        other = [rec for rec in test_records if rec.label not in (cat, dog)]
        other = _cap_per_class(
            other, _int_opt(data, "other8_per_class", 40 if desk else 1000),
            data_seed, "other8")
        feats, src = cifar.records_to_arrays(other)
        other8 = Dataset(feats, None, np.ones(len(feats)), "test",
                         {"generator": "cifar-other8", "source_labels": src})
        noise = datagen.gen_noise_images(
            n=_int_opt(data, "noise_n", 300 if desk else 1000), seed=data_seed)
        pops = {"train": shrink(train), "catdog_test": shrink(catdog_test),
                "other8_test": shrink(other8), "noise": shrink(noise)}
        scenario = Scenario(pops["train"], pops, None, "image", (3, hw, hw),
                            None, notes)
        if config.scenario == "cifar-imbalanced":
            scenario.notes["base_train"] = scenario.train
        return scenario

    # covariate-shift: animal/vehicle superclasses with a train-side skew
    r = ratio or parse_ratio(str(data.get("ratio", "4:1")))
    task = cifar.superclass_map(animal_ratio=(float(r[0]), float(r[1])),
                                vehicle_ratio=(float(r[0]), float(r[1])))
    balanced = cifar.superclass_map()
    train_shift = cifar.remap_superclass(train_records, task, seed=data_seed,
                                         split="train")
    train_noshift = cifar.remap_superclass(train_records, balanced,
                                           seed=data_seed, split="train")
    test = cifar.remap_superclass(test_records, balanced, seed=data_seed,
                                  split="test")
    weighted = Dataset(train_shift.features, train_shift.labels,
                       cifar.covariate_weights(train_shift, task),
                       "train", train_shift.provenance)
    notes["ratio"] = r
    notes["conditions"] = {
        "weighted": shrink(weighted),
        "unweighted": shrink(train_shift),
        "no-shift": shrink(train_noshift),
    }
    pops = {"train": shrink(train_shift), "test": shrink(test)}
    return Scenario(pops["train"], pops, None, "image", (3, hw, hw), None, notes)


def _load_records(config: ExperimentConfig, source: str, data_dir: str | None,
                  per_class: int, per_class_test: int, data_seed: int):
    if source == "cifar":
        directory = data_dir or config.data.get("data_dir") \
            or os.environ.get("IWLAB_DATA_DIR")
        if not directory:
            raise ConfigError(
                "image scenario needs a data directory: set data_dir, "
                "--data-dir, or IWLAB_DATA_DIR; fetch with `iwlab fetch-cifar <dir>`")
        train_records = cifar.load_split(directory, "train")
        test_records = cifar.load_split(directory, "test")
    elif source == "synthetic":
        shared = str(config.data.get("mode_pool", "shared")) == "shared"
        knobs = dict(
            modes_per_class=_int_opt(config.data, "modes_per_class", 4),
            template_weight=_float_opt(config.data, "template_weight", 0.55),
            pixel_sigma=_float_opt(config.data, "pixel_sigma", 0.12))
        px, lb = datagen.synth_image_classes(
            max(per_class, 1), seed=data_seed, split="train", shared_modes=shared,
            **knobs)
        train_records = cifar.arrays_to_records(px, lb)
        px, lb = datagen.synth_image_classes(
            max(per_class_test, 1), seed=data_seed, split="test",
            shared_modes=shared, **knobs)
        test_records = cifar.arrays_to_records(px, lb)
        return train_records, test_records
    else:
        raise ConfigError(f"unknown data source {source!r}")
    train_records = _cap_per_class(train_records, per_class, data_seed, "train")
    test_records = _cap_per_class(test_records, per_class_test, data_seed, "test")
    return train_records, test_records


def _cap_per_class(records, per_class: int, seed: int, split: str):
    """Uniformly subsample each source class down to per_class records."""
    by_class: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.label, []).append(i)
    keep: list[int] = []
    for cls, idx in sorted(by_class.items()):
        if len(idx) <= per_class:
            keep.extend(idx)
            continue
        rng = stream(seed, f"cap-{split}-{cls}")
        keep.extend(sorted(rng.choice(idx, size=per_class, replace=False)))
    return [records[i] for i in sorted(keep)]


# -- training loop --------------------------------------------------------------

def build_model_for(config: ExperimentConfig, input_shape: tuple[int, ...],
                    init_seed: int) -> nets.Model:
    rate = config.train.dropout_rate if config.dropout else 0.0
    if config.model == "lr":
        model = nets.build_lr(input_shape[0], init_seed)
    elif config.model == "mlp64":
        model = nets.build_mlp64(input_shape[0], rate if rate else None, init_seed)
    else:
        hw = input_shape[1]
        if config.scale == "desk":
            spec = nets.cnn_spec(hw, (32, 64), (128, 64), config.dropout, "mini-cnn")
        else:
            spec = nets.cnn_spec(hw, (64, 128), (512, 128), config.dropout,
                                 "paper-cnn")
        model = nets.build_model(spec, init_seed)
    if config.init_scale != 1.0:
        for p in model.parameters:
            p.data *= config.init_scale
    return model


def resolve_budget(config: ExperimentConfig, n_train: int) -> tuple[int, int]:
    """(total steps, steps per epoch); epoch budgets map to step counts."""
    steps_per_epoch = max(1, n_train // config.train.batch_size)
    if config.epochs > 0:
        return config.epochs * steps_per_epoch, steps_per_epoch
    return config.train.step_budget, steps_per_epoch


def default_checkpoints(budget: int) -> list[int]:
    """1-2-5 geometric grid up to the budget, always including the budget."""
    points = []
    k = 1
    while k <= budget:
        for m in (1, 2, 5):
            if m * k <= budget:
                points.append(m * k)
        k *= 10
    if budget not in points:
        points.append(budget)
    return sorted(set(points))


def checkpoint_schedule(config: ExperimentConfig, budget: int,
                        steps_per_epoch: int = 1) -> list[int]:
    """Resolve the checkpoint step list. Epoch-budgeted runs place
    checkpoints at epoch boundaries (epoch k -> step k * steps_per_epoch)."""
    if config.train.checkpoint_schedule:
        sched = config.train.checkpoint_schedule
    elif config.epochs > 0:
        sched = [e * steps_per_epoch for e in default_checkpoints(config.epochs)]
    else:
        sched = default_checkpoints(budget)
    sched = [s for s in sched if s <= budget]
    if not sched:
        raise ConfigError("no checkpoints fall inside the step budget")
    return sched


@dataclass
class RunSpec:
    label: str
    weights: ClassWeights
    seed: int
    train_ds: Dataset


def _sanitize(label: str) -> str:
    for ch in (":", "/", "|", " "):
        label = label.replace(ch, "-")
    return label.replace("--", "-")


def train_and_trace(config: ExperimentConfig, scenario: Scenario,
                    run: RunSpec) -> tuple[list[TraceRecord], list]:
    """Train one (label, seed) run and measure at every checkpoint."""
    train_ds = run.train_ds
    n = len(train_ds)
    budget, steps_per_epoch = resolve_budget(config, n)
    schedule = checkpoint_schedule(config, budget, steps_per_epoch)
    lr = (optim.lr_from_data(train_ds.features.reshape(n, -1))
          if config.lr_mode == "auto" else float(config.lr_mode))
    tconf = replace(config.train, learning_rate=lr, step_budget=budget,
                    checkpoint_schedule=schedule, seed=run.seed)

    init_seed = derive_seed(run.seed, "init")
    dropout_base = derive_seed(run.seed, "dropout")
    shuffle_rng = stream(run.seed, "shuffle")
    model = build_model_for(config, scenario.input_shape, init_seed)
    state = optim.OptState(model)

    traces: list[TraceRecord] = []
    grids: list = []
    want_grids = config.grids and scenario.input_kind == "2d"
    snapshot_steps = set(SNAPSHOT_STEPS) & set(schedule)
    schedule_set = set(schedule)
    populations = {**scenario.populations, "train": _eval_view(config, train_ds)}

    def measure(step: int) -> None:
        angle = None
        if scenario.oracle is not None and config.model == "lr":
            line = metrics.linear_separator(model)
            angle = metrics.boundary_angle(line, scenario.oracle)
        loss = None
        rows = []
        for pop_name, pop in populations.items():
            z = nets.logits(model, pop.features)
            positive = z > 0.0
            acc = None
            if pop.labels is not None:
                acc = float(np.mean(positive == (pop.labels == 1)))
            if pop_name == "train":
                w = run.weights.per_example(pop.labels) * pop.weights
                per_example = np.logaddexp(0.0, z) - pop.labels * z
                loss = float(np.mean(w * per_example))
            rows.append((pop_name, float(np.mean(positive)), acc))
        for pop_name, frac, acc in rows:
            traces.append(TraceRecord(
                step=step, weight_label=run.label, seed=run.seed,
                population=pop_name, fraction_positive=frac,
                accuracy=acc, loss=loss, boundary_angle=angle))
        if want_grids and step in snapshot_steps:
            grids.append(metrics.eval_grid(
                model, scenario.grid_bounds,
                (config.grid_resolution, config.grid_resolution), step))

    step = 0
    done = False
    while not done:
        order = shuffle_rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * tconf.batch_size:(b + 1) * tconf.batch_size]
            step += 1
            _train_step(model, state, tconf, train_ds, idx, run.weights,
                        dropout_base + step)
            if step in schedule_set:
                measure(step)
            if step >= budget:
                done = True
                break
    return traces, grids


def _eval_view(config: ExperimentConfig, train_ds: Dataset) -> Dataset:
    """Measurement view of the training set; desk-scale image runs cap it
    so per-checkpoint evaluation stays cheap (cap echoed in the manifest)."""
    default_cap = 500 if (config.scenario in IMAGE_SCENARIOS
                          and config.scale == "desk") else 0
    cap = _int_opt(config.data, "train_eval_cap", default_cap)
    if cap <= 0 or len(train_ds) <= cap:
        return train_ds
    rng = stream(_int_opt(config.data, "data_seed", 7), "train-eval-cap")
    idx = np.sort(rng.choice(len(train_ds), size=cap, replace=False))
    return Dataset(train_ds.features[idx], train_ds.labels[idx],
                   train_ds.weights[idx], train_ds.split,
                   {**train_ds.provenance, "eval_cap": cap})


def _train_step(model, state, tconf: TrainConfig, train_ds: Dataset,
                idx: np.ndarray, weights: ClassWeights, mask_seed: int) -> None:
    batch = train_ds.features[idx]
    labels = train_ds.labels[idx]
    sample_w = train_ds.weights[idx]
    logits_t, tape = nets.forward(model, batch, mode="train", mask_seed=mask_seed)
    loss = optim.weighted_bce(tape, logits_t, labels, weights,
                              sample_weights=sample_w)
    tape.backward(loss)
    optim.sgd_step(model, state, tconf)
    tape.zero_grads()


# -- CSV / manifest emission ----------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def trace_rows(traces: list[TraceRecord]) -> list[list[str]]:
    rows = []
    for t in traces:
        rows.append([str(t.step), t.weight_label, str(t.seed), t.population,
                     _fmt(t.fraction_positive), _fmt(t.accuracy), _fmt(t.loss),
                     _fmt(t.boundary_angle)])
    return rows


def emit_csv(traces: list[TraceRecord], path) -> None:
    """One CSV per run: fixed column order, shortest-roundtrip floats."""
    if not traces:
        raise ConfigError("emit_csv called with no traces")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(trace_rows(traces))


def aggregate_rows(all_traces: list[TraceRecord]) -> list[list[str]]:
    """Mean/std over seeds per (step, label, population); std is the
    corrected sample standard deviation, 0 for a single seed."""
    groups: dict[tuple, list[TraceRecord]] = {}
    order: list[tuple] = []
    for t in all_traces:
        key = (t.step, t.weight_label, t.population)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(t)
    rows = []
    for key in sorted(order):
        step, label, pop = key
        members = groups[key]
        row = [str(step), label, pop, str(len(members))]
        for metric in AGG_METRICS:
            vals = [getattr(t, metric) for t in members]
            if any(v is None for v in vals):
                row += ["", ""]
                continue
            arr = np.asarray(vals, dtype=np.float64)
            mean = float(arr.mean())
            std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            row += [repr(mean), repr(std)]
        rows.append(row)
    return rows


AGG_COLUMNS = ("step", "weight_label", "population", "n_seeds",
               "fraction_positive_mean", "fraction_positive_std",
               "accuracy_mean", "accuracy_std", "loss_mean", "loss_std",
               "boundary_angle_mean", "boundary_angle_std")


def emit_aggregate(all_traces: list[TraceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGG_COLUMNS)
        writer.writerows(aggregate_rows(all_traces))


@dataclass
class RunManifest:
    text: str
    out_dir: Path
    run_paths: list[str]

    def write(self) -> Path:
        path = self.out_dir / "manifest.txt"
        path.write_text(self.text)
        return path


def _label_budgets(config: ExperimentConfig,
                   runs: list[RunSpec]) -> dict[str, tuple[int, int, list[int]]]:
    out: dict[str, tuple[int, int, list[int]]] = {}
    for run in runs:
        if run.label not in out:
            budget, spe = resolve_budget(config, len(run.train_ds))
            out[run.label] = (budget, spe, checkpoint_schedule(config, budget, spe))
    return out


def _manifest_text(config: ExperimentConfig, scenario: Scenario,
                   runs: list[RunSpec], lr_values: dict[str, float],
                   budgets: dict[str, tuple[int, int, list[int]]],
                   run_paths: list[str]) -> str:
    buf = io.StringIO()
    w = buf.write
    w(f"iwlab version: {__version__}\n")
    w(f"experiment: {config.name}\n")
    w(f"scenario: {config.scenario}\nmodel: {config.model}\n")
    w(f"scale: {config.scale}\n")
    w(f"seeds: {config.seeds}\n")
    w(f"sweep_labels: {sorted({r.label for r in runs})}\n")
    for label, (budget, spe, schedule) in sorted(budgets.items()):
        w(f"step_budget[{label}]: {budget} (steps_per_epoch {spe}; "
          f"epoch k maps to step k*{spe}; partial batches dropped)\n")
        w(f"checkpoints[{label}]: {schedule}\n")
    w(f"batch_size: {config.train.batch_size}\n")
    w(f"momentum: {config.train.momentum}\n")
    w(f"l2_lambda: {config.train.l2_lambda} (applied to weights and biases)\n")
    w(f"dropout: {config.dropout} rate={config.train.dropout_rate} (inverted)\n")
    for label, lr in sorted(lr_values.items()):
        w(f"learning_rate[{label}]: {lr!r} (mode={config.lr_mode})\n")
    w(f"init_scale: {config.init_scale}\n")
    w("weight_normalization: none (raw per-example multipliers)\n")
    w("tie_rule: logit == 0 counts as negative\n")
    w("maxpool_ties: first element in row-major window order\n")
    w("relu_subgradient_at_0: 0\n")
    w("conv_padding: same (pad 1)\n")
    w("rng_streams: init, shuffle, dropout, subsample (derived per seed)\n")
    notes = {k: v for k, v in sorted(scenario.notes.items())
             if isinstance(v, (str, int, float, tuple))}
    w(f"data: {notes}\n")
    for key, pop in sorted(scenario.populations.items()):
        labeled = "unlabeled" if pop.labels is None else "labeled"
        w(f"population[{key}]: n={len(pop)} ({labeled})\n")
    if scenario.oracle is not None:
        o = scenario.oracle
        w(f"oracle_line: normal=({o.normal[0]!r}, {o.normal[1]!r}) "
          f"offset={o.offset!r} margin={o.margin!r}\n")
    sample = runs[0]
    model = build_model_for(config, scenario.input_shape,
                            derive_seed(sample.seed, "init"))
    w("model_manifest:\n")
    for line in nets.model_manifest(model).strip().splitlines():
        w(f"  {line}\n")
    w("run_files:\n")
    for p in run_paths:
        w(f"  {p}\n")
    return buf.getvalue()


# -- experiment drivers -----------------------------------------------------------

def _expand_runs(config: ExperimentConfig, scenario: Scenario,
                 data_seed: int) -> list[RunSpec]:
    """Resolve the sweep into concrete (label, weights, seed, data) runs."""
    runs: list[RunSpec] = []

    def weight_for(entry: str, ratio: tuple[int, int] | None) -> ClassWeights:
        if entry == "auto-1/r":
            if ratio is None:
                raise ConfigError("auto-1/r weights need a data ratio")
            return optim.weights_from_ratio(*ratio)
        return parse_weights(entry)

    if config.scenario == "cifar-imbalanced":
        for ratio in config.ratio_sweep:
            train = datagen.subsample_ratio(
                scenario.notes["base_train"], ratio[0], ratio[1], seed=data_seed)
            for entry in config.weight_sweep:
                weights = weight_for(entry, ratio)
                label = f"r{ratio[0]}:{ratio[1]}|w{weights.label()}"
                for seed in config.seeds:
                    runs.append(RunSpec(label, weights, seed, train))
        return runs

    ratio = scenario.notes.get("ratio")
    for entry in config.weight_sweep:
        weights = weight_for(entry, ratio)
        label = weights.label() if entry != "auto-1/r" else f"1/r={weights.label()}"
        for seed in config.seeds:
            runs.append(RunSpec(label, weights, seed, scenario.train))
    return runs


def _run_one(args) -> tuple[str, list[TraceRecord]]:
    """Worker entry: train a run, write its CSV and grids, return traces."""
    config, scenario, run, out_dir = args
    with _thread_limits(limits=1):  # one BLAS thread per run is fastest here
        traces, grids = train_and_trace(config, scenario, run)
    out_dir = Path(out_dir)
    name = f"run_{_sanitize(run.label)}_s{run.seed}"
    emit_csv(traces, out_dir / "traces" / f"{name}.csv")
    for grid in grids:
        text = metrics.grid_to_text(grid)
        (out_dir / "grids" / f"{name}_step{grid.step}.txt").write_text(text)
    return name, traces


def _execute(config: ExperimentConfig, scenario: Scenario,
             runs: list[RunSpec], out_dir: Path) -> list[tuple[str, list[TraceRecord]]]:
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    if config.grids and scenario.input_kind == "2d":
        (out_dir / "grids").mkdir(parents=True, exist_ok=True)
    tasks = [(config, scenario, run, str(out_dir)) for run in runs]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    return results


def run_experiment(config: ExperimentConfig, out_dir=None,
                   data_dir: str | None = None) -> RunManifest:
    """Train every (sweep label, seed) pair and write traces, aggregate,
    grids, and the manifest under out_dir."""
    config.validate()
    out_dir = Path(out_dir or config.output_dir) / config.name
    data_seed = _int_opt(config.data, "data_seed", 7)
    if config.scenario == "covariate-shift":
        return run_covariate_shift(config, out_dir, data_dir)
    scenario = prepare_scenario(config, data_dir=data_dir)
    runs = _expand_runs(config, scenario, data_seed)
    results = _execute(config, scenario, runs, out_dir)
    all_traces = [t for _, traces in results for t in traces]
    emit_aggregate(all_traces, out_dir / "aggregate.csv")
    lr_values = {}
    for run in runs:
        if run.label not in lr_values:
            n = len(run.train_ds)
            lr_values[run.label] = (
                optim.lr_from_data(run.train_ds.features.reshape(n, -1))
                if config.lr_mode == "auto" else float(config.lr_mode))
    run_paths = [f"traces/run_{_sanitize(r.label)}_s{r.seed}.csv" for r in runs]
    manifest = RunManifest(
        _manifest_text(config, scenario, runs, lr_values,
                       _label_budgets(config, runs), run_paths),
        out_dir, run_paths)
    manifest.write()
    return manifest


def run_covariate_shift(config: ExperimentConfig, out_dir=None,
                        data_dir: str | None = None) -> RunManifest:
    """Three-condition comparison: covariate-weighted, unweighted, and
    trained on data with no shift, sharing seeds; emits per-condition
    traces plus a final-checkpoint comparison table."""
    config.validate()
    if config.scenario != "covariate-shift":
        raise ConfigError("run_covariate_shift needs scenario = covariate-shift")
    out_dir = Path(out_dir or config.output_dir) / config.name
    scenario = prepare_scenario(config, data_dir=data_dir)
    conditions: dict[str, Dataset] = scenario.notes.pop("conditions")
    unit = ClassWeights(1.0, 1.0)
    runs = []
    for label, train_ds in conditions.items():
        for seed in config.seeds:
            runs.append(RunSpec(label, unit, seed, train_ds))
    results = _execute(config, scenario, runs, out_dir)
    all_traces = [t for _, traces in results for t in traces]
    emit_aggregate(all_traces, out_dir / "aggregate.csv")
    _emit_comparison(all_traces, out_dir / "comparison.csv")
    lr_values = {r.label: float(config.lr_mode) if config.lr_mode != "auto"
                 else optim.lr_from_data(
                     r.train_ds.features.reshape(len(r.train_ds), -1))
                 for r in runs}
    run_paths = [f"traces/run_{_sanitize(r.label)}_s{r.seed}.csv" for r in runs]
    manifest = RunManifest(
        _manifest_text(config, scenario, runs, lr_values,
                       _label_budgets(config, runs), run_paths),
        out_dir, run_paths)
    manifest.write()
    return manifest


def _emit_comparison(all_traces: list[TraceRecord], path) -> None:
    """Train/test accuracy per condition at that condition's final
    checkpoint, aggregated over seeds (condition budgets may differ when
    their training sets do)."""
    rows = []
    labels = sorted({t.weight_label for t in all_traces})
    for label in labels:
        mine = [t for t in all_traces if t.weight_label == label]
        final = max(t.step for t in mine)
        row = [label]
        for pop in ("train", "test"):
            vals = [t.accuracy for t in mine
                    if t.population == pop and t.step == final
                    and t.accuracy is not None]
            arr = np.asarray(vals, dtype=np.float64)
            row += [repr(float(arr.mean())),
                    repr(float(arr.std(ddof=1)) if len(arr) > 1 else 0.0)]
        rows.append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("condition", "train_acc_mean", "train_acc_std",
                         "test_acc_mean", "test_acc_std"))
        writer.writerows(rows)

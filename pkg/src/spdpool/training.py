"""Mini-batch SGD with Stiefel updates for BiMap weights, plus evaluation."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import network as N
from .optim import stiefel_step
from .rng import make_rng

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    pass


@dataclass
class Sample:
    """One training/eval item: a feature set, feature map, or pooled descriptor.

    ``failed`` marks samples whose upstream extraction failed; they carry no
    data and receive chance-level credit in :func:`evaluate`.
    """

    data: np.ndarray | None
    label: int
    failed: bool = False
    pooled: bool = False


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 50
    batch_size: int = 16
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainState:
    params: list
    step: int = 0
    epoch: int = 0
    best_val_accuracy: float = float("nan")
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0))

    @classmethod
    def initial(cls, spec: N.NetworkSpec) -> "TrainState":
        rng = make_rng(spec.seed)
        params = N.init_params(spec, rng)
        return cls(params=params, rng=rng)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _batch_gradients(spec, params, batch: Sequence[Sample]):
    total = 0.0
    acc: list | None = None
    for sample in batch:
        _, tape = N.forward(spec, params, sample.data, pooled=sample.pooled)
        grads = N.backward(spec, params, tape, sample.label)
        total += grads.loss
        if acc is None:
            acc = [None if g is None else {k: v.copy() for k, v in g.items()} for g in grads.params]
        else:
            for a, g in zip(acc, grads.params):
                if g is not None:
                    for k in a:
                        a[k] += g[k]
    scale = 1.0 / len(batch)
    for a in acc:
        if a is not None:
            for k in a:
                a[k] *= scale
    return total * scale, acc


def apply_update(spec: N.NetworkSpec, params: list, grads: list, lr: float) -> None:
    for layer, p, g in zip(spec.layers, params, grads):
        if p is None:
            continue
        if isinstance(layer, N.BiMap):
            p["W"] = stiefel_step(p["W"], g["W"], lr)
        else:
            for k in p:
                p[k] = p[k] - lr * g[k]


def train(
    spec: N.NetworkSpec,
    config: TrainConfig,
    train_data: Sequence[Sample],
    val_data: Sequence[Sample] = (),
    *,
    state: TrainState | None = None,
    on_step: Callable[[TrainState], None] | None = None,
) -> tuple[TrainState, list[EpochRecord]]:
    """Run ``config.epochs`` epochs of SGD and return the final state and history.

    Failed samples are skipped during training.  ``on_step`` is called after
    every parameter update.
    """
    usable = [s for s in train_data if not s.failed]
    if not usable:
        raise ValueError("training set is empty")
    for s in usable:
        if not 0 <= s.label < spec.classes:
            raise ValueError(f"label {s.label} out of range for {spec.classes} classes")
    state = TrainState.initial(spec) if state is None else state
    history = []
    for _ in range(config.epochs):
        order = np.arange(len(usable))
        if config.shuffle:
            order = state.rng.permutation(len(usable))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [usable[i] for i in order[start:start + config.batch_size]]
            loss, grads = _batch_gradients(spec, state.params, batch)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {state.epoch}, step {state.step}")
            apply_update(spec, state.params, grads, config.learning_rate)
            state.step += 1
            losses.append(loss * len(batch))
            if on_step is not None:
                on_step(state)
        state.epoch += 1
        record = EpochRecord(
            epoch=state.epoch,
            train_loss=float(sum(losses) / len(usable)),
            val_accuracy=evaluate(spec, state.params, val_data) if val_data else float("nan"),
        )
        if val_data and (math.isnan(state.best_val_accuracy) or record.val_accuracy > state.best_val_accuracy):
            state.best_val_accuracy = record.val_accuracy
        log.info("epoch %d  loss %.6f  val_acc %.6f", record.epoch, record.train_loss, record.val_accuracy)
        history.append(record)
    return state, history


def predict(spec: N.NetworkSpec, params: list, sample: Sample) -> N.Prediction:
    pred, _ = N.forward(spec, params, sample.data, pooled=sample.pooled)
    return pred


def mean_loss(spec: N.NetworkSpec, params: list, data: Sequence[Sample]) -> float:
    usable = [s for s in data if not s.failed]
    return float(np.mean([N.loss_value(spec, params, s.data, s.label, pooled=s.pooled) for s in usable]))


def evaluate(spec: N.NetworkSpec, params: list, data: Sequence[Sample], threads: int = 1) -> float:
    """Accuracy, with each failed sample credited ``1 / classes``."""
    if not data:
        raise ValueError("cannot evaluate on an empty dataset")
    chance = 1.0 / spec.classes

    def credit(sample: Sample) -> float:
        if sample.failed:
            return chance
        return float(predict(spec, params, sample).label == sample.label)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            credits = list(pool.map(credit, data))
    else:
        credits = [credit(s) for s in data]
    return math.fsum(credits) / len(data)


def save_checkpoint(path, spec: N.NetworkSpec, state: TrainState, extra: dict | None = None) -> None:
    arrays = {}
    for i, p in enumerate(state.params):
        if p is not None:
            for k, v in p.items():
                arrays[f"layer{i}.{k}"] = v
    meta = {
        "spec": spec.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "best_val_accuracy": state.best_val_accuracy,
        "rng_state": _jsonable(state.rng.bit_generator.state),
        **(extra or {}),
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[N.NetworkSpec, TrainState, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        spec = N.NetworkSpec.from_dict(meta["spec"])
        params: list = [None] * len(spec.layers)
        for key in data.files:
            if key == "__meta__":
                continue
            layer, name = key.split(".", 1)
            i = int(layer[len("layer"):])
            params[i] = params[i] or {}
            params[i][name] = data[key].copy()
    bitgen = np.random.Philox()
    bitgen.state = _philox_state(meta["rng_state"])
    rng = np.random.Generator(bitgen)
    state = TrainState(params=params, step=meta["step"], epoch=meta["epoch"],
                       best_val_accuracy=meta["best_val_accuracy"], rng=rng)
    return spec, state, meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _philox_state(state: dict) -> dict:
    state = dict(state)
    state["state"] = {k: np.array(v, dtype=np.uint64) for k, v in state["state"].items()}
    state["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    return state

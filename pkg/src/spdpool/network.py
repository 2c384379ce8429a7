"""Network specs, presets, and the forward/backward pass of a full model.

A network is a pooling layer, a stack of BiMap/ReEig blocks, LogEig,
Vectorize, and then Euclidean Dense layers ending in a softmax.  Dense
layers are affine with no activation in between.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Union

import numpy as np

from . import layers as L
from . import pooling as P
from .optim import random_stiefel


@dataclass(frozen=True)
class CovPool:
    lam: float = P.DEFAULT_LAMBDA


@dataclass(frozen=True)
class GaussPool:
    lam: float = P.DEFAULT_LAMBDA


@dataclass(frozen=True)
class BiMap:
    d_out: int


@dataclass(frozen=True)
class ReEig:
    eps: float = L.DEFAULT_EPSILON


@dataclass(frozen=True)
class LogEig:
    pass


@dataclass(frozen=True)
class Vectorize:
    pass


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class Softmax:
    classes: int


Layer = Union[CovPool, GaussPool, BiMap, ReEig, LogEig, Vectorize, Dense, Softmax]
LAYER_TYPES = {cls.__name__: cls for cls in (CovPool, GaussPool, BiMap, ReEig, LogEig, Vectorize, Dense, Softmax)}
POOLING = (CovPool, GaussPool)
SPD_STAGE = (BiMap, ReEig)


class SpecError(ValueError):
    pass


@dataclass
class NetworkSpec:
    layers: list
    input_dim: int
    seed: int = 0

    def __post_init__(self):
        self.layers = list(self.layers)
        self.validate()

    @property
    def classes(self) -> int:
        return self.layers[-1].classes

    def validate(self) -> None:
        ls = self.layers
        if self.input_dim < 1:
            raise SpecError(f"input_dim must be >= 1, got {self.input_dim}")
        if not ls or not isinstance(ls[0], POOLING):
            raise SpecError("first layer must be CovPool or GaussPool")
        if sum(isinstance(layer, POOLING) for layer in ls) != 1:
            raise SpecError("exactly one pooling layer is allowed")
        kinds = [type(layer) for layer in ls]
        if kinds.count(LogEig) != 1 or kinds.count(Vectorize) != 1:
            raise SpecError("LogEig and Vectorize must each appear exactly once")
        i_log, i_vec = kinds.index(LogEig), kinds.index(Vectorize)
        if i_vec != i_log + 1:
            raise SpecError("Vectorize must directly follow LogEig")
        if any(not isinstance(layer, SPD_STAGE) for layer in ls[1:i_log]):
            raise SpecError("only BiMap/ReEig layers may sit between pooling and LogEig")
        tail = ls[i_vec + 1:]
        if not tail or not isinstance(tail[-1], Softmax):
            raise SpecError("network must end with Softmax")
        if any(not isinstance(layer, Dense) for layer in tail[:-1]) or len(tail) < 2:
            raise SpecError("Vectorize must be followed by Dense layers and a final Softmax")
        if tail[-2].units != tail[-1].classes:
            raise SpecError(f"last Dense has {tail[-2].units} units but Softmax expects {tail[-1].classes}")
        d = self.spd_input_dim
        for layer in ls[1:i_log]:
            if isinstance(layer, BiMap):
                if not 1 <= layer.d_out <= d:
                    raise SpecError(f"BiMap({layer.d_out}) cannot follow dimension {d}")
                d = layer.d_out
            elif not layer.eps > 0:
                raise SpecError("ReEig threshold must be positive")

    @property
    def spd_input_dim(self) -> int:
        """Order of the SPD matrix produced by the pooling layer."""
        return self.input_dim + 1 if isinstance(self.layers[0], GaussPool) else self.input_dim

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "seed": self.seed,
            "layers": [{"type": type(layer).__name__, **asdict(layer)} for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        built = []
        for entry in data["layers"]:
            entry = dict(entry)
            kind = entry.pop("type")
            if kind not in LAYER_TYPES:
                raise SpecError(f"unknown layer type {kind!r}")
            built.append(LAYER_TYPES[kind](**entry))
        return cls(built, input_dim=int(data["input_dim"]), seed=int(data.get("seed", 0)))

    def __str__(self) -> str:
        return " -> ".join(_layer_label(layer) for layer in self.layers)


def _layer_label(layer) -> str:
    if isinstance(layer, BiMap):
        return f"BiMap({layer.d_out})"
    if isinstance(layer, Dense):
        return f"Dense({layer.units})"
    return type(layer).__name__


# name -> (BiRe blocks, hidden Dense widths). modelN are the four facial
# expression architectures; bireK stack K blocks with no hidden layer. Each
# BiRe block halves the SPD dimension, never going below 4.
PRESETS: dict[str, tuple[int, tuple[int, ...]]] = {
    "model1": (1, (2000,)),
    "model2": (1, (2000, 128)),
    "model3": (2, (2000,)),
    "model4": (1, (2000, 512)),
    "bire2": (2, ()),
    "bire3": (3, ()),
    "bire4": (4, ()),
}


def bire_dims(d: int, blocks: int, floor: int = 4) -> list[int]:
    dims = []
    for _ in range(blocks):
        d = min(d, max(d // 2, floor))
        dims.append(d)
    return dims


def build_preset(
    name: str,
    input_dim: int,
    classes: int,
    *,
    lam: float = P.DEFAULT_LAMBDA,
    eps: float = L.DEFAULT_EPSILON,
    pool: str = "cov",
    seed: int = 0,
    hidden: tuple[int, ...] | None = None,
) -> NetworkSpec:
    """Build one of the named architectures.

    ``hidden`` overrides the preset's hidden Dense widths, which is handy for
    shrinking the 2000-unit layers in tests.
    """
    if name not in PRESETS:
        raise SpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if input_dim < 1 or classes < 1:
        raise SpecError("input_dim and classes must be >= 1")
    blocks, preset_hidden = PRESETS[name]
    if hidden is None:
        hidden = preset_hidden
    if pool == "cov":
        stack: list = [CovPool(lam)]
        d = input_dim
    elif pool == "gauss":
        stack = [GaussPool(lam)]
        d = input_dim + 1
    else:
        raise SpecError(f"unknown pooling mode {pool!r}")
    for d_out in bire_dims(d, blocks):
        stack += [BiMap(d_out), ReEig(eps)]
    stack += [LogEig(), Vectorize()]
    stack += [Dense(units) for units in hidden]
    stack += [Dense(classes), Softmax(classes)]
    return NetworkSpec(stack, input_dim=input_dim, seed=seed)


def init_params(spec: NetworkSpec, rng: np.random.Generator, dense_scale: float = 0.01) -> list[dict | None]:
    """Initial parameters, one entry per layer (None for parameter-free layers)."""
    params: list[dict | None] = []
    d = spec.spd_input_dim
    width = None
    for layer in spec.layers:
        if isinstance(layer, BiMap):
            params.append({"W": random_stiefel(layer.d_out, d, rng)})
            d = layer.d_out
        elif isinstance(layer, Vectorize):
            width = d * (d + 1) // 2
            params.append(None)
        elif isinstance(layer, Dense):
            params.append({
                "W": dense_scale * rng.standard_normal((layer.units, width)),
                "b": np.zeros(layer.units),
            })
            width = layer.units
        else:
            params.append(None)
    return params


@dataclass
class Prediction:
    probs: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class Tape:
    """Per-layer forward caches, in execution order."""

    entries: list = field(default_factory=list)
    pooled: bool = False


@dataclass
class Gradients:
    loss: float
    params: list
    input: np.ndarray | None


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def forward(spec: NetworkSpec, params: list, x: np.ndarray, *, pooled: bool = False) -> tuple[Prediction, Tape]:
    """Run one sample through the network.

    ``x`` is a feature set ``(n, d)``, a feature map ``(h, w, d)``, or, with
    ``pooled=True``, an already pooled SPD descriptor that skips the pooling
    layer.
    """
    tape = Tape(pooled=pooled)
    h: Any = np.asarray(x, dtype=np.float64)
    for layer, p in zip(spec.layers, params):
        if isinstance(layer, POOLING):
            if pooled:
                if h.shape != (spec.spd_input_dim, spec.spd_input_dim):
                    raise ValueError(f"descriptor shape {h.shape} does not match network input {spec.spd_input_dim}")
                tape.entries.append(None)
                continue
            shape = h.shape
            if h.ndim == 3:
                h = P.flatten_spatial(h)
            if h.ndim != 2 or h.shape[1] != spec.input_dim:
                raise ValueError(f"input of shape {shape} does not match network input_dim {spec.input_dim}")
            tape.entries.append((h, shape))
            if isinstance(layer, CovPool):
                h = P.regularize(P.compute_covariance(h), layer.lam)
            else:
                h = P.gaussian_embed(h, layer.lam)
        elif isinstance(layer, BiMap):
            tape.entries.append(h)
            h = L.bimap_forward(h, p["W"])
        elif isinstance(layer, ReEig):
            h, eig = L.reeig_forward(h, layer.eps)
            tape.entries.append(eig)
        elif isinstance(layer, LogEig):
            h, eig = L.logeig_forward(h)
            tape.entries.append(eig)
        elif isinstance(layer, Vectorize):
            tape.entries.append(h.shape[0])
            h = L.vectorize_sym(h)
        elif isinstance(layer, Dense):
            tape.entries.append(h)
            h = p["W"] @ h + p["b"]
        elif isinstance(layer, Softmax):
            tape.entries.append(h)
            h = softmax(h)
    return Prediction(h), tape


def backward(spec: NetworkSpec, params: list, tape: Tape, label: int) -> Gradients:
    """Cross-entropy gradients for every parameter and for the raw input."""
    if len(tape.entries) != len(spec.layers):
        raise ValueError("tape does not match network spec")
    if not 0 <= label < spec.classes:
        raise ValueError(f"label {label} out of range for {spec.classes} classes")
    grads: list[dict | None] = [None] * len(spec.layers)
    grad_input = None
    g: Any = None
    loss = 0.0
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p, cache = spec.layers[i], params[i], tape.entries[i]
        if isinstance(layer, Softmax):
            logp = _log_softmax(cache)
            loss = float(-logp[label])
            g = np.exp(logp)
            g[label] -= 1.0
        elif isinstance(layer, Dense):
            grads[i] = {"W": np.outer(g, cache), "b": g.copy()}
            g = p["W"].T @ g
        elif isinstance(layer, Vectorize):
            g = L.unvectorize_sym(g, cache)
        elif isinstance(layer, LogEig):
            g = L.logeig_backward(g, cache)
        elif isinstance(layer, ReEig):
            g = L.reeig_backward(g, cache, layer.eps)
        elif isinstance(layer, BiMap):
            g, grad_W = L.bimap_backward(g, cache, p["W"])
            grads[i] = {"W": grad_W}
        elif isinstance(layer, POOLING) and cache is not None:
            feats, shape = cache
            if isinstance(layer, CovPool):
                grad_input = P.covariance_backward(P.regularize_backward(g, layer.lam), feats)
            else:
                grad_input = P.gaussian_embed_backward(g, feats, layer.lam)
            grad_input = grad_input.reshape(shape)
    return Gradients(loss=loss, params=grads, input=grad_input)


def loss_value(spec: NetworkSpec, params: list, x: np.ndarray, label: int, *, pooled: bool = False) -> float:
    _, tape = forward(spec, params, x, pooled=pooled)
    return float(-_log_softmax(tape.entries[-1])[label])

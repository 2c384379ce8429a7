"""Central finite-difference checks for every layer and for whole networks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import layers as L
from . import network as N
from . import pooling as P
from .optim import random_stiefel

STEP = 1e-6
THRESHOLD = 1e-4
LAYER_NAMES = ("cov", "bimap", "reeig", "logeig", "vectorize", "dense", "softmax_ce")


def rel_error(analytic, numeric, floor: float = 1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish below ``floor``."""
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    b = np.ravel(np.asarray(numeric, dtype=np.float64))
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def fd_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP, coords=None) -> np.ndarray:
    """Central differences of ``f`` over the flat coordinates ``coords`` (all by default)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx) if coords is not None else flat.size)
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def fd_sym_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Gradient of ``f`` restricted to symmetric perturbations, as a symmetric matrix."""
    x = np.array(x, dtype=np.float64)
    d = x.shape[0]
    g = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = 1.0
            dd = (f(x + h * e) - f(x - h * e)) / (2 * h)
            if i == j:
                g[i, i] = dd
            else:
                g[i, j] = g[j, i] = dd / 2
    return g


def random_symmetric(d: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return P.symmetrize(a)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    return random_stiefel(d, d, rng)


def spectrum_with_gaps(d: int, rng: np.random.Generator, low: float, high: float,
                       gap: float = 0.1, avoid: float | None = None, margin: float = 0.05) -> np.ndarray:
    """Random eigenvalues in ``[low, high]`` pairwise at least ``gap`` apart.

    With ``avoid`` set, every value also stays ``margin`` away from it.
    """
    for _ in range(10_000):
        s = np.sort(rng.uniform(low, high, size=d))[::-1]
        if d > 1 and np.min(-np.diff(s)) < gap:
            continue
        if avoid is not None and np.min(np.abs(s - avoid)) < margin:
            continue
        return s
    raise RuntimeError("could not draw a well-separated spectrum; widen the interval")


def matrix_with_spectrum(s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    U = random_orthogonal(len(s), rng)
    return P.symmetrize((U * s) @ U.T)


# --- per-layer checks; each returns the relative error of one random instance


def check_cov(rng, d: int = 5, n: int = 9, corrupt: bool = False) -> float:
    feats = rng.standard_normal((n, d))
    r = random_symmetric(d, rng)
    lam = 1e-2

    def loss(f):
        return float(np.sum(r * P.regularize(P.compute_covariance(f), lam)))

    analytic = P.covariance_backward(P.regularize_backward(r, lam), feats)
    if corrupt:
        analytic = analytic * 1.01
    return rel_error(analytic, fd_grad(loss, feats).reshape(feats.shape))


def check_bimap(rng, d_in: int = 6, d_out: int = 3, corrupt: bool = False) -> float:
    x = matrix_with_spectrum(rng.uniform(0.5, 2.0, d_in), rng)
    W = random_stiefel(d_out, d_in, rng)
    r = random_symmetric(d_out, rng)
    grad_x, grad_W = L.bimap_backward(r, x, W)
    if corrupt:
        grad_W = grad_W * 1.01
    num_x = fd_sym_grad(lambda m: float(np.sum(r * L.bimap_forward(m, W))), x)
    num_W = fd_grad(lambda w: float(np.sum(r * L.bimap_forward(x, w))), W).reshape(W.shape)
    return max(rel_error(grad_x, num_x), rel_error(grad_W, num_W))


def check_reeig(rng, d: int = 5, eps: float = L.DEFAULT_EPSILON, corrupt: bool = False) -> float:
    s = spectrum_with_gaps(d, rng, -1.0, 2.0, avoid=eps)
    x = matrix_with_spectrum(s, rng)
    r = random_symmetric(d, rng)
    _, eig = L.reeig_forward(x, eps)
    analytic = L.reeig_backward(r, eig, eps)
    if corrupt:
        analytic = analytic * 1.01
    num = fd_sym_grad(lambda m: float(np.sum(r * L.reeig_forward(m, eps)[0])), x)
    return rel_error(analytic, num)


def check_logeig(rng, d: int = 5, corrupt: bool = False) -> float:
    s = spectrum_with_gaps(d, rng, 0.2, 3.0)
    x = matrix_with_spectrum(s, rng)
    r = random_symmetric(d, rng)
    _, eig = L.logeig_forward(x)
    analytic = L.logeig_backward(r, eig)
    if corrupt:
        analytic = analytic * 1.01
    num = fd_sym_grad(lambda m: float(np.sum(r * L.logeig_forward(m)[0])), x)
    return rel_error(analytic, num)


def check_vectorize(rng, d: int = 5, corrupt: bool = False) -> float:
    x = random_symmetric(d, rng)
    r = rng.standard_normal(d * (d + 1) // 2)
    analytic = L.unvectorize_sym(r, d)
    if corrupt:
        analytic = analytic * 1.01
    num = fd_sym_grad(lambda m: float(r @ L.vectorize_sym(m)), x)
    return rel_error(analytic, num)


def check_dense(rng, n_in: int = 7, n_out: int = 4, corrupt: bool = False) -> float:
    W = rng.standard_normal((n_out, n_in))
    b = rng.standard_normal(n_out)
    v = rng.standard_normal(n_in)
    r = rng.standard_normal(n_out)
    analytic = [np.outer(r, v), r, W.T @ r]
    if corrupt:
        analytic[0] = analytic[0] * 1.01
    num_W = fd_grad(lambda w: float(r @ (w @ v + b)), W).reshape(W.shape)
    num_b = fd_grad(lambda bb: float(r @ (W @ v + bb)), b)
    num_v = fd_grad(lambda vv: float(r @ (W @ vv + b)), v)
    return max(rel_error(a, n) for a, n in zip(analytic, (num_W, num_b, num_v)))


def check_softmax_ce(rng, classes: int = 5, corrupt: bool = False) -> float:
    z = 2.0 * rng.standard_normal(classes)
    label = int(rng.integers(classes))
    analytic = N.softmax(z)
    analytic[label] -= 1.0
    if corrupt:
        analytic = analytic * 1.01

    def loss(zz):
        shifted = zz - zz.max()
        return float(np.log(np.exp(shifted).sum()) - shifted[label])

    return rel_error(analytic, fd_grad(loss, z))


LAYER_CHECKS: dict[str, Callable[..., float]] = {
    "cov": check_cov,
    "bimap": check_bimap,
    "reeig": check_reeig,
    "logeig": check_logeig,
    "vectorize": check_vectorize,
    "dense": check_dense,
    "softmax_ce": check_softmax_ce,
}


def layer_suite(rng, instances: int = 100, dims: int = 6, corrupt: str | None = None) -> dict[str, float]:
    """Max relative error per layer over ``instances`` random draws."""
    sizes = {
        "cov": {"d": dims, "n": 2 * dims},
        "bimap": {"d_in": dims, "d_out": max(1, dims // 2)},
        "reeig": {"d": dims},
        "logeig": {"d": dims},
        "vectorize": {"d": dims},
        "dense": {"n_in": dims, "n_out": max(2, dims // 2)},
        "softmax_ce": {"classes": max(2, dims)},
    }
    worst = {}
    for name, check in LAYER_CHECKS.items():
        worst[name] = max(check(rng, corrupt=(name == corrupt), **sizes[name]) for _ in range(instances))
    return worst


# --- whole-network checks


@dataclass
class NetworkCheck:
    errors: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def random_network_params(spec: N.NetworkSpec, rng) -> list:
    """Parameters for gradient checking: Stiefel BiMaps, O(1)-scaled dense layers."""
    params = N.init_params(spec, rng)
    for p in params:
        if p is not None and "b" in p:
            fan_in = p["W"].shape[1]
            p["W"] = rng.standard_normal(p["W"].shape) / np.sqrt(fan_in)
            p["b"] = 0.1 * rng.standard_normal(p["b"].shape)
    return params


def random_features(n: int, d: int, rng) -> np.ndarray:
    mix = random_orthogonal(d, rng) * rng.uniform(0.5, 1.5, d)
    return rng.standard_normal((n, d)) @ mix.T + 0.3 * rng.standard_normal(d)


def check_network(spec: N.NetworkSpec, rng, *, n: int | None = None, max_coords: int = 64,
                  params: list | None = None, x: np.ndarray | None = None,
                  corrupt: str | None = None) -> NetworkCheck:
    """Compare backward() against central differences of the cross-entropy loss.

    Every coordinate of tensors with at most ``max_coords`` entries is
    checked; larger tensors are checked on a random subset of that size.
    """
    params = random_network_params(spec, rng) if params is None else params
    if x is None:
        n = 3 * spec.input_dim if n is None else n
        x = random_features(n, spec.input_dim, rng)
    label = int(rng.integers(spec.classes))
    _, tape = N.forward(spec, params, x)
    grads = N.backward(spec, params, tape, label)
    result = NetworkCheck()

    def coords_for(size):
        if size <= max_coords:
            return None
        return sorted(rng.choice(size, size=max_coords, replace=False).tolist())

    coords = coords_for(x.size)
    num = fd_grad(lambda xx: N.loss_value(spec, params, xx, label), x, coords=coords)
    analytic = grads.input.reshape(-1) if coords is None else grads.input.reshape(-1)[coords]
    result.errors["input"] = rel_error(analytic, num)

    for i, (layer, p, g) in enumerate(zip(spec.layers, params, grads.params)):
        if p is None:
            continue
        for key, value in p.items():
            tag = f"{i}:{N._layer_label(layer)}.{key}"
            coords = coords_for(value.size)

            def f(v, key=key, p=p):
                saved = p[key]
                p[key] = v
                try:
                    return N.loss_value(spec, params, x, label)
                finally:
                    p[key] = saved

            num = fd_grad(f, value, coords=coords)
            ana = g[key].reshape(-1)
            if coords is not None:
                ana = ana[coords]
            if corrupt is not None and corrupt.lower() in tag.lower():
                ana = ana * 1.01
            result.errors[tag] = rel_error(ana, num)
    return result

"""Covariance and Gaussian descriptors of feature sets.

Feature maps are arrays of shape ``(h, w, d)`` in C order, so the flat
buffer runs over rows, then columns, with channels fastest.  Feature sets
are arrays of shape ``(n, d)``: one d-dimensional sample per row.

All pooling math is done in float64.
"""
from __future__ import annotations

import warnings

import numpy as np

DEFAULT_LAMBDA = 1e-4


class InsufficientSamplesError(ValueError):
    pass


class RegularizationWarning(UserWarning):
    """Raised (as a warning) when trace regularization cannot lift the spectrum."""


def as_feature_map(values) -> np.ndarray:
    fmap = np.asarray(values, dtype=np.float64)
    if fmap.ndim != 3:
        raise ValueError(f"feature map must have shape (h, w, d), got {fmap.shape}")
    if 0 in fmap.shape:
        raise ValueError(f"feature map has zero extent: {fmap.shape}")
    if not np.all(np.isfinite(fmap)):
        raise ValueError("feature map contains non-finite values")
    return fmap


def as_feature_set(values) -> np.ndarray:
    feats = np.asarray(values, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"feature set must have shape (n, d), got {feats.shape}")
    if 0 in feats.shape:
        raise ValueError(f"feature set has zero extent: {feats.shape}")
    if not np.all(np.isfinite(feats)):
        raise ValueError("feature set contains non-finite values")
    return feats


def flatten_spatial(fmap) -> np.ndarray:
    """Turn an ``(h, w, d)`` map into ``h*w`` samples.

    Sample ``k = row * w + col`` holds the channel vector at ``(row, col)``.
    """
    fmap = as_feature_map(fmap)
    h, w, d = fmap.shape
    return fmap.reshape(h * w, d).copy()


def symmetrize(a: np.ndarray) -> np.ndarray:
    # (a + a.T) is exactly symmetric since float addition commutes
    return 0.5 * (a + a.T)


def compute_covariance(features) -> np.ndarray:
    """Unbiased sample covariance of the rows of ``features``."""
    feats = as_feature_set(features)
    n = feats.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"insufficient samples: need n >= 2, got {n}")
    centered = feats - feats.mean(axis=0)
    return symmetrize(centered.T @ centered / (n - 1))


def regularize(c, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Return ``c + lam * trace(c) * I``.

    A zero-trace input is returned unchanged with a RegularizationWarning,
    since no multiple of its trace can make it definite.
    """
    if lam < 0:
        raise ValueError(f"regularization lambda must be >= 0, got {lam}")
    c = np.asarray(c, dtype=np.float64)
    tr = np.trace(c)
    if tr == 0 and lam > 0:
        warnings.warn("regularization ineffective: trace(C) is zero", RegularizationWarning, stacklevel=2)
    out = c.copy()
    out[np.diag_indices_from(out)] += lam * tr
    return out


def pool_temporal(frames, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    return regularize(compute_covariance(frames), lam)


def pool_spatial(fmap, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    return regularize(compute_covariance(flatten_spatial(fmap)), lam)


def gaussian_embed(features, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Embed mean and regularized covariance as one ``(d+1, d+1)`` SPD matrix.

    The block layout is ``[[S + m m^T, m], [m^T, 1]]`` with ``m`` the sample
    mean (sum divided by n) and ``S`` the regularized covariance.
    """
    feats = as_feature_set(features)
    sigma = regularize(compute_covariance(feats), lam)
    mu = feats.mean(axis=0)
    d = feats.shape[1]
    g = np.empty((d + 1, d + 1))
    g[:d, :d] = symmetrize(sigma + np.outer(mu, mu))
    g[:d, d] = mu
    g[d, :d] = mu
    g[d, d] = 1.0
    return g


def covariance_backward(grad_c: np.ndarray, features) -> np.ndarray:
    """Gradient w.r.t. the samples given a symmetric gradient w.r.t. the covariance."""
    feats = as_feature_set(features)
    n = feats.shape[0]
    centered = feats - feats.mean(axis=0)
    return 2.0 / (n - 1) * centered @ symmetrize(grad_c)


def regularize_backward(grad_out: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    grad = np.array(grad_out, dtype=np.float64)
    grad[np.diag_indices_from(grad)] += lam * np.trace(grad_out)
    return grad


def gaussian_embed_backward(grad_g: np.ndarray, features, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    feats = as_feature_set(features)
    n, d = feats.shape
    grad_g = symmetrize(np.asarray(grad_g, dtype=np.float64))
    a = grad_g[:d, :d]
    b = grad_g[:d, d]
    mu = feats.mean(axis=0)
    grad_mu = 2.0 * a @ mu + 2.0 * b
    grad = covariance_backward(regularize_backward(a, lam), feats)
    return grad + grad_mu[None, :] / n

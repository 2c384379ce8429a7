"""SPD network layers: BiMap, ReEig, LogEig and symmetric vectorization.

Gradients w.r.t. a symmetric matrix input are returned as the symmetric
matrix ``G`` with ``dL = <G, dX>_F`` for every symmetric perturbation ``dX``.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .pooling import symmetrize

DEFAULT_EPSILON = 1e-4
# eigenvalues closer than this are treated as equal in divided differences
DEGENERACY_TOL = 1e-10


class NotPositiveDefiniteError(ValueError):
    pass


class EigenPair(NamedTuple):
    """Eigenvectors as columns of ``U``, eigenvalues ``s`` in descending order."""

    U: np.ndarray
    s: np.ndarray

    def reconstruct(self, s: np.ndarray | None = None) -> np.ndarray:
        s = self.s if s is None else s
        return symmetrize((self.U * s) @ self.U.T)


def sym_eig(x: np.ndarray) -> EigenPair:
    """Symmetric eigendecomposition with a reproducible ordering and sign.

    Eigenvalues come out descending; each eigenvector is flipped so that its
    largest-magnitude component is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("eigendecomposition of a non-finite matrix")
    s, U = np.linalg.eigh(x)
    s = s[::-1].copy()
    U = U[:, ::-1].copy()
    pivot = np.abs(U).argmax(axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return EigenPair(U * signs, s)


def _loewner(s: np.ndarray, f: Callable, fprime: Callable) -> np.ndarray:
    """Divided-difference matrix of ``f`` at the eigenvalues ``s``."""
    li = s[:, None]
    lj = s[None, :]
    diff = li - lj
    close = np.abs(diff) <= DEGENERACY_TOL
    fs = f(s)
    safe = np.where(close, 1.0, diff)
    k = (fs[:, None] - fs[None, :]) / safe
    return np.where(close, fprime(0.5 * (li + lj)), k)


def spectral_backward(grad_out: np.ndarray, eig: EigenPair, f: Callable, fprime: Callable) -> np.ndarray:
    """Backprop through ``X -> U f(S) U^T`` for symmetric ``X``."""
    U = eig.U
    inner = U.T @ symmetrize(np.asarray(grad_out, dtype=np.float64)) @ U
    return symmetrize(U @ (_loewner(eig.s, f, fprime) * inner) @ U.T)


def _check_bimap_shapes(x: np.ndarray, W: np.ndarray) -> None:
    if W.ndim != 2 or x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"bad shapes for BiMap: W {W.shape}, X {x.shape}")
    if W.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: W is {W.shape}, X is {x.shape}")
    if W.shape[0] > W.shape[1]:
        raise ValueError(f"BiMap cannot increase dimension: W is {W.shape}")


def bimap_forward(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_bimap_shapes(x, W)
    return symmetrize(W @ x @ W.T)


def bimap_backward(grad_out: np.ndarray, x: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(grad_x, grad_W)``; ``grad_W`` is the plain Euclidean gradient."""
    x = np.asarray(x, dtype=np.float64)
    _check_bimap_shapes(x, W)
    g = symmetrize(np.asarray(grad_out, dtype=np.float64))
    if g.shape != (W.shape[0], W.shape[0]):
        raise ValueError(f"dimension mismatch: grad {g.shape} for W {W.shape}")
    grad_x = symmetrize(W.T @ g @ W)
    grad_W = 2.0 * g @ W @ x
    return grad_x, grad_W


def _reeig_fns(eps: float):
    def f(s):
        return np.maximum(s, eps)

    def fprime(s):
        # at the kink s == eps take the active side, slope 1
        return (s >= eps).astype(np.float64)

    return f, fprime


def reeig_forward(x: np.ndarray, eps: float = DEFAULT_EPSILON) -> tuple[np.ndarray, EigenPair]:
    if not eps > 0:
        raise ValueError(f"ReEig threshold must be positive, got {eps}")
    eig = sym_eig(x)
    return eig.reconstruct(np.maximum(eig.s, eps)), eig


def reeig_backward(grad_out: np.ndarray, eig: EigenPair, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    f, fprime = _reeig_fns(eps)
    return spectral_backward(grad_out, eig, f, fprime)


def logeig_forward(x: np.ndarray) -> tuple[np.ndarray, EigenPair]:
    eig = sym_eig(x)
    if eig.s[-1] <= 0:
        raise NotPositiveDefiniteError(f"matrix not positive definite (min eigenvalue {eig.s[-1]:.3e})")
    return eig.reconstruct(np.log(eig.s)), eig


def logeig_backward(grad_out: np.ndarray, eig: EigenPair) -> np.ndarray:
    if eig.s[-1] <= 0:
        raise NotPositiveDefiniteError("matrix not positive definite in LogEig tape")
    return spectral_backward(grad_out, eig, np.log, np.reciprocal)


def expm_sym(x: np.ndarray) -> np.ndarray:
    eig = sym_eig(x)
    return eig.reconstruct(np.exp(eig.s))


def vectorize_sym(x: np.ndarray) -> np.ndarray:
    """Upper triangle row by row, off-diagonals scaled by sqrt(2).

    The scaling makes the map an isometry from the Frobenius inner product.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    rows, cols = np.triu_indices(d)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return x[rows, cols] * scale


def unvectorize_sym(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize_sym`; also its backward pass."""
    v = np.asarray(v, dtype=np.float64)
    if d is None:
        d = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if v.size != d * (d + 1) // 2:
        raise ValueError(f"vector of length {v.size} is not a packed {d}x{d} symmetric matrix")
    rows, cols = np.triu_indices(d)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    out = np.zeros((d, d))
    out[rows, cols] = v / scale
    out[cols, rows] = v / scale
    return out

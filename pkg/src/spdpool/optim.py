"""Updates on the Stiefel manifold of row-orthonormal matrices (W W^T = I)."""
from __future__ import annotations

import numpy as np


class RetractionError(ArithmeticError):
    pass


def random_stiefel(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """First ``rows`` rows of a random orthogonal ``cols x cols`` matrix."""
    if rows > cols:
        raise ValueError(f"cannot fit {rows} orthonormal rows in dimension {cols}")
    q, _ = qr_positive(rng.standard_normal((cols, cols)))
    return q[:, :rows].T.copy()


def qr_positive(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with the diagonal of R made nonnegative."""
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def project_tangent(W: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Remove the component of ``grad`` lying in the row space of ``W``.

    In the column convention ``V = W^T`` this is ``G - V V^T G``.
    """
    return grad - grad @ W.T @ W


def retract(W: np.ndarray, step: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """QR retraction of ``W + step`` back onto the manifold."""
    q, r = qr_positive((W + step).T)
    diag = np.abs(np.diag(r))
    if diag.min() <= tol * max(diag.max(), 1.0):
        raise RetractionError("rank collapse during QR retraction")
    return q.T.copy()


def stiefel_step(W: np.ndarray, grad_euclidean: np.ndarray, lr: float) -> np.ndarray:
    """One Riemannian SGD step for a BiMap weight.

    A zero step returns ``W`` untouched rather than re-orthonormalized.
    """
    if grad_euclidean.shape != W.shape:
        raise ValueError(f"gradient shape {grad_euclidean.shape} != weight shape {W.shape}")
    if lr == 0:
        return W.copy()
    return retract(W, -lr * project_tangent(W, grad_euclidean))


def orthonormality_error(W: np.ndarray) -> float:
    return float(np.abs(W @ W.T - np.eye(W.shape[0])).max())

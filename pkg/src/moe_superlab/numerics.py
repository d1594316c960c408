"""Small dense linear-algebra and activation helpers.

Matrices and vectors are plain float64 numpy arrays. The single-sample
functions check shapes and raise ``ValueError`` on mismatch; the ``*_rows``
variants operate on a batch stored one sample per row.
"""

from __future__ import annotations

import numpy as np


def as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {A.shape}")
    return A


def as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {x.shape}")
    return x


def matmul(A, x) -> np.ndarray:
    """Matrix-vector product ``A @ x``."""
    A, x = as_matrix(A), as_vector(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has length {x.shape[0]}")
    return A @ x


def matmul_transpose(A, h) -> np.ndarray:
    """``A.T @ h`` computed without forming the transpose."""
    A, h = as_matrix(A), as_vector(h)
    if A.shape[0] != h.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, h has length {h.shape[0]}")
    return h @ A


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softmax(z) -> np.ndarray:
    z = as_vector(z)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    e = np.exp(Z - Z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def top_k_indices(z, k: int) -> list[int]:
    """Indices of the ``k`` largest entries.

    Ordered by descending value; equal values are ordered by ascending
    index, so ties always favour the lowest index.
    """
    z = as_vector(z)
    if not 1 <= k <= z.shape[0]:
        raise ValueError(f"k={k} out of range for vector of length {z.shape[0]}")
    # stable sort on -z keeps ascending index order among ties
    order = np.argsort(-z, kind="stable")
    return [int(i) for i in order[:k]]


def top_k_rows(Z: np.ndarray, k: int) -> np.ndarray:
    """Batched :func:`top_k_indices`; returns an ``(rows, k)`` int array."""
    if not 1 <= k <= Z.shape[-1]:
        raise ValueError(f"k={k} out of range for {Z.shape[-1]} columns")
    if k == 1:
        # argmax returns the first maximal index
        return np.argmax(Z, axis=-1)[:, None]
    return np.argsort(-Z, axis=-1, kind="stable")[:, :k]


def frobenius_sq(A) -> float:
    """Sum of squared entries."""
    A = np.asarray(A, dtype=np.float64)
    return float(np.sum(A * A))

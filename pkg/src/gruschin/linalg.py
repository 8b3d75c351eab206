"""Small batched linear-algebra helpers for the weight assembly."""

from __future__ import annotations

import numpy as np

__all__ = ["spd_solve", "batch_trace"]


def spd_solve(q: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve q @ x = rhs for a batch of small SPD matrices via Cholesky factors.

    ``q`` has shape (P, d, d), ``rhs`` shape (P, d) or (P, d, k).  The matrix is
    never inverted explicitly; substitution loops run over the (small) dimension d
    and are vectorized over the batch.
    """
    vector_rhs = rhs.ndim == 2
    b = rhs[..., None] if vector_rhs else rhs
    d = q.shape[-1]
    if d == 1:
        x = b / q[:, :, :1]
        return x[..., 0] if vector_rhs else x

    low = np.linalg.cholesky(q)
    y = np.empty_like(b, dtype=float)
    for i in range(d):
        acc = b[:, i, :].astype(float)
        for j in range(i):
            acc = acc - low[:, i, j, None] * y[:, j, :]
        y[:, i, :] = acc / low[:, i, i, None]
    x = np.empty_like(y)
    for i in range(d - 1, -1, -1):
        acc = y[:, i, :].copy()
        for j in range(i + 1, d):
            acc = acc - low[:, j, i, None] * x[:, j, :]
        x[:, i, :] = acc / low[:, i, i, None]
    return x[..., 0] if vector_rhs else x


def batch_trace(a: np.ndarray) -> np.ndarray:
    """Trace along the last two axes."""
    return np.einsum("...ii->...", a)

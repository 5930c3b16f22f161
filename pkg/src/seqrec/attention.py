"""Banded triangular positional attention, the left-shift operator, and Hankel views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "AttentionMatrix",
    "HankelView",
    "build_attention",
    "shift_left",
    "hankelize",
    "triangular_restore",
]


@dataclass(frozen=True)
class AttentionMatrix:
    """Lower-triangular Toeplitz matrix with per-diagonal weights.

    Entry (r, c) equals ``weights[r - c]`` for r >= c and 0 above the diagonal.
    In power-decay mode the weights are ``(k + 1) ** -f`` for diagonal offset k;
    identity mode keeps only the main diagonal (used for attention-free runs).
    """

    size: int
    f: float
    mode: str
    weights: np.ndarray = field(repr=False)

    def dense(self):
        out = np.zeros((self.size, self.size))
        for off, a in enumerate(self.weights):
            out += np.diag(np.full(self.size - off, a), -off)
        return out

    def apply(self, x):
        """Compute A @ x for a vector or matrix x."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.convolve(self.weights, x)[: self.size]
        return np.apply_along_axis(lambda col: np.convolve(self.weights, col)[: self.size], 0, x)

    def apply_transpose(self, x):
        """Compute A.T @ x for a vector or matrix x."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.convolve(self.weights, x[::-1])[: self.size][::-1]
        return np.apply_along_axis(self.apply_transpose, 0, x)

    def solve_transpose(self, b):
        """Solve A.T y = b by back-substitution (no explicit inverse)."""
        if self.weights[0] == 0:
            raise np.linalg.LinAlgError("attention matrix is singular (zero main diagonal)")
        return solve_triangular(self.dense().T, np.asarray(b, dtype=float), lower=False)


def build_attention(size, f=0.0, mode="power-decay"):
    if size < 1:
        raise ValueError("size must be >= 1")
    if mode == "power-decay":
        if f < 0:
            raise ValueError("decay exponent f must be >= 0")
        weights = np.arange(1, size + 1, dtype=float) ** -float(f)
    elif mode == "identity":
        weights = np.zeros(size)
        weights[0] = 1.0
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    return AttentionMatrix(size=size, f=float(f), mode=mode, weights=weights)


def shift_left(positions, items=None):
    """Decrease 1-based positions by one, dropping entries at position 1.

    Works directly on COO coordinates; the shift matrix is never materialized.
    Returns shifted positions, or a (positions, items) pair when ``items`` is
    given so callers can keep coordinate arrays aligned.
    """
    positions = np.asarray(positions, dtype=np.int64)
    keep = positions > 1
    shifted = positions[keep] - 1
    if items is None:
        return shifted
    return shifted, np.asarray(items, dtype=np.int64)[keep]


@dataclass(frozen=True)
class HankelView:
    """K_L x K_S window view over a length-K vector; entry (l, s) = source[l + s].

    Indexes the source by arithmetic only; no data is copied. Indices here are
    0-based; the skew diagonal l + s = q holds source[q].
    """

    source: np.ndarray
    n_rows: int

    @property
    def n_cols(self):
        return len(self.source) - self.n_rows + 1

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def __getitem__(self, idx):
        l, s = idx
        return self.source[l + s]

    def to_dense(self):
        l = np.arange(self.n_rows)[:, None]
        s = np.arange(self.n_cols)[None, :]
        return np.asarray(self.source, dtype=float)[l + s]

    def matvec(self, v):
        return self.to_dense() @ v

    def rmatvec(self, v):
        return self.to_dense().T @ v


def hankelize(p, window):
    """Expose vector ``p`` as a ``window x (len(p) - window + 1)`` Hankel view."""
    p = np.asarray(p)
    if not 1 <= window <= len(p):
        raise ValueError(f"window must be in [1, {len(p)}], got {window}")
    return HankelView(source=p, n_rows=window)


def triangular_restore(attention, w):
    """Solve A.T w_hat = w for the factor in the original positional space."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] != attention.size:
        raise ValueError("factor row count must match attention size")
    return attention.solve_transpose(w)

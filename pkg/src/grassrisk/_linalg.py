"""Small linear-algebra helpers shared across modules."""

from __future__ import annotations

import math

import numpy as np


def sorted_eigh(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with eigenvalues in non-increasing order.

    Ties keep the order returned by ``eigh`` (stable sort), so the identity
    yields the coordinate directions in index order. Each eigenvector is
    signed so that its largest-magnitude entry is positive; among entries of
    equal magnitude the first one decides.
    """
    w, V = np.linalg.eigh(S)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    pivot = np.argmax(np.abs(V) > np.max(np.abs(V), axis=0) * (1 - 1e-12), axis=0)
    signs = np.where(V[pivot, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return w, V * signs


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def op_norm_sym(S: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix."""
    w = np.linalg.eigvalsh(symmetrize(S))
    return float(max(abs(w[0]), abs(w[-1])))


def fsum_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)

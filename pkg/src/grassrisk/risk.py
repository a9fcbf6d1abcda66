"""PCA as empirical risk minimization over Gr(d, k).

The reconstruction risk of a subspace [U] is E||X||^2/2 - Tr(U^T S U)/2 for
the second-moment matrix S. This module holds the population spectrum, the
empirical fit, risk and excess risk, the Hessian at the optimum and the
projector distances used to measure subspace error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._linalg import op_norm_sym, sorted_eigh, symmetrize
from .errors import (
    DimensionMismatch,
    EmptyData,
    InvalidP,
    IoError,
    NoEigengap,
    NonFiniteValue,
    NotPSD,
    ParseError,
)
from .grassmann import GrassmannPoint, principal_angles

ORTHOGONAL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Population spectrum: eigenvalues (non-increasing), eigenvectors (columns), target k."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    k: int

    def __post_init__(self):
        w = np.array(self.eigenvalues, dtype=float)
        U = np.array(self.eigenvectors, dtype=float)
        d = w.size
        if U.shape != (d, d):
            raise DimensionMismatch(f"eigenvectors must be {d} x {d}, got {U.shape}")
        if not 0 < self.k < d:
            raise DimensionMismatch(f"k must satisfy 0 < k < d, got k={self.k}, d={d}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(U))):
            raise NonFiniteValue("spectrum contains non-finite entries")
        if np.any(np.diff(w) > 0):
            raise DimensionMismatch("eigenvalues must be ordered non-increasingly")
        if np.max(np.abs(U.T @ U - np.eye(d))) > ORTHOGONAL_TOL:
            raise DimensionMismatch("eigenvector matrix is not orthogonal")
        for a in (w, U):
            a.setflags(write=False)
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", U)

    @classmethod
    def from_matrix(cls, S: np.ndarray, k: int, psd: bool = True) -> "SpectralModel":
        """Eigendecomposition of a symmetric matrix (a covariance when ``psd``)."""
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {S.shape}")
        if not np.all(np.isfinite(S)):
            raise NonFiniteValue("matrix contains non-finite entries")
        if np.max(np.abs(S - S.T)) > 1e-10 * max(1.0, np.max(np.abs(S))):
            raise DimensionMismatch("matrix is not symmetric")
        w, U = sorted_eigh(symmetrize(S))
        if psd:
            if w[-1] < -1e-10 * max(1.0, abs(w[0])):
                raise NotPSD(f"covariance has negative eigenvalue {w[-1]:.3g}")
            w = np.maximum(w, 0.0)
        return cls(w, U, k)

    @classmethod
    def diagonal(cls, eigenvalues, k: int) -> "SpectralModel":
        w = np.asarray(eigenvalues, dtype=float)
        return cls.from_matrix(np.diag(w), k)

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[self.k - 1] - self.eigenvalues[self.k])

    def require_gap(self) -> None:
        if not self.gap > 0:
            raise NoEigengap(
                f"eigengap lambda_k - lambda_(k+1) = {self.gap:.3g} is not positive (k={self.k})"
            )

    @property
    def top(self) -> GrassmannPoint:
        return GrassmannPoint(self.eigenvectors[:, : self.k])

    @property
    def complement(self) -> np.ndarray:
        return self.eigenvectors[:, self.k:]

    @property
    def matrix(self) -> np.ndarray:
        U = self.eigenvectors
        return symmetrize((U * self.eigenvalues) @ U.T)

    @property
    def deltas(self) -> np.ndarray:
        """Array with entry (i, j) = lambda_j - lambda_(k+i), shape (d-k, k)."""
        w = self.eigenvalues
        return w[None, : self.k] - w[self.k:, None]

    def to_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.ravel().tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SpectralModel":
        try:
            w = np.asarray(obj["eigenvalues"], dtype=float)
            U = np.asarray(obj["eigenvectors"], dtype=float).reshape(w.size, w.size)
            return cls(w, U, int(obj["k"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DimensionMismatch):
                raise
            raise ParseError(f"invalid spectral model: {exc}") from exc

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path) -> "SpectralModel":
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoError(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return cls.from_dict(obj)

    @classmethod
    def from_csv(cls, path, k: int) -> "SpectralModel":
        """Covariance matrix stored as CSV; the eigendecomposition is done on load."""
        from .models import load_dataset

        return cls.from_matrix(load_dataset(path, "csv"), k)


@dataclass(frozen=True, eq=False)
class PcaFit:
    subspace: GrassmannPoint
    empirical_eigenvalues: np.ndarray
    n: int | None = None


@dataclass(frozen=True)
class HessianEigenpair:
    """Eigenpair of the population Hessian at the optimum (0-based indices).

    The eigenvector is the lift of U_perp E_ij; ``coords`` is E_ij.
    """

    i: int
    j: int
    value: float
    coords: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DavisKahanResult:
    lhs: float
    rhs: float
    holds: bool
    applicable: bool


def empirical_second_moment(data: np.ndarray) -> np.ndarray:
    """Uncentered second moment (1/n) sum x_i x_i^T."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyData("need at least one sample row")
    return symmetrize(X.T @ X / X.shape[0])


def pca_fit(S: np.ndarray, k: int, n: int | None = None) -> PcaFit:
    """Top-k eigenspace of a symmetric matrix, with deterministic tie-breaking."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not 0 < k < S.shape[0]:
        raise DimensionMismatch(f"need a square matrix and 0 < k < d, got {S.shape}, k={k}")
    w, U = sorted_eigh(symmetrize(S))
    return PcaFit(GrassmannPoint(U[:, :k]), w, n)


def fit_data(data: np.ndarray, k: int) -> PcaFit:
    X = np.asarray(data, dtype=float)
    return pca_fit(empirical_second_moment(X), k, X.shape[0])


def _check_point(model: SpectralModel, U: GrassmannPoint) -> None:
    if U.d != model.d or U.k != model.k:
        raise DimensionMismatch(f"point on Gr({U.d},{U.k}) but model is on Gr({model.d},{model.k})")


def population_risk(model: SpectralModel, U: GrassmannPoint, second_moment_trace: float | None = None) -> float:
    """E||X||^2/2 - Tr(U^T S U)/2; the trace defaults to the model's."""
    _check_point(model, U)
    tr = float(np.sum(model.eigenvalues)) if second_moment_trace is None else float(second_moment_trace)
    return 0.5 * tr - 0.5 * float(np.sum(U.basis * (model.matrix @ U.basis)))


def excess_risk(model: SpectralModel, U: GrassmannPoint) -> float:
    """R([U]) - R([U*]), nonnegative by construction.

    Written in the eigenbasis as a sum of nonnegative terms weighted by
    lambda_j - lambda_k, which avoids cancellation when U is close to U*.
    """
    model.require_gap()
    _check_point(model, U)
    W = model.eigenvectors.T @ U.basis  # rows: coordinates of U in the eigenbasis
    w, k = model.eigenvalues, model.k
    # 1 - ||row||^2 for the top rows, computed as the squared residual of u_j off [U]
    resid = model.eigenvectors[:, :k] - U.basis @ W[:k].T
    top_missing = np.sum(resid**2, axis=0)
    bottom_present = np.sum(W[k:] ** 2, axis=1)
    val = np.sum((w[:k] - w[k - 1]) * top_missing) + np.sum((w[k - 1] - w[k:]) * bottom_present)
    return 0.5 * float(val)


def hessian_spectrum_at_opt(model: SpectralModel) -> list[HessianEigenpair]:
    model.require_gap()
    out = []
    delta = model.deltas
    for i in range(model.d - model.k):
        for j in range(model.k):
            E = np.zeros((model.d - model.k, model.k))
            E[i, j] = 1.0
            out.append(HessianEigenpair(i, j, float(delta[i, j]), E))
    return out


def apply_h_power(model: SpectralModel, C: np.ndarray, power: float) -> np.ndarray:
    """Apply H^power (power -1 or -1/2) to coordinates, H being the Hessian at U*."""
    model.require_gap()
    C = np.asarray(C, dtype=float)
    if C.shape != (model.d - model.k, model.k):
        raise DimensionMismatch(f"coordinates must be {(model.d - model.k, model.k)}, got {C.shape}")
    if power == -1:
        return C / model.deltas
    if power == -0.5:
        return C / np.sqrt(model.deltas)
    raise ValueError(f"power must be -1 or -1/2, got {power}")


def _check_p(p: float) -> None:
    if not (p == np.inf or (np.isfinite(p) and p >= 1)):
        raise InvalidP(f"Schatten exponent must lie in [1, inf], got {p}")


def projector_schatten_distance(U: GrassmannPoint, V: GrassmannPoint, p: float = 2.0) -> float:
    """Schatten-p norm of UU^T - VV^T from the principal angles.

    The nonzero singular values of the projector difference are the sines of
    the principal angles, each appearing twice.
    """
    _check_p(p)
    s = np.sin(principal_angles(U, V))
    if p == np.inf:
        return float(np.max(s))
    return float(2.0 ** (1.0 / p) * np.sum(s**p) ** (1.0 / p))


def projector_schatten_direct(U: GrassmannPoint, V: GrassmannPoint, p: float = 2.0) -> float:
    """Same quantity from an SVD of the d x d projector difference."""
    _check_p(p)
    s = np.linalg.svd(U.projector() - V.projector(), compute_uv=False)
    if p == np.inf:
        return float(np.max(s))
    return float(np.sum(s**p) ** (1.0 / p))


def projector_distance_sq(U: GrassmannPoint, V: GrassmannPoint) -> float:
    """||UU^T - VV^T||_F^2 = 2 sum sin^2(theta_j)."""
    return 2.0 * float(np.sum(np.sin(principal_angles(U, V)) ** 2))


def davis_kahan_check(model: SpectralModel, S_emp: np.ndarray, slack: float = 1e-12) -> DavisKahanResult:
    """sin of the largest angle between fitted and true subspaces versus 2||S_emp - S||/gap."""
    model.require_gap()
    pert = op_norm_sym(np.asarray(S_emp, dtype=float) - model.matrix)
    rhs = 2.0 * pert / model.gap
    fit = pca_fit(S_emp, model.k)
    lhs = float(np.sin(principal_angles(fit.subspace, model.top)[-1]))
    applicable = pert <= model.gap / 2
    return DavisKahanResult(lhs, rhs, bool(lhs <= rhs + slack), bool(applicable))

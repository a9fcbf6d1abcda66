"""Riemannian primitives on the Grassmannian Gr(d, k).

Points are represented by d x k matrices with orthonormal columns and
tangent vectors by horizontal lifts (d x k matrices orthogonal to the
representative). Every map here is a closed-form expression built from a
thin SVD, so nothing iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AnchorMismatch,
    CutLocus,
    DimensionMismatch,
    NotOrthogonalComplement,
    RankDeficient,
)

ORTHONORMAL_TOL = 1e-12
HORIZONTAL_TOL = 1e-10
RANK_TOL = 1e-10
ZERO_TANGENT_TOL = 1e-14
SAME_SUBSPACE_TOL = 1e-8
CUT_LOCUS_MARGIN = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """A subspace [U] stored through one orthonormal representative ``basis``."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2 or not 0 < b.shape[1] < b.shape[0]:
            raise DimensionMismatch(f"basis must be d x k with 0 < k < d, got shape {b.shape}")
        err = np.max(np.abs(b.T @ b - np.eye(b.shape[1])))
        if err > ORTHONORMAL_TOL:
            raise RankDeficient(f"columns are not orthonormal (max deviation {err:.2e})")
        object.__setattr__(self, "basis", _frozen(b))

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass(frozen=True, eq=False)
class TangentLift:
    """Horizontal lift of a tangent vector at ``anchor``."""

    anchor: GrassmannPoint
    delta: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        if delta.shape != self.anchor.basis.shape:
            raise DimensionMismatch(
                f"lift shape {delta.shape} does not match anchor {self.anchor.basis.shape}"
            )
        scale = max(1.0, float(np.max(np.abs(delta), initial=0.0)))
        err = np.max(np.abs(self.anchor.basis.T @ delta), initial=0.0)
        if err > HORIZONTAL_TOL * scale:
            raise DimensionMismatch(f"lift is not horizontal (|U^T delta| = {err:.2e})")
        object.__setattr__(self, "delta", _frozen(delta))

    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))

    def inner(self, other: "TangentLift") -> float:
        _check_anchor(self.anchor, other)
        return float(np.sum(self.delta * other.delta))

    def __mul__(self, c: float) -> "TangentLift":
        return TangentLift(self.anchor, c * self.delta)

    __rmul__ = __mul__

    def __add__(self, other: "TangentLift") -> "TangentLift":
        _check_anchor(self.anchor, other)
        return TangentLift(self.anchor, self.delta + other.delta)


def _check_anchor(U: GrassmannPoint, xi: TangentLift) -> None:
    if xi.anchor is U:
        return
    if xi.anchor.basis.shape != U.basis.shape or not np.array_equal(xi.anchor.basis, U.basis):
        raise AnchorMismatch("tangent lift is anchored at a different representative")


def _check_pair(U: GrassmannPoint, V: GrassmannPoint) -> None:
    if U.basis.shape != V.basis.shape:
        raise DimensionMismatch(f"points live on different Grassmannians: {U.basis.shape} vs {V.basis.shape}")


def orthonormalize(M: np.ndarray) -> GrassmannPoint:
    """Orthonormal basis of col(M) by QR with a positive-diagonal convention."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or not 0 < M.shape[1] < M.shape[0]:
        raise DimensionMismatch(f"expected a d x k matrix with 0 < k < d, got {M.shape}")
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient("matrix does not have full column rank")
    Q, R = np.linalg.qr(M)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return GrassmannPoint(Q * signs)


def random_point(d: int, k: int, rng: np.random.Generator) -> GrassmannPoint:
    return orthonormalize(rng.standard_normal((d, k)))


def orthogonal_complement(U: GrassmannPoint) -> np.ndarray:
    """A d x (d-k) matrix whose columns complete U to an orthonormal basis."""
    Q, _ = np.linalg.qr(U.basis, mode="complete")
    comp = Q[:, U.k:]
    # one Gram-Schmidt sweep against U tightens orthogonality to roundoff
    comp = comp - U.basis @ (U.basis.T @ comp)
    Q2, R2 = np.linalg.qr(comp)
    return Q2 * np.where(np.diag(R2) < 0, -1.0, 1.0)


def project_horizontal(U: GrassmannPoint, M: np.ndarray) -> TangentLift:
    M = np.asarray(M, dtype=float)
    if M.shape != U.basis.shape:
        raise DimensionMismatch(f"expected shape {U.basis.shape}, got {M.shape}")
    B = U.basis
    return TangentLift(U, M - B @ (B.T @ M))


def random_tangent(U: GrassmannPoint, rng: np.random.Generator, norm: float | None = None) -> TangentLift:
    xi = project_horizontal(U, rng.standard_normal(U.basis.shape))
    if norm is not None:
        xi = TangentLift(U, xi.delta * (norm / xi.norm()))
    return xi


def _thin_svd(U: GrassmannPoint, delta: np.ndarray):
    """SVD of a lift with the left factor zero-padded beyond the numerical rank."""
    # re-project so that roundoff in the lift cannot leak into the basis
    delta = delta - U.basis @ (U.basis.T @ delta)
    P, s, Qt = np.linalg.svd(delta, full_matrices=False)
    cutoff = ZERO_TANGENT_TOL * max(1.0, s[0] if s.size else 0.0)
    small = s <= cutoff
    P = P.copy()
    P[:, small] = 0.0
    s = np.where(small, 0.0, s)
    return P, s, Qt.T


def exp_map(U: GrassmannPoint, xi: TangentLift, t: float = 1.0) -> GrassmannPoint:
    """Point reached at time t along the geodesic from U with initial velocity xi.

    The returned basis is U Q cos(tS) Q^T + P sin(tS) Q^T, which is the
    representative that `parallel_transport` expresses its lifts against.
    """
    _check_anchor(U, xi)
    P, s, Q = _thin_svd(U, xi.delta)
    if not np.any(s):
        return U
    ts = t * s
    basis = (U.basis @ Q) * np.cos(ts) @ Q.T + (P * np.sin(ts)) @ Q.T
    return GrassmannPoint(basis)


def _cos_sin_of_angles(U: GrassmannPoint, V: GrassmannPoint):
    M = U.basis.T @ V.basis
    cos = np.linalg.svd(M, compute_uv=False)
    sin = np.linalg.svd(V.basis - U.basis @ M, compute_uv=False)
    return np.clip(cos, 0.0, 1.0), np.sort(np.clip(sin, 0.0, 1.0))


def principal_angles(U: GrassmannPoint, V: GrassmannPoint) -> np.ndarray:
    """Principal angles between [U] and [V], sorted non-decreasingly.

    Angles come from arccos of the clipped singular values of U^T V, except
    that angles below pi/4 are recovered from the sines instead. arccos is
    ill-conditioned near 1 and would limit small angles to about 1e-8.
    """
    _check_pair(U, V)
    cos, sin = _cos_sin_of_angles(U, V)
    from_cos = np.arccos(cos)  # cos is descending, so angles ascend
    from_sin = np.arcsin(sin)
    return np.where(sin**2 < 0.5, from_sin, from_cos)


def max_angle(U: GrassmannPoint, V: GrassmannPoint) -> float:
    return float(principal_angles(U, V)[-1])


def distance(U: GrassmannPoint, V: GrassmannPoint) -> float:
    return float(np.sqrt(np.sum(principal_angles(U, V) ** 2)))


def same_subspace(U: GrassmannPoint, V: GrassmannPoint, tol: float = SAME_SUBSPACE_TOL) -> bool:
    return max_angle(U, V) < tol


def log_map(U: GrassmannPoint, V: GrassmannPoint, margin: float = CUT_LOCUS_MARGIN) -> TangentLift:
    """Lift of the shortest geodesic from [U] to [V] (inverse of `exp_map`)."""
    _check_pair(U, V)
    theta = max_angle(U, V)
    if theta >= np.pi / 2 - margin:
        raise CutLocus(f"largest principal angle {theta:.6g} is too close to pi/2")
    B = U.basis
    M = B.T @ V.basis
    N = V.basis - B @ M
    # N M^{-1} without forming the inverse
    X = np.linalg.solve(M.T, N.T).T
    P, s, Qt = np.linalg.svd(X, full_matrices=False)
    delta = (P * np.arctan(s)) @ Qt
    delta = delta - B @ (B.T @ delta)
    return TangentLift(U, delta)


def parallel_transport(U: GrassmannPoint, xi: TangentLift, t: float, zeta: TangentLift) -> TangentLift:
    """Transport zeta along the geodesic t -> exp_map(U, xi, t).

    The result is anchored at ``exp_map(U, xi, t)``.
    """
    _check_anchor(U, xi)
    _check_anchor(U, zeta)
    end = exp_map(U, xi, t)
    P, s, Q = _thin_svd(U, xi.delta)
    if not np.any(s):
        return TangentLift(end, zeta.delta)
    ts = t * s
    Pz = P.T @ zeta.delta
    moved = -(U.basis @ Q) @ (np.sin(ts)[:, None] * Pz) + P @ (np.cos(ts)[:, None] * Pz)
    delta = moved + zeta.delta - P @ Pz
    return TangentLift(end, delta)


def _check_complement(U: GrassmannPoint, U_perp: np.ndarray, tol: float) -> np.ndarray:
    U_perp = np.asarray(U_perp, dtype=float)
    if U_perp.shape != (U.d, U.d - U.k):
        raise DimensionMismatch(f"complement must be {U.d} x {U.d - U.k}, got {U_perp.shape}")
    full = np.hstack([U.basis, U_perp])
    err = np.max(np.abs(full.T @ full - np.eye(U.d)))
    if err > tol:
        raise NotOrthogonalComplement(f"[U | U_perp] is not orthogonal (deviation {err:.2e})")
    return U_perp


def lift_from_coords(U: GrassmannPoint, U_perp: np.ndarray, C: np.ndarray, tol: float = 1e-10) -> TangentLift:
    """Lift U_perp @ C of a (d-k) x k coordinate matrix."""
    U_perp = _check_complement(U, U_perp, tol)
    C = np.asarray(C, dtype=float)
    if C.shape != (U.d - U.k, U.k):
        raise DimensionMismatch(f"coordinates must be {(U.d - U.k, U.k)}, got {C.shape}")
    return TangentLift(U, U_perp @ C)


def coords_from_lift(U_perp: np.ndarray, xi: TangentLift) -> np.ndarray:
    return np.asarray(U_perp).T @ xi.delta

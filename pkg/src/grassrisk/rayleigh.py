"""Negative block Rayleigh quotient F([V]) = -Tr(V^T A V)/2 on Gr(d, k).

Provides the Riemannian gradient, Hessian and third covariant derivative,
the restriction of F to geodesics, and the self-concordance and Taylor
sandwich estimates that hold around the global minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._linalg import sorted_eigh
from .errors import AngleTooLarge, DimensionMismatch, DomainError, NoEigengap, NotMinimizer
from .grassmann import (
    GrassmannPoint,
    TangentLift,
    _check_anchor,
    exp_map,
    log_map,
    max_angle,
    orthogonal_complement,
    parallel_transport,
    same_subspace,
)

SYMMETRY_TOL = 1e-12
MINIMIZER_GRAD_TOL = 1e-8
END_BUFFER = 1e-6
COARSE_LOWER = 4.0 / 5.0
COARSE_UPPER = 3.0 / 2.0


@dataclass(frozen=True, eq=False)
class BlockRayleigh:
    """F([V]) = -Tr(V^T A V)/2 for a symmetric matrix A and target dimension k."""

    matrix: np.ndarray
    k: int
    eigenvalues: np.ndarray = field(init=False)
    eigenvectors: np.ndarray = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {A.shape}")
        if not 0 < self.k < A.shape[0]:
            raise DimensionMismatch(f"k must satisfy 0 < k < d, got k={self.k}, d={A.shape[0]}")
        if np.max(np.abs(A - A.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(A))):
            raise DimensionMismatch("matrix is not symmetric")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        w, U = sorted_eigh(A)
        w.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", U)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[self.k - 1] - self.eigenvalues[self.k])

    def minimizer(self) -> GrassmannPoint:
        """Top-k eigenspace, represented by the sorted eigenvectors."""
        if self.gap <= 0:
            raise NoEigengap(f"eigengap {self.gap:.3g} is not positive; the minimizer is not unique")
        return GrassmannPoint(self.eigenvectors[:, : self.k])


def _check_dims(B: BlockRayleigh, V: GrassmannPoint) -> None:
    if V.d != B.d or V.k != B.k:
        raise DimensionMismatch(f"point on Gr({V.d},{V.k}) but objective is on Gr({B.d},{B.k})")


def value(B: BlockRayleigh, V: GrassmannPoint) -> float:
    _check_dims(B, V)
    return -0.5 * float(np.sum(V.basis * (B.matrix @ V.basis)))


def gradient(B: BlockRayleigh, V: GrassmannPoint) -> TangentLift:
    _check_dims(B, V)
    AV = B.matrix @ V.basis
    return TangentLift(V, -(AV - V.basis @ (V.basis.T @ AV)))


def hessian_apply(B: BlockRayleigh, V: GrassmannPoint, xi: TangentLift) -> TangentLift:
    _check_dims(B, V)
    _check_anchor(V, xi)
    A, Vb, D = B.matrix, V.basis, xi.delta
    AD = A @ D
    out = D @ (Vb.T @ A @ Vb) - (AD - Vb @ (Vb.T @ AD))
    return TangentLift(V, out)


def third_derivative(B: BlockRayleigh, V: GrassmannPoint, xi1: TangentLift, xi2: TangentLift, xi3: TangentLift) -> float:
    """Third covariant derivative of F at V applied to three tangent vectors."""
    _check_dims(B, V)
    for xi in (xi1, xi2, xi3):
        _check_anchor(V, xi)
    D1, D2, D3 = xi1.delta, xi2.delta, xi3.delta
    core = D1.T @ D2 @ D3.T + D2.T @ D1 @ D3.T + D3.T @ D1 @ D2.T + D3.T @ D2 @ D1.T
    return float(np.sum(B.matrix * (V.basis @ core)))


def horizontal_basis(V: GrassmannPoint, complement: np.ndarray | None = None) -> list[TangentLift]:
    """Orthonormal basis of the horizontal space, the lifts V_perp E_ij."""
    Vp = orthogonal_complement(V) if complement is None else complement
    out = []
    for i in range(V.d - V.k):
        for j in range(V.k):
            D = np.zeros((V.d, V.k))
            D[:, j] = Vp[:, i]
            out.append(TangentLift(V, D))
    return out


def hessian_matrix(B: BlockRayleigh, V: GrassmannPoint, basis: list[TangentLift] | None = None) -> np.ndarray:
    basis = horizontal_basis(V) if basis is None else basis
    images = [hessian_apply(B, V, e).delta.ravel() for e in basis]
    E = np.array([e.delta.ravel() for e in basis])
    return E @ np.array(images).T


def hessian_lipschitz_gap(B: BlockRayleigh, V: GrassmannPoint, xi: TangentLift) -> tuple[float, float]:
    """Operator-norm change of the transported Hessian along exp(V, t xi), t in [0,1].

    Returns ``(change, bound)`` with bound = 4 ||A||_F ||xi||. The change is
    computed exactly on an orthonormal basis of the horizontal space; the
    inverse transport is the adjoint because transport is an isometry.
    """
    basis = horizontal_basis(V)
    H0 = hessian_matrix(B, V, basis)
    end = exp_map(V, xi, 1.0)
    moved = [parallel_transport(V, xi, 1.0, e) for e in basis]
    H1 = hessian_matrix(B, end, moved)
    diff = 0.5 * ((H1 - H0) + (H1 - H0).T)
    w = np.linalg.eigvalsh(diff)
    change = float(max(abs(w[0]), abs(w[-1])))
    return change, 4.0 * float(np.linalg.norm(B.matrix)) * xi.norm()


@dataclass(frozen=True)
class GeodesicProfile:
    """F and its first three derivatives along a geodesic, t in t_grid.

    ``g``..``g3`` come from transported covariant derivatives; ``g2_closed``
    and ``g3_closed`` are the same quantities from closed-form trigonometric
    expressions and serve as an independent check.
    """

    t_grid: np.ndarray
    g: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g2_closed: np.ndarray
    g3_closed: np.ndarray
    theta_max: float

    def agreement(self) -> float:
        """Largest relative disagreement between the two derivative paths."""
        scale = max(np.max(np.abs(self.g2)), np.max(np.abs(self.g3)), 1e-300)
        return float(max(np.max(np.abs(self.g2 - self.g2_closed)), np.max(np.abs(self.g3 - self.g3_closed))) / scale)


def _closed_form_derivatives(A: np.ndarray, U: np.ndarray, P, s, Q, t_grid):
    """g'' and g''' along t -> U Q cos(tS) Q^T + P sin(tS) Q^T."""
    UQ = U @ Q
    g2, g3 = [], []
    s2 = s**2
    for t in t_grid:
        c, sn = np.cos(t * s), np.sin(t * s)
        Vt = UQ * c + P * sn
        Vdot = (-UQ * sn + P * c) * s
        AV = A @ Vt
        g2.append(np.sum(s2 * np.sum(Vt * AV, axis=0)) - np.sum(Vdot * (A @ Vdot)))
        g3.append(4.0 * np.sum(s2 * np.sum(Vdot * AV, axis=0)))
    return np.array(g2), np.array(g3)


def geodesic_profile(B: BlockRayleigh, V_start: GrassmannPoint, V_end: GrassmannPoint, t_grid=None) -> GeodesicProfile:
    t_grid = np.linspace(0.0, 1.0, 50) if t_grid is None else np.asarray(t_grid, dtype=float)
    _check_dims(B, V_start)
    xi = log_map(V_start, V_end)
    theta = max_angle(V_start, V_end)
    g, g1, g2, g3 = [], [], [], []
    for t in t_grid:
        pt = exp_map(V_start, xi, t)
        vel = parallel_transport(V_start, xi, t, xi)
        g.append(value(B, pt))
        g1.append(gradient(B, pt).inner(vel))
        g2.append(hessian_apply(B, pt, vel).inner(vel))
        g3.append(third_derivative(B, pt, vel, vel, vel))
    P, s, Qt = np.linalg.svd(xi.delta, full_matrices=False)
    g2c, g3c = _closed_form_derivatives(B.matrix, V_start.basis, P, s, Qt.T, t_grid)
    return GeodesicProfile(
        t_grid, np.array(g), np.array(g1), np.array(g2), np.array(g3), g2c, g3c, theta
    )


def psi(theta: float) -> float:
    """(1/theta) * integral over [0,1] of log tan(theta t + pi/4) dt, for 0 < theta < pi/4."""
    if not 0.0 < theta < np.pi / 4:
        raise DomainError(f"theta must lie in (0, pi/4), got {theta}")
    # log tan(x + pi/4) = artanh(sin 2x), which stays accurate for small x;
    # near 2x = pi/2 the complementary angle y = pi/2 - 2x avoids sin(2x) -> 1
    def f(t):
        x = 2.0 * theta * t
        if x < np.pi / 4:
            return np.arctanh(np.sin(x)) / theta
        y = np.pi / 2 - x
        return 0.5 * np.log((1.0 + np.cos(y)) / (2.0 * np.sin(0.5 * y) ** 2)) / theta

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    return float(val)


def _resolve_minimizer(B: BlockRayleigh, V_star: GrassmannPoint | None) -> GrassmannPoint:
    Vs = B.minimizer()
    if V_star is not None:
        g = gradient(B, V_star).norm()
        if g > MINIMIZER_GRAD_TOL or not same_subspace(V_star, Vs):
            raise NotMinimizer(f"supplied point is not the global minimizer (gradient norm {g:.2e})")
    return Vs


def _minimizer_closed_form(B: BlockRayleigh, Vs: GrassmannPoint, xi: TangentLift, s_grid):
    """g'' and g''' on the geodesic leaving the minimizer, in the eigenbasis.

    With xi = P S Q^T, the derivatives reduce to traces against
    Q^T D_top Q - Gam^T D_rest Gam where Gam = V_perp^T P.
    """
    k = B.k
    P, s, Qt = np.linalg.svd(xi.delta, full_matrices=False)
    rank = s > 1e-14 * max(1.0, s[0])
    P = P * rank
    s = s * rank
    Q = Qt.T
    Vp = B.eigenvectors[:, k:]
    Gam = Vp.T @ P
    X = Q.T @ (B.eigenvalues[:k, None] * Q) - Gam.T @ (B.eigenvalues[k:, None] * Gam)
    x = np.diag(X)
    g2 = np.array([np.sum(s**2 * np.cos(2 * t * s) * x) for t in s_grid])
    g3 = np.array([-2.0 * np.sum(s**3 * np.sin(2 * t * s) * x) for t in s_grid])
    return g2, g3


def _default_grid(n: int = 50) -> np.ndarray:
    return np.linspace(0.0, 1.0 - END_BUFFER, n)


@dataclass(frozen=True)
class ConcordanceProfile:
    t_grid: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    margin: np.ndarray
    theta: float


def concordance_profile(
    B: BlockRayleigh,
    V: GrassmannPoint,
    t_grid=None,
    V_star: GrassmannPoint | None = None,
    orientation: str = "forward",
    clock: str = "minimizer",
) -> ConcordanceProfile:
    """Self-concordance margins 2 theta tan(2 s theta) g'' - |g'''| on a grid.

    ``orientation="forward"`` walks from the minimizer to V and
    ``"reverse"`` walks from V to the minimizer; t always runs from the start
    point. ``clock`` chooses what s measures: ``"minimizer"`` uses the
    fraction of the path travelled away from the minimizer (s = t forward,
    s = 1 - t reverse) and ``"start"`` uses s = t in both orientations.
    """
    if orientation not in ("forward", "reverse") or clock not in ("minimizer", "start"):
        raise DomainError(f"unknown orientation/clock {orientation!r}/{clock!r}")
    t_grid = _default_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    Vs = _resolve_minimizer(B, V_star)
    _check_dims(B, V)
    theta = max_angle(Vs, V)
    if theta >= np.pi / 4:
        raise AngleTooLarge(f"largest principal angle {theta:.6g} is not below pi/4")
    zeros = np.zeros_like(t_grid)
    if theta < 1e-14:
        return ConcordanceProfile(t_grid, zeros, zeros, zeros, theta)
    if orientation == "forward":
        g2, g3 = _minimizer_closed_form(B, Vs, log_map(Vs, V), t_grid)
    else:
        xi = log_map(V, Vs)
        P, s, Qt = np.linalg.svd(xi.delta, full_matrices=False)
        g2, g3 = _closed_form_derivatives(B.matrix, V.basis, P, s, Qt.T, t_grid)
    s_grid = t_grid if (orientation == "forward" or clock == "start") else 1.0 - t_grid
    margin = 2.0 * theta * np.tan(2.0 * s_grid * theta) * g2 - np.abs(g3)
    return ConcordanceProfile(t_grid, g2, g3, margin, theta)


def self_concordance_margin(B, V, t_grid=None, V_star=None, orientation="forward", clock="minimizer") -> np.ndarray:
    return concordance_profile(B, V, t_grid, V_star, orientation, clock).margin


@dataclass(frozen=True)
class TaylorSandwich:
    actual: float
    quad_term: float
    lower: float
    upper: float
    sharp_lower: float
    sharp_upper: float
    theta: float

    @property
    def slack(self) -> float:
        """Smallest distance of the remainder inside the coarse band (negative if outside)."""
        return min(self.actual - self.lower, self.upper - self.actual)

    @property
    def sharp_slack(self) -> float:
        return min(self.actual - self.sharp_lower, self.sharp_upper - self.actual)


def taylor_sandwich(
    B: BlockRayleigh, V: GrassmannPoint, V_star: GrassmannPoint | None = None, orientation: str = "forward"
) -> TaylorSandwich:
    """Second-order Taylor remainder of F between V and the minimizer, with its bounds.

    Forward expands around the minimizer (the gradient term vanishes);
    reverse expands around V towards the minimizer and keeps the gradient
    term and the Hessian at V.
    """
    Vs = _resolve_minimizer(B, V_star)
    _check_dims(B, V)
    theta = max_angle(Vs, V)
    if theta >= np.pi / 4:
        raise AngleTooLarge(f"largest principal angle {theta:.6g} is not below pi/4")
    if orientation == "forward":
        base, target = Vs, V
    elif orientation == "reverse":
        base, target = V, Vs
    else:
        raise DomainError(f"unknown orientation {orientation!r}")
    xi = log_map(base, target)
    actual = value(B, target) - value(B, base) - gradient(B, base).inner(xi)
    quad = 0.5 * hessian_apply(B, base, xi).inner(xi)
    if theta > 0:
        lo_sharp = np.sin(theta) ** 2 / theta**2
        hi_sharp = psi(min(theta, np.pi / 4 - 1e-12))
    else:
        lo_sharp = hi_sharp = 1.0
    return TaylorSandwich(
        actual=actual,
        quad_term=quad,
        lower=COARSE_LOWER * quad,
        upper=COARSE_UPPER * quad,
        sharp_lower=lo_sharp * quad,
        sharp_upper=hi_sharp * quad,
        theta=theta,
    )

"""Fourth-moment tensors and the asymptotic and finite-sample risk laws built on them.

Coordinates are taken in the population eigenbasis, x~_a = <u_a, X>. Three
slices of the fourth-moment tensor are kept:

* ``gamma[j, s, r, p] = E[x~_j x~_s x~_r x~_p]`` over top indices,
* ``lam[i, j, s, t] = E[x~_(k+i) x~_j x~_(k+s) x~_t]`` (bottom, top, bottom, top),
* ``omega[i, t, q, l]`` over bottom indices.

``lam`` alone determines the limiting law of the PCA error; all three enter
the variance parameters of the sample-size threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._linalg import op_norm_sym, symmetrize
from .errors import (
    DegenerateSpectrum,
    DeltaOutOfRange,
    DimensionMismatch,
    EigenbasisMismatch,
    EmptyData,
    InvalidSpike,
    NoConvergence,
    NotPSD,
)
from .risk import SpectralModel

MAX_DIM = 64
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FourthMomentTensors:
    lam: np.ndarray
    gamma: np.ndarray | None = None
    omega: np.ndarray | None = None
    source: str = "analytic_gaussian"
    n_samples: int | None = None

    def __post_init__(self):
        for name in ("lam", "gamma", "omega"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.array(a, dtype=float)
            if a.ndim != 4:
                raise DimensionMismatch(f"{name} must be a 4-tensor, got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        m, k = self.lam.shape[:2]
        if self.lam.shape != (m, k, m, k):
            raise DimensionMismatch(f"lam must have shape (m, k, m, k), got {self.lam.shape}")

    @property
    def k(self) -> int:
        return self.lam.shape[1]

    @property
    def d(self) -> int:
        return self.lam.shape[0] + self.lam.shape[1]

    def to_dict(self) -> dict:
        out = {"source": self.source, "n_samples": self.n_samples}
        for name, order in (("lam", "i,j,s,t"), ("gamma", "j,s,r,p"), ("omega", "i,t,q,l")):
            a = getattr(self, name)
            if a is not None:
                out[name] = {"dims": list(a.shape), "entries": a.ravel().tolist(), "index_order": order}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "FourthMomentTensors":
        def load(name):
            block = obj.get(name)
            if block is None:
                return None
            return np.asarray(block["entries"], dtype=float).reshape(block["dims"])

        return cls(load("lam"), load("gamma"), load("omega"), obj.get("source", "empirical"), obj.get("n_samples"))


def _check_dim(d: int) -> None:
    if d > MAX_DIM:
        raise DimensionMismatch(f"dense fourth-moment tensors are limited to d <= {MAX_DIM}, got {d}")


def _independent_block(m2, m4, ia, ib, ic, ie) -> np.ndarray:
    """E[x_a x_b x_c x_e] for independent, symmetric coordinates with moments m2, m4."""
    a = ia[:, None, None, None]
    b = ib[None, :, None, None]
    c = ic[None, None, :, None]
    e = ie[None, None, None, :]
    v2 = np.asarray(m2, dtype=float)
    out = np.zeros((ia.size, ib.size, ic.size, ie.size))
    out += ((a == b) & (c == e) & (a != c)) * (v2[a] * v2[c])
    out += ((a == c) & (b == e) & (a != b)) * (v2[a] * v2[b])
    out += ((a == e) & (b == c) & (a != b)) * (v2[a] * v2[b])
    out += ((a == b) & (b == c) & (c == e)) * np.asarray(m4, dtype=float)[a]
    return out


def independent_fourth_moments(m2, m4, k: int, source: str) -> FourthMomentTensors:
    """Tensors for eigen-coordinates that are independent with E x^2 = m2, E x^4 = m4."""
    d = len(m2)
    _check_dim(d)
    top, bot = np.arange(k), np.arange(k, d)
    return FourthMomentTensors(
        lam=_independent_block(m2, m4, bot, top, bot, top),
        gamma=_independent_block(m2, m4, top, top, top, top),
        omega=_independent_block(m2, m4, bot, bot, bot, bot),
        source=source,
    )


def gaussian_fourth_moments(model: SpectralModel) -> FourthMomentTensors:
    """Wick's formula for X ~ N(0, Sigma); eigen-coordinates are independent."""
    lam = model.eigenvalues
    return independent_fourth_moments(lam, 3.0 * lam**2, model.k, "analytic_gaussian")


def spiked_model(eta, sigma: float, d: int) -> SpectralModel:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1 or eta.size == 0 or np.any(eta <= 0) or np.any(np.diff(eta) > 0):
        raise InvalidSpike("spike strengths must be positive and non-increasing")
    if not sigma > 0 or not eta.size < d:
        raise InvalidSpike("need sigma > 0 and fewer spikes than dimensions")
    w = np.concatenate([eta + sigma**2, np.full(d - eta.size, sigma**2)])
    return SpectralModel(w, np.eye(d), eta.size)


def spiked_fourth_moments(eta, sigma: float, d: int, latent: str = "gaussian") -> tuple[FourthMomentTensors, SpectralModel]:
    """Tensors for X = sum_j xi_j e_j + eps, eps ~ N(0, sigma^2 I).

    ``latent`` selects xi_j ~ N(0, eta_j) ("gaussian") or
    xi_j = sqrt(eta_j) * (random sign) ("rademacher"). Coordinates stay
    independent in both cases, so the tensors are exact.
    """
    model = spiked_model(eta, sigma, d)
    eta = np.asarray(eta, dtype=float)
    k = eta.size
    s2 = sigma**2
    m2 = model.eigenvalues
    m4 = 3.0 * m2**2
    if latent == "rademacher":
        m4 = m4.copy()
        m4[:k] = eta**2 + 6.0 * eta * s2 + 3.0 * s2**2
    elif latent != "gaussian":
        raise InvalidSpike(f"unknown latent distribution {latent!r}")
    return independent_fourth_moments(m2, m4, k, "analytic_spiked"), model


def spiked_reference_variances(eta, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form entry variances of G and H quoted for the spiked model.

    Returned as stated, for comparison against the law derived from the
    spiked tensors (see `asymptotic_law`); the two do not coincide.
    """
    eta = np.asarray(eta, dtype=float)
    s2 = sigma**2
    return s2 * (1.0 + s2 / eta**2), s2 * (eta + s2 / eta)


def _accumulate_products(Y1: np.ndarray, Y2: np.ndarray, chunk: int) -> np.ndarray:
    """Mean over rows of outer(y1 (x) y2, y1 (x) y2) with y1, y2 row slices."""
    n, a = Y1.shape
    b = Y2.shape[1]
    acc = np.zeros((a * b, a * b))
    for start in range(0, n, chunk):
        Z = (Y1[start:start + chunk, :, None] * Y2[start:start + chunk, None, :]).reshape(-1, a * b)
        acc += Z.T @ Z
    return (acc / n).reshape(a, b, a, b)


def empirical_fourth_moments(data: np.ndarray, model: SpectralModel) -> FourthMomentTensors:
    """Sample averages of fourth-order products of eigen-coordinates."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise EmptyData("need at least two samples")
    if X.shape[1] != model.d:
        raise DimensionMismatch(f"data has {X.shape[1]} columns, model has d={model.d}")
    _check_dim(model.d)
    Y = X @ model.eigenvectors
    k = model.k
    top, bot = Y[:, :k], Y[:, k:]
    chunk = max(1, 2**22 // max(1, (model.d - k) ** 2))
    return FourthMomentTensors(
        lam=_accumulate_products(bot, top, chunk),
        gamma=_accumulate_products(top, top, chunk),
        omega=_accumulate_products(bot, bot, chunk),
        source="empirical",
        n_samples=X.shape[0],
    )


def generalized_fourth_moments(samples, model: SpectralModel, weights=None, tol: float = 1e-8) -> FourthMomentTensors:
    """Lambda slice for estimating the top eigenspace of M = E[A] from draws of A.

    ``samples`` is an (n, d, d) stack of symmetric matrices, optionally with
    probability ``weights``; the (weighted) mean must be block-diagonal in the
    model's eigenbasis.
    """
    A = np.asarray(samples, dtype=float)
    if A.ndim != 3 or A.shape[0] == 0:
        raise EmptyData("need a non-empty stack of matrices")
    if A.shape[1:] != (model.d, model.d):
        raise DimensionMismatch(f"matrices must be {model.d} x {model.d}")
    _check_dim(model.d)
    w = np.full(A.shape[0], 1.0 / A.shape[0]) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    Ut, Up = model.eigenvectors[:, : model.k], model.complement
    mean = np.einsum("n,nab->ab", w, A)
    scale = max(1.0, float(np.max(np.abs(mean))))
    cross = np.max(np.abs(Up.T @ mean @ Ut))
    if cross > tol * scale:
        raise EigenbasisMismatch(f"mean matrix is not block-diagonal in the model eigenbasis (off-block {cross:.2e})")
    Bm = np.einsum("ai,nab,bj->nij", Up, A, Ut)
    lam = np.einsum("n,nij,nst->ijst", w, Bm, Bm)
    return FourthMomentTensors(lam=lam, source="generalized", n_samples=A.shape[0])


@dataclass(frozen=True, eq=False)
class AsymptoticLaw:
    """Limit law of the scaled PCA error.

    ``g_cov[i, j, s, t] = E[G_ij G_st]`` for the limit G of
    sqrt(n) * (coordinates of the log map), and ``h_cov`` likewise for
    H = H^(1/2) G, whose half squared norm is the limit of n * excess risk.
    """

    g_cov: np.ndarray
    h_cov: np.ndarray
    mean_h_sq: float
    tau_sq: float
    tau_sq_g: float
    deltas: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.deltas.shape

    def flat(self, which: str = "g") -> np.ndarray:
        a = self.g_cov if which == "g" else self.h_cov
        m, k = self.shape
        return a.reshape(m * k, m * k)

    @property
    def mean_excess(self) -> float:
        return 0.5 * self.mean_h_sq

    @property
    def mean_g_sq(self) -> float:
        return float(np.trace(self.flat("g")))


def asymptotic_law(model: SpectralModel, tensors: FourthMomentTensors) -> AsymptoticLaw:
    model.require_gap()
    m, k = model.d - model.k, model.k
    if tensors.lam.shape != (m, k, m, k):
        raise DimensionMismatch(f"tensor shape {tensors.lam.shape} does not fit d={model.d}, k={k}")
    dl = model.deltas
    g = tensors.lam / (dl[:, :, None, None] * dl[None, None, :, :])
    root = np.sqrt(dl)
    h = tensors.lam / (root[:, :, None, None] * root[None, None, :, :])
    gf = symmetrize(g.reshape(m * k, m * k))
    hf = symmetrize(h.reshape(m * k, m * k))
    eg, eh = np.linalg.eigvalsh(gf), np.linalg.eigvalsh(hf)
    for name, ev in (("g_cov", eg), ("h_cov", eh)):
        if ev[0] < -PSD_TOL * max(1.0, ev[-1]):
            raise NotPSD(f"{name} has negative eigenvalue {ev[0]:.3g}")
    return AsymptoticLaw(
        g_cov=gf.reshape(m, k, m, k),
        h_cov=hf.reshape(m, k, m, k),
        mean_h_sq=float(np.trace(hf)),
        tau_sq=float(eh[-1]),
        tau_sq_g=float(eg[-1]),
        deltas=dl,
    )


@dataclass(frozen=True)
class QuantileBand:
    lower: float
    upper: float
    center: float

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


BAND_UPPER = 1.0
BAND_LOWER = 1.0 / 64.0


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 0.1:
        raise DeltaOutOfRange(f"delta must lie in (0, 0.1), got {delta}")


def quantile_band(law: AsymptoticLaw, delta: float) -> QuantileBand:
    """Band [b/64, b] for lim n * Q_excess(1 - delta), b = E||H||^2 + 2 tau^2 log(1/delta)."""
    _check_delta(delta)
    b = law.mean_h_sq + 2.0 * law.tau_sq * math.log(1.0 / delta)
    return QuantileBand(BAND_LOWER * b, BAND_UPPER * b, law.mean_excess)


def projector_quantile_band(law: AsymptoticLaw, delta: float) -> QuantileBand:
    """Band for lim n * Q(1 - delta) of the squared Frobenius projector distance."""
    _check_delta(delta)
    b = 4.0 * law.mean_g_sq + 8.0 * law.tau_sq_g * math.log(1.0 / delta)
    return QuantileBand(BAND_LOWER * b, BAND_UPPER * b, 2.0 * law.mean_g_sq)


# ---------------------------------------------------------------------------
# variance parameters of the whitened empirical Hessian


@dataclass(frozen=True, eq=False)
class VarianceEstimate:
    value: float
    certificate: np.ndarray
    is_heuristic: bool = False
    converged: bool = True


@dataclass(frozen=True, eq=False)
class VarianceParams:
    v_big: float
    nu: float
    v_certificate: np.ndarray
    nu_certificate: np.ndarray
    nu_is_heuristic: bool = True


def _require_full(tensors: FourthMomentTensors) -> None:
    if tensors.gamma is None or tensors.omega is None:
        raise DimensionMismatch("variance parameters need the gamma and omega slices")


def hessian_quadratic_form(model: SpectralModel, tensors: FourthMomentTensors) -> np.ndarray:
    """Matrix of M -> E<M, H^(-1/2) H_1 H^(-1/2) M>^2-type quadratic form over flattened M.

    Entry ((i, s), (t, p)) collects the three tensor contributions; the form
    evaluated at a unit M is the uncentered second moment of the whitened
    single-sample Hessian applied to M.
    """
    model.require_gap()
    _require_full(tensors)
    m, k = model.d - model.k, model.k
    dl = model.deltas
    G, L, Om = tensors.gamma, tensors.lam, tensors.omega
    Q = np.zeros((m, k, m, k))
    rt = np.sqrt(dl)
    # top block: sum_j Gamma_jjsp / (delta_ij sqrt(delta_is delta_ip))
    gjj = np.einsum("jjsp->jsp", G)
    top = np.einsum("jsp,ij->isp", gjj, 1.0 / dl) / (rt[:, :, None] * rt[:, None, :])
    for i in range(m):
        Q[i, :, i, :] += top[i]
    # cross block: Lambda_ijts / (delta_ij sqrt(delta_is delta_tj)) multiplies m_is m_tj
    den = dl[:, :, None, None] * rt[:, None, None, :] * rt.T[None, :, :, None]
    cross = np.einsum("ijts->istj", L / den)
    Q -= cross
    Q -= cross.transpose(2, 3, 0, 1)
    # bottom block: sum_i Omega_iiql / (delta_ij sqrt(delta_qj delta_lj))
    oii = np.einsum("iiql->iql", Om)
    bot = np.einsum("iql,ij->qlj", oii, 1.0 / dl) / (rt[:, None, :] * rt[None, :, :])
    for j in range(k):
        Q[:, j, :, j] += bot[:, :, j]
    Qf = Q.reshape(m * k, m * k)
    return symmetrize(Qf)


def variance_param_v(model: SpectralModel, tensors: FourthMomentTensors) -> VarianceEstimate:
    """Largest eigenvalue of the centered quadratic form, with its maximizing unit M."""
    Q = hessian_quadratic_form(model, tensors)
    w, V = np.linalg.eigh(Q)
    cert = V[:, -1].reshape(model.d - model.k, model.k)
    cert = cert * (1.0 if cert.ravel()[np.argmax(np.abs(cert))] >= 0 else -1.0)
    return VarianceEstimate(float(w[-1]) - 1.0, cert)


class _QuarticObjective:
    """E<M, whitened single-sample Hessian M>^2 as a quartic in M, via matrix-vector products."""

    def __init__(self, model: SpectralModel, tensors: FourthMomentTensors):
        _require_full(tensors)
        self.m, self.k = model.d - model.k, model.k
        m, k = self.m, self.k
        self.inv_root = 1.0 / np.sqrt(model.deltas)
        self.G2 = tensors.gamma.reshape(k * k, k * k)
        # L2[(a, b), (j, s)] = Lambda_{a j b s}
        self.L2 = tensors.lam.transpose(0, 2, 1, 3).reshape(m * m, k * k)
        self.O2 = tensors.omega.reshape(m * m, m * m)

    def _parts(self, W):
        a = (W.T @ W).ravel()
        b = (W @ W.T).ravel()
        return a, b

    def _grads(self, a, b):
        gA = (self.G2 @ a + self.G2.T @ a - 2.0 * (self.L2.T @ b)).reshape(self.k, self.k)
        gB = (self.O2 @ b + self.O2.T @ b - 2.0 * (self.L2 @ a)).reshape(self.m, self.m)
        return gA + gA.T, gB + gB.T

    def value_and_grad(self, C: np.ndarray):
        W = C * self.inv_root
        a, b = self._parts(W)
        f = a @ (self.G2 @ a) - 2.0 * (b @ (self.L2 @ a)) + b @ (self.O2 @ b)
        SA, SB = self._grads(a, b)
        return float(f), (W @ SA + SB @ W) * self.inv_root

    def hess_vec(self, C: np.ndarray, E: np.ndarray) -> np.ndarray:
        """Euclidean Hessian of the quartic at C applied to direction E."""
        W, dW = C * self.inv_root, E * self.inv_root
        a, b = self._parts(W)
        da = (dW.T @ W + W.T @ dW).ravel()
        db = (dW @ W.T + W @ dW.T).ravel()
        SA, SB = self._grads(a, b)
        dSA, dSB = self._grads(da, db)
        return (dW @ SA + W @ dSA + dSB @ W + SB @ dW) * self.inv_root


def _sphere_ascent(obj: _QuarticObjective, C0: np.ndarray, tol: float, max_iter: int):
    """Backtracking projected gradient ascent; returns (f, C, gradient norm)."""
    C = C0 / np.linalg.norm(C0)
    f, g = obj.value_and_grad(C)
    step = 1.0 / max(1.0, abs(f))
    gn = np.inf
    for _ in range(max_iter):
        rg = g - np.sum(g * C) * C
        gn = np.linalg.norm(rg)
        if gn <= tol * max(1.0, abs(f)):
            break
        step *= 2.0
        while True:
            Cn = C + step * rg
            Cn /= np.linalg.norm(Cn)
            fn, g_new = obj.value_and_grad(Cn)
            if fn >= f + 1e-4 * step * gn**2:
                break
            step *= 0.5
            if step < 1e-20:
                return f, C, gn
        C, f, g = Cn, fn, g_new
    return f, C, gn


def _sphere_newton(obj: _QuarticObjective, C: np.ndarray, f: float, tol: float, max_iter: int = 50):
    """Riemannian Newton polish on the unit sphere; steps that lower f are rejected."""
    n = C.size
    for _ in range(max_iter):
        f, g = obj.value_and_grad(C)
        c, gv = C.ravel(), g.ravel()
        rg = gv - (gv @ c) * c
        gn = np.linalg.norm(rg)
        if gn <= tol * max(1.0, abs(f)):
            return f, C, gn
        basis = np.linalg.qr(np.column_stack([c, np.eye(n)]))[0][:, 1:n]
        Hb = np.column_stack([obj.hess_vec(C, e.reshape(C.shape)).ravel() for e in basis.T])
        H = basis.T @ Hb - (gv @ c) * np.eye(n - 1)
        try:
            step = basis @ np.linalg.solve(0.5 * (H + H.T), -(basis.T @ rg))
        except np.linalg.LinAlgError:
            return f, C, gn
        Cn = (c + step) / np.linalg.norm(c + step)
        fn, _ = obj.value_and_grad(Cn.reshape(C.shape))
        if fn < f - 1e-13 * max(1.0, abs(f)):
            return f, C, gn
        C = Cn.reshape(C.shape)
    f, g = obj.value_and_grad(C)
    rg = g - np.sum(g * C) * C
    return f, C, float(np.linalg.norm(rg))


def variance_param_nu(
    model: SpectralModel,
    tensors: FourthMomentTensors,
    restarts: int = 64,
    seed: int = 0,
    tol: float = 1e-10,
    max_iter: int = 2000,
    warm_start: np.ndarray | None = None,
) -> VarianceEstimate:
    """Heuristic maximum of the centered quartic variance over the unit Frobenius sphere.

    Projected gradient ascent with backtracking, then a Riemannian Newton
    polish, started from the quadratic-form certificate, every coordinate
    matrix E_ij (up to 64 of them) and ``restarts`` random starts, each
    seeded independently. The best value found is a lower bound on the
    supremum.
    """
    model.require_gap()
    obj = _QuarticObjective(model, tensors)
    m, k = obj.m, obj.k
    starts = []
    cert = variance_param_v(model, tensors).certificate if warm_start is None else warm_start
    starts.append(cert)
    for idx in range(min(m * k, 64)):
        E = np.zeros(m * k)
        E[idx] = 1.0
        starts.append(E.reshape(m, k))
    for r in range(restarts):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, r])))
        starts.append(rng.standard_normal((m, k)))
    best = (-np.inf, None, False)
    for C0 in starts:
        f, C, gn = _sphere_ascent(obj, C0, 1e-6, max_iter)
        f, C, gn = _sphere_newton(obj, C, f, tol)
        if f > best[0]:
            best = (f, C, gn <= tol * max(1.0, abs(f)))
    f, C, ok = best
    return VarianceEstimate(f - 1.0, C, is_heuristic=True, converged=ok)


def variance_params(model: SpectralModel, tensors: FourthMomentTensors, restarts: int = 64, seed: int = 0) -> VarianceParams:
    v = variance_param_v(model, tensors)
    nu = variance_param_nu(model, tensors, restarts=restarts, seed=seed, warm_start=v.certificate)
    return VarianceParams(v.value, nu.value, v.certificate, nu.certificate)


def gaussian_closed_forms(model: SpectralModel) -> tuple[float, float]:
    """Reference closed-form (V, nu) for Gaussian data."""
    model.require_gap()
    lam, k, d = model.eigenvalues, model.k, model.d
    lk, lk1 = lam[k - 1], lam[k]
    den_top = lam[:k] - lk1
    if np.any(den_top <= 0):
        raise DegenerateSpectrum("lambda_s equals lambda_(k+1) for some s <= k")
    v = 0.0
    for s in range(k):
        v += (1 + (s == k - 1)) * lk * lam[s] / ((lk - lk1) * den_top[s])
    for t in range(d - k):
        den = lk - lam[k + t]
        if den <= 0:
            raise DegenerateSpectrum("lambda_k equals lambda_(k+t)")
        v += (1 + (t == 0)) * lk1 * lam[k + t] / ((lk - lk1) * den)
    dl = model.deltas
    nu = np.max((lam[None, :k] ** 2 + lam[k:, None] ** 2) / dl**2)
    return float(v), float(nu)


# ---------------------------------------------------------------------------
# sample-size threshold and finite-sample bound


def dimension_factor(d: int) -> float:
    """4 (1 + 2 ceil(ln d))."""
    return 4.0 * (1.0 + 2.0 * math.ceil(math.log(d)))


def gaussian_matrix_variance(model: SpectralModel) -> float:
    """||E[(XX^T - Sigma)^2]||_op for X ~ N(0, Sigma), i.e. ||tr(Sigma) Sigma + Sigma^2||_op."""
    lam = model.eigenvalues
    return float(np.max(np.abs(np.sum(lam) * lam + lam**2)))


def matrix_variance_from_data(data: np.ndarray, sigma: np.ndarray) -> float:
    """Sample estimate of ||E[(XX^T - Sigma)^2]||_op."""
    X = np.asarray(data, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise EmptyData("need samples")
    sq = np.sum(X**2, axis=1)
    XS = X @ sigma
    acc = (X * sq[:, None]).T @ X / n - (X.T @ XS) / n - (XS.T @ X) / n + sigma @ sigma
    return op_norm_sym(acc)


def _max_deviation_sq(X: np.ndarray, sigma: np.ndarray, lam_max: float, lam_min: float) -> float:
    """max_i ||x_i x_i^T - Sigma||_op^2, pruning rows that cannot attain the maximum."""
    sq = np.sum(X**2, axis=1)
    safe = np.where(sq > 0, sq, 1.0)
    rq = np.einsum("ij,jk,ik->i", X, sigma, X) / safe
    lower = np.maximum(np.where(sq > 0, sq - rq, 0.0), 0.0)
    # ||x x^T - Sigma|| >= lambda_max(Sigma - x x^T) >= lambda_2(Sigma); use lam_min as a safe floor
    best_lower = max(float(np.max(lower)), lam_min)
    upper = np.maximum(sq - lam_min, lam_max)
    cand = X[upper >= best_lower - 1e-12]
    mats = cand[:, :, None] * cand[:, None, :] - sigma
    ev = np.linalg.eigvalsh(mats)
    norms = np.maximum(np.abs(ev[:, 0]), np.abs(ev[:, -1]))
    return float(np.max(norms) ** 2)


class MaxDeviationEstimator:
    """Monte Carlo r(n) = c(d)^2 / n * E[max_i ||X_i X_i^T - Sigma||_op^2].

    Every call reuses the same seed (common random numbers), so r is a
    deterministic function of n and the threshold search is reproducible.
    """

    def __init__(self, sampler: Callable[[int, np.random.Generator], np.ndarray], sigma: np.ndarray,
                 replicates: int = 200, seed: int = 0):
        self.sampler = sampler
        self.sigma = np.asarray(sigma, dtype=float)
        self.replicates = replicates
        self.seed = seed
        w = np.linalg.eigvalsh(self.sigma)
        self.lam_min, self.lam_max = float(w[0]), float(w[-1])
        self.factor = dimension_factor(self.sigma.shape[0])
        self._cache: dict[int, float] = {}

    def expected_max(self, n: int) -> float:
        if n not in self._cache:
            vals = []
            for r in range(self.replicates):
                rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, r])))
                vals.append(_max_deviation_sq(self.sampler(n, rng), self.sigma, self.lam_max, self.lam_min))
            self._cache[n] = math.fsum(vals) / len(vals)
        return self._cache[n]

    def __call__(self, n: int) -> float:
        return self.factor**2 * self.expected_max(int(n)) / n


@dataclass(frozen=True)
class ThresholdResult:
    n_star: int
    iterations: int
    log_term_v: float
    log_term_nu: float
    concentration_term: float
    r_at_n_star: float


def sample_size_threshold(
    model: SpectralModel,
    v_big: float,
    nu: float,
    s_param: float,
    r_of_n: Callable[[int], float],
    delta: float,
    max_iter: int = 1000,
) -> ThresholdResult:
    """Smallest n with n >= (32V + 4) log(3k(d-k)) + (16 nu + 8) log(4/delta) + 16 (S + r(n)) / (delta gap^2).

    Fixed-point iteration starts from the r = 0 value. Since r is
    non-increasing in n so is the right-hand side, hence n - rhs(n) is
    increasing and a settled iterate is the smallest admissible integer. If
    the iteration cycles, a bisection over the bracket finishes the job.
    """
    model.require_gap()
    if not 0.0 < delta < 1.0:
        raise DeltaOutOfRange(f"delta must lie in (0, 1), got {delta}")
    k, d, gap = model.k, model.d, model.gap
    t_v = (32.0 * v_big + 4.0) * math.log(3 * k * (d - k))
    t_nu = (16.0 * nu + 8.0) * math.log(4.0 / delta)
    scale = 16.0 / (delta * gap**2)

    def rhs(n: int) -> float:
        return t_v + t_nu + scale * (s_param + r_of_n(n))

    n0 = max(1, math.ceil(t_v + t_nu + scale * s_param))
    n = n0
    seen = {}
    for it in range(1, max_iter + 1):
        nxt = max(1, math.ceil(rhs(n)))
        if nxt == n or nxt in seen:
            break
        seen[n] = it
        n = nxt
    else:
        raise NoConvergence(f"threshold iteration did not settle in {max_iter} rounds")
    ok = lambda x: x >= rhs(x)
    if nxt == n:
        # n = ceil(rhs(n)) passes, and n - 1 < rhs(n) <= rhs(n - 1) fails
        return ThresholdResult(n, it, t_v, t_nu, scale * s_param, float(r_of_n(n)))
    lo, hi = n0 - 1, max(n, nxt)
    while not ok(hi):
        hi *= 2
        it += 1
        if it > max_iter:
            raise NoConvergence("could not bracket the threshold")
    # invariant: ok(hi), and every n <= lo fails (rhs >= t_v + t_nu + scale*S >= n0 > lo)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return ThresholdResult(hi, it, t_v, t_nu, scale * s_param, float(r_of_n(hi)))


def nonasymptotic_bound(law: AsymptoticLaw, n: int, delta: float) -> float:
    """(75 / (n delta)) * E||H||^2, the finite-sample excess-risk bound."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return 75.0 / (n * delta) * law.mean_h_sq

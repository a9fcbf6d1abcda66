"""Monte Carlo harness: simulate, fit, measure, and compare with the limit laws.

Also hosts the randomized geometry and self-concordance suites used by the
``verify`` command.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .errors import InsufficientData, NoEigengap, ValidationError
from .grassmann import (
    CUT_LOCUS_MARGIN,
    GrassmannPoint,
    TangentLift,
    distance,
    exp_map,
    log_map,
    max_angle,
    orthonormalize,
    parallel_transport,
    principal_angles,
    random_point,
    random_tangent,
)
from .models import make_rng
from .moments import AsymptoticLaw, nonasymptotic_bound, projector_quantile_band, quantile_band
from .rayleigh import (
    BlockRayleigh,
    concordance_profile,
    geodesic_profile,
    gradient,
    hessian_apply,
    hessian_lipschitz_gap,
    third_derivative,
    taylor_sandwich,
    value,
)
from .risk import SpectralModel, excess_risk, pca_fit


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial_index: int
    seed: int
    n: int
    dist: float
    excess: float
    max_angle: float
    projector_p2_sq: float
    log_coords: np.ndarray | None  # None when the log map is undefined
    runtime: float = field(default=0.0, compare=False)


def run_single_trial(model, spec: SpectralModel, n: int, k: int, seed: int, trial: int) -> TrialResult:
    start = time.perf_counter()
    rng = make_rng(seed, trial)
    fit = pca_fit(model.empirical_matrix(n, rng), k, n)
    U = fit.subspace
    angles = principal_angles(spec.top, U)
    theta = float(angles[-1])
    coords = None
    if theta < math.pi / 2 - CUT_LOCUS_MARGIN:
        coords = spec.complement.T @ log_map(spec.top, U).delta
    return TrialResult(
        trial_index=trial,
        seed=seed,
        n=n,
        dist=float(np.sqrt(np.sum(angles**2))),
        excess=excess_risk(spec, U),
        max_angle=theta,
        projector_p2_sq=2.0 * float(np.sum(np.sin(angles) ** 2)),
        log_coords=coords,
        runtime=time.perf_counter() - start,
    )


def _run_chunk(args):
    model, spec, n, k, seed, indices = args
    return [run_single_trial(model, spec, n, k, seed, t) for t in indices]


def empirical_quantile(values, level: float) -> float:
    """Order statistic at index ceil(level * m) (1-based), the left-continuous inverse."""
    v = np.sort(np.asarray(values, dtype=float))
    m = v.size
    if m == 0:
        raise InsufficientData("no values")
    idx = min(m, max(1, math.ceil(level * m - 1e-9)))
    return float(v[idx - 1])


@dataclass(frozen=True, eq=False)
class SimulationSummary:
    n: int
    k: int
    seed: int
    results: list
    total_runtime: float

    @property
    def trials(self) -> int:
        return len(self.results)

    @property
    def scaled_excess(self) -> np.ndarray:
        return np.array([self.n * r.excess for r in self.results])

    @property
    def scaled_projector(self) -> np.ndarray:
        return np.array([self.n * r.projector_p2_sq for r in self.results])

    @property
    def undefined_log_count(self) -> int:
        return sum(r.log_coords is None for r in self.results)

    def scaled_coords(self) -> np.ndarray:
        """sqrt(n) * log coordinates of defined trials, flattened to rows."""
        rows = [np.sqrt(self.n) * r.log_coords.ravel() for r in self.results if r.log_coords is not None]
        return np.array(rows)

    def coord_covariance(self) -> np.ndarray:
        Z = self.scaled_coords()
        if Z.shape[0] < 2:
            raise InsufficientData("need at least two defined trials")
        return np.atleast_2d(np.cov(Z, rowvar=False))

    def mean_scaled_excess(self) -> float:
        return math.fsum(self.n * r.excess for r in self.results) / self.trials

    def mean_scaled_projector(self) -> float:
        return math.fsum(self.n * r.projector_p2_sq for r in self.results) / self.trials

    def quantiles(self, levels, which: str = "excess") -> list[float]:
        vals = self.scaled_excess if which == "excess" else self.scaled_projector
        return [empirical_quantile(vals, q) for q in levels]

    def trial_runtime_sum(self) -> float:
        return math.fsum(r.runtime for r in self.results)

    def to_dict(self, timing: bool = True, levels=(0.9, 0.95, 0.98)) -> dict:
        out = {
            "n": self.n,
            "k": self.k,
            "seed": self.seed,
            "trials": self.trials,
            "mean_scaled_excess": self.mean_scaled_excess(),
            "mean_scaled_projector": self.mean_scaled_projector(),
            "undefined_log_count": self.undefined_log_count,
            "quantiles_scaled_excess": dict(zip(map(str, levels), self.quantiles(levels, "excess"))),
            "quantiles_scaled_projector": dict(zip(map(str, levels), self.quantiles(levels, "projector"))),
        }
        if self.trials - self.undefined_log_count >= 2:
            out["coord_covariance"] = self.coord_covariance().tolist()
        if timing:
            out["timing"] = {"total_seconds": self.total_runtime, "trial_seconds_sum": self.trial_runtime_sum()}
        return out

    def csv_rows(self) -> list[str]:
        lines = ["trial,dist,excess,max_angle,projector_p2_sq"]
        for r in self.results:
            lines.append(f"{r.trial_index},{r.dist!r},{r.excess!r},{r.max_angle!r},{r.projector_p2_sq!r}")
        return lines


def run_trials(model, n: int, trials: int, seed: int, k: int, jobs: int = 1) -> SimulationSummary:
    """Simulate ``trials`` independent PCA fits on ``n`` samples each.

    Trial t draws from the stream (seed, t), so results do not depend on
    ``jobs``; with jobs > 1 trials run in worker processes.
    """
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    if n < 1:
        raise ValidationError("n must be at least 1")
    spec = model.spectral_model(k)
    if not spec.gap > 0:
        raise NoEigengap(f"population eigengap is {spec.gap:.3g}; the target subspace is not unique")
    start = time.perf_counter()
    if jobs <= 1 or trials < 2 * jobs:
        results = _run_chunk((model, spec, n, k, seed, range(trials)))
    else:
        chunks = [range(i, trials, jobs) for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_chunk, [(model, spec, n, k, seed, c) for c in chunks])
            results = sorted((r for part in parts for r in part), key=lambda r: r.trial_index)
    return SimulationSummary(n, k, seed, results, time.perf_counter() - start)


@dataclass(frozen=True, eq=False)
class CltReport:
    rel_frobenius_error: float
    mean_z_scores: np.ndarray
    ks_statistics: np.ndarray
    ks_pvalues: np.ndarray
    n_used: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.mean_z_scores)))

    def to_dict(self) -> dict:
        return {
            "rel_frobenius_error": self.rel_frobenius_error,
            "mean_z_scores": self.mean_z_scores.tolist(),
            "max_abs_z": self.max_abs_z,
            "ks_statistics": self.ks_statistics.tolist(),
            "ks_pvalues": self.ks_pvalues.tolist(),
            "n_used": self.n_used,
        }


def clt_report_from_coords(Z: np.ndarray, law: AsymptoticLaw) -> CltReport:
    """Compare rows of sqrt(n) * log coordinates with the Gaussian limit."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] < 100:
        raise InsufficientData(f"need at least 100 defined trials, have {Z.shape[0]}")
    target = law.flat("g")
    emp = np.atleast_2d(np.cov(Z, rowvar=False))
    rel = float(np.linalg.norm(emp - target) / np.linalg.norm(target))
    sd = np.sqrt(np.diag(target))
    z = Z.mean(axis=0) / (sd / np.sqrt(Z.shape[0]))
    ks = [stats.kstest(Z[:, c], "norm", args=(0.0, sd[c])) for c in range(Z.shape[1])]
    return CltReport(
        rel, z, np.array([r.statistic for r in ks]), np.array([r.pvalue for r in ks]), Z.shape[0]
    )


def clt_report(summary: SimulationSummary, law: AsymptoticLaw) -> CltReport:
    return clt_report_from_coords(summary.scaled_coords(), law)


@dataclass(frozen=True)
class QuantileCheck:
    kind: str
    delta: float
    empirical: float
    lower: float
    upper: float

    @property
    def contained(self) -> bool:
        return self.lower <= self.empirical <= self.upper

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delta": self.delta, "empirical": self.empirical,
                "lower": self.lower, "upper": self.upper, "contained": self.contained}


def risk_quantile_report(summary: SimulationSummary, law: AsymptoticLaw, deltas) -> list[QuantileCheck]:
    out = []
    for delta in deltas:
        band = quantile_band(law, delta)
        emp = empirical_quantile(summary.scaled_excess, 1.0 - delta)
        out.append(QuantileCheck("excess", delta, emp, band.lower, band.upper))
        band = projector_quantile_band(law, delta)
        emp = empirical_quantile(summary.scaled_projector, 1.0 - delta)
        out.append(QuantileCheck("projector", delta, emp, band.lower, band.upper))
    return out


@dataclass(frozen=True)
class FiniteSampleCheck:
    n: int
    delta: float
    empirical_quantile: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.empirical_quantile <= self.bound


def finite_sample_check(summary: SimulationSummary, law: AsymptoticLaw, delta: float) -> FiniteSampleCheck:
    """Empirical (1 - delta)-quantile of the unscaled excess risk against the finite-n bound."""
    emp = empirical_quantile([r.excess for r in summary.results], 1.0 - delta)
    return FiniteSampleCheck(summary.n, delta, emp, nonasymptotic_bound(law, summary.n, delta))


# ---------------------------------------------------------------------------
# randomized verification suites


@dataclass
class CheckResult:
    """Aggregate of one randomized check: count, worst residual and tolerance.

    ``residual`` is a violation measure: the check passes when the worst
    residual is at most ``tol``. Informational checks are reported but do not
    count toward the suite verdict.
    """

    name: str
    tol: float
    count: int = 0
    worst: float = -math.inf
    errors: int = 0
    informational: bool = False

    def add(self, residual: float) -> None:
        self.count += 1
        if not np.isfinite(residual):
            self.errors += 1
            residual = math.inf
        self.worst = max(self.worst, float(residual))

    def fail(self) -> None:
        self.count += 1
        self.errors += 1
        self.worst = math.inf

    @property
    def passed(self) -> bool:
        return self.count > 0 and self.errors == 0 and self.worst <= self.tol

    def to_dict(self) -> dict:
        return {"name": self.name, "count": self.count, "worst_residual": self.worst, "tolerance": self.tol,
                "errors": self.errors, "passed": self.passed, "informational": self.informational}


@dataclass
class SuiteReport:
    name: str
    seed: int
    trials: int
    checks: dict = field(default_factory=dict)

    def check(self, name: str, tol: float, informational: bool = False) -> CheckResult:
        if name not in self.checks:
            self.checks[name] = CheckResult(name, tol, informational=informational)
        return self.checks[name]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if not c.informational)

    def residuals(self) -> dict:
        return {k: c.worst for k, c in self.checks.items()}

    def to_dict(self) -> dict:
        return {"suite": self.name, "seed": self.seed, "trials": self.trials, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks.values()]}


def _guard(check: CheckResult, fn: Callable[[], float]) -> None:
    try:
        check.add(fn())
    except Exception:  # noqa: BLE001 - any exception is a failed check here
        check.fail()


def _random_rayleigh(rng: np.random.Generator, d: int, k: int) -> BlockRayleigh:
    while True:
        A = rng.standard_normal((d, d))
        B = BlockRayleigh(A + A.T, k)
        if B.gap > 1e-3:
            return B


def geometry_suite(seed: int = 0, trials: int = 500, d_max: int = 8, k_max: int = 3,
                   transport: Callable = parallel_transport, tolerances: dict | None = None) -> SuiteReport:
    """Randomized identities for the manifold primitives and the objective's derivatives."""
    tol = {"roundtrip": 1e-9, "metric": 1e-10, "isometry": 1e-10, "horizontal": 1e-9, "speed": 1e-10,
           "invariance": 1e-10, "velocity": 1e-6, "hessian_symmetry": 1e-10, "third_bound": 0.0, "lipschitz": 0.0,
           "two_paths": 1e-8}
    tol.update(tolerances or {})
    rep = SuiteReport("geometry", seed, trials)
    for trial in range(trials):
        rng = make_rng(seed, trial)
        d = int(rng.integers(2, d_max + 1))
        k = int(rng.integers(1, min(k_max, d - 1) + 1))
        U = random_point(d, k, rng)
        xi = random_tangent(U, rng)
        xi = xi * (rng.uniform(0.05, 1.4) / np.linalg.svd(xi.delta, compute_uv=False)[0])
        V = exp_map(U, xi)

        def roundtrip():
            return distance(exp_map(U, log_map(U, V)), V)

        def metric():
            return abs(distance(U, V) - log_map(U, V).norm())

        z1, z2 = random_tangent(U, rng), random_tangent(U, rng)
        t = float(rng.uniform(0.0, 1.0))

        def isometry():
            a, b = transport(U, xi, t, z1), transport(U, xi, t, z2)
            return abs(float(np.sum(a.delta * b.delta)) - z1.inner(z2)) / max(1.0, z1.norm() * z2.norm())

        def horizontal():
            a = transport(U, xi, t, z1)
            end = exp_map(U, xi, t)
            if a.anchor.basis.shape != end.basis.shape or not np.allclose(a.anchor.basis, end.basis, atol=1e-12):
                return math.inf
            return float(np.max(np.abs(end.basis.T @ a.delta)))

        def velocity():
            # transporting the initial velocity must give the velocity of the curve at t
            h = 1e-5
            fd = (exp_map(U, xi, t + h).basis - exp_map(U, xi, t - h).basis) / (2 * h)
            return float(np.max(np.abs(transport(U, xi, t, xi).delta - fd))) / max(1.0, xi.norm())

        t1, t2 = sorted(rng.uniform(0.0, 1.0, size=2))

        def speed():
            return abs(distance(exp_map(U, xi, t1), exp_map(U, xi, t2)) - (t2 - t1) * xi.norm())

        R = np.linalg.qr(rng.standard_normal((k, k)))[0]

        def invariance():
            U2 = GrassmannPoint(U.basis @ R)
            xi2 = TangentLift(U2, xi.delta @ R)
            r1 = max_angle(exp_map(U2, xi2), V)
            r2 = float(np.linalg.norm(log_map(U2, V).delta - log_map(U, V).delta @ R))
            r3 = abs(distance(U2, V) - distance(U, V))
            return max(r1, r2, r3)

        for name, fn in (("exp_log_roundtrip", roundtrip), ("distance_equals_log_norm", metric),
                         ("transport_isometry", isometry), ("transport_horizontal", horizontal),
                         ("transport_velocity", velocity),
                         ("geodesic_constant_speed", speed), ("representative_invariance", invariance)):
            key = {"exp_log_roundtrip": "roundtrip", "distance_equals_log_norm": "metric",
                   "transport_isometry": "isometry", "transport_horizontal": "horizontal",
                   "transport_velocity": "velocity",
                   "geodesic_constant_speed": "speed", "representative_invariance": "invariance"}[name]
            _guard(rep.check(name, tol[key]), fn)

        B = _random_rayleigh(rng, d, k)
        normA = float(np.linalg.norm(B.matrix))

        def hess_sym():
            h1 = hessian_apply(B, U, z1).inner(z2)
            h2 = z1.inner(hessian_apply(B, U, z2))
            return abs(h1 - h2) / (normA * z1.norm() * z2.norm())

        def third_bound():
            z3 = random_tangent(U, rng)
            val = third_derivative(B, U, z1, z2, z3)
            return abs(val) - 4.0 * normA * z1.norm() * z2.norm() * z3.norm()

        def lipschitz():
            change, bound = hessian_lipschitz_gap(B, U, xi)
            return change - bound

        def two_paths():
            return geodesic_profile(B, U, V, np.linspace(0.0, 1.0, 11)).agreement()

        _guard(rep.check("hessian_symmetry", tol["hessian_symmetry"]), hess_sym)
        _guard(rep.check("third_derivative_bound", tol["third_bound"]), third_bound)
        _guard(rep.check("hessian_lipschitz", tol["lipschitz"]), lipschitz)
        _guard(rep.check("derivatives_two_paths", tol["two_paths"]), two_paths)
    return rep


def random_concordance_instance(rng: np.random.Generator, d: int, k: int, theta: float):
    """Random objective and a point whose largest angle to the minimizer is ``theta``."""
    B = _random_rayleigh(rng, d, k)
    Vs = B.minimizer()
    xi = random_tangent(Vs, rng)
    xi = xi * (theta / np.linalg.svd(xi.delta, compute_uv=False)[0])
    return B, Vs, exp_map(Vs, xi)


def concordance_suite(seed: int = 0, trials: int = 1000, d_max: int = 8, k_max: int = 3, grid: int = 50,
                      near_boundary_fraction: float = 0.1, tolerances: dict | None = None) -> SuiteReport:
    """Randomized self-concordance margins and Taylor sandwiches around the minimizer.

    Gating checks use the forward geodesic (minimizer to V) and the reverse
    geodesic with the tangent argument measured from the minimizer. The
    reverse geodesic with t measured from V, and the sandwich expanded at V,
    are reported as informational checks.
    """
    tol = {"margin": 1e-9, "sandwich": 1e-10, "small_angle": 1e-3}
    tol.update(tolerances or {})
    rep = SuiteReport("concordance", seed, trials)
    t_grid = np.linspace(0.0, 1.0 - 1e-6, grid)
    for trial in range(trials):
        rng = make_rng(seed, 10_000_000 + trial)
        d = int(rng.integers(2, d_max + 1))
        k = int(rng.integers(1, min(k_max, d - 1) + 1))
        if rng.uniform() < near_boundary_fraction:
            theta = math.pi / 4 - 1e-3
        else:
            theta = float(rng.uniform(1e-3, math.pi / 4 - 1e-3))
        B, Vs, V = random_concordance_instance(rng, d, k, theta)

        def margin(orientation, clock):
            prof = concordance_profile(B, V, t_grid, orientation=orientation, clock=clock)
            return -float(np.min(prof.margin))

        def curvature(orientation):
            prof = concordance_profile(B, V, t_grid, orientation=orientation)
            return -float(np.min(prof.g2))

        def sandwich(orientation, sharp):
            s = taylor_sandwich(B, V, orientation=orientation)
            return -(s.sharp_slack if sharp else s.slack)

        _guard(rep.check("margin_forward", tol["margin"]), lambda: margin("forward", "minimizer"))
        _guard(rep.check("margin_reverse", tol["margin"]), lambda: margin("reverse", "minimizer"))
        _guard(rep.check("curvature_positive_forward", 0.0), lambda: curvature("forward"))
        _guard(rep.check("curvature_positive_reverse", 0.0), lambda: curvature("reverse"))
        _guard(rep.check("sandwich_forward", tol["sandwich"]), lambda: sandwich("forward", False))
        _guard(rep.check("sharp_sandwich_forward", tol["sandwich"]), lambda: sandwich("forward", True))
        _guard(rep.check("margin_reverse_clock_from_start", tol["margin"], informational=True),
               lambda: margin("reverse", "start"))
        _guard(rep.check("sandwich_reverse_expanded_at_start", tol["sandwich"], informational=True),
               lambda: sandwich("reverse", False))

    rng = make_rng(seed, 20_000_000)
    for trial in range(10):
        B, Vs, V = random_concordance_instance(rng, 5, 2, 1e-4)

        def small_angle():
            s = taylor_sandwich(B, V)
            return abs(s.actual / s.quad_term - 1.0)

        _guard(rep.check("small_angle_ratio", tol["small_angle"]), small_angle)
    return rep

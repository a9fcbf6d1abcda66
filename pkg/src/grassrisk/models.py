"""Data-generating processes, seeding and dataset input/output.

Random numbers come from numpy's counter-based Philox generator. A run seed
and a trial index are combined as ``SeedSequence([seed, trial])``, so every
trial owns an independent stream regardless of how trials are scheduled.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._linalg import symmetrize
from .errors import (
    DimensionMismatch,
    InvalidGraph,
    InvalidSpike,
    IoError,
    NonFiniteValue,
    NotPSD,
    ParseError,
    ValidationError,
)
from .risk import SpectralModel, empirical_second_moment


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for (seed, stream...), e.g. ``make_rng(seed, trial)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def _spectral_root(sigma: np.ndarray) -> np.ndarray:
    S = np.asarray(sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NonFiniteValue("covariance has non-finite entries")
    w, V = np.linalg.eigh(symmetrize(S))
    if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise NotPSD(f"covariance has negative eigenvalue {w[0]:.3g}")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian(sigma: np.ndarray, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """n rows drawn from N(0, sigma) through a spectral square root (works for singular sigma)."""
    root = _spectral_root(sigma)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return rng.standard_normal((n, root.shape[0])) @ root.T


def _check_spike(eta, sigma, d):
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1 or eta.size == 0 or eta.size >= d or np.any(eta <= 0) or np.any(np.diff(eta) > 0):
        raise InvalidSpike("spikes must be positive, non-increasing and fewer than d")
    if not sigma >= 0:
        raise InvalidSpike("noise level must be nonnegative")
    return eta


def sample_spiked(eta, sigma: float, d: int, n: int, latent: str, seed: int | np.random.Generator) -> np.ndarray:
    """Rows X = Z + eps with Z on span(e_1..e_k), E[ZZ^T] = diag(eta), eps ~ N(0, sigma^2 I)."""
    eta = _check_spike(eta, sigma, d)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    k = eta.size
    if latent == "gaussian":
        xi = rng.standard_normal((n, k))
    elif latent == "rademacher":
        xi = rng.choice(np.array([-1.0, 1.0]), size=(n, k))
    else:
        raise InvalidSpike(f"unknown latent distribution {latent!r}")
    X = sigma * rng.standard_normal((n, d))
    X[:, :k] += xi * np.sqrt(eta)
    return X


def _check_graph(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 2:
        raise InvalidGraph("weight matrix must be square with at least two nodes")
    if not np.all(np.isfinite(W)):
        raise InvalidGraph("weights must be finite")
    if np.any(W < 0) or np.any(np.diag(W) != 0) or not np.array_equal(W, W.T):
        raise InvalidGraph("weights must be nonnegative, symmetric, with zero diagonal")
    if not np.sum(np.triu(W, 1)) > 0:
        raise InvalidGraph("graph has no weighted edge")
    return W


def graph_edges(W: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Undirected edges (j < k) with positive weight and their sampling probabilities."""
    W = _check_graph(W)
    J, K = np.nonzero(np.triu(W, 1))
    w = W[J, K]
    return J, K, w / w.sum()


def edge_matrix(d: int, j: int, k: int) -> np.ndarray:
    A = np.zeros((d, d))
    A[j, k] = A[k, j] = 1.0
    return A


def graph_mean_matrix(W: np.ndarray) -> np.ndarray:
    """E[A] = W / w_total where w_total sums the weights over edges j < k."""
    W = _check_graph(W)
    return W / np.sum(np.triu(W, 1))


def edge_graph_fourth_moments(W: np.ndarray, k: int):
    """Exact lambda tensor of the edge-sampling model by enumerating every edge."""
    from .moments import generalized_fourth_moments

    J, K, p = graph_edges(W)
    d = W.shape[0]
    mats = np.array([edge_matrix(d, j, l) for j, l in zip(J, K)])
    model = SpectralModel.from_matrix(graph_mean_matrix(W), k, psd=False)
    return generalized_fourth_moments(mats, model, weights=p), model


def sample_edge_indices(W: np.ndarray, n: int, seed: int | np.random.Generator) -> np.ndarray:
    J, K, p = graph_edges(W)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    idx = rng.choice(p.size, size=n, p=p)
    return np.column_stack([J[idx], K[idx]])


def sample_edge_matrices(W: np.ndarray, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """(n, d, d) stack of A_i = e_J e_K^T + e_K e_J^T with edges drawn proportional to weight."""
    d = np.asarray(W).shape[0]
    pairs = sample_edge_indices(W, n, seed)
    A = np.zeros((n, d, d))
    rows = np.arange(n)
    A[rows, pairs[:, 0], pairs[:, 1]] = 1.0
    A[rows, pairs[:, 1], pairs[:, 0]] = 1.0
    return A


# ---------------------------------------------------------------------------
# distribution models used by the simulation harness


@dataclass(frozen=True, eq=False)
class GaussianModel:
    sigma: np.ndarray
    kind: str = "gaussian"

    def spectral_model(self, k: int) -> SpectralModel:
        return SpectralModel.from_matrix(self.sigma, k)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_gaussian(self.sigma, n, rng)

    def empirical_matrix(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return empirical_second_moment(self.sample(n, rng))

    def config(self) -> dict:
        return {"kind": "gaussian", "covariance": np.asarray(self.sigma).tolist()}


@dataclass(frozen=True, eq=False)
class SpikedModel:
    eta: tuple
    sigma: float
    d: int
    latent: str = "gaussian"
    kind: str = "spiked"

    def __post_init__(self):
        _check_spike(self.eta, self.sigma, self.d)
        if self.latent not in ("gaussian", "rademacher"):
            raise InvalidSpike(f"unknown latent distribution {self.latent!r}")

    def spectral_model(self, k: int | None = None) -> SpectralModel:
        eta = np.asarray(self.eta, dtype=float)
        if k is not None and k != eta.size:
            raise DimensionMismatch(f"spiked model has {eta.size} spikes, requested k={k}")
        w = np.concatenate([eta + self.sigma**2, np.full(self.d - eta.size, self.sigma**2)])
        return SpectralModel(w, np.eye(self.d), eta.size)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_spiked(self.eta, self.sigma, self.d, n, self.latent, rng)

    def empirical_matrix(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return empirical_second_moment(self.sample(n, rng))

    def config(self) -> dict:
        return {"kind": "spiked", "eta": list(map(float, self.eta)), "sigma": float(self.sigma),
                "d": self.d, "latent": self.latent}


@dataclass(frozen=True, eq=False)
class DatasetModel:
    """Resampling (bootstrap) from a fixed dataset; its population is the empirical distribution."""

    data: np.ndarray
    source: str = ""
    kind: str = "dataset"

    def spectral_model(self, k: int) -> SpectralModel:
        return SpectralModel.from_matrix(empirical_second_moment(self.data), k)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.data[rng.integers(0, self.data.shape[0], size=n)]

    def empirical_matrix(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return empirical_second_moment(self.sample(n, rng))

    def config(self) -> dict:
        return {"kind": "dataset", "path": self.source, "rows": int(self.data.shape[0])}


@dataclass(frozen=True, eq=False)
class EdgeGraphModel:
    """Generalized PCA: top eigenspace of E[A] for random edge matrices A."""

    weights: np.ndarray
    kind: str = "edge_graph"

    def __post_init__(self):
        _check_graph(self.weights)

    def spectral_model(self, k: int) -> SpectralModel:
        return SpectralModel.from_matrix(graph_mean_matrix(self.weights), k, psd=False)

    def empirical_matrix(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # the mean of n edge matrices only depends on the edge counts
        J, K, p = graph_edges(self.weights)
        counts = rng.multinomial(n, p)
        M = np.zeros(self.weights.shape)
        M[J, K] = counts / n
        return M + M.T

    def config(self) -> dict:
        return {"kind": "edge_graph", "weights": np.asarray(self.weights).tolist()}


def model_from_config(cfg: dict, base_dir: Path | None = None):
    """Build a model from a JSON-style dict with a ``kind`` key."""
    kind = cfg.get("kind")
    try:
        if kind == "gaussian":
            if "covariance" in cfg:
                sigma = np.asarray(cfg["covariance"], dtype=float)
            else:
                sigma = np.diag(np.asarray(cfg["eigenvalues"], dtype=float))
            return GaussianModel(sigma)
        if kind == "spiked":
            return SpikedModel(tuple(cfg["eta"]), float(cfg["sigma"]), int(cfg["d"]), cfg.get("latent", "gaussian"))
        if kind == "dataset":
            path = Path(cfg["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return DatasetModel(load_dataset(path, cfg.get("format"), cfg.get("header", False)), str(cfg["path"]))
        if kind == "edge_graph":
            return EdgeGraphModel(np.asarray(cfg["weights"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"invalid model config: missing or malformed {exc}") from exc
    raise ParseError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# dataset files


def _validate_rows(rows: list, path) -> np.ndarray:
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0])
    if width == 0 or any(len(r) != width for r in rows):
        raise ParseError(f"{path}: rows have unequal lengths")
    try:
        X = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: non-numeric entry ({exc})") from exc
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue(f"{path}: data contains NaN or infinite values")
    return X


def load_dataset(path, fmt: str | None = None, header: bool = False) -> np.ndarray:
    """Read an n x d matrix from CSV (one sample per row) or a JSON array of arrays."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if fmt == "json":
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise ParseError(f"{path}: expected an array of arrays")
        return _validate_rows(rows, path)
    if fmt != "csv":
        raise ValidationError(f"unknown dataset format {fmt!r}")
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if header:
        rows = rows[1:]
    try:
        rows = [[float(c) for c in r] for r in rows]
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return _validate_rows(rows, path)


def save_dataset(data: np.ndarray, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    X = np.asarray(data, dtype=float)
    if fmt == "json":
        path.write_text(json.dumps(X.tolist()))
    else:
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in X) + "\n")

"""Functional data primitives: grids, B-spline smoothing and FPCA.

Curves live on a shared observation grid. Inner products and norms use the
grid's quadrature weights (trapezoidal unless given), so
<f, g>_w = sum_j w_j f(t_j) g(t_j).

FPC indices in this API are 0-based; figures and reports print them as FPC1..FPCK.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .errors import (
    DegenerateModel,
    GridMismatch,
    InvalidBasisConfig,
    InvalidDataset,
    InvalidGrid,
    NonpositiveWeight,
    RankError,
    SingularFit,
)

log = logging.getLogger("fda")

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(a: ArrayLike, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    d = np.diff(points)
    w = np.zeros_like(points, dtype=float)
    w[:-1] += d / 2.0
    w[1:] += d / 2.0
    return w


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 4:
            raise InvalidGrid(f"time grid needs at least 4 points, got {pts.size}")
        if np.any(np.diff(pts) <= 0):
            raise InvalidGrid("time grid points must be strictly increasing")
        w = _frozen(self.weights)
        if w.shape != pts.shape:
            raise InvalidGrid("quadrature weights must match the grid length")
        if np.any(w <= 0):
            raise InvalidGrid("quadrature weights must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, points: ArrayLike, weights: Optional[ArrayLike] = None) -> "TimeGrid":
        pts = np.asarray(points, dtype=float)
        if weights is None:
            if pts.ndim != 1 or pts.size < 4:
                raise InvalidGrid(f"time grid needs at least 4 points, got {pts.size}")
            weights = trapezoid_weights(pts)
        return cls(pts, np.asarray(weights, dtype=float))

    @classmethod
    def uniform(cls, n_points: int, start: float = 0.0, stop: float = 1.0) -> "TimeGrid":
        return cls.from_points(np.linspace(start, stop, int(n_points)))

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def length(self) -> float:
        return float(self.points[-1] - self.points[0])

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or (
            np.array_equal(self.points, other.points) and np.array_equal(self.weights, other.weights)
        )

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Weighted inner products along the last axis (broadcasts over rows)."""
        return (np.asarray(f) * self.weights) @ np.asarray(g).T


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    grid: TimeGrid
    values: np.ndarray
    labels: Optional[np.ndarray] = None
    # raw file labels mapped to 0/1, kept so the data can be written back
    label_values: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim == 1:
            vals = _frozen(vals[None, :])
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise InvalidDataset("dataset needs an N x T value matrix with N >= 1")
        if vals.shape[1] != len(self.grid):
            raise InvalidDataset(f"values have {vals.shape[1]} columns but the grid has {len(self.grid)} points")
        if not np.all(np.isfinite(vals)):
            raise InvalidDataset("values must be finite")
        object.__setattr__(self, "values", vals)
        if self.labels is not None:
            labels = _frozen(self.labels, dtype=int)
            if labels.shape != (vals.shape[0],):
                raise InvalidDataset(f"expected {vals.shape[0]} labels, got {labels.size}")
            if not np.all((labels == 0) | (labels == 1)):
                raise InvalidDataset("labels must be 0 or 1")
            object.__setattr__(self, "labels", labels)

    @property
    def n_curves(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class BasisSystem:
    grid: TimeGrid
    order: int
    n_basis: int
    knots: np.ndarray
    eval_cache: np.ndarray  # S x T, phi_s(t_j)
    kind: str = "bspline"

    @property
    def degree(self) -> int:
        return self.order - 1

    def evaluate(self, coefficients: np.ndarray, points: Optional[ArrayLike] = None) -> np.ndarray:
        """Curves sum_s c_s phi_s(t) for each coefficient row, on the grid or on `points`."""
        coef = np.atleast_2d(np.asarray(coefficients, dtype=float))
        if points is None:
            return coef @ self.eval_cache
        spline = BSpline(self.knots, np.eye(self.n_basis), self.degree, extrapolate=True)
        return coef @ spline(np.asarray(points, dtype=float)).T


def build_basis(grid: TimeGrid, n_basis: int, order: int) -> BasisSystem:
    if order < 2:
        raise InvalidBasisConfig(f"B-spline order must be >= 2, got {order}")
    if n_basis < order:
        raise InvalidBasisConfig(f"n_basis ({n_basis}) must be >= order ({order})")
    if len(grid) < order:
        raise InvalidBasisConfig(f"grid of {len(grid)} points is too short for order {order}")

    a, b = grid.points[0], grid.points[-1]
    interior = np.linspace(a, b, n_basis - order + 2)[1:-1]
    knots = np.concatenate([np.repeat(a, order), interior, np.repeat(b, order)])
    spline = BSpline(knots, np.eye(n_basis), order - 1, extrapolate=True)
    phi = spline(grid.points).T
    log.debug("built %d B-splines of order %d on %d points", n_basis, order, len(grid))
    return BasisSystem(grid=grid, order=order, n_basis=n_basis, knots=_frozen(knots), eval_cache=_frozen(phi))


@dataclass(frozen=True, eq=False)
class SmoothedCurves:
    basis: BasisSystem
    coefficients: np.ndarray  # N x S
    labels: Optional[np.ndarray] = None
    penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _frozen(np.atleast_2d(self.coefficients)))

    @property
    def grid(self) -> TimeGrid:
        return self.basis.grid

    @property
    def n_curves(self) -> int:
        return int(self.coefficients.shape[0])


def roughness_penalty(n_basis: int) -> np.ndarray:
    """Second-difference penalty D'D on the coefficient sequence."""
    if n_basis < 3:
        return np.zeros((n_basis, n_basis))
    d = np.diff(np.eye(n_basis), n=2, axis=0)
    return d.T @ d


def smooth(dataset: FunctionalDataset, basis: BasisSystem, penalty: float = 0.0) -> SmoothedCurves:
    """Penalized least-squares projection of every curve onto the basis."""
    if not dataset.grid.same_as(basis.grid):
        raise GridMismatch("dataset and basis are defined on different grids")
    if penalty < 0 or not np.isfinite(penalty):
        raise InvalidBasisConfig(f"penalty must be a finite nonnegative number, got {penalty}")

    phi = basis.eval_cache.T  # T x S
    gram = phi.T @ phi
    if penalty > 0:
        gram = gram + penalty * roughness_penalty(basis.n_basis)
    if np.linalg.matrix_rank(gram) < basis.n_basis:
        raise SingularFit(
            f"normal equations are rank-deficient: {basis.n_basis} basis functions on {len(basis.grid)} points"
        )
    try:
        factor = linalg.cho_factor(gram)
        coef = linalg.cho_solve(factor, phi.T @ dataset.values.T).T
    except linalg.LinAlgError as e:
        raise SingularFit(f"normal equations could not be factorized: {e}") from e
    return SmoothedCurves(basis=basis, coefficients=coef, labels=dataset.labels, penalty=float(penalty))


def evaluate(smoothed: SmoothedCurves) -> np.ndarray:
    return smoothed.coefficients @ smoothed.basis.eval_cache


@dataclass(frozen=True, eq=False)
class FpcaModel:
    grid: TimeGrid
    mean_curve: np.ndarray
    eigenfunctions: np.ndarray  # K x T
    eigenvalues: np.ndarray
    scores: np.ndarray  # N x K
    total_variance: float
    reconstruction_residual_norm: np.ndarray

    def __post_init__(self):
        for name in ("mean_curve", "eigenfunctions", "eigenvalues", "scores", "reconstruction_residual_norm"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_components(self) -> int:
        return int(self.eigenvalues.size)


def fit_fpca(smoothed: SmoothedCurves, K: int) -> FpcaModel:
    """Functional PCA of smoothed curves, with quadrature-weighted inner products on their grid.

    RankError only enforces the dimensional bound K <= min(N - 1, S, T). The
    numerical rank of the centred curves is not checked: when the data span
    fewer than K directions (identical curves, duplicated signals) the fit
    succeeds, logs a warning, and the surplus eigenvalues come back as zero
    with arbitrary orthonormal eigenfunctions.
    """
    grid = smoothed.grid
    X = evaluate(smoothed)
    N, T = X.shape
    max_rank = min(N - 1, smoothed.basis.n_basis, T)
    if not 1 <= K <= max_rank:
        raise RankError(f"K={K} is outside [1, {max_rank}] for {N} curves on {smoothed.basis.n_basis} basis functions")

    mean = X.mean(axis=0)
    Xc = X - mean
    sw = np.sqrt(grid.weights)
    Y = Xc * sw
    cov = Y.T @ Y / (N - 1)
    cov = (cov + cov.T) / 2.0
    evals, evecs = linalg.eigh(cov)
    idx = np.argsort(evals, kind="stable")[::-1][:K]
    evals = np.clip(evals[idx], 0.0, None)
    xi = (evecs[:, idx] / sw[:, None]).T

    # largest-magnitude entry positive
    for k in range(K):
        j = int(np.argmax(np.abs(xi[k])))
        if xi[k, j] < 0:
            xi[k] = -xi[k]

    scores = (Xc * grid.weights) @ xi.T
    resid = Xc - scores @ xi
    resid_norm = np.sqrt((resid**2 * grid.weights).sum(axis=1))
    total = float(np.sum(Y**2) / (N - 1))

    # zero relative to the size of the curves themselves, not just their spread
    scale = max(total, float(np.mean((X**2 * grid.weights).sum(axis=1))), 1e-300)
    tiny = evals <= 1e-12 * scale
    if tiny.any():
        log.warning("%d of %d eigenvalues are numerically zero", int(tiny.sum()), K)
        evals[tiny] = 0.0
    log.info("FPCA: N=%d T=%d K=%d, leading eigenvalue %.6g of total %.6g", N, T, K, evals[0], total)
    return FpcaModel(
        grid=grid,
        mean_curve=mean,
        eigenfunctions=xi,
        eigenvalues=evals,
        scores=scores,
        total_variance=total,
        reconstruction_residual_norm=resid_norm,
    )


def project_curves(model: FpcaModel, curves: ArrayLike) -> np.ndarray:
    X = np.atleast_2d(np.asarray(curves, dtype=float))
    if X.shape[1] != len(model.grid):
        raise GridMismatch(f"curves have {X.shape[1]} points, model grid has {len(model.grid)}")
    return ((X - model.mean_curve) * model.grid.weights) @ model.eigenfunctions.T


def project(model: FpcaModel, smoothed: SmoothedCurves) -> np.ndarray:
    """Scores of (possibly new) smoothed curves in the model's FPC basis."""
    if not smoothed.grid.same_as(model.grid):
        raise GridMismatch("smoothed curves and FPCA model use different grids")
    return project_curves(model, evaluate(smoothed))


def reconstruct(model: FpcaModel, score_row: ArrayLike, truncate_at: int) -> np.ndarray:
    K = model.n_components
    if not 1 <= truncate_at <= K:
        raise IndexError(f"truncate_at must be in [1, {K}], got {truncate_at}")
    row = np.asarray(score_row, dtype=float)
    if row.shape != (K,):
        raise ValueError(f"score row must have {K} entries, got {row.shape}")
    return model.mean_curve + row[:truncate_at] @ model.eigenfunctions[:truncate_at]


def reconstruct_single(model: FpcaModel, k: int, score: float, include_mean: bool = True) -> np.ndarray:
    if not 0 <= k < model.n_components:
        raise IndexError(f"FPC index {k} out of range for K={model.n_components}")
    curve = score * model.eigenfunctions[k]
    return model.mean_curve + curve if include_mean else curve


def l2_distance(x1: ArrayLike, x2: ArrayLike, grid: TimeGrid, weight: Optional[ArrayLike] = None) -> float:
    """Weighted L2 distance normalized by the integral of the weight."""
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    if a.shape != (len(grid),) or b.shape != (len(grid),):
        raise GridMismatch("both curves must be sampled on the grid")
    if weight is None:
        w = np.ones(len(grid))
    else:
        w = np.asarray(weight, dtype=float)
        if w.shape != (len(grid),):
            raise GridMismatch("weight must be sampled on the grid")
        if np.any(w <= 0):
            raise NonpositiveWeight("weight function must be strictly positive")
    q = grid.weights * w
    diff = a - b
    return float(np.sqrt(np.sum(q * diff * diff) / np.sum(q)))


def explained_variance(model: FpcaModel) -> np.ndarray:
    total = float(np.sum(model.eigenvalues))
    if total <= 0:
        raise DegenerateModel("all eigenvalues are zero; explained variance is undefined")
    return model.eigenvalues / total


def cumulative_explained_variance(model: FpcaModel) -> np.ndarray:
    return np.cumsum(explained_variance(model))


def variance_captured(model: FpcaModel) -> np.ndarray:
    """Share of the total curve variance carried by each retained FPC."""
    if model.total_variance <= 0:
        raise DegenerateModel("curves have zero total variance")
    return model.eigenvalues / model.total_variance

"""Explainability artifacts for a forest trained on FPC scores.

Every artifact is a pydantic model so it can be exported losslessly to JSON
and tabulated to CSV through `to_frame()`.
"""

import itertools
import logging
import math
from typing import Callable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import special, stats

from .errors import DegenerateGroups, DegenerateScores, EmptyData
from .fda_core import (
    FpcaModel,
    SmoothedCurves,
    evaluate,
    explained_variance,
    reconstruct_single,
    variance_captured,
)
from .frf import FunctionalRandomForest, oob_error, predict_labels, predict_probas
from .utils import clamp_logit, n_workers, rng_stream, sequential_mean

log = logging.getLogger("explain")

Predictor = Union[FunctionalRandomForest, Callable[[np.ndarray], np.ndarray]]

QUADRANTS = ("critical", "model-specific", "externally-relevant", "minor")


def _proba_fn(model: Predictor) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, FunctionalRandomForest):
        return lambda X: predict_probas(model, X)
    return lambda X: np.asarray(model(X), dtype=float)


def _label_fn(model: Predictor) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, FunctionalRandomForest):
        return lambda X: predict_labels(model, X)
    proba = _proba_fn(model)
    return lambda X: (proba(X) > 0.5).astype(int)


def _scores(scores: np.ndarray) -> np.ndarray:
    X = np.asarray(scores, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyData("score matrix is empty")
    return X


def _indices(fpc_indices: Optional[Sequence[int]], n_features: int) -> List[int]:
    if fpc_indices is None:
        return list(range(n_features))
    out = [int(k) for k in fpc_indices]
    for k in out:
        if not 0 <= k < n_features:
            raise IndexError(f"FPC index {k} out of range for K={n_features}")
    return out


class Artifact(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    kind: str = ""

    def to_frame(self) -> pd.DataFrame:
        raise NotImplementedError


class PdpCurve(Artifact):
    kind: Literal["pdp"] = "pdp"
    fpc_index: int
    score_grid: List[float]
    values: List[float]
    scale: Literal["probability", "logit"] = "probability"

    @model_validator(mode="after")
    def _check(self) -> "PdpCurve":
        if len(self.score_grid) < 2 or len(self.values) != len(self.score_grid):
            raise ValueError("a PDP needs at least two grid points and one value per point")
        if any(b <= a for a, b in zip(self.score_grid, self.score_grid[1:])):
            raise ValueError("PDP score grid must be increasing")
        if self.scale == "probability" and any(not 0.0 <= v <= 1.0 for v in self.values):
            raise ValueError("probability-scale PDP values must lie in [0, 1]")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fpc": self.fpc_index + 1, "score": self.score_grid, "value": self.values})


class HeatmapGrid(Artifact):
    kind: Literal["heatmap"] = "heatmap"
    fpc_indices: List[int]
    score_grids: List[List[float]]
    probabilities: List[List[float]]  # one row per FPC, one column per grid point
    column_means: List[float]

    @model_validator(mode="after")
    def _check(self) -> "HeatmapGrid":
        if any(not 0.0 <= p <= 1.0 for row in self.probabilities for p in row):
            raise ValueError("heatmap probabilities must lie in [0, 1]")
        return self

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"fpc": k + 1, "cell": j, "score": s, "probability": p}
            for k, grid, probs in zip(self.fpc_indices, self.score_grids, self.probabilities)
            for j, (s, p) in enumerate(zip(grid, probs))
        ]
        return pd.DataFrame(rows, columns=["fpc", "cell", "score", "probability"])


class ImportanceRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    fpc_index: int
    mdg: float
    permutation_importance: float
    f_statistic: float
    p_value: float
    eta_squared: float
    explained_variance_fraction: float


class ImportanceTable(Artifact):
    kind: Literal["importance"] = "importance"
    rows: List[ImportanceRow]
    permutation_source: str = "train"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([r.model_dump() for r in self.rows])
        frame.insert(0, "fpc", frame.pop("fpc_index") + 1)
        return frame


class AnovaResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    fpc_index: int
    ss_model: float
    ss_error: float
    ss_total: float
    df_model: int
    df_error: int
    f_statistic: float
    p_value: float
    eta_squared: float
    infinite_f: bool = False


class GroupSummary(BaseModel):
    fpc_index: int
    label: int
    sample: List[float]
    q1: float
    median: float
    q3: float
    bandwidth: float
    density_grid: List[float]
    density: List[float]


class ClassConditionalScores(Artifact):
    kind: Literal["class_scores"] = "class_scores"
    groups: List[GroupSummary]
    p_values: List[Optional[float]] = []

    def group(self, fpc_index: int, label: int) -> GroupSummary:
        for g in self.groups:
            if g.fpc_index == fpc_index and g.label == label:
                return g
        raise KeyError((fpc_index, label))

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"fpc": g.fpc_index + 1, "label": g.label, "n": len(g.sample), "q1": g.q1,
             "median": g.median, "q3": g.q3, "bandwidth": g.bandwidth}
            for g in self.groups
        ]
        return pd.DataFrame(rows, columns=["fpc", "label", "n", "q1", "median", "q3", "bandwidth"])


class BubblePoint(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    fpc_index: int
    external: float
    internal: float
    size: float
    quadrant: str


class BubblePlotData(Artifact):
    kind: Literal["bubble"] = "bubble"
    points: List[BubblePoint]
    median_internal: float
    median_external: float
    internal_metric: str = "mdg"
    external_metric: str = "eta_squared"

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([p.model_dump() for p in self.points])
        frame.insert(0, "fpc", frame.pop("fpc_index") + 1)
        return frame


class ReconstructionBands(Artifact):
    kind: Literal["bands"] = "bands"
    fpc_index: int
    grid: List[float]
    edges: List[float]
    lower: List[List[float]]
    upper: List[List[float]]
    mean_curve: List[float]
    counts: List[int]

    def to_frame(self) -> pd.DataFrame:
        cols = {"t": self.grid, "mean": self.mean_curve}
        for w, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            cols[f"w{w}_lower"] = lo
            cols[f"w{w}_upper"] = hi
        return pd.DataFrame(cols)


class FpcVariation(Artifact):
    kind: Literal["variation"] = "variation"
    fpc_index: int
    grid: List[float]
    score_values: List[float]
    curves: List[List[float]]
    mean_curve: List[float]

    def to_frame(self) -> pd.DataFrame:
        cols = {"t": self.grid, "mean": self.mean_curve}
        for v, curve in zip(self.score_values, self.curves):
            cols[f"score={v!r}"] = curve
        return pd.DataFrame(cols)


class CurveSet(Artifact):
    """A family of curves on one grid: eigenfunctions, or smoothed signals tagged by class."""

    kind: Literal["curves"] = "curves"
    name: str
    grid: List[float]
    names: List[str]
    curves: List[List[float]]
    groups: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check(self) -> "CurveSet":
        if not self.curves:
            raise ValueError("curve set is empty")
        if len(self.names) != len(self.curves):
            raise ValueError("need one name per curve")
        if any(len(c) != len(self.grid) for c in self.curves):
            raise ValueError("every curve must have one value per grid point")
        if self.groups is not None and len(self.groups) != len(self.curves):
            raise ValueError("need one group per curve")
        return self

    def to_frame(self) -> pd.DataFrame:
        n, T = len(self.curves), len(self.grid)
        frame = pd.DataFrame(
            {
                "curve": np.repeat(self.names, T),
                "t": np.tile(self.grid, n),
                "value": np.asarray(self.curves, dtype=float).ravel(),
            }
        )
        if self.groups is not None:
            frame.insert(1, "group", np.repeat(self.groups, T))
        return frame


def compute_fpdp(
    model: Predictor,
    scores: np.ndarray,
    k: int,
    grid_size: int = 50,
    scale: str = "probability",
) -> PdpCurve:
    """Average prediction as FPC k sweeps its observed range, other scores kept at each row's values."""
    X = _scores(scores)
    k = _indices([k], X.shape[1])[0]
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    lo, hi = float(X[:, k].min()), float(X[:, k].max())
    if hi <= lo:
        raise DegenerateScores(f"FPC{k + 1} scores are constant; no range to sweep")
    grid = np.linspace(lo, hi, grid_size)
    n = X.shape[0]
    swept = np.tile(X, (grid_size, 1))
    swept[:, k] = np.repeat(grid, n)
    probs = _proba_fn(model)(swept).reshape(grid_size, n)
    values = np.array([sequential_mean(row.tolist()) for row in probs])
    if scale == "logit":
        values = clamp_logit(values)
    elif scale != "probability":
        raise ValueError(f"unknown scale {scale!r}")
    return PdpCurve(fpc_index=k, score_grid=grid.tolist(), values=values.tolist(), scale=scale)


def fpdp_all(
    model: Predictor,
    scores: np.ndarray,
    fpc_indices: Optional[Sequence[int]] = None,
    grid_size: int = 50,
    scale: str = "probability",
) -> List[PdpCurve]:
    X = _scores(scores)
    return [compute_fpdp(model, X, k, grid_size, scale) for k in _indices(fpc_indices, X.shape[1])]


def compute_fpcph(
    model: Predictor,
    scores: np.ndarray,
    fpc_indices: Optional[Sequence[int]] = None,
    grid_size: int = 50,
) -> HeatmapGrid:
    """One prediction per cell: column means everywhere except FPC k, which takes the grid value."""
    X = _scores(scores)
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    proba = _proba_fn(model)
    means = X.mean(axis=0)
    grids, probs = [], []
    idx = _indices(fpc_indices, X.shape[1])
    for k in idx:
        grid = np.linspace(X[:, k].min(), X[:, k].max(), grid_size)
        rows = np.tile(means, (grid_size, 1))
        rows[:, k] = grid
        grids.append(grid.tolist())
        probs.append(proba(rows).tolist())
    return HeatmapGrid(fpc_indices=idx, score_grids=grids, probabilities=probs, column_means=means.tolist())


def score_band(model: FpcaModel, k: int, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise envelope of mu + v * xi_k for v in [lo, hi]; attained at the endpoints."""
    a = reconstruct_single(model, k, lo)
    b = reconstruct_single(model, k, hi)
    return np.minimum(a, b), np.maximum(a, b)


def reconstruction_bands(
    fpca: FpcaModel,
    scores: Optional[np.ndarray] = None,
    k: int = 0,
    n_windows: int = 4,
) -> ReconstructionBands:
    if n_windows < 2:
        raise ValueError("n_windows must be >= 2")
    X = fpca.scores if scores is None else _scores(scores)
    k = _indices([k], X.shape[1])[0]
    s = X[:, k]
    lo, hi = float(s.min()), float(s.max())
    if hi <= lo:
        raise DegenerateScores(f"FPC{k + 1} score range is zero")
    edges = np.linspace(lo, hi, n_windows + 1)
    lower, upper = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        env_lo, env_hi = score_band(fpca, k, a, b)
        lower.append(env_lo.tolist())
        upper.append(env_hi.tolist())
    window = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_windows - 1)
    counts = np.bincount(window, minlength=n_windows)
    return ReconstructionBands(
        fpc_index=k,
        grid=fpca.grid.points.tolist(),
        edges=edges.tolist(),
        lower=lower,
        upper=upper,
        mean_curve=fpca.mean_curve.tolist(),
        counts=counts.tolist(),
    )


def fpc_variation(model: FpcaModel, k: int, n_curves: int = 9, spread: float = 2.0) -> FpcVariation:
    """Single-FPC reconstructions for scores evenly spaced in +-spread standard deviations."""
    if n_curves < 2:
        raise ValueError("n_curves must be >= 2")
    sd = math.sqrt(float(model.eigenvalues[k]))
    values = np.linspace(-spread * sd, spread * sd, n_curves)
    curves = [reconstruct_single(model, k, float(v)).tolist() for v in values]
    return FpcVariation(
        fpc_index=k,
        grid=model.grid.points.tolist(),
        score_values=values.tolist(),
        curves=curves,
        mean_curve=model.mean_curve.tolist(),
    )


def eigenfunction_curves(model: FpcaModel) -> CurveSet:
    """All K eigenfunctions, each named with its share of the total variance."""
    shares = variance_captured(model)
    return CurveSet(
        name="eigenfunctions",
        grid=model.grid.points.tolist(),
        names=[f"FPC{k + 1} ({100 * s:.1f}%)" for k, s in enumerate(shares)],
        curves=model.eigenfunctions.tolist(),
    )


def smoothed_curves(smoothed: SmoothedCurves) -> CurveSet:
    curves = evaluate(smoothed)
    groups = None if smoothed.labels is None else [int(v) for v in smoothed.labels]
    return CurveSet(
        name="smoothed",
        grid=smoothed.basis.grid.points.tolist(),
        names=[f"curve{i}" for i in range(curves.shape[0])],
        curves=curves.tolist(),
        groups=groups,
    )



def mdg_importance(forest: FunctionalRandomForest, weighted: bool = True) -> np.ndarray:
    """Impurity decrease per FPC summed over every split, averaged over trees."""
    total = np.zeros(forest.n_features)
    for root in forest.trees:
        for node in root.walk():
            if not node.is_leaf:
                total[node.rule.fpc_index] += node.weighted_decrease if weighted else node.rule.decrease
    return total / forest.n_trees


def _permutation_runs_for(
    error: Callable[[np.ndarray], float],
    X: np.ndarray,
    k: int,
    base: float,
    perms: Sequence[np.ndarray],
) -> List[float]:
    out = []
    for perm in perms:
        Xp = X.copy()
        Xp[:, k] = X[perm, k]
        out.append(error(Xp) - base)
    return out


def permutation_importance_runs(
    model: Predictor,
    scores: np.ndarray,
    labels: np.ndarray,
    repeats: int = 10,
    seed: int = 0,
    use_oob: bool = False,
    exhaustive: bool = False,
    n_jobs: Optional[int] = None,
) -> np.ndarray:
    """Increase in misclassification rate per (repeat, FPC) after shuffling that FPC's column.

    Shuffles come from generators keyed by (seed, k, repeat). With exhaustive=True
    every permutation of the rows is used instead (small N only).
    """
    X = _scores(scores)
    y = np.asarray(labels, dtype=int)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n, K = X.shape
    if use_oob:
        if not isinstance(model, FunctionalRandomForest):
            raise TypeError("OOB permutation importance needs a FunctionalRandomForest")
        error = lambda A: oob_error(model, A, y)  # noqa: E731
    else:
        labels_of = _label_fn(model)
        error = lambda A: float(np.mean(labels_of(A) != y))  # noqa: E731
    base = error(X)
    if base is None:
        raise EmptyData("no out-of-bag predictions to evaluate")

    if exhaustive:
        if n > 8:
            raise ValueError("exhaustive permutation importance is limited to N <= 8")
        shared = [np.array(p) for p in itertools.permutations(range(n))]
        perms_for = lambda k: shared  # noqa: E731
    else:
        perms_for = lambda k: [rng_stream(seed, k, r).permutation(n) for r in range(repeats)]  # noqa: E731

    cols = Parallel(n_jobs=n_workers(n_jobs), prefer="threads")(
        delayed(_permutation_runs_for)(error, X, k, base, perms_for(k)) for k in range(K)
    )
    return np.array(cols, dtype=float).T


def permutation_importance(
    model: Predictor,
    scores: np.ndarray,
    labels: np.ndarray,
    repeats: int = 10,
    seed: int = 0,
    use_oob: bool = False,
    exhaustive: bool = False,
    n_jobs: Optional[int] = None,
) -> np.ndarray:
    runs = permutation_importance_runs(model, scores, labels, repeats, seed, use_oob, exhaustive, n_jobs)
    return runs.mean(axis=0)


def _anova_column(x: np.ndarray, y: np.ndarray, k: int) -> AnovaResult:
    g0, g1 = x[y == 0], x[y == 1]
    if g0.size == 0 or g1.size == 0:
        raise DegenerateGroups(f"FPC{k + 1}: both classes need at least one observation")
    n = x.size
    if n < 3:
        raise DegenerateGroups("ANOVA needs at least 3 observations (df_error >= 1)")
    grand = x.mean()
    m0, m1 = g0.mean(), g1.mean()
    ss_model = float(g0.size * (m0 - grand) ** 2 + g1.size * (m1 - grand) ** 2)
    ss_error = float(np.sum((g0 - m0) ** 2) + np.sum((g1 - m1) ** 2))
    ss_total = float(np.sum((x - grand) ** 2))
    df_error = n - 2
    ms_error = ss_error / df_error
    infinite = False
    if ms_error == 0.0:
        if ss_model > 0.0:
            f_stat, p_value, infinite = math.inf, 0.0, True
            log.warning("FPC%d: zero within-class variance, F is infinite", k + 1)
        else:
            f_stat, p_value = 0.0, 1.0
    else:
        f_stat = ss_model / ms_error
        # survival function of F(1, df_error) via the regularized incomplete beta
        p_value = float(special.betainc(df_error / 2.0, 0.5, df_error / (df_error + f_stat)))
    eta = ss_model / ss_total if ss_total > 0 else 0.0
    return AnovaResult(
        fpc_index=k,
        ss_model=ss_model,
        ss_error=ss_error,
        ss_total=ss_total,
        df_model=1,
        df_error=df_error,
        f_statistic=f_stat,
        p_value=min(1.0, max(0.0, p_value)),
        eta_squared=min(1.0, max(0.0, eta)),
        infinite_f=infinite,
    )


def anova_fpc(scores: np.ndarray, labels: np.ndarray) -> List[AnovaResult]:
    """One-way two-group ANOVA of each score column against the class label."""
    X = _scores(scores)
    y = np.asarray(labels, dtype=int)
    if y.shape != (X.shape[0],):
        raise ValueError("one label per score row is required")
    return [_anova_column(X[:, k], y, k) for k in range(X.shape[1])]


def _density(sample: np.ndarray, n_points: int) -> Tuple[float, np.ndarray, np.ndarray]:
    if sample.size >= 2 and np.std(sample) > 0:
        kde = stats.gaussian_kde(sample, bw_method="silverman")
        h = float(kde.factor * np.std(sample, ddof=1))
        grid = np.linspace(sample.min() - 4 * h, sample.max() + 4 * h, n_points)
        return h, grid, kde(grid)
    v = float(sample[0])
    h = 0.1 * max(1.0, abs(v))
    grid = np.linspace(v - 4 * h, v + 4 * h, n_points)
    return h, grid, stats.norm.pdf(grid, loc=v, scale=h)


def scores_by_class(
    scores: np.ndarray,
    labels: np.ndarray,
    fpc_indices: Optional[Sequence[int]] = None,
    grid_points: int = 128,
) -> ClassConditionalScores:
    """Per-class score samples, linear-interpolation quartiles and Silverman KDEs."""
    X = _scores(scores)
    y = np.asarray(labels, dtype=int)
    idx = _indices(fpc_indices, X.shape[1])
    groups: List[GroupSummary] = []
    p_values: List[Optional[float]] = []
    for k in idx:
        for label in (0, 1):
            sample = X[y == label, k]
            if sample.size == 0:
                continue
            q1, q2, q3 = np.percentile(sample, [25, 50, 75])
            h, grid, dens = _density(sample, grid_points)
            groups.append(
                GroupSummary(
                    fpc_index=k, label=label, sample=sample.tolist(), q1=float(q1), median=float(q2),
                    q3=float(q3), bandwidth=h, density_grid=grid.tolist(), density=dens.tolist(),
                )
            )
        try:
            p_values.append(_anova_column(X[:, k], y, k).p_value)
        except DegenerateGroups:
            p_values.append(None)
    return ClassConditionalScores(groups=groups, p_values=p_values)


def importance_table(
    forest: FunctionalRandomForest,
    fpca: FpcaModel,
    scores: np.ndarray,
    labels: np.ndarray,
    repeats: int = 10,
    seed: int = 0,
    eval_scores: Optional[np.ndarray] = None,
    eval_labels: Optional[np.ndarray] = None,
    weighted_mdg: bool = True,
) -> ImportanceTable:
    """MDG, permutation importance, ANOVA and explained variance per FPC.

    Permutation importance runs on the supplied evaluation set, else on OOB
    votes when the forest was bootstrapped, else on the training scores.
    """
    X = _scores(scores)
    y = np.asarray(labels, dtype=int)
    mdg = mdg_importance(forest, weighted=weighted_mdg)
    if eval_scores is not None:
        pi = permutation_importance(forest, eval_scores, eval_labels, repeats, seed)
        source = "test"
    elif forest.bootstrap_indices is not None and X.shape[0] == forest.n_train:
        pi = permutation_importance(forest, X, y, repeats, seed, use_oob=True)
        source = "oob"
    else:
        pi = permutation_importance(forest, X, y, repeats, seed)
        source = "train"
    anova = anova_fpc(X, y)
    fractions = explained_variance(fpca)
    rows = [
        ImportanceRow(
            fpc_index=k,
            mdg=float(mdg[k]),
            permutation_importance=float(pi[k]),
            f_statistic=a.f_statistic,
            p_value=a.p_value,
            eta_squared=a.eta_squared,
            explained_variance_fraction=float(fractions[k]),
        )
        for k, a in enumerate(anova)
    ]
    return ImportanceTable(rows=rows, permutation_source=source)


def bubble_data(
    importance: ImportanceTable,
    internal_choice: str = "mdg",
    external_choice: str = "eta_squared",
) -> BubblePlotData:
    """Quadrant analysis against the medians; values equal to a median count as high."""
    if internal_choice not in ("mdg", "permutation_importance"):
        raise ValueError(f"unknown internal metric {internal_choice!r}")
    if external_choice not in ("eta_squared", "f_statistic"):
        raise ValueError(f"unknown external metric {external_choice!r}")
    internal = importance.column(internal_choice)
    external = importance.column(external_choice)
    med_int = float(np.median(internal))
    med_ext = float(np.median(external))
    points = []
    for row, i_val, e_val in zip(importance.rows, internal, external):
        hi_int, hi_ext = i_val >= med_int, e_val >= med_ext
        if hi_int and hi_ext:
            quadrant = "critical"
        elif hi_int:
            quadrant = "model-specific"
        elif hi_ext:
            quadrant = "externally-relevant"
        else:
            quadrant = "minor"
        points.append(
            BubblePoint(
                fpc_index=row.fpc_index,
                external=float(e_val),
                internal=float(i_val),
                size=row.explained_variance_fraction,
                quadrant=quadrant,
            )
        )
    return BubblePlotData(
        points=points,
        median_internal=med_int,
        median_external=med_ext,
        internal_metric=internal_choice,
        external_metric=external_choice,
    )

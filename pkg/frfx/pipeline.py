import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import CLASS_NAMES, RunConfig
from .errors import DegenerateScores, InvalidDataset, IoError
from .explain import (
    bubble_data,
    compute_fpcph,
    compute_fpdp,
    eigenfunction_curves,
    fpc_variation,
    importance_table,
    reconstruction_bands,
    scores_by_class,
    smoothed_curves,
)
from .fda_core import (
    BasisSystem,
    FpcaModel,
    FunctionalDataset,
    SmoothedCurves,
    build_basis,
    cumulative_explained_variance,
    evaluate,
    explained_variance,
    fit_fpca,
    project,
    smooth,
    variance_captured,
)
from .frf import (
    FunctionalRandomForest,
    accuracy,
    describe_tree,
    fit_forest,
    fit_tree,
    oob_evaluate,
    predict_labels,
    predict_probas,
)
from .persist import export_artifact, save_model
from .render import comparison_spec, render_svg, spec_for
from .report import make_pdf_report
from .ucr import load_ucr
from .utils import sha1_file

log = logging.getLogger("pipeline")

SCALES = {"prob": "probability", "logit": "logit"}


@dataclass
class FittedRun:
    train: FunctionalDataset
    basis: BasisSystem
    smoothed: Optional[SmoothedCurves]
    fpca: FpcaModel
    forest: FunctionalRandomForest
    test: Optional[FunctionalDataset] = None
    test_scores: Optional[np.ndarray] = None

    @property
    def train_scores(self) -> np.ndarray:
        return self.fpca.scores


def smooth_dataset(dataset: FunctionalDataset, config: RunConfig) -> Tuple[BasisSystem, SmoothedCurves]:
    basis = build_basis(dataset.grid, config.n_basis, config.order)
    return basis, smooth(dataset, basis, config.penalty)


def scores_for(dataset: FunctionalDataset, basis: BasisSystem, penalty: float, fpca: FpcaModel) -> np.ndarray:
    """Smooth new curves with the training basis and project them on the fitted FPCs."""
    if len(dataset.grid) != len(basis.grid):
        raise InvalidDataset(f"curves have {len(dataset.grid)} points, the model was trained on {len(basis.grid)}")
    aligned = FunctionalDataset(basis.grid, dataset.values, dataset.labels, dataset.label_values, dataset.name)
    return project(fpca, smooth(aligned, basis, penalty))


def predictions_frame(
    forest: FunctionalRandomForest, scores: np.ndarray, labels: Optional[np.ndarray] = None
) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "row": np.arange(scores.shape[0]),
            "predicted": predict_labels(forest, scores),
            "probability": predict_probas(forest, scores),
        }
    )
    if labels is not None:
        frame["label"] = np.asarray(labels, dtype=int)
    return frame


def fpca_frames(fpca: FpcaModel) -> Tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """Eigenvalue table, eigenfunctions (one column per FPC) and the score matrix."""
    K = fpca.n_components
    names = [f"FPC{k + 1}" for k in range(K)]
    eig = pd.DataFrame(
        {
            "fpc": np.arange(1, K + 1),
            "eigenvalue": fpca.eigenvalues,
            "explained_variance": explained_variance(fpca),
            "cumulative": cumulative_explained_variance(fpca),
            "variance_captured": variance_captured(fpca),
        }
    )
    funcs = pd.DataFrame(fpca.eigenfunctions.T, columns=names)
    funcs.insert(0, "t", fpca.grid.points)
    funcs.insert(1, "mean", fpca.mean_curve)
    scores = pd.DataFrame(fpca.scores, columns=names)
    return eig, funcs, scores


def smoothed_frame(smoothed: SmoothedCurves) -> pd.DataFrame:
    curves = evaluate(smoothed)
    frame = pd.DataFrame(curves, columns=[f"t{j}" for j in range(curves.shape[1])])
    if smoothed.labels is not None:
        frame.insert(0, "label", smoothed.labels)
    return frame


def write_frame(frame: pd.DataFrame, path: str) -> str:
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


class ExplainPipeline:
    def __init__(self, config: RunConfig):
        self.config = config
        self.timings_ms: Dict[str, int] = {}
        self.files: List[str] = []

    def _path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.config.out, name)

    def fit(self) -> FittedRun:
        cfg = self.config
        if not cfg.train:
            raise InvalidDataset("a training file is required")

        t_load = time.time()
        train = load_ucr(cfg.train)
        test = load_ucr(cfg.test, label_values=train.label_values) if cfg.test else None
        self.timings_ms["load_ms"] = int((time.time() - t_load) * 1000)

        t_sm = time.time()
        basis, smoothed = smooth_dataset(train, cfg)
        self.timings_ms["smooth_ms"] = int((time.time() - t_sm) * 1000)

        t_fpca = time.time()
        fpca = fit_fpca(smoothed, cfg.k)
        test_scores = scores_for(test, basis, cfg.penalty, fpca) if test is not None else None
        self.timings_ms["fpca_ms"] = int((time.time() - t_fpca) * 1000)
        log.info("[FPCA] K=%d, FPC1 carries %.2f%% of total variance", cfg.k, 100 * variance_captured(fpca)[0])

        t_rf = time.time()
        forest = fit_forest(fpca.scores, train.labels, cfg.forest_config())
        self.timings_ms["forest_ms"] = int((time.time() - t_rf) * 1000)
        return FittedRun(train, basis, smoothed, fpca, forest, test, test_scores)

    def explain(self, run: FittedRun) -> Dict[str, Any]:
        cfg = self.config
        y = run.train.labels
        use_test = cfg.explain_on == "test" and run.test_scores is not None
        X = run.test_scores if use_test else run.train_scores
        K = run.fpca.n_components
        out: Dict[str, Any] = {}

        t_pdp = time.time()
        pdps = []
        for k in range(K):
            try:
                pdps.append(compute_fpdp(run.forest, X, k, cfg.grid, SCALES[cfg.scale]))
            except DegenerateScores as e:
                log.warning("skipping FPDP: %s", e)
        out["pdp"] = pdps
        out["heatmap"] = compute_fpcph(run.forest, X, grid_size=cfg.heatmap_grid)
        self.timings_ms["pdp_ms"] = int((time.time() - t_pdp) * 1000)

        t_imp = time.time()
        out["oob"] = oob_evaluate(run.forest, run.train_scores, y)
        out["importance"] = importance_table(
            run.forest,
            run.fpca,
            run.train_scores,
            y,
            repeats=cfg.repeats,
            seed=cfg.seed,
            eval_scores=run.test_scores,
            eval_labels=None if run.test is None else run.test.labels,
        )
        out["bubble"] = bubble_data(out["importance"])
        out["class_scores"] = scores_by_class(run.train_scores, y)
        self.timings_ms["importance_ms"] = int((time.time() - t_imp) * 1000)

        t_shape = time.time()
        bands = []
        for k in range(K):
            try:
                bands.append(reconstruction_bands(run.fpca, k=k, n_windows=cfg.windows))
            except DegenerateScores as e:
                log.warning("skipping bands: %s", e)
        out["bands"] = bands
        out["variation"] = [fpc_variation(run.fpca, k) for k in range(K)]
        out["eigenfunctions"] = eigenfunction_curves(run.fpca)
        if run.smoothed is not None:
            out["curves"] = smoothed_curves(run.smoothed)
        tree = fit_tree(run.train_scores, y, prune_alpha=cfg.prune_alpha, config=run.forest.config)
        out["tree"] = tree
        self.timings_ms["shape_ms"] = int((time.time() - t_shape) * 1000)
        return out

    def run(self) -> Dict[str, Any]:
        t0 = time.time()
        cfg = self.config
        try:
            os.makedirs(cfg.out, exist_ok=True)
        except OSError as e:
            raise IoError(f"cannot create {cfg.out}: {e}") from e
        self.files = []
        fitted = self.fit()
        artifacts = self.explain(fitted)
        y = fitted.train.labels

        t_exp = time.time()
        save_model(
            fitted.forest,
            fitted.fpca,
            self._path("model.json"),
            fitted.basis,
            cfg.penalty,
            label_values=fitted.train.label_values,
        )
        exports = (
            "pdp", "heatmap", "importance", "class_scores", "bubble",
            "bands", "variation", "oob", "eigenfunctions", "curves",
        )
        for name in exports:
            art = artifacts.get(name)
            if art is None or (isinstance(art, list) and not art):
                continue
            export_artifact(art, "csv", self._path(f"{name}.csv"))
            export_artifact(art, "json", self._path(f"{name}.json"))
        eig, funcs, scores = fpca_frames(fitted.fpca)
        write_frame(eig, self._path("fpca_eigenvalues.csv"))
        write_frame(funcs, self._path("fpca_eigenfunctions.csv"))
        write_frame(scores, self._path("fpca_scores.csv"))
        if fitted.test_scores is not None:
            write_frame(
                predictions_frame(fitted.forest, fitted.test_scores, fitted.test.labels),
                self._path("predictions.csv"),
            )
        tree_text = describe_tree(artifacts["tree"], CLASS_NAMES)
        try:
            with open(self._path("tree.txt"), "w", encoding="utf-8") as f:
                f.write(tree_text + "\n")
        except OSError as e:
            raise IoError(f"cannot write tree.txt: {e}") from e
        self.timings_ms["export_ms"] = int((time.time() - t_exp) * 1000)

        t_svg = time.time()
        figures = [
            ("pdp.svg", artifacts["pdp"], {"title": "Functional partial dependence"}),
            ("heatmap.svg", artifacts["heatmap"], {}),
            ("importance.svg", artifacts["importance"], {"title": "FPC importance"}),
            ("violin.svg", artifacts["class_scores"], {"title": "FPC scores by class"}),
            ("bubble.svg", artifacts["bubble"], {}),
            ("bands.svg", artifacts["bands"], {"title": "Reconstruction bands"}),
            ("variation.svg", artifacts["variation"], {"title": "FPC variation"}),
            ("eigenfunctions.svg", artifacts["eigenfunctions"], {}),
            ("curves.svg", artifacts.get("curves"), {}),
        ]
        for name, art, kw in figures:
            if art is None or (isinstance(art, list) and not art):
                continue
            render_svg(spec_for(art, **kw), self._path(name))
        if artifacts["pdp"] and artifacts["bands"]:
            render_svg(comparison_spec(artifacts["pdp"], artifacts["bands"]), self._path("comparison.svg"))
        self.timings_ms["render_ms"] = int((time.time() - t_svg) * 1000)

        summary: Dict[str, Any] = {
            "train": cfg.train,
            "test": cfg.test,
            "train_sha1": sha1_file(cfg.train),
            "test_sha1": sha1_file(cfg.test) if cfg.test else None,
            "n_train": fitted.train.n_curves,
            "n_test": None if fitted.test is None else fitted.test.n_curves,
            "T": len(fitted.train.grid),
            "K": fitted.fpca.n_components,
            "trees": fitted.forest.n_trees,
            "mtry": fitted.forest.config.mtry,
            "seed": cfg.seed,
            "label_values": list(fitted.train.label_values or ()),
            "class_names": list(CLASS_NAMES),
            "train_accuracy": accuracy(fitted.forest, fitted.train_scores, y),
            "test_accuracy": None
            if fitted.test is None
            else accuracy(fitted.forest, fitted.test_scores, fitted.test.labels),
            "oob_error": artifacts["oob"].oob_error_rate,
            "tree_accuracy": accuracy(artifacts["tree"], fitted.train_scores, y)
            if fitted.test is None
            else accuracy(artifacts["tree"], fitted.test_scores, fitted.test.labels),
            "explained_variance": explained_variance(fitted.fpca).tolist(),
            "variance_captured": variance_captured(fitted.fpca).tolist(),
            "quadrants": {f"FPC{p.fpc_index + 1}": p.quadrant for p in artifacts["bubble"].points},
        }
        self.files.append("summary.json")
        self.files.append("report.pdf")
        summary["files"] = sorted(self.files)
        try:
            with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as f:
                json.dump(summary, f, indent=2, allow_nan=True)
                f.write("\n")
        except OSError as e:
            raise IoError(f"cannot write summary.json: {e}") from e

        t_rep = time.time()
        self.timings_ms["total_ms"] = int((time.time() - t0) * 1000)
        make_pdf_report(
            {**summary, "timings_ms": self.timings_ms},
            os.path.join(cfg.out, "report.pdf"),
            importance=artifacts["importance"],
            bubble=artifacts["bubble"],
            heatmap=artifacts["heatmap"],
            tree_text=tree_text,
        )
        self.timings_ms["report_ms"] = int((time.time() - t_rep) * 1000)
        log.info(
            "[Output] test_acc=%s oob_error=%s files=%d timings=%s",
            summary["test_accuracy"],
            summary["oob_error"],
            len(summary["files"]),
            self.timings_ms,
        )
        return summary

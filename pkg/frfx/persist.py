"""Model persistence (JSON schema v1) and artifact export.

Floats go through the standard json module in both directions, whose repr
and parser round-trip every double exactly.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Type, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .config import ForestConfig
from .errors import CorruptModel, IoError, SchemaVersionMismatch
from .explain import (
    BubblePlotData,
    ClassConditionalScores,
    CurveSet,
    FpcVariation,
    HeatmapGrid,
    ImportanceTable,
    PdpCurve,
    ReconstructionBands,
)
from .fda_core import BasisSystem, FpcaModel, TimeGrid, build_basis
from .frf import FunctionalRandomForest, OobReport, SplitRule, TreeNode

log = logging.getLogger("persist")

SCHEMA_NAME = "frfx-model"
SCHEMA_VERSION = 1

ARTIFACT_KINDS: Dict[str, Type[BaseModel]] = {
    "pdp": PdpCurve,
    "heatmap": HeatmapGrid,
    "importance": ImportanceTable,
    "class_scores": ClassConditionalScores,
    "bubble": BubblePlotData,
    "bands": ReconstructionBands,
    "variation": FpcVariation,
    "curves": CurveSet,
    "oob": OobReport,
}


class NodeRecord(BaseModel):
    counts: Tuple[int, int]
    impurity: float
    n: int
    fpc: Optional[int] = None
    threshold: Optional[float] = None
    decrease: Optional[float] = None
    weighted_decrease: float = 0.0
    left: Optional["NodeRecord"] = None
    right: Optional["NodeRecord"] = None


class BasisRecord(BaseModel):
    n_basis: int
    order: int
    penalty: float = 0.0


class FpcaRecord(BaseModel):
    grid_points: List[float]
    grid_weights: List[float]
    mean_curve: List[float]
    eigenfunctions: List[List[float]]
    eigenvalues: List[float]
    scores: List[List[float]]
    total_variance: float
    residual_norm: List[float]


class ForestRecord(BaseModel):
    config: ForestConfig
    n_features: int
    n_train: int
    bootstrap_indices: Optional[List[List[int]]] = None
    trees: List[NodeRecord]


class ModelDocument(BaseModel):
    format: Literal["frfx-model"] = SCHEMA_NAME
    version: int = SCHEMA_VERSION
    basis: Optional[BasisRecord] = None
    label_values: Optional[List[float]] = None
    fpca: FpcaRecord
    forest: ForestRecord


def node_to_record(node: TreeNode) -> NodeRecord:
    if node.is_leaf:
        return NodeRecord(counts=node.class_counts, impurity=node.impurity, n=node.n_samples)
    return NodeRecord(
        counts=node.class_counts,
        impurity=node.impurity,
        n=node.n_samples,
        fpc=node.rule.fpc_index,
        threshold=node.rule.threshold,
        decrease=node.rule.decrease,
        weighted_decrease=node.weighted_decrease,
        left=node_to_record(node.left),
        right=node_to_record(node.right),
    )


def node_from_record(rec: NodeRecord) -> TreeNode:
    counts = (int(rec.counts[0]), int(rec.counts[1]))
    if rec.fpc is None:
        return TreeNode(counts, rec.impurity, rec.n)
    if rec.threshold is None or rec.left is None or rec.right is None:
        raise CorruptModel("internal tree node is missing its threshold or children")
    return TreeNode(
        counts,
        rec.impurity,
        rec.n,
        rule=SplitRule(rec.fpc, rec.threshold, rec.decrease or 0.0),
        left=node_from_record(rec.left),
        right=node_from_record(rec.right),
        weighted_decrease=rec.weighted_decrease,
    )


def model_document(
    forest: FunctionalRandomForest,
    fpca: FpcaModel,
    basis: Optional[BasisSystem] = None,
    penalty: float = 0.0,
    label_values: Optional[Sequence[float]] = None,
) -> ModelDocument:
    return ModelDocument(
        label_values=None if label_values is None else [float(v) for v in label_values],
        basis=None if basis is None else BasisRecord(n_basis=basis.n_basis, order=basis.order, penalty=penalty),
        fpca=FpcaRecord(
            grid_points=fpca.grid.points.tolist(),
            grid_weights=fpca.grid.weights.tolist(),
            mean_curve=fpca.mean_curve.tolist(),
            eigenfunctions=fpca.eigenfunctions.tolist(),
            eigenvalues=fpca.eigenvalues.tolist(),
            scores=fpca.scores.tolist(),
            total_variance=fpca.total_variance,
            residual_norm=fpca.reconstruction_residual_norm.tolist(),
        ),
        forest=ForestRecord(
            config=forest.config,
            n_features=forest.n_features,
            n_train=forest.n_train,
            bootstrap_indices=None
            if forest.bootstrap_indices is None
            else [np.asarray(b).tolist() for b in forest.bootstrap_indices],
            trees=[node_to_record(t) for t in forest.trees],
        ),
    )


def _dump(payload, path: str, indent: Optional[int] = None) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=indent, allow_nan=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


def save_model(
    forest: FunctionalRandomForest,
    fpca: FpcaModel,
    path: str,
    basis: Optional[BasisSystem] = None,
    penalty: float = 0.0,
    label_values: Optional[Sequence[float]] = None,
) -> str:
    """Write the model as JSON. ``label_values`` are the raw training labels behind classes 0 and 1."""
    doc = model_document(forest, fpca, basis, penalty, label_values)
    _dump(doc.model_dump(), path)
    log.info("saved model (%d trees, K=%d) to %s", forest.n_trees, fpca.n_components, path)
    return path


@dataclass(frozen=True, eq=False)
class LoadedModel:
    forest: FunctionalRandomForest
    fpca: FpcaModel
    basis: Optional[BasisSystem] = None
    penalty: float = 0.0
    label_values: Optional[Tuple[float, ...]] = None


def load_model(path: str) -> LoadedModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise CorruptModel(f"{path}: not valid JSON ({e})") from e
    if not isinstance(data, dict) or data.get("format") != SCHEMA_NAME:
        raise CorruptModel(f"{path}: not an frfx model file")
    if data.get("version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema version {data.get('version')!r}, expected {SCHEMA_VERSION}")
    try:
        doc = ModelDocument.model_validate(data)
        rec = doc.fpca
        grid = TimeGrid(np.array(rec.grid_points), np.array(rec.grid_weights))
        fpca = FpcaModel(
            grid=grid,
            mean_curve=np.array(rec.mean_curve),
            eigenfunctions=np.array(rec.eigenfunctions).reshape(len(rec.eigenvalues), len(grid)),
            eigenvalues=np.array(rec.eigenvalues),
            scores=np.array(rec.scores).reshape(-1, len(rec.eigenvalues)),
            total_variance=rec.total_variance,
            reconstruction_residual_norm=np.array(rec.residual_norm),
        )
        fr = doc.forest
        forest = FunctionalRandomForest(
            trees=[node_from_record(t) for t in fr.trees],
            config=fr.config,
            n_features=fr.n_features,
            bootstrap_indices=None
            if fr.bootstrap_indices is None
            else [np.array(b, dtype=int) for b in fr.bootstrap_indices],
            n_train=fr.n_train,
        )
        basis = None
        penalty = 0.0
        if doc.basis is not None:
            basis = build_basis(grid, doc.basis.n_basis, doc.basis.order)
            penalty = doc.basis.penalty
    except (ValidationError, ValueError) as e:
        raise CorruptModel(f"{path}: {e}") from e
    labels = None if doc.label_values is None else tuple(doc.label_values)
    return LoadedModel(forest=forest, fpca=fpca, basis=basis, penalty=penalty, label_values=labels)


def load_artifact(path: str) -> Union[BaseModel, List[BaseModel]]:
    """Parse a JSON export back into its artifact model (or list of models)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise CorruptModel(f"{path}: not valid JSON ({e})") from e

    def one(item):
        kind = item.get("kind") if isinstance(item, dict) else None
        if kind not in ARTIFACT_KINDS:
            raise CorruptModel(f"{path}: unknown artifact kind {kind!r}")
        try:
            return ARTIFACT_KINDS[kind].model_validate(item)
        except ValidationError as e:
            raise CorruptModel(f"{path}: {e}") from e

    return [one(d) for d in data] if isinstance(data, list) else one(data)


def artifact_frame(artifact: Union[BaseModel, Sequence[BaseModel]]) -> pd.DataFrame:
    if isinstance(artifact, (list, tuple)):
        return pd.concat([a.to_frame() for a in artifact], ignore_index=True)
    return artifact.to_frame()


def export_artifact(artifact: Union[BaseModel, Sequence[BaseModel]], fmt: str, path: str) -> str:
    """Write an artifact (or a list of same-kind artifacts) as JSON or CSV at full precision."""
    if fmt == "json":
        payload = [a.model_dump() for a in artifact] if isinstance(artifact, (list, tuple)) else artifact.model_dump()
        return _dump(payload, path, indent=1)
    if fmt != "csv":
        raise ValueError(f"unknown export format {fmt!r}")
    frame = artifact_frame(artifact)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")

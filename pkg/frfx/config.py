import logging
import os
from typing import Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

load_dotenv()

log = logging.getLogger("config")


def _threads(raw: Optional[str]) -> int:
    cpus = os.cpu_count() or 1
    if raw is None or not raw.strip():
        return cpus
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("FRFX_THREADS=%r is not an integer; using %d workers", raw, cpus)
        return cpus


FRFX_THREADS = _threads(os.getenv("FRFX_THREADS"))
LOG_LEVEL = os.getenv("FRFX_LOG_LEVEL", "INFO").upper()
_names = [n.strip() for n in os.getenv("FRFX_CLASS_NAMES", "Healthy,Diseased").split(",")]
CLASS_NAMES: Tuple[str, str] = (_names[0] or "class 0", _names[1] if len(_names) > 1 else "class 1")
APP_BRAND = os.getenv("FRFX_BRAND", "frfx")

# defaults for the ECG200 workflow
DEFAULT_N_BASIS = 20
DEFAULT_ORDER = 4
DEFAULT_K = 15
DEFAULT_TREES = 500
DEFAULT_PDP_GRID = 50
DEFAULT_HEATMAP_GRID = 50
DEFAULT_REPEATS = 10
DEFAULT_WINDOWS = 4


class ForestConfig(BaseModel):
    """Hyper-parameters of a functional random forest.

    mtry=None resolves to floor(sqrt(K)) when the forest is fitted.
    """

    model_config = ConfigDict(frozen=True)

    n_trees: int = Field(DEFAULT_TREES, ge=1)
    mtry: Optional[int] = Field(None, ge=1)
    criterion: Literal["gini", "entropy"] = "gini"
    min_node_size: int = Field(1, ge=1)
    max_depth: Optional[int] = Field(None, ge=0)
    bootstrap: bool = True
    seed: int = Field(0, ge=0, lt=2**64)
    probability: Literal["vote", "leaf"] = "vote"


class RunConfig(BaseModel):
    """Everything one CLI invocation needs."""

    train: Optional[str] = None
    test: Optional[str] = None
    out: str = "frfx_out"
    seed: int = Field(0, ge=0, lt=2**64)

    n_basis: int = Field(DEFAULT_N_BASIS, ge=2)
    order: int = Field(DEFAULT_ORDER, ge=2)
    penalty: float = Field(0.0, ge=0.0)
    k: int = Field(DEFAULT_K, ge=1)

    trees: int = Field(DEFAULT_TREES, ge=1)
    mtry: Optional[int] = Field(None, ge=1)
    criterion: Literal["gini", "entropy"] = "gini"
    min_node_size: int = Field(1, ge=1)
    max_depth: Optional[int] = Field(None, ge=0)
    probability: Literal["vote", "leaf"] = "vote"

    grid: int = Field(DEFAULT_PDP_GRID, ge=2)
    heatmap_grid: int = Field(DEFAULT_HEATMAP_GRID, ge=2)
    repeats: int = Field(DEFAULT_REPEATS, ge=1)
    windows: int = Field(DEFAULT_WINDOWS, ge=2)
    scale: Literal["prob", "logit"] = "prob"
    prune_alpha: float = Field(0.01, ge=0.0)
    explain_on: Literal["train", "test"] = "train"

    @model_validator(mode="after")
    def _cross_checks(self) -> "RunConfig":
        if self.order > self.n_basis:
            raise ValueError(f"--order {self.order} exceeds --n-basis {self.n_basis}")
        if self.mtry is not None and self.mtry > self.k:
            raise ValueError(f"--mtry {self.mtry} exceeds --k {self.k}")
        return self

    def forest_config(self) -> ForestConfig:
        return ForestConfig(
            n_trees=self.trees,
            mtry=self.mtry,
            criterion=self.criterion,
            min_node_size=self.min_node_size,
            max_depth=self.max_depth,
            bootstrap=True,
            seed=self.seed,
            probability=self.probability,
        )

import os

import numpy as np
import pytest

from frfx.config import ForestConfig
from frfx.fda_core import FunctionalDataset, TimeGrid, build_basis, fit_fpca, smooth
from frfx.frf import fit_forest


def make_curves(n_per_class: int = 20, n_points: int = 50, seed: int = 0):
    """Two classes of noisy sine/cosine mixtures; class 1 has a larger sine amplitude."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_points)
    rows, labels = [], []
    for label, amp in ((0, 0.5), (1, 1.5)):
        for _ in range(n_per_class):
            a = rng.normal(amp, 0.3)
            b = rng.normal(0.0, 0.5)
            c = rng.normal(0.0, 0.3)
            rows.append(a * np.sin(2 * np.pi * t) + b * np.cos(2 * np.pi * t) + c * t**2 + rng.normal(0, 0.05, n_points))
            labels.append(label)
    return t, np.array(rows), np.array(labels)


def write_ucr_text(path, values, labels, raw=(-1, 1), sep="\t"):
    with open(path, "w") as f:
        for label, row in zip(labels, values):
            f.write(sep.join([str(raw[label])] + [repr(float(v)) for v in row]) + "\n")
    return str(path)


@pytest.fixture
def grid():
    return TimeGrid.uniform(50)


@pytest.fixture
def dataset(grid):
    _, values, labels = make_curves()
    return FunctionalDataset(grid, values, labels, name="synthetic")


@pytest.fixture
def basis(grid):
    return build_basis(grid, 12, 4)


@pytest.fixture
def smoothed(dataset, basis):
    return smooth(dataset, basis)


@pytest.fixture
def fpca(smoothed):
    return fit_fpca(smoothed, 5)


@pytest.fixture
def forest(fpca, dataset):
    return fit_forest(fpca.scores, dataset.labels, ForestConfig(n_trees=25, seed=3), n_jobs=1)


@pytest.fixture
def ucr_pair(tmp_path):
    _, train_values, train_labels = make_curves(15, 40, seed=1)
    _, test_values, test_labels = make_curves(15, 40, seed=2)
    train = write_ucr_text(tmp_path / "SYN_TRAIN.tsv", train_values, train_labels)
    test = write_ucr_text(tmp_path / "SYN_TEST.tsv", test_values, test_labels)
    return train, test


ECG200_DIR = os.getenv("FRFX_ECG200_DIR", "")

needs_ecg200 = pytest.mark.skipif(
    not (ECG200_DIR and os.path.exists(os.path.join(ECG200_DIR, "ECG200_TRAIN.tsv"))),
    reason="set FRFX_ECG200_DIR to the UCR ECG200 directory",
)


def ecg200_path(split: str) -> str:
    return os.path.join(ECG200_DIR, f"ECG200_{split}.tsv")

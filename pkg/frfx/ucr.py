"""UCR time-series classification files: one series per line, class label first.

Separators are detected on the first data line (tab, then comma, else
whitespace). Raw labels are mapped to 0/1 in ascending order, so the
smaller raw label becomes class 0.
"""

import logging
import os
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidDataset, IoError, RaggedRows, UnknownLabelArity, UnparseableField
from .fda_core import FunctionalDataset, TimeGrid

log = logging.getLogger("ucr")


def _separator(line: str) -> Optional[str]:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None


def _split(line: str, sep: Optional[str]) -> List[str]:
    if sep is None:
        return line.split()
    return [f.strip() for f in line.strip().split(sep)]


def load_ucr(
    path: str, name: Optional[str] = None, label_values: Optional[Sequence[float]] = None
) -> FunctionalDataset:
    """Read a UCR file into a dataset on a uniform [0,1] grid.

    Pass the training set's ``label_values`` when loading a test file so both
    share one 0/1 mapping; a raw label outside that set is rejected.
    """
    try:
        # undecodable bytes become U+FFFD, which then fails float() with a row/column
        with open(path, "r", encoding="utf-8", errors="replace") as f:
            lines = f.readlines()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e

    sep: Optional[str] = None
    expected: Optional[int] = None
    raw_labels: List[float] = []
    rows: List[List[float]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if expected is None:
            sep = _separator(line)
        fields = _split(line, sep)
        parsed = []
        for col, text in enumerate(fields, start=1):
            try:
                parsed.append(float(text))
            except ValueError:
                raise UnparseableField(path, lineno, col, text) from None
        values = parsed[1:]
        if expected is None:
            expected = len(values)
        elif len(values) != expected:
            raise RaggedRows(path, lineno, expected, len(values))
        raw_labels.append(parsed[0])
        rows.append(values)

    if not rows:
        raise InvalidDataset(f"{path}: no data rows")
    distinct = tuple(_label_values(path, raw_labels, label_values))
    mapping = {v: i for i, v in enumerate(distinct)}
    labels = np.array([mapping[v] for v in raw_labels], dtype=int)
    values = np.array(rows, dtype=float)
    grid = TimeGrid.uniform(values.shape[1])
    log.info("loaded %s: N=%d T=%d labels %s -> 0/1", path, values.shape[0], values.shape[1], list(distinct))
    return FunctionalDataset(
        grid=grid,
        values=values,
        labels=labels,
        label_values=distinct,
        name=name or os.path.basename(path),
    )


def _label_values(path: str, raw_labels: List[float], known: Optional[Sequence[float]]) -> List[float]:
    seen = sorted(set(raw_labels))
    if known is None:
        if len(seen) > 2:
            raise UnknownLabelArity(f"{path}: {len(seen)} distinct labels {seen[:5]}; only binary data is supported")
        return seen
    known = sorted(float(v) for v in known)
    if len(known) > 2:
        raise UnknownLabelArity(f"{path}: {len(known)} training labels {known}; only binary data is supported")
    unseen = [v for v in seen if v not in known]
    if unseen:
        raise UnknownLabelArity(f"{path}: label(s) {unseen} never seen in training labels {known}")
    return known


def _fmt_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_ucr(dataset: FunctionalDataset, path: str, sep: str = ",") -> str:
    if dataset.labels is None:
        raise InvalidDataset("UCR files need labels")
    raw = dataset.label_values or (0, 1)
    try:
        with open(path, "w", encoding="utf-8") as f:
            for label, row in zip(dataset.labels, dataset.values):
                fields = [_fmt_label(raw[int(label)])] + [repr(float(v)) for v in row]
                f.write(sep.join(fields) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path

import hashlib
from typing import Optional, Sequence

import numpy as np

from .config import FRFX_THREADS


def rng_stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *path); schedule-independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(p) for p in path)]))


def n_workers(requested: Optional[int] = None) -> int:
    if requested is None:
        return FRFX_THREADS
    return max(1, min(int(requested), FRFX_THREADS))


def sha1_file(path: str) -> str:
    h = hashlib.sha1()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sequential_mean(values: Sequence[float]) -> float:
    # left-to-right accumulation; the FPDP oracle relies on this exact order
    acc = 0.0
    for v in values:
        acc += v
    return acc / len(values)


def clamp_logit(p: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    q = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    return np.log(q / (1.0 - q))

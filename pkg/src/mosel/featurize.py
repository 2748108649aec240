"""Network inputs built from d-mode singular values."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mosel.numkit import singular_values
from mosel.tensorlab import unfold

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class FeatureMatrix:
    g: np.ndarray                 # (N, D) log-scaled singular values, one column per mode
    mode_sizes: tuple[int, ...]   # original length of every column before resizing

    @property
    def n_common(self) -> int:
        return self.g.shape[0]


def mode_singular_values(t: np.ndarray) -> list[np.ndarray]:
    """Descending singular values of every unfolding; mode ``d`` yields ``M_d`` values.

    Unfoldings with fewer columns than rows are padded with exact zeros.
    """
    t = np.asarray(t)
    out = []
    for d in range(1, t.ndim + 1):
        s = singular_values(unfold(t, d))
        if s.size < t.shape[d - 1]:
            s = np.concatenate([s, np.zeros(t.shape[d - 1] - s.size)])
        out.append(s)
    return out


def log_scale_resize(sv: Sequence[float], n: int) -> np.ndarray:
    """Natural log of ``sv`` cut or extended to length ``n``.

    Short vectors are extended by repeating their last (smallest) value.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s = np.log(np.maximum(np.asarray(sv, dtype=float), LOG_FLOOR))
    if s.size == 0:
        raise ValueError("empty singular value vector")
    if s.size >= n:
        return s[:n].copy()
    return np.concatenate([s, np.full(n - s.size, s[-1])])


def recommend_common_size(mode_sizes: Sequence[int], ratio: float = 5.0) -> int:
    """Heuristic common length for the resized mode vectors.

    If the smallest mode is at least ``ratio`` times shorter than all others,
    it gets extended and the common size follows the larger modes; otherwise
    every vector is cut to the shortest length.
    """
    sizes = sorted(int(s) for s in mode_sizes)
    if len(sizes) > 1 and sizes[1] >= ratio * sizes[0]:
        return sizes[1]
    return sizes[0]


def assemble_from_values(values: Sequence[np.ndarray], n: int) -> FeatureMatrix:
    cols = [log_scale_resize(s, n) for s in values]
    return FeatureMatrix(g=np.stack(cols, axis=1), mode_sizes=tuple(len(s) for s in values))


def assemble_g(tensors: Sequence[np.ndarray], n: int) -> FeatureMatrix:
    """Build ``G`` from one pre-processed tensor per carrier; columns are concatenated carrier by carrier."""
    if not tensors:
        raise ValueError("need at least one tensor")
    values = [s for t in tensors for s in mode_singular_values(t)]
    return assemble_from_values(values, n)


def make_label(l: int, n: int) -> np.ndarray:
    """Multi-label target: ``l`` ones followed by ``n - l`` zeros."""
    if not 1 <= l <= n:
        raise ValueError(f"model order {l} outside [1, {n}]")
    y = np.zeros(n)
    y[:l] = 1.0
    return y

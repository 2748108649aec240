"""Dense tensor algebra on ``numpy`` arrays.

Modes are 1-based in the public API to match the usual ``x_d`` notation.

Unfolding convention: ``unfold(t, d)`` has shape ``(M_d, prod(M) / M_d)`` and
its columns are the d-mode vectors, enumerated over the remaining indices in
the cyclic order ``(d+1, ..., D, 1, ..., d-1)`` with the first of those
varying slowest. ``fold`` is the exact inverse.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mosel.numkit import svd


@dataclass(frozen=True)
class HosvdResult:
    core: np.ndarray
    factors: list[np.ndarray]
    mode_singular_values: list[np.ndarray]

    def reconstruct(self) -> np.ndarray:
        t = self.core
        for d, u in enumerate(self.factors, start=1):
            t = mode_product(t, u, d)
        return t


def _check_mode(ndim: int, d: int) -> None:
    if not 1 <= d <= ndim:
        raise ValueError(f"mode {d} out of range for a {ndim}-way tensor")


def _cyclic_axes(ndim: int, d: int) -> list[int]:
    # 0-based axis order (d, d+1, ..., D, 1, ..., d-1)
    k = d - 1
    return [k] + list(range(k + 1, ndim)) + list(range(k))


def unfold(t: np.ndarray, d: int) -> np.ndarray:
    """d-mode unfolding (matricization) of ``t``."""
    t = np.asarray(t)
    _check_mode(t.ndim, d)
    return np.transpose(t, _cyclic_axes(t.ndim, d)).reshape(t.shape[d - 1], -1).copy()


def fold(m: np.ndarray, d: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of the given ``shape``."""
    m = np.asarray(m)
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), d)
    total = int(np.prod(shape))
    if m.ndim != 2 or m.shape[0] != shape[d - 1] or m.size != total:
        raise ValueError(f"matrix of shape {m.shape} does not fold into mode {d} of {shape}")
    axes = _cyclic_axes(len(shape), d)
    permuted = m.reshape([shape[a] for a in axes])
    return np.transpose(permuted, np.argsort(axes)).copy()


def mode_product(t: np.ndarray, u: np.ndarray, d: int) -> np.ndarray:
    """d-mode product ``t x_d u``: multiply ``u`` onto every d-mode vector."""
    t = np.asarray(t)
    u = np.asarray(u)
    _check_mode(t.ndim, d)
    if u.ndim != 2 or u.shape[1] != t.shape[d - 1]:
        raise ValueError(
            f"matrix of shape {u.shape} incompatible with mode {d} of size {t.shape[d - 1]}"
        )
    out = np.tensordot(u, t, axes=(1, d - 1))
    return np.moveaxis(out, 0, d - 1)


def concat(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """Concatenate ``a`` and ``b`` along mode ``d`` (``a`` first)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim:
        raise ValueError("tensors must have the same number of modes")
    _check_mode(a.ndim, d)
    for k, (sa, sb) in enumerate(zip(a.shape, b.shape), start=1):
        if k != d and sa != sb:
            raise ValueError(f"shape mismatch in mode {k}: {sa} vs {sb}")
    return np.concatenate([a, b], axis=d - 1)


def hosvd(t: np.ndarray) -> HosvdResult:
    """Full higher-order SVD ``t = S x_1 U_1 x_2 ... x_D U_D``.

    Each ``U_d`` is the square unitary factor of the SVD of the d-mode
    unfolding; the matching singular values are returned per mode in
    descending order.
    """
    t = np.asarray(t)
    if t.ndim < 1:
        raise ValueError("hosvd needs at least a 1-way tensor")
    factors, values = [], []
    for d in range(1, t.ndim + 1):
        res = svd(unfold(t, d))
        factors.append(res.u)
        values.append(res.s)
    core = t
    for d, u in enumerate(factors, start=1):
        core = mode_product(core, u.conj().T, d)
    return HosvdResult(core=core, factors=factors, mode_singular_values=values)

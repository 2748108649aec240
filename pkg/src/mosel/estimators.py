"""Model-order estimators: thresholded multi-label network, ECNet, LaRGE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mosel.featurize import LOG_FLOOR
from mosel.neuralnet import NNModel, forward
from mosel.numkit import fit_line_least_squares

DEFAULT_XI = 0.8
DEFAULT_RHO = 0.57


@dataclass(frozen=True)
class OrderEstimate:
    order: int
    scores: np.ndarray
    method: str


@dataclass(frozen=True)
class LargeConfig:
    rho: float = DEFAULT_RHO
    min_noise_points: int = 2

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.min_noise_points < 2:
            raise ValueError("a line fit needs at least two noise points")


def count_above(scores, xi: float) -> int:
    return int(np.count_nonzero(np.asarray(scores) > xi))


def proposed_estimate(model: NNModel, g: np.ndarray, xi: float = DEFAULT_XI) -> OrderEstimate:
    """Order = number of output neurons scoring strictly above ``xi``.

    Neurons are counted wherever they sit; the above-threshold set need not
    be a prefix.
    """
    if not 0.0 < xi < 1.0:
        raise ValueError("xi must lie in (0, 1)")
    scores = forward(model, g)
    return OrderEstimate(count_above(scores, xi), scores, "proposed")


def ecnet_order(probs) -> int:
    # np.argmax returns the first maximum, so ties go to the smaller order
    return int(np.argmax(np.asarray(probs))) + 1


def ecnet_estimate(model: NNModel, g: np.ndarray) -> OrderEstimate:
    probs = forward(model, g)
    return OrderEstimate(ecnet_order(probs), probs, "ecnet")


def multiclass_label(l: int, l_max: int) -> np.ndarray:
    if not 1 <= l <= l_max:
        raise ValueError(f"class {l} outside [1, {l_max}]")
    y = np.zeros(l_max)
    y[l - 1] = 1.0
    return y


def global_log_eigenvalues(mode_sv: Sequence[Sequence[float]]) -> np.ndarray:
    """``ln prod_d (sigma_i^(d))^2`` for ``i`` up to the shortest mode."""
    p = min(len(s) for s in mode_sv)
    logs = [2.0 * np.log(np.maximum(np.asarray(s[:p], dtype=float), LOG_FLOOR)) for s in mode_sv]
    return np.sum(logs, axis=0)


def large_prediction_errors(mode_sv: Sequence[Sequence[float]], cfg: LargeConfig = LargeConfig()) -> np.ndarray:
    """Relative prediction error of every global log-eigenvalue against a line fit to the ones after it.

    Entry ``i`` (0-based) compares ``g_i`` with the least-squares line through
    ``{(j, g_j) : j > i}``. The last ``min_noise_points`` entries have too few
    points after them and are NaN.
    """
    g = global_log_eigenvalues(mode_sv)
    p = g.size
    if p < cfg.min_noise_points + 1:
        raise ValueError(f"LaRGE needs at least {cfg.min_noise_points + 1} global eigenvalues, got {p}")
    eps = np.full(p, np.nan)
    idx = np.arange(p, dtype=float)
    for i in range(p - cfg.min_noise_points - 1, -1, -1):
        slope, intercept = fit_line_least_squares(idx[i + 1:], g[i + 1:])
        pred = slope * i + intercept
        eps[i] = (g[i] - pred) / abs(pred) if pred != 0.0 else np.inf
    return eps


def large_estimate(mode_sv: Sequence[Sequence[float]], cfg: LargeConfig = LargeConfig()) -> OrderEstimate:
    """LaRGE: scan from the noise end towards the strongest value; the first
    index whose relative prediction error exceeds ``rho`` closes the signal
    subspace, so it and every index before it count as signal.
    """
    eps = large_prediction_errors(mode_sv, cfg)
    hits = np.flatnonzero(eps > cfg.rho)
    order = int(hits[-1]) + 1 if hits.size else 0
    return OrderEstimate(order, eps, "large")

"""Non-trainable matching baselines: Sinkhorn, nearest neighbor, NNDR."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import SIMILARITY_EPS
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _as_array(values) -> np.ndarray:
    if isinstance(values, Tensor):
        values = values.data
    return np.asarray(values, dtype=np.float64)


@dataclass
class SinkhornResult:
    matrix: np.ndarray
    iterations: int
    row_deviation: float
    col_deviation: float


def sinkhorn(similarity, temperature: float = 0.1, max_iters: int = 100,
             tol: float = 1e-6) -> SinkhornResult:
    """Alternating column/row normalization toward a doubly stochastic matrix.

    Starts from exp(s / temperature) row-normalized, then repeats a
    column pass followed by a row pass until both marginals deviate from
    one by less than ``tol``. All accumulation happens in log space so
    low temperatures cannot overflow.
    """
    s = _as_array(similarity)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ConfigError(f"sinkhorn needs a square matrix, got shape {s.shape}")
    if (s <= 0.0).any() or not np.isfinite(s).all():
        raise ConfigError("sinkhorn needs strictly positive, finite similarities")
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")

    log_p = s / temperature
    log_p = log_p - _logsumexp(log_p, axis=1)

    def deviations(lp):
        p = np.exp(lp)
        row = np.abs(p.sum(axis=1) - 1.0).max()
        col = np.abs(p.sum(axis=0) - 1.0).max()
        return row, col

    row_dev, col_dev = deviations(log_p)
    iterations = 0
    previous_worst = max(row_dev, col_dev)
    while iterations < max_iters and (row_dev >= tol or col_dev >= tol):
        log_p = log_p - _logsumexp(log_p, axis=0)
        log_p = log_p - _logsumexp(log_p, axis=1)
        iterations += 1
        row_dev, col_dev = deviations(log_p)
        worst = max(row_dev, col_dev)
        if worst > previous_worst * (1.0 + 1e-12):
            logger.warning(
                "sinkhorn marginal deviation increased at iteration %d: %.3e -> %.3e",
                iterations, previous_worst, worst)
        previous_worst = worst
    return SinkhornResult(np.exp(log_p), iterations, row_dev, col_dev)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    peak = x.max(axis=axis, keepdims=True)
    return peak + np.log(np.exp(x - peak).sum(axis=axis, keepdims=True))


def nn_match(fa, fb) -> np.ndarray:
    """Index of the nearest B-feature for each A-feature (ties to lowest)."""
    a = _as_array(fa)
    b = _as_array(fb)
    if a.shape[1] != b.shape[1]:
        raise ConfigError(f"feature widths differ: {a.shape} vs {b.shape}")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    return dist.argmin(axis=1)


def nndr_match(fa, fb, ratio_threshold: float = 0.8) -> np.ndarray:
    """Nearest-neighbor matches filtered by the distance-ratio test.

    A match survives only when nearest/second-nearest < threshold; both
    distances carry the same epsilon floor as the similarity definition,
    so duplicate features give a ratio of one and are rejected. Rejected
    rows hold -1.
    """
    a = _as_array(fa)
    b = _as_array(fb)
    if b.shape[0] < 2:
        raise ConfigError("nndr needs at least two candidate features")
    if not (0.0 < ratio_threshold <= 1.0):
        raise ConfigError(f"ratio threshold must lie in (0, 1], got {ratio_threshold}")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    order = np.argsort(dist, axis=1, kind="stable")
    nearest = order[:, 0]
    d1 = dist[np.arange(a.shape[0]), order[:, 0]] + SIMILARITY_EPS
    d2 = dist[np.arange(a.shape[0]), order[:, 1]] + SIMILARITY_EPS
    keep = d1 / d2 < ratio_threshold
    return np.where(keep, nearest, -1)

"""Differentially private curation via the Gaussian mechanism."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curation import TrakSystem, trak_scores_from_mean
from .datamodel import EmbeddingMatrix, GradientMatrix, NumericError, ParameterError, substream

MAX_RETRIES = 3


@dataclass(frozen=True)
class DpParams:
    epsilon: float
    delta: float = 1e-5
    clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ParameterError("delta must lie in (0, 1)")
        if not self.clip > 0:
            raise ParameterError("clip must be positive")


def gaussian_sigma(sensitivity: float, eps: float, delta: float) -> float:
    """Classical Gaussian mechanism scale ``(sensitivity / eps) * sqrt(2 ln(1.25 / delta))``."""
    if not (sensitivity > 0 and eps > 0 and 0 < delta < 1):
        raise ParameterError("sensitivity, eps must be positive and delta in (0, 1)")
    return sensitivity / eps * math.sqrt(2.0 * math.log(1.25 / delta))


def _selected(data: np.ndarray, selected) -> np.ndarray:
    rows = data if selected is None else data[np.asarray(selected)]
    if rows.shape[0] == 0:
        raise ParameterError("target selection is empty")
    return rows


def dp_noisy_max_scores(pool: EmbeddingMatrix, targets: EmbeddingMatrix, params: DpParams,
                        selected=None) -> np.ndarray:
    """Report-noisy-max image scores.

    Each (pool sample, target) similarity gets a fresh Gaussian draw with the
    scale for sensitivity 2; noise for pool row ``i`` comes from its own
    substream. No clipping is applied to the result.
    """
    t = _selected(targets.data, selected)
    sigma = gaussian_sigma(2.0, params.epsilon, params.delta)
    out = np.empty(pool.n)
    for i in range(pool.n):
        noise = substream(params.seed, "noisy-max", i).standard_normal(t.shape[0])
        out[i] = np.max(t @ pool.data[i] + sigma * noise)
    return out


def dp_mean_scores(pool: EmbeddingMatrix, targets: EmbeddingMatrix, params: DpParams,
                   selected=None) -> np.ndarray:
    """Cosine of every pool row against one noisy mean of the target embeddings."""
    t = _selected(targets.data, selected)
    sigma = gaussian_sigma(2.0 / t.shape[0], params.epsilon, params.delta)
    mean = t.mean(axis=0)
    for attempt in range(MAX_RETRIES + 1):
        noisy = mean + sigma * substream(params.seed, "dp-mean", attempt).standard_normal(mean.shape[0])
        norm = np.linalg.norm(noisy)
        if norm > 0:
            return pool.data @ (noisy / norm)
    raise NumericError("noisy mean vanished in every retry")


def clip_rows(g: np.ndarray, c: float) -> np.ndarray:
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    scale = np.minimum(1.0, c / np.where(norms > 0, norms, 1.0))
    return g * scale


def dp_trak_mean_gradient(target_grads: GradientMatrix, selected, params: DpParams) -> np.ndarray:
    """Mean of clipped target gradients plus Gaussian noise for sensitivity ``2C/|T_sel|``."""
    g = _selected(target_grads.data, selected)
    sigma = gaussian_sigma(2.0 * params.clip / g.shape[0], params.epsilon, params.delta)
    noise = substream(params.seed, "dp-trak").standard_normal(g.shape[1])
    return clip_rows(g, params.clip).mean(axis=0) + sigma * noise


def dp_trak_scores(sys: TrakSystem, target_grads: GradientMatrix, params: DpParams, selected=None) -> np.ndarray:
    return trak_scores_from_mean(sys, dp_trak_mean_gradient(target_grads, selected, params))

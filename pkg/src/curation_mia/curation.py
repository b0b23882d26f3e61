"""The victim pipelines: image nearest-neighbour and TRAK scoring, top-k selection."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .datamodel import (
    EmbeddingMatrix,
    GradientMatrix,
    NumericError,
    ParameterError,
    substream,
)

_CHUNK = 4096


class Method(str, enum.Enum):
    IMAGE = "image"
    TRAK = "trak"


@dataclass(frozen=True)
class CurationResult:
    scores: np.ndarray
    mask: np.ndarray
    k: int
    method: Method

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


@dataclass(frozen=True)
class TrakSystem:
    """Factorized TRAK state for one pool.

    ``g_inv`` is ``(X^T X + lam I)^-1``, ``phi = X g_inv`` and ``q`` the
    per-row output-to-loss scaling. ``x`` keeps the raw pool gradients for
    attacks that need to refactorize.
    """

    g_inv: np.ndarray
    lam: float
    phi: np.ndarray
    q: np.ndarray
    x: np.ndarray
    chol: tuple

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def d_proj(self) -> int:
        return self.phi.shape[1]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``G^-1 rhs`` through the stored Cholesky factor."""
        return linalg.cho_solve(self.chol, rhs)


def _selected_rows(data: np.ndarray, selected) -> np.ndarray:
    if selected is None:
        return data
    rows = data[np.asarray(selected)]
    if rows.shape[0] == 0:
        raise ParameterError("target selection is empty")
    return rows


def similarities(pool: EmbeddingMatrix, targets: EmbeddingMatrix) -> np.ndarray:
    """Full ``N x n`` cosine matrix (rows are unit norm)."""
    if pool.d != targets.d:
        raise ParameterError(f"dimension mismatch: pool d={pool.d}, targets d={targets.d}")
    return pool.data @ targets.data.T


def image_scores(pool: EmbeddingMatrix, targets: EmbeddingMatrix, selected=None) -> np.ndarray:
    """Max cosine similarity of every pool row to the (selected) targets."""
    if pool.d != targets.d:
        raise ParameterError(f"dimension mismatch: pool d={pool.d}, targets d={targets.d}")
    if not (pool.row_norm and targets.row_norm):
        raise ParameterError("image scoring needs row-normalized embeddings")
    t = _selected_rows(targets.data, selected)
    out = np.empty(pool.n)
    for start in range(0, pool.n, _CHUNK):
        block = pool.data[start:start + _CHUNK]
        out[start:start + _CHUNK] = (block @ t.T).max(axis=1)
    return out


def default_lambda(x: np.ndarray) -> float:
    """Ridge default ``1e-3 * trace(X^T X) / d``, floored away from zero."""
    lam = 1e-3 * float(np.sum(x * x)) / x.shape[1]
    return lam if lam > 0 else 1e-3


def trak_features(pool_grads: GradientMatrix, lam: float | None = None) -> TrakSystem:
    x = pool_grads.data
    lam = default_lambda(x) if lam is None else float(lam)
    if not lam > 0:
        raise ParameterError("lambda must be positive")
    gram = x.T @ x + lam * np.eye(x.shape[1])
    try:
        chol = linalg.cho_factor(gram, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"Cholesky factorization failed: {exc}") from exc
    g_inv = linalg.cho_solve(chol, np.eye(x.shape[1]))
    g_inv = 0.5 * (g_inv + g_inv.T)
    return TrakSystem(g_inv=g_inv, lam=lam, phi=x @ g_inv, q=pool_grads.q.copy(), x=x, chol=chol)


def trak_scores(sys: TrakSystem, target_grads: GradientMatrix, selected=None) -> np.ndarray:
    """Mean attribution of each pool row over the selected targets, scaled by q."""
    if target_grads.d_proj != sys.d_proj:
        raise ParameterError(f"d_proj mismatch: system {sys.d_proj}, targets {target_grads.d_proj}")
    g = _selected_rows(target_grads.data, selected)
    return (sys.phi @ g.mean(axis=0)) * sys.q


def trak_scores_from_mean(sys: TrakSystem, mean_grad: np.ndarray) -> np.ndarray:
    return (sys.phi @ np.asarray(mean_grad, dtype=np.float64)) * sys.q


def top_k_select(scores, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` highest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if int(k) != k or not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[: int(k)]] = True
    return mask


def kth_threshold(scores, k: int) -> float:
    """Value of the k-th largest score."""
    scores = np.asarray(scores, dtype=np.float64)
    return float(np.sort(scores)[::-1][k - 1])


def curate(pool_data, targets, method, k: int, selected=None) -> CurationResult:
    """Score ``pool_data`` for the (selected) ``targets`` and keep the top ``k``.

    ``pool_data`` is an :class:`EmbeddingMatrix` for the image method and a
    :class:`TrakSystem` for TRAK.
    """
    method = Method(method)
    if method is Method.IMAGE:
        scores = image_scores(pool_data, targets, selected)
    else:
        scores = trak_scores(pool_data, targets, selected)
    return CurationResult(scores=scores, mask=top_k_select(scores, k), k=int(k), method=method)


def rademacher_projection(seed: int, dim: int, d_proj: int) -> np.ndarray:
    """Seeded ``dim x d_proj`` matrix with entries +-1/sqrt(d_proj)."""
    signs = substream(seed, "projection").integers(0, 2, size=(dim, d_proj)) * 2 - 1
    return signs / np.sqrt(d_proj)


def project_gradients(raw: np.ndarray, projection: np.ndarray, q=None) -> GradientMatrix:
    return GradientMatrix(np.asarray(raw, dtype=np.float64) @ projection, q)

"""Fingerprint injection, canaries and the image oracle.

The final-model threat is reduced to observing whether injected fingerprint
samples end up in the curated subset. For image curation a fingerprint is a
copy of a pool image (its embedding, hence its score, is unchanged). For TRAK
a fingerprint is a new gradient row appended to the pool, whose score after
insertion follows from a Sherman-Morrison update of the Gram inverse.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .curation import TrakSystem, similarities
from .datamodel import EmbeddingMatrix, GradientMatrix, NotFoundError, ParameterError
from .score_attacks import VOTE_TOL, AttackScores

NU_FLOOR = 1e-18
FULL_COV_MAX_DIM = 512
_CHUNK = 2048


def percentile_rank(values, reference) -> np.ndarray:
    """Percentile (0-100) of ``values`` within ``reference``, linearly interpolated.

    Tied reference values share the mean of their sorted positions.
    """
    ref = np.sort(np.asarray(reference, dtype=np.float64))
    v = np.asarray(values, dtype=np.float64)
    n = ref.shape[0]
    if n == 1:
        return np.where(v > ref[0], 100.0, np.where(v < ref[0], 0.0, 50.0))
    uniq, first, counts = np.unique(ref, return_index=True, return_counts=True)
    pos = (first + (counts - 1) / 2.0) * 100.0 / (n - 1)
    if uniq.shape[0] == 1:
        return np.where(v > uniq[0], 100.0, np.where(v < uniq[0], 0.0, 50.0))
    # Interpolate via the in-bracket fraction, which stays finite even when
    # neighbouring reference values differ by a denormal (np.interp's slope would overflow).
    hi = np.clip(np.searchsorted(uniq, v, side="right"), 1, uniq.shape[0] - 1)
    lo = hi - 1
    frac = (np.clip(v, uniq[lo], uniq[hi]) - uniq[lo]) / (uniq[hi] - uniq[lo])
    out = pos[lo] + frac * (pos[hi] - pos[lo])
    return np.where(v < uniq[0], 0.0, np.where(v > uniq[-1], 100.0, out))


def influence_counts(pool: EmbeddingMatrix, targets: EmbeddingMatrix) -> np.ndarray:
    """How many pool samples have each target as their nearest neighbour."""
    counts = np.zeros(targets.n, dtype=np.int64)
    for start in range(0, pool.n, _CHUNK):
        nn = np.argmax(pool.data[start:start + _CHUNK] @ targets.data.T, axis=1)
        counts += np.bincount(nn, minlength=targets.n)
    return counts


# -- image fingerprints ------------------------------------------------------

@dataclass(frozen=True)
class FingerprintPlan:
    candidates: tuple[int, ...]
    mapping: tuple[int, ...]
    inverse_counts: dict
    baseline_percentile: dict
    alpha: float
    tau: float = 50.0
    sharpness: float = 10.0

    def to_json(self, **config) -> str:
        doc = {
            "candidates": list(self.candidates),
            "mapping": list(self.mapping),
            "inverse_counts": {str(k): v for k, v in self.inverse_counts.items()},
            "baseline_percentile": {str(k): v for k, v in self.baseline_percentile.items()},
            "alpha": self.alpha, "tau": self.tau, "sharpness": self.sharpness,
            "config": config,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FingerprintPlan":
        doc = json.loads(text)
        return cls(
            candidates=tuple(doc["candidates"]),
            mapping=tuple(doc["mapping"]),
            inverse_counts={int(k): int(v) for k, v in doc["inverse_counts"].items()},
            baseline_percentile={int(k): float(v) for k, v in doc["baseline_percentile"].items()},
            alpha=float(doc["alpha"]), tau=float(doc["tau"]), sharpness=float(doc["sharpness"]),
        )


def correspondence_scores(sims_to_targets: np.ndarray, target: int, alpha: float) -> np.ndarray:
    """``alpha * s(f, t) + (1 - alpha) * (1 - max_{t' != t} s(f, t'))`` per candidate row."""
    attraction = sims_to_targets[:, target]
    if sims_to_targets.shape[1] > 1:
        others = np.delete(sims_to_targets, target, axis=1).max(axis=1)
    else:
        others = np.full(sims_to_targets.shape[0], -1.0)
    return alpha * attraction + (1 - alpha) * (1 - others)


def craft_image_fingerprints(pool: EmbeddingMatrix, targets: EmbeddingMatrix, alpha: float = 0.5,
                             k_nn: int = 50, tau: float = 50.0, sharpness: float = 10.0) -> FingerprintPlan:
    """Map every target to the pool image that best isolates it.

    Search is restricted to the ``k_nn`` pool samples most similar to the
    target. Baseline percentiles are computed from scores against the full
    target set.
    """
    if not 0 <= alpha <= 1:
        raise ParameterError("alpha must lie in [0, 1]")
    if k_nn < 1:
        raise ParameterError("k_nn must be >= 1")
    sims = similarities(pool, targets)
    k_nn = min(int(k_nn), pool.n)
    mapping = []
    for t in range(targets.n):
        near = np.argsort(-sims[:, t], kind="stable")[:k_nn]
        combined = correspondence_scores(sims[near], t, alpha)
        best = near[combined == combined.max()].min()
        mapping.append(int(best))
    baseline = sims.max(axis=1)
    chosen = sorted(set(mapping))
    inverse = {f: mapping.count(f) for f in chosen}
    pct = percentile_rank(baseline[chosen], baseline)
    return FingerprintPlan(tuple(chosen), tuple(mapping), inverse,
                           {f: float(p) for f, p in zip(chosen, pct)}, float(alpha), tau, sharpness)


def image_selection_prob(p0, tau: float = 50.0, sharpness: float = 10.0):
    """Sigmoid probability that a fingerprint at percentile ``p0`` is selected anyway."""
    if not sharpness > 0:
        raise ParameterError("sharpness must be positive")
    return 1.0 / (1.0 + np.exp(-(np.asarray(p0, dtype=np.float64) - tau) / sharpness))


def selections_from_mask(plan: FingerprintPlan, mask) -> dict:
    mask = np.asarray(mask, dtype=bool)
    return {f: bool(mask[f]) for f in plan.candidates}


def image_e2e_scores(plan: FingerprintPlan, selections: dict, labels=None) -> AttackScores:
    """Surprise of each fingerprint's selection, shared among the targets mapped to it."""
    missing = [f for f in plan.candidates if f not in selections]
    if missing:
        raise ParameterError(f"no selection observed for fingerprints {missing[:5]}")
    surprise = np.zeros(len(plan.mapping))
    count = np.zeros(len(plan.mapping))
    for t, f in enumerate(plan.mapping):
        expected = float(image_selection_prob(plan.baseline_percentile[f], plan.tau, plan.sharpness))
        delta = (1.0 if selections[f] else 0.0) - expected
        surprise[t] += delta / plan.inverse_counts[f]
        count[t] += 1
    return AttackScores(surprise / np.maximum(count, 1), labels, "e2e-image")


# -- TRAK fingerprints -------------------------------------------------------

@dataclass(frozen=True)
class TargetGradientModel:
    mu: np.ndarray
    sigma: np.ndarray
    diagonal: bool = False


def fit_target_model(target_grads, diagonal: bool | None = None) -> TargetGradientModel:
    """Mean and empirical covariance of the target gradients.

    Full covariance up to 512 dimensions, diagonal beyond unless forced.
    """
    y = target_grads.data if isinstance(target_grads, GradientMatrix) else np.asarray(target_grads, float)
    if diagonal is None:
        diagonal = y.shape[1] > FULL_COV_MAX_DIM
    mu = y.mean(axis=0)
    if y.shape[0] < 2:
        sigma = np.zeros((y.shape[1], y.shape[1]))
    elif diagonal:
        sigma = np.diag(y.var(axis=0, ddof=1))
    else:
        sigma = np.cov(y, rowvar=False)
    return TargetGradientModel(mu, np.atleast_2d(sigma), bool(diagonal))


def default_q_new(sys: TrakSystem) -> float:
    return float(np.mean(sys.q))


def sherman_morrison_score(sys: TrakSystem, p, mean_target, q_new: float | None = None) -> float:
    """TRAK score of probe ``p`` once appended to the pool, without refactorizing."""
    q_new = default_q_new(sys) if q_new is None else q_new
    gp = sys.solve(np.asarray(p, dtype=np.float64))
    return float(q_new * (gp @ np.asarray(mean_target, dtype=np.float64)) / (1.0 + gp @ p))


def refactorized_score(pool_grads: np.ndarray, lam: float, p, mean_target, q_new: float) -> float:
    """Reference path: append ``p`` to the pool, rebuild the Gram inverse, score the new row."""
    x = np.vstack([np.asarray(pool_grads, dtype=np.float64), np.asarray(p, dtype=np.float64)])
    g = x.T @ x + lam * np.eye(x.shape[1])
    return float(q_new * (np.asarray(p) @ np.linalg.solve(g, mean_target)))


def _noise_scale(gp: np.ndarray, model: TargetGradientModel) -> float:
    return max(float(gp @ model.sigma @ gp), NU_FLOOR)


def trak_snr(sys: TrakSystem, p, c, model: TargetGradientModel, m_subset: int = 1) -> float:
    """Detectability of canary/target ``c`` through probe ``p`` for a subset of size ``m_subset``."""
    if m_subset < 1:
        raise ParameterError("subset size must be >= 1")
    gp = sys.solve(np.asarray(p, dtype=np.float64))
    return float(abs(gp @ np.asarray(c, dtype=np.float64)) / np.sqrt(m_subset * _noise_scale(gp, model)))


@dataclass(frozen=True)
class TrakFingerprintPlan:
    fingerprints: np.ndarray
    best: np.ndarray
    nu: np.ndarray
    signal: np.ndarray
    confidences: np.ndarray
    rho: float = 90.0
    diagonal_fallback: bool = False
    source_targets: tuple = ()

    def to_json(self, first_row: int, **config) -> str:
        doc = {
            "fingerprint_rows": [first_row + i for i in range(self.fingerprints.shape[0])],
            "best": [int(i) for i in self.best],
            "nu": [float(v) for v in self.nu],
            "confidences": [float(v) for v in self.confidences],
            "rho": self.rho,
            "source_targets": list(self.source_targets),
            "diagonal_fallback": self.diagonal_fallback,
            "config": config,
        }
        return json.dumps(doc, sort_keys=True, indent=1)


def craft_trak_fingerprints(sys: TrakSystem, target_grads: GradientMatrix, candidate_grads,
                            model: TargetGradientModel | None = None) -> TrakFingerprintPlan:
    """Pick, for every target, the candidate with the highest signal-to-noise ratio."""
    cand = candidate_grads.data if isinstance(candidate_grads, GradientMatrix) else np.atleast_2d(
        np.asarray(candidate_grads, dtype=np.float64))
    if cand.shape[0] == 0:
        raise ParameterError("at least one fingerprint candidate is required")
    model = fit_target_model(target_grads) if model is None else model
    gc = sys.solve(cand.T).T  # rows G^-1 c_i
    signal = gc @ target_grads.data.T
    quad = np.einsum("id,de,ie->i", gc, model.sigma, gc)
    fallback = False
    if not np.all(np.isfinite(quad)) or np.all(quad <= NU_FLOOR):
        fallback = True
        warnings.warn("target covariance is degenerate; using its diagonal", RuntimeWarning, stacklevel=2)
        diag = np.diag(np.diag(model.sigma))
        quad = np.einsum("id,de,ie->i", gc, diag, gc)
    nu = np.sqrt(np.maximum(quad, NU_FLOOR))
    best = np.argmax(np.abs(signal) / nu[:, None], axis=0)
    return TrakFingerprintPlan(cand, best, nu, signal, np.zeros(target_grads.n), diagonal_fallback=fallback)


def copy_fingerprint_candidates(target_grads: GradientMatrix, scale: float = 1.0) -> np.ndarray:
    """Candidates built by copying target gradients (optionally rescaled)."""
    return scale * target_grads.data.copy()


def append_fingerprints(pool_grads: GradientMatrix, fingerprints, q_new: float | None = None) -> GradientMatrix:
    """Victim pool after injection: original rows followed by the fingerprint rows."""
    f = np.atleast_2d(np.asarray(fingerprints, dtype=np.float64))
    q_new = float(np.mean(pool_grads.q)) if q_new is None else q_new
    return GradientMatrix(np.vstack([pool_grads.data, f]),
                          np.concatenate([pool_grads.q, np.full(f.shape[0], q_new)]))


def straddle_scores(best, p_h0, p_h1, rho: float, fingerprint_selected) -> tuple[np.ndarray, np.ndarray]:
    """Confidence-weighted scores from per-target H0/H1 percentiles.

    A target scores its confidence only when its best fingerprint was
    selected and the fingerprint crosses ``rho`` between H0 and H1.
    """
    p_h0 = np.asarray(p_h0, dtype=np.float64)
    p_h1 = np.asarray(p_h1, dtype=np.float64)
    conf = np.abs(np.clip(p_h1, rho, 100) - np.clip(p_h0, rho, 100))
    sel = np.asarray(fingerprint_selected, dtype=bool)[np.asarray(best)]
    crosses = (p_h1 > rho) & (p_h0 <= rho)
    return np.where(sel & crosses, conf, 0.0), conf


def trak_e2e_attack(sys: TrakSystem, target_grads: GradientMatrix, fingerprints, rho: float | None,
                    observed_selection, k: int, subset_size: int | None = None,
                    q_new: float | None = None, model: TargetGradientModel | None = None,
                    labels=None) -> tuple[AttackScores, TrakFingerprintPlan]:
    """Score targets by whether their best fingerprint crossed the selection threshold.

    ``sys`` describes the clean pool. ``observed_selection`` is the victim's
    mask over the pool followed by the fingerprint rows. ``subset_size`` is
    the adversary's guess of ``|T_sel|`` (half the targets by default) and
    ``rho`` the assumed threshold percentile (derived from ``k`` if None).
    """
    obs = np.asarray(observed_selection, dtype=bool)
    plan = craft_trak_fingerprints(sys, target_grads, fingerprints, model)
    n_fp = plan.fingerprints.shape[0]
    if obs.shape[0] != sys.n + n_fp:
        raise ParameterError("observed selection must cover pool rows plus fingerprint rows")
    if obs.sum() != k:
        raise ParameterError("observed selection must contain exactly k samples")
    if rho is None:
        rho = 100.0 * (1.0 - k / (sys.n + n_fp))
    if not 0 < rho < 100:
        raise ParameterError("rho must lie in (0, 100)")
    model = fit_target_model(target_grads) if model is None else model
    m = max(target_grads.n // 2, 1) if subset_size is None else int(subset_size)
    q_new = default_q_new(sys) if q_new is None else q_new

    gf = sys.solve(plan.fingerprints.T).T
    denom = 1.0 + np.einsum("id,id->i", gf, plan.fingerprints)
    z0_fp = q_new * (gf @ model.mu) / denom
    reference = (sys.phi @ model.mu) * sys.q
    z_h0 = z0_fp[plan.best]
    z_h1 = z_h0 + q_new * plan.signal[plan.best, np.arange(target_grads.n)] / (m * denom[plan.best])
    p_h0 = percentile_rank(z_h0, reference)
    p_h1 = percentile_rank(z_h1, reference)
    scores, conf = straddle_scores(plan.best, p_h0, p_h1, rho, obs[sys.n:])
    plan = replace(plan, confidences=conf, rho=float(rho))
    meta = {"diagonal_fallback": plan.diagonal_fallback, "rho": float(rho), "subset_size": m}
    return AttackScores(scores, labels, "e2e-trak", meta), plan


# -- canaries and oracle -----------------------------------------------------

def craft_image_canary(pool: EmbeddingMatrix, observed_scores, percentile_cap: float = 1.0) -> tuple[int, int]:
    """Most similar pair among pool samples scoring at or below ``percentile_cap``.

    Returns ``(canary, probe)`` pool indices; the roles are interchangeable.
    """
    s = np.asarray(observed_scores, dtype=np.float64)
    cutoff = np.percentile(s, percentile_cap)
    low = np.flatnonzero(s <= cutoff)
    if low.shape[0] < 2:
        raise NotFoundError("fewer than two pool samples fall below the percentile cap")
    emb = pool.data[low]
    best, pair = -np.inf, (0, 1)
    for start in range(0, low.shape[0], _CHUNK):
        block = emb[start:start + _CHUNK] @ emb.T
        block[np.tril_indices(block.shape[0], k=start, m=block.shape[1])] = -np.inf
        flat = int(np.argmax(block))
        if block.flat[flat] > best:
            best = block.flat[flat]
            pair = (start + flat // block.shape[1], flat % block.shape[1])
    return int(low[pair[0]]), int(low[pair[1]])


def craft_trak_canary(sys: TrakSystem, probes, canaries, model: TargetGradientModel) -> tuple[int, int, float]:
    """Highest-SNR (probe, canary) pair; returns their row indices and the SNR."""
    p = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    c = np.atleast_2d(np.asarray(canaries, dtype=np.float64))
    gp = sys.solve(p.T).T
    nu = np.sqrt(np.maximum(np.einsum("id,de,ie->i", gp, model.sigma, gp), NU_FLOOR))
    snr = np.abs(gp @ c.T) / nu[:, None]
    i, j = np.unravel_index(int(np.argmax(snr)), snr.shape)
    return int(i), int(j), float(snr[i, j])


def oracle_attack_image(pool: EmbeddingMatrix, targets: EmbeddingMatrix, observed_scores,
                        tol: float = VOTE_TOL, labels=None) -> AttackScores:
    """1 for targets that explain a pool score, 0 for targets contradicted by one, else 0.5."""
    if not tol > 0:
        raise ParameterError("tol must be positive")
    s = np.asarray(observed_scores, dtype=np.float64)
    explains = np.zeros(targets.n, dtype=bool)
    exceeds = np.zeros(targets.n, dtype=bool)
    for start in range(0, pool.n, _CHUNK):
        sims = pool.data[start:start + _CHUNK] @ targets.data.T
        obs = s[start:start + _CHUNK, None]
        explains |= (np.abs(sims - obs) <= tol).any(axis=0)
        exceeds |= (sims > obs + tol).any(axis=0)
    values = np.where(explains, 1.0, np.where(exceeds, 0.0, 0.5))
    return AttackScores(values, labels, "oracle")


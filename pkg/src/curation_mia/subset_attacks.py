"""Membership inference when only the curated subset (a top-k mask) is visible."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .curation import image_scores, top_k_select
from .datamodel import EmbeddingMatrix, ParameterError
from .score_attacks import AttackScores
from .shadow import InOutStats, OutputKind, ShadowEnsemble, in_out_stats, select_kstar

_CHUNK = 2048


def default_clamp(m: int) -> float:
    return 1.0 / (m + 2)


def bernoulli_llr(x: bool, mu_in: float, mu_out: float, clamp: float) -> float:
    if not 0 < clamp < 0.5:
        raise ParameterError("clamp must lie in (0, 0.5)")
    p_in = min(max(mu_in, clamp), 1 - clamp)
    p_out = min(max(mu_out, clamp), 1 - clamp)
    if x:
        return float(np.log(p_in) - np.log(p_out))
    return float(np.log1p(-p_in) - np.log1p(-p_out))


def _llr_at_kstar(stats: InOutStats, observed_mask, clamp: float) -> float:
    k = select_kstar(stats)
    x = bool(np.asarray(observed_mask)[k])
    return bernoulli_llr(x, stats.mu_in[k], stats.mu_out[k], clamp)


def binary_lira(ensemble: ShadowEnsemble, observed_mask, target_id: int, clamp: float | None = None) -> float:
    """Bernoulli likelihood ratio of the selection bit at the target's k* sample."""
    if ensemble.kind is not OutputKind.MASKS:
        raise ParameterError("binary LiRA needs a mask ensemble")
    clamp = default_clamp(ensemble.assignment.m) if clamp is None else clamp
    return _llr_at_kstar(in_out_stats(ensemble, target_id), observed_mask, clamp)


def binary_lira_scores(ensemble: ShadowEnsemble, observed_mask, clamp=None, labels=None) -> AttackScores:
    ens = ensemble.as_masks()
    values = [binary_lira(ens, observed_mask, t, clamp) for t in range(ens.assignment.n)]
    return AttackScores(np.array(values), labels, "binary-lira")


def soft_binarize(shadow_scores, threshold, gamma: float = 1.0, temp: float = 1.0) -> np.ndarray:
    """``1 / (1 + exp(-gamma * (s - threshold) / temp))`` elementwise."""
    if not (gamma > 0 and np.all(np.asarray(temp) > 0)):
        raise ParameterError("gamma and temp must be positive")
    s = np.asarray(shadow_scores, dtype=np.float64)
    return expit(gamma * (s - threshold) / temp)


def selection_boundary(scores, k: int) -> float:
    """Midpoint between the k-th and (k+1)-th largest scores.

    Every selected score lies strictly above it unless the two are tied, so a
    saturated sigmoid around it reproduces the top-k mask.
    """
    ordered = np.sort(np.asarray(scores, dtype=np.float64))[::-1]
    if k >= ordered.shape[0]:
        return float(ordered[-1] - 1.0)
    return float(0.5 * (ordered[k - 1] + ordered[k]))


def default_temperature(outputs: np.ndarray) -> np.ndarray:
    """Per-column IQR of shadow scores divided by 10, floored to stay positive."""
    q75, q25 = np.percentile(outputs, [75, 25], axis=0)
    return np.maximum((q75 - q25) / 10.0, 1e-12)


def soft_labels(ensemble: ShadowEnsemble, k: int, gamma: float = 1.0, temp=None) -> np.ndarray:
    if ensemble.kind is not OutputKind.SCORES:
        raise ParameterError("soft binarization needs shadow scores")
    out = ensemble.outputs.astype(np.float64)
    temp = default_temperature(out) if temp is None else temp
    thresholds = np.array([selection_boundary(row, k) for row in out])
    return soft_binarize(out, thresholds[:, None], gamma, temp)


def binary_lira_soft(ensemble: ShadowEnsemble, k: int, observed_mask, target_id: int, gamma: float = 1.0,
                     temp=None, clamp: float | None = None, labels_cache=None) -> float:
    """Binary LiRA whose Bernoulli means come from sigmoid-softened shadow scores."""
    soft = soft_labels(ensemble, k, gamma, temp) if labels_cache is None else labels_cache
    clamp = default_clamp(ensemble.assignment.m) if clamp is None else clamp
    member = ensemble.assignment.membership[:, target_id]
    stats = InOutStats(soft[member].mean(axis=0), soft[~member].mean(axis=0),
                       soft[member].std(axis=0), soft[~member].std(axis=0), target_id)
    return _llr_at_kstar(stats, observed_mask, clamp)


def binary_lira_soft_scores(ensemble: ShadowEnsemble, k: int, observed_mask, gamma: float = 1.0,
                            temp=None, clamp=None, labels=None) -> AttackScores:
    soft = soft_labels(ensemble, k, gamma, temp)
    values = [binary_lira_soft(ensemble, k, observed_mask, t, gamma, temp, clamp, labels_cache=soft)
              for t in range(ensemble.assignment.n)]
    return AttackScores(np.array(values), labels, "binary-lira-soft")


def jaccard(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


@dataclass
class IterationRecord:
    iteration: int
    hypothesis_size: int
    overweighted: int
    underweighted: int
    jaccard: float


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    votes: np.ndarray | None = None
    status: str = "running"
    best_iteration: int = 0

    @property
    def complete(self) -> bool:
        return self.status in ("matched", "stalled")

    def to_jsonl(self, **config) -> str:
        lines = [json.dumps({"config": config, "status": self.status,
                             "best_iteration": self.best_iteration}, sort_keys=True)]
        lines += [json.dumps(vars(r), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"


def nearest_target(pool: EmbeddingMatrix, targets: EmbeddingMatrix, rows, candidates) -> np.ndarray:
    """Index (into ``targets``) of the most similar candidate target for each pool row."""
    rows = np.asarray(rows, dtype=np.intp)
    cand = np.flatnonzero(candidates)
    out = np.empty(rows.shape[0], dtype=np.intp)
    for start in range(0, rows.shape[0], _CHUNK):
        sims = pool.data[rows[start:start + _CHUNK]] @ targets.data[cand].T
        out[start:start + _CHUNK] = cand[np.argmax(sims, axis=1)]
    return out


def iterative_voting(pool: EmbeddingMatrix, targets: EmbeddingMatrix, observed_mask, k: int,
                     theta: float = 0.999, patience: int = 5, eps: float = 1e-4, max_iters: int = 50,
                     init=None, labels=None) -> tuple[IterationTrace, AttackScores]:
    """Reconstruct the private subset by curating under a shrinking hypothesis.

    Pool samples our hypothesis selects but the victim did not count against
    their nearest hypothesis target; samples the victim selected and we
    missed count for theirs. Targets whose votes go negative are dropped for
    good. Stops when the Jaccard similarity of the two selections reaches
    ``theta``, stalls for ``patience`` iterations, or ``max_iters`` runs out.
    """
    observed = np.asarray(observed_mask, dtype=bool)
    if observed.shape[0] != pool.n or observed.sum() != k:
        raise ParameterError("observed mask must cover the pool and select exactly k samples")
    if not 0 < theta <= 1:
        raise ParameterError("theta must lie in (0, 1]")
    active = np.ones(targets.n, dtype=bool) if init is None else np.asarray(init, dtype=bool).copy()
    votes = np.zeros(targets.n)
    trace = IterationTrace()
    history: list[float] = []
    for i in range(max_iters):
        if not active.any():
            trace.status = "empty"
            break
        ours = top_k_select(image_scores(pool, targets, active), k)
        j = jaccard(ours, observed)
        over = np.flatnonzero(ours & ~observed)
        under = np.flatnonzero(observed & ~ours)
        trace.records.append(IterationRecord(i, int(active.sum()), len(over), len(under), j))
        history.append(j)
        if j >= theta:
            trace.status = "matched"
            break
        if i >= patience and j - history[i - patience] < eps:
            trace.status = "stalled"
            break
        if len(over):
            np.add.at(votes, nearest_target(pool, targets, over, active), -1.0)
        if len(under):
            np.add.at(votes, nearest_target(pool, targets, under, active), 1.0)
        active &= votes >= 0
    else:
        trace.status = "max_iters"
    trace.votes = votes
    trace.best_iteration = int(np.argmax([r.jaccard for r in trace.records])) if trace.records else 0
    meta = {"status": trace.status, "iterations": len(trace.records)}
    return trace, AttackScores(votes.copy(), labels, "iterative-voting", meta)

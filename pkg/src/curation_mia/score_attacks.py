"""Membership inference from observed continuous curation scores.

Three families live here: the Gaussian likelihood-ratio test over shadow
curation runs, the nearest-neighbour voting attack for image curation, and
linear recovery for TRAK (least squares plus the sparse solvers OMP and IHT).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .curation import TrakSystem
from .datamodel import EmbeddingMatrix, GradientMatrix, ParameterError
from .shadow import VAR_FLOOR, OutputKind, ShadowEnsemble, in_out_stats, select_kstar

SENTINEL = 1e15
VOTE_TOL = 1e-6
_CHUNK = 2048


@dataclass(frozen=True)
class AttackScores:
    values: np.ndarray
    labels: np.ndarray | None = None
    attack_name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.clip(np.nan_to_num(np.asarray(self.values, dtype=np.float64),
                                       nan=-SENTINEL, posinf=SENTINEL, neginf=-SENTINEL),
                         -SENTINEL, SENTINEL)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=bool)
            if labels.shape != values.shape:
                raise ParameterError("labels must align with scores")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_labels(self, labels) -> "AttackScores":
        return AttackScores(self.values, labels, self.attack_name, dict(self.meta))

    def subset(self, keep) -> "AttackScores":
        keep = np.asarray(keep)
        labels = None if self.labels is None else self.labels[keep]
        return AttackScores(self.values[keep], labels, self.attack_name, dict(self.meta))

    def to_csv(self, target_ids=None) -> str:
        ids = range(len(self)) if target_ids is None else target_ids
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["target_id", "score", "label"])
        for i, (tid, v) in enumerate(zip(ids, self.values)):
            label = "" if self.labels is None else int(self.labels[i])
            w.writerow([int(tid), repr(float(v)), label])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, attack_name: str = "") -> tuple["AttackScores", list[int]]:
        rows = list(csv.DictReader(io.StringIO(text)))
        ids = [int(r["target_id"]) for r in rows]
        values = [float(r["score"]) for r in rows]
        raw = [r.get("label", "") for r in rows]
        labels = None if any(v == "" for v in raw) else [int(v) for v in raw]
        return cls(np.array(values), None if labels is None else np.array(labels, bool), attack_name), ids


def _gauss_logpdf(x, mu, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mu) ** 2 / var)


def gaussian_llr(x, mu_in, sigma_in, mu_out, sigma_out) -> float:
    var_in = max(sigma_in ** 2, VAR_FLOOR)
    var_out = max(sigma_out ** 2, VAR_FLOOR)
    return float(_gauss_logpdf(x, mu_in, var_in) - _gauss_logpdf(x, mu_out, var_out))


def lira_gaussian(ensemble: ShadowEnsemble, observed_scores, target_id: int) -> float:
    """Log-likelihood ratio of the observed score at the target's most informative pool sample."""
    if ensemble.kind is not OutputKind.SCORES:
        raise ParameterError("Gaussian LiRA needs a score ensemble")
    st = in_out_stats(ensemble, target_id)
    k = select_kstar(st)
    observed = np.asarray(observed_scores, dtype=np.float64)
    return gaussian_llr(observed[k], st.mu_in[k], st.sigma_in[k], st.mu_out[k], st.sigma_out[k])


def lira_scores(ensemble: ShadowEnsemble, observed_scores, labels=None) -> AttackScores:
    values = [lira_gaussian(ensemble, observed_scores, t) for t in range(ensemble.assignment.n)]
    return AttackScores(np.array(values), labels, "lira")


def voting_image(pool: EmbeddingMatrix, targets: EmbeddingMatrix, observed_scores,
                 tol: float = VOTE_TOL, labels=None) -> AttackScores:
    """Attribute each pool score to the target that explains it.

    The target whose similarity matches the observed score (within ``tol``)
    gains a vote; every target that would have produced a higher score loses
    one.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    s = np.asarray(observed_scores, dtype=np.float64)
    if s.shape[0] != pool.n:
        raise ParameterError("one observed score per pool row is required")
    votes = np.zeros(targets.n)
    for start in range(0, pool.n, _CHUNK):
        sims = pool.data[start:start + _CHUNK] @ targets.data.T
        obs = s[start:start + _CHUNK, None]
        gap = np.abs(sims - obs)
        best = np.argmin(gap, axis=1)
        hit = gap[np.arange(len(best)), best] <= tol
        np.add.at(votes, best[hit], 1.0)
        votes -= (sims > obs + tol).sum(axis=0)
    return AttackScores(votes, labels, "voting")


def _normal_system(sys: TrakSystem, target_grads: GradientMatrix, observed_scores):
    if target_grads.d_proj != sys.d_proj:
        raise ParameterError("target gradients do not match the TRAK projection dimension")
    s = np.asarray(observed_scores, dtype=np.float64) / sys.q
    # Phi^T Phi Y^T m = Phi^T s  (d x n), never forming the N x n product.
    a = (sys.phi.T @ sys.phi) @ target_grads.data.T
    b = sys.phi.T @ s
    return a, b


def least_squares_trak(sys: TrakSystem, target_grads: GradientMatrix, observed_scores,
                       labels=None) -> AttackScores:
    """Weights of the masked-mean operator that best explain the observed scores.

    Members of the selected subset recover weights near ``1/|T_sel|`` and
    non-members near zero when the system is determined. Rank-deficient
    systems fall back to the minimum-norm solution and are flagged.
    """
    a, b = _normal_system(sys, target_grads, observed_scores)
    m, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    residual = float(np.linalg.norm(a @ m - b))
    meta = {"residual": residual, "b_norm": float(np.linalg.norm(b)), "rank": int(rank),
            "degenerate": bool(rank < a.shape[1])}
    return AttackScores(m, labels, "lstsq", meta)


@dataclass(frozen=True)
class SparseRecovery:
    support: tuple[int, ...]
    weights: np.ndarray
    residual: float
    iterations: int
    diverged: bool = False


def omp_recover(a, b, k: int, tol: float = 1e-12) -> SparseRecovery:
    """Orthogonal matching pursuit with at most ``k`` atoms.

    Atoms are ranked by normalized correlation with the residual; the
    coefficients are refit by least squares on the whole support each step.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rows, cols = a.shape
    if not 1 <= k <= min(rows, cols):
        raise ParameterError(f"sparsity must be in [1, {min(rows, cols)}]")
    norms = np.linalg.norm(a, axis=0)
    norms[norms == 0] = np.inf
    support: list[int] = []
    coef = np.zeros(0)
    residual = b.copy()
    stop = tol * max(np.linalg.norm(b), 1.0)
    while len(support) < k and np.linalg.norm(residual) > stop:
        corr = np.abs(a.T @ residual) / norms
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        coef, *_ = np.linalg.lstsq(a[:, support], b, rcond=None)
        residual = b - a[:, support] @ coef
    x = np.zeros(cols)
    x[support] = coef
    return SparseRecovery(tuple(sorted(support)), x, float(np.linalg.norm(residual)), len(support))


def spectral_norm_sq(a, iters: int = 20, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^T A`` by power iteration."""
    a = np.asarray(a, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(a.shape[1])
    lam = 0.0
    for _ in range(iters):
        w = a.T @ (a @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def _hard_threshold(x, k):
    out = np.zeros_like(x)
    keep = np.argsort(-np.abs(x), kind="stable")[:k]
    out[keep] = x[keep]
    return out


def iht_recover(a, b, k: int, iters: int = 100, step: float | None = None,
                tol: float = 1e-12) -> SparseRecovery:
    """Iterative hard thresholding ``x <- H_k(x + step * A^T (b - A x))``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    if not 1 <= k <= a.shape[1]:
        raise ParameterError(f"sparsity must be in [1, {a.shape[1]}]")
    if step is None:
        top = spectral_norm_sq(a)
        step = 1.0 / top if top > 0 else 1.0
    if not step > 0:
        raise ParameterError("step must be positive")
    x = np.zeros(a.shape[1])
    r0 = float(np.linalg.norm(b))
    diverged = False
    it = 0
    for it in range(1, iters + 1):
        new = _hard_threshold(x + step * (a.T @ (b - a @ x)), k)
        moved = np.linalg.norm(new - x)
        x = new
        res = float(np.linalg.norm(b - a @ x))
        if res > 10 * r0 and r0 > 0:
            diverged = True
            break
        if moved <= tol * max(np.linalg.norm(x), 1.0):
            break
    support = tuple(int(i) for i in np.flatnonzero(x))
    return SparseRecovery(support, x, float(np.linalg.norm(b - a @ x)), it, diverged)


def sparse_trak_attack(sys: TrakSystem, target_grads: GradientMatrix, observed_scores, sparsity: int,
                       solver: str = "omp", labels=None, **kwargs) -> AttackScores:
    """Recover the selected subset as a sparse weight vector with OMP or IHT."""
    a, b = _normal_system(sys, target_grads, observed_scores)
    if solver == "omp":
        rec = omp_recover(a, b, sparsity, **kwargs)
    elif solver == "iht":
        rec = iht_recover(a, b, sparsity, **kwargs)
    else:
        raise ParameterError(f"unknown sparse solver {solver!r}")
    meta = {"support_size": len(rec.support), "residual": rec.residual, "diverged": rec.diverged}
    return AttackScores(rec.weights, labels, solver, meta)


def minmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    return np.zeros_like(v) if span == 0 else (v - v.min()) / span


def combine_scores(lira: AttackScores, voting: AttackScores, weight: float = 0.5) -> AttackScores:
    """Weighted average of min-max normalized LiRA and voting scores."""
    if not 0 <= weight <= 1:
        raise ParameterError("weight must lie in [0, 1]")
    values = weight * minmax(lira.values) + (1 - weight) * minmax(voting.values)
    labels = lira.labels if lira.labels is not None else voting.labels
    return AttackScores(values, labels, "combined", {"weight": weight})

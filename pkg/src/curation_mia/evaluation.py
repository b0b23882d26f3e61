"""ROC metrics and composite experiments (privacy onion, parameter sweeps)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .curation import Method, curate, trak_features
from .datamodel import EmbeddingMatrix, GradientMatrix, ParameterError, TargetSet, sample_selected, substream
from .score_attacks import AttackScores, least_squares_trak, lira_scores, voting_image
from .shadow import build_assignment, run_shadows

FPR_BUDGETS = (0.001, 0.01, 0.1)
SCENARIOS = ("Baseline", "Ideal", "VulnerableRemoval", "RandomRemoval")


class UndefinedMetricError(ParameterError):
    """ROC metrics need both members and non-members."""


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def _unpack(scores, labels):
    if isinstance(scores, AttackScores):
        labels = scores.labels if labels is None else labels
        scores = scores.values
    if labels is None:
        raise ParameterError("ground-truth labels are required")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ParameterError("scores and labels must have the same length")
    if y.all() or not y.any():
        raise UndefinedMetricError("both classes must be present")
    return s, y


def roc_curve(scores, labels=None) -> RocCurve:
    """Threshold sweep over distinct scores (descending); tied scores form one step."""
    s, y = _unpack(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.shape[0] - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (~y).sum()]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def auc(scores, labels=None) -> float:
    return roc_curve(scores, labels).auc


def tpr_at_fpr(scores, labels=None, fpr_budget: float = 0.01) -> float:
    """Best TPR among thresholds whose FPR stays within the budget."""
    if not 0 < fpr_budget < 1:
        raise ParameterError("fpr budget must lie in (0, 1)")
    curve = roc_curve(scores, labels)
    return float(curve.tpr[curve.fpr <= fpr_budget].max())


def metrics(scores, labels=None, budgets: Sequence[float] = FPR_BUDGETS) -> dict:
    out = {"auc": auc(scores, labels)}
    for b in budgets:
        out[f"tpr@{b:g}fpr"] = tpr_at_fpr(scores, labels, b)
    return out


# -- pipelines ---------------------------------------------------------------

Pipeline = Callable[[np.ndarray, int], AttackScores]


def image_pipeline(pool: EmbeddingMatrix, targets: EmbeddingMatrix, k: int, attack: str = "lira",
                   m_shadows: int = 64, fraction: float = 0.5) -> Pipeline:
    """Closure running selection, victim curation and one attack on a target subset."""
    if attack not in ("lira", "voting"):
        raise ParameterError(f"unsupported image attack {attack!r}")

    def run(target_ids: np.ndarray, seed: int) -> AttackScores:
        sub = targets.rows(target_ids)
        truth = sample_selected(TargetSet.full(sub.n), fraction, seed).mask
        observed = curate(pool, sub, Method.IMAGE, k, truth).scores
        if attack == "voting":
            return voting_image(pool, sub, observed, labels=truth)
        ens = run_shadows(pool, sub, build_assignment(sub.n, m_shadows, seed), Method.IMAGE, k)
        return lira_scores(ens, observed, labels=truth)

    return run


def trak_pipeline(pool_grads: GradientMatrix, target_grads: GradientMatrix, k: int,
                  fraction: float = 0.5, lam: float | None = None) -> Pipeline:
    sys = trak_features(pool_grads, lam)

    def run(target_ids: np.ndarray, seed: int) -> AttackScores:
        sub = target_grads.rows(target_ids)
        truth = sample_selected(TargetSet.full(sub.n), fraction, seed).mask
        observed = curate(sys, sub, Method.TRAK, k, truth).scores.astype(np.float32).astype(np.float64)
        return least_squares_trak(sys, sub, observed, labels=truth)

    return run


# -- privacy onion -----------------------------------------------------------

@dataclass(frozen=True)
class OnionReport:
    auc: dict
    removed_fraction: float
    removed: dict

    def to_json(self, **config) -> str:
        return json.dumps({"auc": self.auc, "removed_fraction": self.removed_fraction,
                           "removed": {k: [int(i) for i in v] for k, v in self.removed.items()},
                           "config": config}, sort_keys=True, indent=1)


def _rank01(values: np.ndarray) -> np.ndarray:
    order = np.argsort(np.argsort(values, kind="stable"), kind="stable")
    return order / max(len(values) - 1, 1)


def vulnerability(runs: Sequence[AttackScores], how: str = "success") -> np.ndarray:
    """Per-target vulnerability aggregated over seeded attack runs.

    ``"success"`` averages the rank of the score in the direction of the
    truth (high rank for members, low rank for non-members); ``"mean-score"``
    averages the raw scores.
    """
    if how == "mean-score":
        return np.mean([r.values for r in runs], axis=0)
    if how != "success":
        raise ParameterError(f"unknown vulnerability measure {how!r}")
    per_run = []
    for r in runs:
        rank = _rank01(r.values)
        per_run.append(np.where(r.labels, rank, 1.0 - rank))
    return np.mean(per_run, axis=0)


def onion_experiment(pipeline: Pipeline, n_targets: int, removal_fraction: float = 0.05,
                     seeds: Iterable[int] = range(5), vulnerability_measure: str = "success") -> OnionReport:
    """Compare four target-set treatments when the most exposed targets are removed.

    Baseline attacks the full set. Ideal drops the vulnerable targets from
    the baseline ROC only. VulnerableRemoval and RandomRemoval re-run the
    pipeline without the vulnerable or an equal number of random targets.
    AUC is reported on the remaining targets, averaged over seeds.
    """
    if not 0 < removal_fraction < 0.5:
        raise ParameterError("removal fraction must lie in (0, 0.5)")
    seeds = list(seeds)
    all_ids = np.arange(n_targets)
    baseline = [pipeline(all_ids, s) for s in seeds]
    count = int(np.floor(removal_fraction * n_targets + 0.5))
    vuln_score = vulnerability(baseline, vulnerability_measure)
    vulnerable = np.sort(np.argsort(-vuln_score, kind="stable")[:count])
    random_ids = np.sort(substream(seeds[0] if seeds else 0, "onion-random").choice(n_targets, count, replace=False))

    keep_v = np.setdiff1d(all_ids, vulnerable)
    keep_r = np.setdiff1d(all_ids, random_ids)
    result = {
        "Baseline": float(np.mean([auc(r) for r in baseline])),
        "Ideal": float(np.mean([auc(r.subset(keep_v)) for r in baseline])),
        "VulnerableRemoval": float(np.mean([auc(pipeline(keep_v, s)) for s in seeds])),
        "RandomRemoval": float(np.mean([auc(pipeline(keep_r, s)) for s in seeds])),
    }
    return OnionReport(result, removal_fraction, {"vulnerable": vulnerable, "random": random_ids})


# -- sweeps ------------------------------------------------------------------

CellRunner = Callable[[Mapping, int], Mapping[str, AttackScores]]


def sweep(cells: Sequence[Mapping], run_cell: CellRunner, seeds: Sequence[int],
          fpr_budget: float = 0.01) -> list[dict]:
    """Mean and std of AUC and TPR at ``fpr_budget`` per (cell, attack)."""
    if not cells:
        raise ParameterError("the grid is empty")
    rows = []
    for cell in cells:
        per_attack: dict[str, list[tuple[float, float]]] = {}
        for seed in seeds:
            for name, scores in run_cell(cell, seed).items():
                per_attack.setdefault(name, []).append((auc(scores), tpr_at_fpr(scores, None, fpr_budget)))
        for name, vals in per_attack.items():
            arr = np.array(vals)
            rows.append({**cell, "attack": name, "seeds": len(vals),
                         "auc_mean": float(arr[:, 0].mean()), "auc_std": float(arr[:, 0].std()),
                         "tpr_mean": float(arr[:, 1].mean()), "tpr_std": float(arr[:, 1].std()),
                         "per_seed_tpr": [float(v) for v in arr[:, 1]]})
    return rows


def rows_to_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    fields = [k for k in rows[0] if k != "per_seed_tpr"]
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in fields})
    return buf.getvalue()


def trak_size_cell(cell: Mapping, seed: int) -> dict:
    """Least-squares attack on a fresh TRAK fixture with ``|T_sel| = cell['n_selected']``.

    The candidate target set is twice the selected size; ``d_proj`` and the
    pool size stay fixed across cells so larger target sets dilute each
    target's contribution.
    """
    from .fixtures import make_trak_fixture

    n_sel = int(cell["n_selected"])
    d_proj = int(cell.get("d_proj", 128))
    n_pool = int(cell.get("n_pool", 1000))
    pool, targets = make_trak_fixture(seed, n_pool, 2 * n_sel, d_proj)
    run = trak_pipeline(pool, targets, k=int(cell.get("k", n_pool // 10)))
    return {"lstsq": run(np.arange(targets.n), seed)}

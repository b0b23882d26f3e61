"""Shadow curation sets and per-target in/out statistics.

Each shadow run curates the public pool for a random subset of the known
target set. The assignment is balanced: every target sits in exactly half of
the shadows, so the member and non-member populations have equal size.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curation import Method, image_scores, top_k_select, trak_scores
from .datamodel import FormatError, ParameterError, load_matrix, save_matrix, substream

VAR_FLOOR = 1e-12


class OutputKind(str, enum.Enum):
    SCORES = "scores"
    MASKS = "masks"


@dataclass(frozen=True)
class ShadowAssignment:
    membership: np.ndarray  # (m, n) bool

    def __post_init__(self):
        mem = np.asarray(self.membership, dtype=bool)
        m = mem.shape[0]
        if mem.ndim != 2 or m < 2 or m % 2:
            raise ParameterError("assignment must be (m, n) with m even and >= 2")
        if np.any(mem.sum(axis=0) != m // 2):
            raise ParameterError("every target must be in exactly m/2 shadows")
        mem.setflags(write=False)
        object.__setattr__(self, "membership", mem)

    @property
    def m(self) -> int:
        return self.membership.shape[0]

    @property
    def n(self) -> int:
        return self.membership.shape[1]


@dataclass(frozen=True)
class ShadowEnsemble:
    assignment: ShadowAssignment
    outputs: np.ndarray  # (m, N) float scores or bool masks
    kind: OutputKind
    k: int
    method: Method

    def __post_init__(self):
        if self.outputs.shape[0] != self.assignment.m:
            raise ParameterError("one output row per shadow is required")
        if self.kind is OutputKind.MASKS and np.any(self.outputs.sum(axis=1) != self.k):
            raise ParameterError("every shadow mask must select exactly k samples")

    def as_masks(self) -> "ShadowEnsemble":
        if self.kind is OutputKind.MASKS:
            return self
        masks = np.stack([top_k_select(row, self.k) for row in self.outputs])
        return ShadowEnsemble(self.assignment, masks, OutputKind.MASKS, self.k, self.method)


@dataclass(frozen=True)
class InOutStats:
    mu_in: np.ndarray
    mu_out: np.ndarray
    sigma_in: np.ndarray
    sigma_out: np.ndarray
    target_id: int


def build_assignment(n_targets: int, m_shadows: int, seed: int) -> ShadowAssignment:
    """Random balanced membership: each column is a shuffled half-ones vector."""
    if m_shadows < 2 or m_shadows % 2:
        raise ParameterError(f"m must be even and >= 2, got {m_shadows}")
    if n_targets < 1:
        raise ParameterError("need at least one target")
    half = np.zeros(m_shadows, dtype=bool)
    half[: m_shadows // 2] = True
    cols = substream(seed, "assignment").permuted(np.tile(half, (n_targets, 1)), axis=1)
    return ShadowAssignment(cols.T)


def _shadow_scores(pool_data, targets, method: Method, rows: np.ndarray) -> np.ndarray:
    if not rows.any():
        # Empty subset: nothing attracts any pool sample.
        n = pool_data.n
        return np.full(n, -1.0) if method is Method.IMAGE else np.zeros(n)
    if method is Method.IMAGE:
        return image_scores(pool_data, targets, rows)
    return trak_scores(pool_data, targets, rows)


def run_shadows(pool_data, targets, assignment: ShadowAssignment, method, k: int,
                kind=OutputKind.SCORES) -> ShadowEnsemble:
    """Curate once per assignment row; keep scores or top-k masks."""
    method, kind = Method(method), OutputKind(kind)
    if targets.n != assignment.n:
        raise ParameterError("assignment width must equal the number of targets")
    rows = []
    for member_row in assignment.membership:
        scores = _shadow_scores(pool_data, targets, method, member_row)
        rows.append(top_k_select(scores, k) if kind is OutputKind.MASKS else scores)
    return ShadowEnsemble(assignment, np.stack(rows), kind, int(k), method)


def _stats(outputs: np.ndarray, member: np.ndarray, target_id: int) -> InOutStats:
    out = outputs.astype(np.float64)
    ins, outs = out[member], out[~member]
    return InOutStats(
        mu_in=ins.mean(axis=0),
        mu_out=outs.mean(axis=0),
        sigma_in=ins.std(axis=0),
        sigma_out=outs.std(axis=0),
        target_id=int(target_id),
    )


def in_out_stats(ensemble: ShadowEnsemble, target_id: int) -> InOutStats:
    """Population mean and std of every pool output, split by the target's membership."""
    member = ensemble.assignment.membership[:, target_id]
    return _stats(ensemble.outputs, member, target_id)


def iter_in_out_stats(ensemble: ShadowEnsemble):
    for t in range(ensemble.assignment.n):
        yield in_out_stats(ensemble, t)


def select_kstar(stats: InOutStats) -> int:
    """Pool index whose in/out means differ most; first index wins ties."""
    return int(np.argmax(np.abs(stats.mu_in - stats.mu_out)))


def save_ensemble(directory, ensemble: ShadowEnsemble, seed: int, **config) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "outputs.curm", ensemble.outputs.astype(np.float64))
    save_matrix(directory / "assignment.curm", ensemble.assignment.membership.astype(np.float64))
    meta = {"kind": ensemble.kind.value, "k": ensemble.k, "method": ensemble.method.value,
            "seed": seed, "config": config}
    (directory / "shadow.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_ensemble(directory) -> ShadowEnsemble:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "shadow.json").read_text())
        kind, k, method = OutputKind(meta["kind"]), int(meta["k"]), Method(meta["method"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad shadow sidecar: {exc}") from exc
    outputs = load_matrix(directory / "outputs.curm").astype(np.float64)
    membership = load_matrix(directory / "assignment.curm") > 0.5
    if kind is OutputKind.MASKS:
        outputs = outputs > 0.5
    return ShadowEnsemble(ShadowAssignment(membership), outputs, kind, k, method)


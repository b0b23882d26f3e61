"""Matrix and target-set containers, seeded fixture generators and file I/O.

Everything downstream consumes plain matrices: embeddings for image-based
curation and projected gradients for TRAK. Generators emit values that are
exactly representable in float32, so persisting a fixture with
:func:`save_matrix` and loading it back reproduces the in-memory arrays.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CURM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")

NORM_TOL = 1e-6


class ParameterError(ValueError):
    """Invalid argument value or shape."""


class FormatError(ValueError):
    """Malformed matrix or JSON artifact."""


class NumericError(ArithmeticError):
    """A factorization or solve could not be carried out."""


class NotFoundError(LookupError):
    """A search over candidates came up empty."""


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    String names are hashed with CRC32 so the stream identity does not depend
    on Python's randomized ``hash``. Results never depend on call order.
    """
    if seed is None:
        raise ParameterError("an explicit seed is required")
    key = tuple(zlib.crc32(n.encode()) if isinstance(n, str) else int(n) for n in names)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _f32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray
    row_norm: bool = True

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ParameterError(f"embedding matrix must be 2-D and non-empty, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("embedding matrix has non-finite entries")
        if self.row_norm:
            dev = np.abs(np.linalg.norm(data, axis=1) - 1.0).max()
            if dev > NORM_TOL:
                raise ParameterError(f"rows are not unit-normalized (max deviation {dev:.3g})")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def rows(self, idx) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.data[np.asarray(idx)], self.row_norm)

    @classmethod
    def normalized(cls, data) -> "EmbeddingMatrix":
        data = np.asarray(data, dtype=np.float64)
        norms = np.linalg.norm(data, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ParameterError("cannot normalize a zero row")
        return cls(data / norms, row_norm=True)


@dataclass(frozen=True)
class GradientMatrix:
    data: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ParameterError(f"gradient matrix must be 2-D and non-empty, got {data.shape}")
        q = np.ones(data.shape[0]) if self.q is None else self.q
        q = _frozen(q).reshape(-1)
        if q.shape[0] != data.shape[0]:
            raise ParameterError("q length must equal the row count")
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(q))):
            raise ParameterError("gradient matrix has non-finite entries")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d_proj(self) -> int:
        return self.data.shape[1]

    def rows(self, idx) -> "GradientMatrix":
        idx = np.asarray(idx)
        return GradientMatrix(self.data[idx], self.q[idx])


@dataclass(frozen=True)
class TargetSet:
    """Ordered target ids plus the flags of the privately selected subset."""

    indices: tuple[int, ...]
    selected: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        if len(set(indices)) != len(indices):
            raise ParameterError("target ids must be unique")
        selected = tuple(bool(s) for s in self.selected) or (False,) * len(indices)
        if len(selected) != len(indices):
            raise ParameterError("selected flags must align with indices")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "selected", selected)

    @classmethod
    def full(cls, n: int) -> "TargetSet":
        return cls(tuple(range(n)))

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.selected, dtype=bool)

    @property
    def selected_ids(self) -> list[int]:
        return [i for i, s in zip(self.indices, self.selected) if s]

    def to_json(self, **extra) -> str:
        doc = {"indices": list(self.indices), "selected": self.selected_ids}
        doc.update(extra)
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TargetSet":
        try:
            doc = json.loads(text)
            indices = [int(i) for i in doc["indices"]]
            chosen = {int(i) for i in doc["selected"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad TargetSet JSON: {exc}") from exc
        if not chosen <= set(indices):
            raise FormatError("selected ids must be a subset of indices")
        return cls(tuple(indices), tuple(i in chosen for i in indices))


def _check_counts(**counts):
    for name, value in counts.items():
        if int(value) != value or value < 1:
            raise ParameterError(f"{name} must be a positive integer, got {value!r}")


def generate_embeddings(seed: int, n: int, d: int, clusters: int = 1, spread: float = 0.1) -> EmbeddingMatrix:
    """Unit rows drawn around ``clusters`` random directions on the sphere.

    ``spread`` is the per-coordinate standard deviation of the Gaussian bump
    before re-normalization, so small values give tight clusters.
    """
    _check_counts(n=n, d=d, clusters=clusters)
    if not spread > 0:
        raise ParameterError("spread must be positive")
    centers = substream(seed, "centers").standard_normal((clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    rng = substream(seed, "rows")
    assign = rng.integers(0, clusters, size=n)
    raw = centers[assign] + spread * rng.standard_normal((n, d))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return EmbeddingMatrix(_f32(raw), row_norm=True)


def generate_gradients(seed: int, n: int, d_proj: int, signal=None, stream: str = "grads") -> GradientMatrix:
    """I.i.d. standard normal rows, optionally shifted by ``signal``.

    ``signal`` may be a single direction (added to every row) or an ``n x d``
    array of per-row offsets. ``q`` is all ones.
    """
    _check_counts(n=n, d_proj=d_proj)
    data = substream(seed, stream).standard_normal((n, d_proj))
    if signal is not None:
        data = data + np.broadcast_to(np.asarray(signal, dtype=np.float64), data.shape)
    return GradientMatrix(_f32(data), np.ones(n))


def sample_selected(targets: TargetSet, fraction: float, seed: int) -> TargetSet:
    """Flag ``round(fraction * |T|)`` targets chosen uniformly without replacement."""
    if not 0 < fraction <= 1:
        raise ParameterError("fraction must lie in (0, 1]")
    count = int(np.floor(fraction * len(targets) + 0.5))
    if count < 1:
        raise ParameterError("selection would be empty")
    chosen = substream(seed, "select").choice(len(targets), size=count, replace=False)
    flags = np.zeros(len(targets), dtype=bool)
    flags[chosen] = True
    return TargetSet(targets.indices, tuple(flags))


def save_matrix(path, matrix) -> None:
    """Write ``matrix`` as a CURM file (little-endian float32, row-major)."""
    if isinstance(matrix, (EmbeddingMatrix, GradientMatrix)):
        matrix = matrix.data
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ParameterError("only 1-D or 2-D arrays can be saved")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]) + payload)


def load_matrix(path) -> np.ndarray:
    """Read a CURM file; returns a float32 array of shape ``(rows, cols)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = rows * cols * 4
    if len(raw) - _HEADER.size != expected:
        raise FormatError(f"{path}: payload has {len(raw) - _HEADER.size} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)

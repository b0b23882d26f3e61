"""Synthetic pools and target sets with controllable influence structure."""

from __future__ import annotations

import numpy as np

from .datamodel import EmbeddingMatrix, GradientMatrix, ParameterError, _f32, generate_gradients, substream


def _unit(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def make_image_fixture(seed: int, n_pool: int, n_targets: int, d: int, spread: float = 0.15,
                       owned_fraction: float = 1.0) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Targets uniform on the sphere; pool samples scattered around them.

    Pool rows are assigned round-robin to the first ``owned_fraction`` of the
    targets, so every one of those targets is the likely nearest neighbour of
    some pool sample while the rest own nothing.
    """
    if not 0 < owned_fraction <= 1:
        raise ParameterError("owned_fraction must lie in (0, 1]")
    targets = _unit(substream(seed, "fixture-targets").standard_normal((n_targets, d)))
    owners = np.arange(n_pool) % max(1, int(round(owned_fraction * n_targets)))
    noise = substream(seed, "fixture-pool").standard_normal((n_pool, d))
    pool = _unit(targets[owners] + spread * noise)
    return EmbeddingMatrix(_f32(pool)), EmbeddingMatrix(_f32(targets))


def make_hub_fixture(seed: int, n_pool: int, n_targets: int, d: int, hub_fraction: float = 0.05,
                     satellite_spread: float = 0.12, pool_spread: float = 0.1,
                     ) -> tuple[EmbeddingMatrix, EmbeddingMatrix, np.ndarray]:
    """Few hub targets shield many satellite targets placed around them.

    Pool samples sit around hub centres, so the hub is their nearest target
    and the satellites stay hidden until the hub is gone. Returns the pool,
    the targets and the boolean hub mask.
    """
    n_hubs = max(1, int(round(hub_fraction * n_targets)))
    rng = substream(seed, "fixture-hubs")
    hubs = _unit(rng.standard_normal((n_hubs, d)))
    home = np.arange(n_targets) % n_hubs
    is_hub = np.arange(n_targets) < n_hubs
    targets = hubs[home].copy()
    sat = ~is_hub
    targets[sat] = _unit(hubs[home[sat]] + satellite_spread * rng.standard_normal((int(sat.sum()), d)))
    owner = np.arange(n_pool) % n_hubs
    pool = _unit(hubs[owner] + pool_spread * substream(seed, "fixture-pool").standard_normal((n_pool, d)))
    return EmbeddingMatrix(_f32(pool)), EmbeddingMatrix(_f32(targets)), is_hub


def make_trak_fixture(seed: int, n_pool: int, n_targets: int, d_proj: int) -> tuple[GradientMatrix, GradientMatrix]:
    """Independent Gaussian pool and target gradients with unit ``q``."""
    pool = generate_gradients(seed, n_pool, d_proj, stream="fixture-pool")
    targets = generate_gradients(seed, n_targets, d_proj, stream="fixture-targets")
    return pool, targets

"""Latent-space samplers: simple random, Latin hypercube, maximin LHS.

Designs live on the open unit cube; ``to_gaussian`` maps them to the
standard-normal latent prior through the inverse CDF, which preserves
per-dimension ranks (and therefore stratification).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import ndtri


@dataclass
class UnitDesign:
    """n points in (0,1)^K; LHS variants hit every stratum exactly once per dim."""

    points: np.ndarray
    kind: str

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SamplerKind:
    """Sampler selection: 'srs', 'lhs' or 'mlhs' (with candidate pool size)."""

    kind: str = "mlhs"
    pool: int = 100

    def __post_init__(self):
        if self.kind not in ("srs", "lhs", "mlhs"):
            raise ValueError(f"unknown sampler '{self.kind}'")
        if self.pool < 1:
            raise ValueError("candidate pool must be >= 1")


def _open_unit(u: np.ndarray) -> np.ndarray:
    # numpy uniforms live in [0, 1); nudge exact zeros into the open interval
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)


def srs(n: int, dim: int, seed: int) -> UnitDesign:
    """Independent uniform points."""
    if n < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    return UnitDesign(_open_unit(rng.random((n, dim))), "srs")


def _lhs_from_rng(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    pts = np.empty((n, dim))
    for j in range(dim):
        order = rng.permutation(n)
        jitter = rng.random(n)
        pts[:, j] = (order + jitter) / n
    return _open_unit(pts)


def lhs(n: int, dim: int, seed: int) -> UnitDesign:
    """Classical Latin hypercube: one point per stratum in every dimension."""
    if n < 1:
        raise ValueError("need at least one point")
    return UnitDesign(_lhs_from_rng(np.random.default_rng(seed), n, dim), "lhs")


def min_pairwise_distance(points: np.ndarray) -> float:
    return float(pdist(points).min())


def maximin_lhs(n: int, dim: int, seed: int, pool: int = 100) -> UnitDesign:
    """Best-of-pool LHS under the maximin pairwise-distance criterion.

    Candidates are drawn from one seeded stream (the first equals
    ``lhs(n, dim, seed)``); ties keep the earliest candidate.
    """
    if n < 2:
        raise ValueError("maximin needs at least two points")
    if pool < 1:
        raise ValueError("candidate pool must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    best_dist = -np.inf
    for _ in range(pool):
        cand = _lhs_from_rng(rng, n, dim)
        dist = min_pairwise_distance(cand)
        if dist > best_dist:
            best, best_dist = cand, dist
    return UnitDesign(best, "mlhs")


def to_gaussian(design: UnitDesign | np.ndarray) -> np.ndarray:
    """Map unit-cube points to the standard-normal prior via the inverse CDF."""
    u = design.points if isinstance(design, UnitDesign) else np.asarray(design, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("quantile map requires points strictly inside (0, 1)")
    return ndtri(u)


def draw_latents(sampler: SamplerKind, n: int, dim: int, seed: int) -> np.ndarray:
    """Gaussian latent batch from the chosen design."""
    if sampler.kind == "srs":
        design = srs(n, dim, seed)
    elif sampler.kind == "lhs":
        design = lhs(n, dim, seed)
    else:
        design = maximin_lhs(n, dim, seed, pool=sampler.pool) if n >= 2 else lhs(n, dim, seed)
    return to_gaussian(design)

"""Target sample assigner: anchor cache, anchored three-way K-means, subset sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import ClassMask

UNIVERSUM, TRUE_TARGET, FAKE_TARGET = 0, 1, 2


class DegenerateInputError(ValueError):
    pass


@dataclass
class AnchorCache:
    """Column 0 of ``M`` is the Universum anchor, column ``k + 1`` the true-target anchor of class k."""

    M: np.ndarray
    seen_count: np.ndarray
    initialized: np.ndarray
    universum_count: int = 0
    epsilon_scale: float = 1e-3

    @classmethod
    def create(cls, feature_dim: int, num_classes: int, epsilon_scale: float = 1e-3) -> "AnchorCache":
        return cls(
            M=np.zeros((feature_dim, num_classes + 1)),
            seen_count=np.zeros(num_classes, dtype=np.int64),
            initialized=np.zeros(num_classes, dtype=bool),
            epsilon_scale=epsilon_scale,
        )

    @property
    def feature_dim(self) -> int:
        return self.M.shape[0]

    @property
    def num_classes(self) -> int:
        return self.M.shape[1] - 1

    def copy(self) -> "AnchorCache":
        return AnchorCache(self.M.copy(), self.seen_count.copy(), self.initialized.copy(),
                           self.universum_count, self.epsilon_scale)

    def to_csv(self) -> str:
        """One row per column of M: ``column,role,seen_count,v0,...``."""
        rows = ["column,role,seen_count," + ",".join(f"v{c}" for c in range(self.feature_dim))]
        for j in range(self.M.shape[1]):
            role = "universum" if j == 0 else f"class_{j - 1}"
            count = self.universum_count if j == 0 else int(self.seen_count[j - 1])
            rows.append(f"{j},{role},{count}," + ",".join(repr(float(v)) for v in self.M[:, j]))
        return "\n".join(rows) + "\n"


@dataclass
class SubsetSample:
    universum: np.ndarray  # indices into the N spatial positions
    true_target: np.ndarray
    fake_target: np.ndarray
    labels: np.ndarray  # cluster label of every position
    centers: np.ndarray  # (C, 3) final cluster centers
    iterations: int = 0
    objective: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def subsets(self):
        return self.universum, self.true_target, self.fake_target


def get_anchors(cache: AnchorCache, mask: ClassMask, z: np.ndarray, rng: np.random.Generator):
    """Return (universum anchor, true-target anchor) for the dominant class, seeding it on first sight."""
    k = mask.dominant_class
    if z.shape != (cache.feature_dim,) or mask.num_classes != cache.num_classes:
        raise ValueError("cache dimensions do not match the feature / class count")
    if cache.seen_count[k] == 0 and not cache.initialized[k]:
        eps = rng.uniform(-cache.epsilon_scale, cache.epsilon_scale, size=cache.feature_dim)
        cache.M[:, k + 1] = z + eps
        cache.initialized[k] = True
    return cache.M[:, 0].copy(), cache.M[:, k + 1].copy()


def kmeans3(points: np.ndarray, init_centers: np.ndarray, max_iters: int = 50, tol: float = 1e-4):
    """Lloyd's algorithm on the columns of ``points`` (C, N) from the given (C, 3) centers.

    Returns (labels, centers, objective_history, iterations). Labels index the nearest
    final center with ties to the lowest index; an emptied cluster is re-seeded at the
    point farthest from its previous center.
    """
    points = np.asarray(points, dtype=np.float64)
    init_centers = np.asarray(init_centers, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 3:
        raise DegenerateInputError(f"three-way K-means needs at least 3 points, got shape {points.shape}")
    if init_centers.shape != (points.shape[0], 3):
        raise ValueError(f"init centers must be ({points.shape[0]}, 3), got {init_centers.shape}")
    labels, centers, history, iters = kernels.lloyd3(
        np.ascontiguousarray(points.T), np.ascontiguousarray(init_centers.T), int(max_iters), float(tol)
    )
    return labels, np.ascontiguousarray(centers.T), history, iters


def assign_and_sample(Z, z, cache: AnchorCache, mask: ClassMask, n: int, rng: np.random.Generator,
                      max_iters: int = 50, tol: float = 1e-4) -> SubsetSample:
    """Cluster an image's pixel features from {a_u, a_t, z} and draw up to ``n`` positions per cluster."""
    Z = np.asarray(Z, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    a_u, a_t = get_anchors(cache, mask, z, rng)
    init = np.stack([a_u, a_t, z], axis=1)
    labels, centers, history, iters = kmeans3(Z, init, max_iters, tol)
    picked = []
    for j in (UNIVERSUM, TRUE_TARGET, FAKE_TARGET):
        members = np.flatnonzero(labels == j)
        take = min(n, members.size)
        picked.append(np.sort(rng.choice(members, size=take, replace=False)) if take else members[:0])
    return SubsetSample(*picked, labels=labels, centers=centers, iterations=iters, objective=history)


def update_cache(cache: AnchorCache, centers: np.ndarray, z: np.ndarray, mask: ClassMask,
                 literal: bool = False) -> AnchorCache:
    """Move the anchors toward this image's final cluster centers (in place; returns ``cache``).

    Default mode keeps each anchor at the running mean of the centers it has absorbed,
    weighting the new center by 1 / (previous updates + 1). ``literal=True`` instead
    weights the *old* anchor by the reciprocal of the count of passed images.
    """
    k = mask.dominant_class
    c_u, c_t, c_f = centers[:, 0], centers[:, 1], centers[:, 2]

    if literal:
        r0 = 1.0 / cache.universum_count if cache.universum_count else 0.0
        cache.M[:, 0] = r0 * cache.M[:, 0] + (1.0 - r0) * c_u
    else:
        r0 = 1.0 / (cache.universum_count + 1)
        cache.M[:, 0] = (1.0 - r0) * cache.M[:, 0] + r0 * c_u
    cache.universum_count += 1

    seen = int(cache.seen_count[k])
    if seen > 0:
        if literal:
            rk = 1.0 / seen
            cache.M[:, k + 1] = rk * cache.M[:, k + 1] + (1.0 - rk) * c_t
        else:
            rk = 1.0 / (seen + 1)
            cache.M[:, k + 1] = (1.0 - rk) * cache.M[:, k + 1] + rk * c_t
    elif np.linalg.norm(c_f - z) <= np.linalg.norm(c_t - z):
        cache.M[:, k + 1] = c_t
    else:
        cache.M[:, k + 1] = c_f
    cache.initialized[k] = True
    cache.seen_count[k] += 1
    return cache

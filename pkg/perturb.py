"""
CAD Sequence Toolkit - Point Cloud Perturbation
Multi-octave Perlin displacement noise and geodesic hole punching
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.sparse.csgraph import dijkstra
from sklearn.neighbors import kneighbors_graph

from geometry import PointCloud, estimate_normals
from utils import logger


class PerturbationError(Exception):
    """Base class for perturbation errors"""


class InsufficientPointsError(PerturbationError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    octaves: int = 64
    amplitude: float = 0.001
    seed: int = 0
    persistence: float = 0.5
    lacunarity: float = 2.0
    normal_k: int = 30

    def __post_init__(self):
        if self.amplitude < 0:
            raise PerturbationError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.octaves < 1:
            raise PerturbationError(f"octaves must be >= 1, got {self.octaves}")


@dataclass(frozen=True)
class HoleSpec:
    max_holes: int = 10
    ratio_mean: float = 0.03
    ratio_std: float = 0.015
    min_remaining: int = 4096
    seed: int = 0
    knn: int = 8
    max_ratio: float = 0.25

    def __post_init__(self):
        if self.min_remaining < 1:
            raise PerturbationError(f"min_remaining must be >= 1, got {self.min_remaining}")
        if self.max_holes < 1:
            raise PerturbationError(f"max_holes must be >= 1, got {self.max_holes}")


# ---------------------------------------------------------------------------
# Perlin noise
# ---------------------------------------------------------------------------

_GRADIENTS = np.array([
    [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
    [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
    [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
], dtype=np.float64)

_CORNERS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


class PerlinNoise:
    """Gradient lattice noise with a seeded permutation table"""

    def __init__(self, seed: int = 0):
        """Initialize the permutation table"""
        perm = np.random.default_rng(seed).permutation(256)
        self.perm = np.concatenate([perm, perm]).astype(np.int64)

    def noise(self, points: np.ndarray) -> np.ndarray:
        """Single-octave noise; zero on the integer lattice"""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cell = np.floor(p)
        frac = p - cell
        idx = np.mod(cell, 256).astype(np.int64)
        u = _fade(frac)
        perm = self.perm

        values = {}
        for dx, dy, dz in _CORNERS:
            h = perm[perm[perm[idx[:, 0] + dx] + idx[:, 1] + dy] + idx[:, 2] + dz] % 12
            offset = frac - np.array([dx, dy, dz], dtype=np.float64)
            values[(dx, dy, dz)] = np.einsum("ij,ij->i", _GRADIENTS[h], offset)

        def lerp(a, b, t):
            return a + t * (b - a)

        x00 = lerp(values[(0, 0, 0)], values[(1, 0, 0)], u[:, 0])
        x10 = lerp(values[(0, 1, 0)], values[(1, 1, 0)], u[:, 0])
        x01 = lerp(values[(0, 0, 1)], values[(1, 0, 1)], u[:, 0])
        x11 = lerp(values[(0, 1, 1)], values[(1, 1, 1)], u[:, 0])
        y0 = lerp(x00, x10, u[:, 1])
        y1 = lerp(x01, x11, u[:, 1])
        return lerp(y0, y1, u[:, 2])

    def fractal(self, points: np.ndarray, octaves: int, persistence: float = 0.5,
                lacunarity: float = 2.0) -> np.ndarray:
        """Octave sum normalized by the total amplitude and clipped to [-1, 1]"""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        total = np.zeros(len(p))
        amplitude = 1.0
        frequency = 1.0
        norm = 0.0
        for _ in range(octaves):
            total += amplitude * self.noise(p * frequency)
            norm += amplitude
            amplitude *= persistence
            frequency *= lacunarity
        return np.clip(total / norm, -1.0, 1.0)


def perlin3(q, spec: NoiseSpec = NoiseSpec()):
    """Fractal Perlin value(s) in [-1, 1] for one 3D point or an (n, 3) array"""
    q = np.asarray(q, dtype=np.float64)
    values = PerlinNoise(spec.seed).fractal(q, spec.octaves, spec.persistence, spec.lacunarity)
    return float(values[0]) if q.ndim == 1 else values


def apply_noise(pc: PointCloud, spec: NoiseSpec = NoiseSpec()) -> PointCloud:
    """Displace every point along its normal by amplitude * noise, then re-estimate normals"""
    if spec.amplitude == 0:
        return pc.copy()
    field = perlin3(pc.points, spec)
    points = pc.points + (spec.amplitude * field)[:, None] * pc.normals
    k = min(spec.normal_k, len(points) - 1)
    normals, degenerate = estimate_normals(points, k)
    # keep the input orientation where it is known
    flip = np.einsum("ij,ij->i", normals, pc.normals) < 0
    normals[flip] *= -1.0
    if np.any(degenerate):
        normals[degenerate] = pc.normals[degenerate]
    return PointCloud(points, normals)


# ---------------------------------------------------------------------------
# Holes
# ---------------------------------------------------------------------------

def knn_graph(points: np.ndarray, k: int = 8):
    """Symmetric k-NN graph with Euclidean edge weights"""
    k = min(k, len(points) - 1)
    graph = kneighbors_graph(points, n_neighbors=k, mode="distance", include_self=False)
    return graph.maximum(graph.T).tocsr()


def punch_holes(pc: PointCloud, spec: HoleSpec = HoleSpec()) -> Tuple[PointCloud, np.ndarray]:
    """Remove geodesic balls around random seed points; returns (cloud, sorted removed indices)"""
    n = len(pc)
    if n < spec.min_remaining:
        raise InsufficientPointsError(f"cloud has {n} points, fewer than min_remaining={spec.min_remaining}")

    rng = np.random.default_rng(spec.seed)
    n_holes = int(rng.integers(1, spec.max_holes + 1))
    ratios = np.clip(rng.normal(spec.ratio_mean, spec.ratio_std, n_holes), 0.0, spec.max_ratio)
    budget = n - spec.min_remaining
    removed = np.zeros(n, dtype=bool)
    graph = knn_graph(pc.points, spec.knn) if n > 1 else None

    for h, ratio in enumerate(ratios):
        size = int(np.floor(ratio * n + 0.5))
        left = budget - int(removed.sum())
        if size > left:
            logger(f"⚠️ hole {h + 1}/{n_holes} truncated from {size} to {max(left, 0)} points", "DEBUG")
            size = left
        if size <= 0:
            continue
        alive = np.flatnonzero(~removed)
        sub = graph[alive][:, alive]
        source = int(rng.integers(0, len(alive)))
        dist = dijkstra(sub, directed=False, indices=source)
        order = np.argsort(dist, kind="stable")
        order = order[np.isfinite(dist[order])][:size]
        removed[alive[order]] = True

    removed_idx = np.flatnonzero(removed)
    if len(removed_idx) == 0:
        return pc.copy(), removed_idx
    return pc.subset(np.flatnonzero(~removed)), removed_idx


def hole_metadata(spec: HoleSpec, removed: np.ndarray, n_input: int) -> Dict:
    """Sidecar record of a hole-punching run"""
    return {
        "mode": "holes",
        "seed": int(spec.seed),
        "n_input": int(n_input),
        "n_removed": int(len(removed)),
        "removed_indices": [int(i) for i in removed],
    }

#!/usr/bin/env python3
"""
Perturbation tests: Perlin field properties, normal-direction noise, geodesic holes
"""

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from conftest import single_step, square_loop
from geometry import PointCloud, sample_surface
from perturb import (
    HoleSpec, InsufficientPointsError, NoiseSpec, PerlinNoise, PerturbationError, apply_noise,
    hole_metadata, knn_graph, perlin3, punch_holes,
)


def _sphere_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return PointCloud(pts, pts.copy())


@pytest.fixture(scope="module")
def cube_cloud():
    return sample_surface(single_step(square_loop()), n=1024, rng_seed=0)


# ---------------------------------------------------------------------------
# Perlin field
# ---------------------------------------------------------------------------

def test_noise_vanishes_on_lattice():
    lattice = np.array([[0, 0, 0], [1, 2, 3], [-4, 7, 0], [255, 256, 300]], dtype=np.float64)
    assert np.all(perlin3(lattice) == 0.0)
    assert perlin3(np.array([3.0, 1.0, 2.0])) == 0.0


def test_noise_is_deterministic_and_bounded():
    q = np.random.default_rng(1).uniform(-5, 5, (500, 3))
    a = perlin3(q, NoiseSpec(seed=4))
    assert np.array_equal(a, perlin3(q, NoiseSpec(seed=4)))
    assert not np.array_equal(a, perlin3(q, NoiseSpec(seed=5)))
    assert np.abs(a).max() <= 1.0
    assert np.abs(a).max() > 0.0


def test_noise_is_lipschitz():
    spec = NoiseSpec(octaves=4)
    rng = np.random.default_rng(2)
    q = rng.uniform(0, 8, (2000, 3))
    delta = rng.normal(size=(2000, 3))
    delta *= 1e-3 / np.linalg.norm(delta, axis=1, keepdims=True)
    diff = np.abs(perlin3(q, spec) - perlin3(q + delta, spec))
    assert diff.max() <= 20.0 * 1e-3


def test_single_octave_matches_raw_noise():
    q = np.random.default_rng(3).uniform(0, 4, (50, 3))
    raw = PerlinNoise(seed=0).noise(q)
    assert np.allclose(perlin3(q, NoiseSpec(octaves=1)), np.clip(raw, -1, 1))


def test_noise_spec_validation():
    with pytest.raises(PerturbationError):
        NoiseSpec(amplitude=-0.1)
    with pytest.raises(PerturbationError):
        NoiseSpec(octaves=0)


# ---------------------------------------------------------------------------
# Noise on clouds
# ---------------------------------------------------------------------------

def test_zero_amplitude_is_identity(cube_cloud):
    out = apply_noise(cube_cloud, NoiseSpec(amplitude=0.0))
    assert np.array_equal(out.points, cube_cloud.points)
    assert np.array_equal(out.normals, cube_cloud.normals)


def test_displacement_bounded_by_amplitude(cube_cloud):
    out = apply_noise(cube_cloud, NoiseSpec(seed=7))
    assert len(out) == len(cube_cloud)
    shift = np.linalg.norm(out.points - cube_cloud.points, axis=1)
    assert shift.max() <= 0.001 + 1e-12
    assert shift.max() > 0.0
    assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0)
    # re-estimated normals keep the input orientation
    assert np.all(np.einsum("ij,ij->i", out.normals, cube_cloud.normals) >= 0)


def test_noise_is_deterministic(cube_cloud):
    a = apply_noise(cube_cloud, NoiseSpec(amplitude=0.01, seed=3))
    b = apply_noise(cube_cloud, NoiseSpec(amplitude=0.01, seed=3))
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.normals, b.normals)


# ---------------------------------------------------------------------------
# Holes
# ---------------------------------------------------------------------------

def test_zero_ratio_is_identity():
    cloud = _sphere_cloud(500)
    out, removed = punch_holes(cloud, HoleSpec(ratio_mean=0.0, ratio_std=0.0, min_remaining=100))
    assert len(removed) == 0
    assert np.array_equal(out.points, cloud.points)


def test_defaults_keep_min_remaining():
    cloud = _sphere_cloud(8192)
    for seed in range(3):
        out, removed = punch_holes(cloud, HoleSpec(seed=seed))
        assert len(out) >= 4096
        assert len(out) + len(removed) == 8192


def test_single_hole_size_and_connectivity():
    cloud = _sphere_cloud(8192, seed=1)
    spec = HoleSpec(max_holes=1, ratio_mean=0.03, ratio_std=0.0, seed=11)
    out, removed = punch_holes(cloud, spec)
    assert len(removed) == 246
    graph = knn_graph(cloud.points, spec.knn)
    n_components, _ = connected_components(graph[removed][:, removed], directed=False)
    assert n_components == 1
    kept = np.setdiff1d(np.arange(8192), removed)
    assert np.array_equal(out.points, cloud.points[kept])


def test_holes_are_deterministic():
    cloud = _sphere_cloud(5000, seed=2)
    spec = HoleSpec(min_remaining=1000, seed=5)
    _, a = punch_holes(cloud, spec)
    _, b = punch_holes(cloud, spec)
    assert np.array_equal(a, b)


def test_removal_is_truncated_to_budget():
    cloud = _sphere_cloud(1000, seed=3)
    spec = HoleSpec(max_holes=1, ratio_mean=0.2, ratio_std=0.0, min_remaining=950)
    out, removed = punch_holes(cloud, spec)
    assert len(out) == 950 and len(removed) == 50


def test_too_few_points():
    with pytest.raises(InsufficientPointsError):
        punch_holes(_sphere_cloud(100), HoleSpec())


def test_hole_metadata():
    meta = hole_metadata(HoleSpec(seed=9), np.array([3, 1, 4]), 10)
    assert meta == {"mode": "holes", "seed": 9, "n_input": 10, "n_removed": 3,
                    "removed_indices": [3, 1, 4]}

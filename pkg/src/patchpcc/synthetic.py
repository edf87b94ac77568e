"""Synthetic clouds used by the overfit runs and tests."""

import numpy as np


def sphere_points(n, rng, radius=1.0, center=(0.0, 0.0, 0.0)):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(center, dtype=np.float64)


def torus_arc(n, rng, major=0.55, minor=0.12, center=(0.0, 0.0, 1.25), span=np.pi):
    """Half-torus in the x-z plane, standing on top of the unit sphere."""
    u = rng.uniform(0.0, span, n)
    v = rng.uniform(0.0, 2 * np.pi, n)
    ring = major + minor * np.cos(v)
    pts = np.stack([ring * np.cos(u), minor * np.sin(v), ring * np.sin(u)], axis=1)
    return pts + np.asarray(center, dtype=np.float64) - np.array([0.0, 0.0, major])


def sphere_with_handle(n=1024, seed=0, handle_fraction=0.25):
    """A unit sphere with a half-torus handle attached at the top."""
    rng = np.random.default_rng(seed)
    n_handle = int(round(n * handle_fraction))
    pts = np.concatenate([sphere_points(n - n_handle, rng), torus_arc(n_handle, rng)])
    return pts[rng.permutation(n)]


def lattice(side, spacing=1.0):
    """Regular ``side ** 3`` grid."""
    axis = np.arange(side, dtype=np.float64) * spacing
    g = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)

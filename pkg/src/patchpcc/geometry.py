"""Normalisation, sampling, neighbour search and patch handling."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

REFERENCE_POINTS = 1024  # n0 in the density rescaling


@dataclass(frozen=True)
class Transform:
    """``normalized = original * scale + offset``."""

    scale: float = 1.0
    offset: tuple = (0.0, 0.0, 0.0)

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.offset)

    def invert(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.offset)) / self.scale


@dataclass
class PointCloud:
    points: np.ndarray
    transform: Transform = field(default_factory=Transform)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)

    def denormalized(self):
        return PointCloud(self.transform.invert(self.points))


@dataclass
class PatchSet:
    """Patches gathered around decoded centroids.

    ``patches`` holds the network inputs (density-scaled, or unit-ball scaled
    in extended mode); ``relative`` the raw centroid-relative offsets and
    ``indices`` the source rows each patch point came from.
    """

    centroids: np.ndarray
    patches: np.ndarray
    relative: np.ndarray
    indices: np.ndarray
    density_factor: float = 1.0
    per_patch_scale: np.ndarray = None

    @property
    def n_patches(self):
        return len(self.centroids)

    @property
    def patch_size(self):
        return self.patches.shape[1]

    def unscale(self, patch_points):
        """Map network-domain patch points back to raw relative offsets."""
        if self.per_patch_scale is not None:
            return patch_points * self.per_patch_scale[:, None, None]
        return patch_points / self.density_factor

    def unscale_factor(self):
        """Per-patch multiplier used by ``unscale``, shaped for broadcasting."""
        if self.per_patch_scale is not None:
            return self.per_patch_scale[:, None, None]
        return np.full((self.n_patches, 1, 1), 1.0 / self.density_factor)


def normalize_cloud(cloud):
    """Centre the bounding box at (0.5, 0.5, 0.5) and fit the largest extent to 1."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("cannot normalize an empty cloud")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    center = (lo + hi) / 2.0
    tf = Transform(scale, tuple(0.5 - center * scale))
    return PointCloud(tf.apply(pts), tf)


def density_factor(n, n0=REFERENCE_POINTS):
    return float(np.cbrt(n / n0))


def density_scale(points, n, n0=REFERENCE_POINTS):
    return np.asarray(points, dtype=np.float64) * density_factor(n, n0)


def farthest_point_sample(points, m):
    """Greedy FPS from index 0; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    picked = np.empty(m, dtype=np.int64)
    picked[0] = 0
    diff = points - points[0]
    mind = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, m):
        nxt = int(np.argmax(mind))
        picked[i] = nxt
        diff = points - points[nxt]
        np.minimum(mind, np.einsum("ij,ij->i", diff, diff), out=mind)
    return picked


def random_sample(n, m, seed):
    """``m`` distinct indices out of ``range(n)``, uniformly, reproducible per seed."""
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    return np.random.default_rng(seed).choice(n, size=m, replace=False)


def knn(points, queries, k, tree=None):
    """Exact k nearest neighbours of each query, ordered by (distance, index).

    Returns ``(indices, squared_distances)`` of shape (Q, k).  Distances are
    recomputed from coordinates so they do not depend on the tree internals.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"cannot take {k} neighbours from {n} points")
    tree = tree if tree is not None else cKDTree(points)
    extra = min(n, k + 8)
    _, cand = tree.query(queries, k=extra)
    cand = np.asarray(cand).reshape(len(queries), extra)
    diff = points[cand] - queries[:, None, :]
    d2 = np.einsum("qkc,qkc->qk", diff, diff)
    order = np.lexsort((cand, d2), axis=-1)
    cand = np.take_along_axis(cand, order, axis=-1)
    d2 = np.take_along_axis(d2, order, axis=-1)
    # A tie straddling the candidate boundary can hide a lower index: redo those rows exactly.
    if extra < n:
        suspect = np.nonzero(d2[:, k - 1] >= d2[:, -1])[0]
        for q in suspect:
            full = np.einsum("ic,ic->i", points - queries[q], points - queries[q])
            row = np.lexsort((np.arange(n), full))[:extra]
            cand[q], d2[q] = row, full[row]
    return cand[:, :k], d2[:, :k]


def build_patches(points, centroids, K, n=None, n0=REFERENCE_POINTS, unit_scale=False):
    """Gather the K nearest cloud points around each decoded centroid.

    ``points`` are the normalised cloud; ``n`` (default ``len(points)``) drives
    the density factor.  With ``unit_scale`` every patch is divided by its own
    max norm instead (extended mode).
    """
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    if len(centroids) == 0:
        raise ValueError("no centroids")
    idx, _ = knn(points, centroids, K)
    relative = points[idx] - centroids[:, None, :]
    n = len(points) if n is None else n
    if unit_scale:
        scales = np.array([patch_unit_scale(p) for p in relative])
        patches = relative / scales[:, None, None]
        return PatchSet(centroids, patches, relative, idx, 1.0, scales)
    factor = density_factor(n, n0)
    return PatchSet(centroids, relative * factor, relative, idx, factor)


def patch_unit_scale(patch):
    r = float(np.sqrt(np.einsum("ij,ij->i", patch, patch).max())) if len(patch) else 0.0
    return r if r > 0 else 1.0


def patch_unit_normalize(patch):
    """Divide a centroid-relative patch by its max point norm; returns (patch, scale)."""
    patch = np.asarray(patch, dtype=np.float64)
    s = patch_unit_scale(patch)
    return patch / s, s


def reassemble_cloud(centroids, relative_outputs, transform=None):
    """Add each patch's centroid back and flatten to an (m*k, 3) cloud.

    ``relative_outputs`` must already be in raw relative units (density or
    per-patch scaling undone).  With ``transform`` the result is mapped back
    to the original frame.
    """
    centroids = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    rel = np.asarray(relative_outputs, dtype=np.float64)
    pts = (rel + centroids[:, None, :]).reshape(-1, 3)
    if transform is None:
        return PointCloud(pts)
    return PointCloud(transform.invert(pts))


def patch_count(n, K, alpha):
    return max(1, int(np.floor(alpha * n / K)))


def decoded_patch_size(K, alpha):
    return max(1, int(np.floor(K / alpha)))

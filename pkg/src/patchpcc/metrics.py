"""Distortion and uniformity metrics.

All nearest-neighbour searches are exact KD-tree queries; squared distances
are recomputed from coordinates so results match a brute-force scan.
"""

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

NORMAL_NEIGHBORS = 8


def _as_points(x):
    pts = np.asarray(getattr(x, "points", x), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("metrics need non-empty point sets")
    return pts


def nearest(reference, queries):
    """Index into ``reference`` of each query's nearest point and the squared distance."""
    _, idx = cKDTree(reference).query(queries, k=1)
    diff = queries - reference[idx]
    return idx, (diff * diff).sum(axis=1)


def chamfer(a, b):
    """Mean nearest squared distance a->b plus b->a."""
    a, b = _as_points(a), _as_points(b)
    return float(nearest(b, a)[1].mean() + nearest(a, b)[1].mean())


def mse_d1(a, b):
    """Symmetric point-to-point MSE: the worse of the two directions."""
    a, b = _as_points(a), _as_points(b)
    return float(max(nearest(b, a)[1].mean(), nearest(a, b)[1].mean()))


def estimate_normals(points, k=NORMAL_NEIGHBORS):
    """Unit normals from the covariance of each point's k nearest neighbours.

    Returns ``(normals, valid)``; ``valid`` is False where the neighbourhood
    has rank < 2 and no plane is defined.
    """
    points = _as_points(points)
    k = min(k, len(points))
    _, idx = cKDTree(points).query(points, k=k)
    idx = np.asarray(idx).reshape(len(points), k)
    return _normals_from_neighbors(points, idx)


def _normals_from_neighbors(points, idx):
    nb = points[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / idx.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    top = evals[:, -1:]
    rank = (evals > 1e-12 * np.maximum(top, 1e-300)).sum(axis=1)
    valid = (rank >= 2) & (top[:, 0] > 0)
    return evecs[:, :, 0], valid


def _plane_errors(reference, normals, valid, queries):
    idx, d2 = nearest(reference, queries)
    disp = queries - reference[idx]
    proj = (disp * normals[idx]).sum(axis=1) ** 2
    return np.where(valid[idx], proj, d2)


def mse_d2(a, b, normals_a=None, normals_b=None):
    """Symmetric point-to-plane MSE.

    Each query's displacement to its nearest reference point is projected on
    that reference point's normal; rank-deficient neighbourhoods fall back to
    the full squared distance.
    """
    a, b = _as_points(a), _as_points(b)
    na = normals_a if normals_a is not None else estimate_normals(a)
    nb = normals_b if normals_b is not None else estimate_normals(b)
    fwd = _plane_errors(b, nb[0], nb[1], a).mean()
    bwd = _plane_errors(a, na[0], na[1], b).mean()
    return float(max(fwd, bwd))


def psnr_from_mse(mse, peak=1.0):
    if peak <= 0:
        raise ValueError("PSNR peak must be positive")
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_d1(a, b, peak=1.0):
    return psnr_from_mse(mse_d1(a, b), peak)


def psnr_d2(a, b, peak=1.0):
    return psnr_from_mse(mse_d2(a, b), peak)


def self_distances(points):
    """Squared distance from each point to its nearest *other* point."""
    points = _as_points(points)
    if len(points) < 2:
        raise ValueError("self distances need at least two points")
    _, idx = cKDTree(points).query(points, k=2)
    own = np.arange(len(points))
    # with duplicates the tree may list the twin first; any other index will do
    other = np.where(idx[:, 0] != own, idx[:, 0], idx[:, 1])
    diff = points - points[other]
    return (diff * diff).sum(axis=1)


def sdv(points):
    """Population variance of the nearest-neighbour squared distances."""
    d = self_distances(points)
    return float(np.mean((d - d.mean()) ** 2))


def uniformity_coefficient(recon, source):
    """SDV(recon) / SDV(source); NaN when the source SDV is zero."""
    base = sdv(source)
    if base <= 0:
        return math.nan
    return sdv(recon) / base


@dataclass
class MetricsReport:
    chamfer: float
    d1_psnr: float
    d2_psnr: float
    sdv_source: float
    sdv_recon: float
    uc: float
    bpp: float = math.nan

    def to_line(self):
        """``name=value`` pairs in frozen field order; floats via repr (round-trippable)."""
        return " ".join(f"{f.name}={float(getattr(self, f.name))!r}" for f in fields(self))

    @classmethod
    def from_line(cls, line):
        values = dict(item.split("=", 1) for item in line.split())
        return cls(**{f.name: float(values[f.name]) for f in fields(cls)})


def evaluate(source, recon, peak=1.0, bpp=math.nan):
    source, recon = _as_points(source), _as_points(recon)
    s_sdv, r_sdv = sdv(source), sdv(recon)
    return MetricsReport(
        chamfer=chamfer(source, recon),
        d1_psnr=psnr_d1(source, recon, peak),
        d2_psnr=psnr_d2(source, recon, peak),
        sdv_source=s_sdv,
        sdv_recon=r_sdv,
        uc=(r_sdv / s_sdv) if s_sdv > 0 else math.nan,
        bpp=bpp,
    )

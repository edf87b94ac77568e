"""Cloud-level compression pipeline shared by training and the CLI."""

from dataclasses import dataclass, field

import numpy as np

from patchpcc import container as ctr
from patchpcc.entropy import ac_decode, ac_encode
from patchpcc.errors import FormatMismatchError
from patchpcc.geometry import (
    REFERENCE_POINTS, PatchSet, PointCloud, Transform, build_patches, decoded_patch_size,
    density_factor, farthest_point_sample, normalize_cloud, patch_count, random_sample,
    reassemble_cloud,
)
from patchpcc.model import dequantize, estimate_rate, quantize
from patchpcc.nn import no_grad
from patchpcc.octree import OctreeStream, octree_decode, octree_encode, select_depth

RAW_CENTROID_BITS = 96


@dataclass(frozen=True)
class CodecSettings:
    """How a cloud is divided into patches and how centroids are sent.

    ``depth`` pins the octree depth instead of deriving it from the ``roc``
    budget.  ``n_patches`` overrides ``floor(alpha * n / K)``.
    ``raw_centroids`` and ``uniform_context`` select the ablation arms.
    """

    K: int = 256
    alpha: float = 2.0
    roc: float = 0.25
    depth: int = None
    extended: bool = False
    seed: int = 0
    n_patches: int = None
    raw_centroids: bool = False
    uniform_context: bool = False
    n0: int = REFERENCE_POINTS

    @property
    def k(self):
        return decoded_patch_size(self.K, self.alpha)

    @property
    def flags(self):
        return ((ctr.FLAG_EXTENDED if self.extended else 0)
                | (ctr.FLAG_RAW_CENTROIDS if self.raw_centroids else 0)
                | (ctr.FLAG_UNIFORM_CONTEXT if self.uniform_context else 0))

    def patches_for(self, n):
        return self.n_patches if self.n_patches is not None else patch_count(n, self.K, self.alpha)


def extended_settings(**kw):
    """Settings for sparse/uneven clouds: random sampling, alpha = 6, unit-ball patches."""
    kw.setdefault("alpha", 6.0)
    return CodecSettings(extended=True, **kw)


@dataclass
class PreparedCloud:
    cloud: PointCloud              # normalised, transform attached
    settings: CodecSettings
    sample_indices: np.ndarray
    octree: OctreeStream
    patchset: PatchSet

    @property
    def n(self):
        return len(self.cloud)

    @property
    def centroids(self):
        return self.patchset.centroids

    @property
    def centroid_bits(self):
        if self.octree is None:
            return RAW_CENTROID_BITS * len(self.centroids)
        return self.octree.n_bits


def prepare(cloud, settings):
    """Normalise, sample, code/decode the centroids and build the patches.

    Patches are anchored on the *decoded* centroids, exactly as the decoder
    will see them.
    """
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    norm = normalize_cloud(cloud)
    n = len(norm)
    K = settings.K
    if not 1 <= K <= n:
        raise ValueError(f"patch size K={K} needs 1 <= K <= n={n}")
    m = settings.patches_for(n)
    if settings.extended:
        idx = random_sample(n, m, settings.seed)
    else:
        idx = farthest_point_sample(norm.points, m)
    sampled = norm.points[idx]
    if settings.raw_centroids:
        stream = None
        centroids = sampled.astype(np.float32).astype(np.float64)
    else:
        depth = settings.depth or select_depth(n, sampled, settings.roc)
        stream = octree_encode(sampled, depth)
        centroids = octree_decode(stream)
    patchset = build_patches(norm.points, centroids, K, n, settings.n0, unit_scale=settings.extended)
    if settings.extended:
        # the decoder only sees float32 scales, so normalise with those
        scales = patchset.per_patch_scale.astype(np.float32).astype(np.float64)
        patchset.per_patch_scale = scales
        patchset.patches = patchset.relative / scales[:, None, None]
    return PreparedCloud(norm, settings, idx, stream, patchset)


@dataclass
class CompressResult:
    data: bytes
    codes: np.ndarray
    estimated_rate: float          # bits per input point of the latent codes
    prepared: PreparedCloud
    sections: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.prepared.n

    @property
    def bpp(self):
        return 8 * len(self.data) / self.n

    @property
    def latent_bpp(self):
        return 8 * (self.sections["latent"] - 4) / self.n

    @property
    def centroid_bpp(self):
        return self.prepared.centroid_bits / self.n

    def summary(self):
        p = self.prepared
        return {
            "n": p.n, "patches": len(p.centroids), "K": p.settings.K, "k": p.settings.k,
            "depth": p.octree.depth if p.octree is not None else 0,
            "bytes": len(self.data), "bpp": self.bpp, "latent_bpp": self.latent_bpp,
            "centroid_bpp": self.centroid_bpp, "estimated_latent_bpp": self.estimated_rate,
        }


def check_model(model, k, d=None, levels=None):
    if model.k != k:
        raise FormatMismatchError(f"model decodes k={model.k} points per patch, stream needs k={k}")
    if d is not None and model.d != d:
        raise FormatMismatchError(f"model bottleneck d={model.d}, stream has d={d}")
    if levels is not None and model.levels != levels:
        raise FormatMismatchError(f"model has L={model.levels} levels, stream has L={levels}")


def compress(cloud, model, settings, prepared=None):
    check_model(model, settings.k)
    prep = prepared if prepared is not None else prepare(cloud, settings)
    ps = prep.patchset
    with no_grad():
        y = model.encode(ps.patches)
        pmfs = (model.uniform_pmfs(ps.n_patches) if settings.uniform_context
                else model.context_pmfs(ps.centroids)).data
    codes = quantize(y.data, model.levels)
    latent = ac_encode(codes.reshape(-1), pmfs.reshape(-1, model.levels))
    tf = prep.cloud.transform
    header = ctr.Header(prep.n, settings.K, settings.k, model.d, model.levels,
                        tf.scale, tuple(float(v) for v in tf.offset), settings.flags)
    box = ctr.Container(header, octree=prep.octree,
                        raw_centroids=ps.centroids.astype(np.float32) if settings.raw_centroids else None,
                        patch_scales=ps.per_patch_scale.astype(np.float32) if settings.extended else None,
                        latent=latent)
    data = ctr.pack(box)
    return CompressResult(data, codes, estimate_rate(codes, pmfs, prep.n), prep, box.sections())


@dataclass
class DecompressResult:
    cloud: PointCloud              # original coordinate frame
    codes: np.ndarray
    container: ctr.Container

    @property
    def header(self):
        return self.container.header


def decode_codes(box, model):
    h = box.header
    check_model(model, h.k, h.d, h.L)
    centroids = box.centroids()
    with no_grad():
        pmfs = (model.uniform_pmfs(len(centroids)) if h.uniform_context
                else model.context_pmfs(centroids)).data
    codes = ac_decode(box.latent, pmfs.reshape(-1, h.L)).reshape(len(centroids), h.d)
    return centroids, codes


def decompress(data, model):
    box = ctr.unpack(data)
    h = box.header
    centroids, codes = decode_codes(box, model)
    with no_grad():
        out = model.decode(dequantize(codes)).data
    if h.extended:
        rel = out * box.patch_scales.astype(np.float64)[:, None, None]
    else:
        rel = out / density_factor(h.n, REFERENCE_POINTS)
    cloud = reassemble_cloud(centroids, rel, Transform(h.scale, h.offset))
    return DecompressResult(cloud, codes, box)


def reconstruct_normalized(prep, model, surrogate=False):
    """Inference-path reconstruction in the normalised frame (for evaluation)."""
    with no_grad():
        fw = model.forward(prep.patchset.patches, prep.centroids, surrogate=surrogate,
                           uniform_context=prep.settings.uniform_context)
    rel = prep.patchset.unscale(fw.patches.data)
    return reassemble_cloud(prep.centroids, rel).points, fw

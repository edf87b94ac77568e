"""Compressed-cloud container (little-endian, version 1).

    magic "IPDA" | version u8 | flags u8 | n u32 | K u16 | k u16 | d u8 | L u8
    | scale f64 | offset 3 x f64
    | centroid channel | [extended: m x f32 patch scales] | latent len u32 + bytes

The centroid channel is the octree stream (depth u8, len u32, occupancy
bytes) or, with FLAG_RAW_CENTROIDS, a u32 count and m x 3 float32 points.
"""

import struct
from dataclasses import dataclass

import numpy as np

from patchpcc.errors import ContainerError, MalformedStreamError
from patchpcc.octree import OctreeStream, octree_decode, parse_stream

MAGIC = b"IPDA"
VERSION = 1

FLAG_EXTENDED = 0x01
FLAG_RAW_CENTROIDS = 0x02
FLAG_UNIFORM_CONTEXT = 0x04
_KNOWN_FLAGS = FLAG_EXTENDED | FLAG_RAW_CENTROIDS | FLAG_UNIFORM_CONTEXT

_HEADER = struct.Struct("<4sBBIHHBBdddd")
HEADER_BYTES = _HEADER.size


@dataclass(frozen=True)
class Header:
    n: int
    K: int
    k: int
    d: int
    L: int
    scale: float
    offset: tuple
    flags: int = 0

    @property
    def extended(self):
        return bool(self.flags & FLAG_EXTENDED)

    @property
    def raw_centroids(self):
        return bool(self.flags & FLAG_RAW_CENTROIDS)

    @property
    def uniform_context(self):
        return bool(self.flags & FLAG_UNIFORM_CONTEXT)


@dataclass
class Container:
    header: Header
    octree: OctreeStream = None
    raw_centroids: np.ndarray = None   # float32 (m, 3) when FLAG_RAW_CENTROIDS
    patch_scales: np.ndarray = None    # float32 (m,) when FLAG_EXTENDED
    latent: bytes = b""

    def centroids(self):
        if self.header.raw_centroids:
            return self.raw_centroids.astype(np.float64)
        return octree_decode(self.octree)

    @property
    def n_centroids(self):
        if self.header.raw_centroids:
            return len(self.raw_centroids)
        return self.octree.leaf_count

    def sections(self):
        """Byte count per section, in file order."""
        centroid = (5 + self.octree.n_bytes) if self.octree is not None else 4 + 12 * len(self.raw_centroids)
        scales = 4 * len(self.patch_scales) if self.header.extended else 0
        return {"header": HEADER_BYTES, "centroids": centroid, "patch_scales": scales,
                "latent": 4 + len(self.latent)}


def pack(container):
    h = container.header
    if h.flags & ~_KNOWN_FLAGS:
        raise ContainerError(f"unknown flag bits {h.flags:#04x}")
    try:
        parts = [_HEADER.pack(MAGIC, VERSION, h.flags, h.n, h.K, h.k, h.d, h.L,
                              h.scale, *h.offset)]
    except struct.error as exc:
        raise ContainerError(f"header field out of range: {exc}") from None
    if h.raw_centroids:
        pts = np.asarray(container.raw_centroids, dtype="<f4").reshape(-1, 3)
        parts += [struct.pack("<I", len(pts)), pts.tobytes()]
        m = len(pts)
    else:
        parts.append(container.octree.serialize())
        m = container.octree.leaf_count
    if h.extended:
        scales = np.asarray(container.patch_scales, dtype="<f4").reshape(-1)
        if len(scales) != m:
            raise ContainerError(f"{len(scales)} patch scales for {m} centroids")
        parts.append(scales.tobytes())
    parts += [struct.pack("<I", len(container.latent)), bytes(container.latent)]
    return b"".join(parts)


def unpack(data):
    data = bytes(data)
    if len(data) < HEADER_BYTES:
        raise ContainerError("file shorter than the container header")
    magic, version, flags, n, K, k, d, L, scale, ox, oy, oz = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerError("bad magic; not a compressed cloud")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if flags & ~_KNOWN_FLAGS:
        raise ContainerError(f"unknown flag bits {flags:#04x}")
    if n == 0 or K == 0 or k == 0 or d == 0 or L < 2:
        raise ContainerError("zero-sized field in header")
    if not (np.isfinite(scale) and scale > 0 and np.isfinite([ox, oy, oz]).all()):
        raise ContainerError("invalid normalisation transform")
    header = Header(n, K, k, d, L, scale, (ox, oy, oz), flags)
    pos = HEADER_BYTES
    out = Container(header)
    try:
        if header.raw_centroids:
            (m,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + 12 * m > len(data):
                raise ContainerError("truncated raw centroid section")
            out.raw_centroids = np.frombuffer(data, dtype="<f4", count=3 * m, offset=pos).reshape(m, 3).copy()
            pos += 12 * m
        else:
            out.octree, pos = parse_stream(data, pos)
            m = out.octree.leaf_count
        if header.extended:
            if pos + 4 * m > len(data):
                raise ContainerError("truncated patch scale section")
            out.patch_scales = np.frombuffer(data, dtype="<f4", count=m, offset=pos).copy()
            pos += 4 * m
            if not (np.isfinite(out.patch_scales).all() and (out.patch_scales > 0).all()):
                raise ContainerError("invalid patch scale")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
    except struct.error:
        raise ContainerError("truncated container") from None
    except MalformedStreamError as exc:
        if isinstance(exc, ContainerError):
            raise
        raise ContainerError(f"bad centroid stream: {exc}") from None
    if pos + length != len(data):
        raise ContainerError(f"latent length {length} does not match remaining {len(data) - pos} bytes")
    out.latent = data[pos:]
    return out

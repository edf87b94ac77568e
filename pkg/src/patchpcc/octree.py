"""Breadth-first occupancy-byte octree over the unit cube.

Child bit ``b = (x_hi << 2) | (y_hi << 1) | z_hi``; a coordinate equal to a
cell midpoint belongs to the upper child.  Nodes of one level are emitted in
Morton order, which is also the order decoded leaves come out in.
"""

import struct
from dataclasses import dataclass

import numpy as np

from patchpcc.errors import MalformedStreamError

MAX_DEPTH = 16


@dataclass(frozen=True)
class OctreeStream:
    depth: int
    occupancy: bytes
    leaf_count: int

    @property
    def n_bytes(self):
        return len(self.occupancy)

    @property
    def n_bits(self):
        return 8 * len(self.occupancy)

    def serialize(self):
        return struct.pack("<BI", self.depth, len(self.occupancy)) + self.occupancy


def parse_stream(data, pos=0):
    """Read ``depth u8 | length u32 | bytes`` at ``pos``; returns (stream, new_pos)."""
    if pos + 5 > len(data):
        raise MalformedStreamError("truncated octree stream header")
    depth, length = struct.unpack_from("<BI", data, pos)
    pos += 5
    if pos + length > len(data):
        raise MalformedStreamError("truncated octree occupancy bytes")
    occ = bytes(data[pos:pos + length])
    leaves = _count_leaves(occ, depth)
    return OctreeStream(depth, occ, leaves), pos + length


def _grid_coords(points, depth):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("octree: no points to encode")
    if not (depth >= 1 and depth <= MAX_DEPTH):
        raise ValueError(f"octree: depth must be in [1, {MAX_DEPTH}], got {depth}")
    if pts.min() < 0.0 or pts.max() > 1.0 or not np.isfinite(pts).all():
        raise ValueError("octree: coordinates must lie in [0, 1]")
    side = 1 << depth
    return np.minimum(np.floor(pts * side).astype(np.int64), side - 1)


def morton_codes(cells, depth):
    """Interleave integer cell coordinates, x most significant per level."""
    code = np.zeros(len(cells), dtype=np.int64)
    for level in range(depth - 1, -1, -1):
        bits = (cells >> level) & 1
        code = (code << 3) | (bits[:, 0] << 2) | (bits[:, 1] << 1) | bits[:, 2]
    return code


def morton_decode(codes, depth):
    cells = np.zeros((len(codes), 3), dtype=np.int64)
    for level in range(depth):
        triple = (codes >> (3 * level)) & 7
        cells[:, 0] |= ((triple >> 2) & 1) << level
        cells[:, 1] |= ((triple >> 1) & 1) << level
        cells[:, 2] |= (triple & 1) << level
    return cells


def octree_encode(points, depth):
    codes = np.unique(morton_codes(_grid_coords(points, depth), depth))
    out = bytearray()
    for level in range(depth):
        shift = 3 * (depth - level - 1)
        parents = codes >> (shift + 3)
        child = (codes >> shift) & 7
        # codes are sorted, so parents are grouped and already in Morton order
        starts = np.flatnonzero(np.r_[True, parents[1:] != parents[:-1]])
        occ = np.bitwise_or.reduceat(np.left_shift(1, child), starts)
        out += occ.astype(np.uint8).tobytes()
    return OctreeStream(depth, bytes(out), len(codes))


def _expand(occupancy, depth):
    data = np.frombuffer(occupancy, dtype=np.uint8)
    nodes = np.zeros(1, dtype=np.int64)
    pos = 0
    for _ in range(depth):
        if pos + len(nodes) > len(data):
            raise MalformedStreamError("octree stream truncated")
        level = data[pos:pos + len(nodes)]
        pos += len(nodes)
        if not level.all():
            raise MalformedStreamError("octree stream contains an empty occupancy byte")
        # bit b of each byte, little-endian bit order -> children in order 0..7
        bits = np.unpackbits(level[:, None], axis=1, bitorder="little").astype(bool)
        parent, child = np.nonzero(bits)
        nodes = (nodes[parent] << 3) | child
    if pos != len(data):
        raise MalformedStreamError("trailing bytes after octree leaves")
    return nodes


def _count_leaves(occupancy, depth):
    if not 1 <= depth <= MAX_DEPTH:
        raise MalformedStreamError(f"octree depth {depth} out of range")
    return len(_expand(occupancy, depth))


def octree_decode(stream):
    """Leaf voxel centres in breadth-first (Morton) order."""
    if not 1 <= stream.depth <= MAX_DEPTH:
        raise MalformedStreamError(f"octree depth {stream.depth} out of range")
    codes = _expand(stream.occupancy, stream.depth)
    cells = morton_decode(codes, stream.depth)
    return (cells + 0.5) / float(1 << stream.depth)


def encoded_size(points, depth):
    """Occupancy byte count of ``octree_encode(points, depth)`` without building it."""
    codes = np.unique(morton_codes(_grid_coords(points, depth), depth))
    return int(sum(len(np.unique(codes >> (3 * (depth - level)))) for level in range(depth)))


def select_depth(n, centroids, budget_bpp):
    """Deepest tree whose occupancy bits fit in ``budget_bpp * n``; at least 1."""
    if budget_bpp <= 0:
        raise ValueError("octree bit budget must be positive")
    budget_bits = budget_bpp * n
    best = 1
    for depth in range(1, MAX_DEPTH + 1):
        if 8 * encoded_size(centroids, depth) <= budget_bits:
            best = depth
        else:
            break  # byte count is monotone in depth
    return best

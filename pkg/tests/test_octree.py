import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from patchpcc.errors import MalformedStreamError
from patchpcc.octree import (
    OctreeStream, encoded_size, octree_decode, octree_encode, parse_stream, select_depth,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
clouds = arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=unit)


def _reference_encode(points, depth):
    """Recursive brute-force construction, independent of the Morton implementation."""
    levels = [[] for _ in range(depth)]

    def visit(pts, lo, size, level):
        if level == depth:
            return
        half = size / 2
        mid = lo + half
        byte = 0
        groups = []
        for b in range(8):
            sel = np.ones(len(pts), dtype=bool)
            for axis, bit in enumerate(((b >> 2) & 1, (b >> 1) & 1, b & 1)):
                upper = pts[:, axis] >= mid[axis]
                sel &= upper if bit else ~upper
            if sel.any():
                byte |= 1 << b
                off = np.array([(b >> 2) & 1, (b >> 1) & 1, b & 1]) * half
                groups.append((pts[sel], lo + off))
        levels[level].append(byte)
        for sub, sub_lo in groups:
            visit(sub, sub_lo, half, level + 1)

    visit(np.asarray(points, dtype=float), np.zeros(3), 1.0, 0)
    # depth-first visiting order within a level is the breadth-first node order
    return bytes(b for lvl in levels for b in lvl)


def test_single_point_depth1():
    s = octree_encode([[0.1, 0.1, 0.1]], 1)
    assert s.occupancy == bytes([0b00000001])
    np.testing.assert_array_equal(octree_decode(s), [[0.25, 0.25, 0.25]])


def test_opposite_corners():
    pts = [[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]
    assert octree_encode(pts, 1).occupancy == bytes([0b10000001])
    assert octree_encode(pts, 2).occupancy == bytes([0b10000001, 0b00000001, 0b10000000])


def test_midpoint_goes_up():
    assert octree_encode([[0.5, 0.0, 0.0]], 1).occupancy == bytes([0b00010000])
    assert octree_encode([[1.0, 1.0, 1.0]], 3).occupancy == bytes([0x80, 0x80, 0x80])


def test_duplicates_merge():
    s = octree_encode([[0.3, 0.3, 0.3], [0.31, 0.3, 0.3]], 2)
    assert s.leaf_count == 1 and len(octree_decode(s)) == 1


def test_empty_rejected():
    with pytest.raises(ValueError):
        octree_encode(np.zeros((0, 3)), 2)


@settings(max_examples=80, deadline=None)
@given(clouds, st.integers(1, 6))
def test_matches_recursive_reference(pts, depth):
    assert octree_encode(pts, depth).occupancy == _reference_encode(pts, depth)


@settings(max_examples=80, deadline=None)
@given(clouds, st.integers(1, 10))
def test_roundtrip_bound(pts, depth):
    s = octree_encode(pts, depth)
    dec = octree_decode(s)
    bound = np.sqrt(3) * 2.0 ** (-depth - 1) + 1e-12
    d = np.linalg.norm(dec[:, None] - pts[None], axis=-1)
    assert d.min(axis=1).max() <= bound
    assert d.min(axis=0).max() <= bound
    assert len(dec) == s.leaf_count <= len(pts)
    assert all(b != 0 for b in s.occupancy)
    assert octree_encode(pts, depth) == s
    assert encoded_size(pts, depth) == s.n_bytes


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_size_monotone_in_depth(pts):
    sizes = [encoded_size(pts, d) for d in range(1, 12)]
    assert sizes == sorted(sizes)


def test_distinct_leaves_keep_count():
    pts = (np.arange(8)[:, None] + 0.5) / 8 * np.ones(3)
    assert octree_encode(pts, 3).leaf_count == 8


def test_select_depth_examples():
    assert select_depth(8192, np.array([[0.3, 0.6, 0.9]]), 0.07) == 16
    many = np.random.default_rng(0).uniform(size=(200, 3))
    assert select_depth(10, many, 0.07) == 1


@settings(max_examples=40, deadline=None)
@given(clouds, st.sampled_from([0.07, 0.125, 0.25, 0.5, 1.0]), st.integers(500, 20000))
def test_select_depth_is_largest_fitting(pts, budget, n):
    d = select_depth(n, pts, budget)
    fits = [8 * encoded_size(pts, k) <= budget * n for k in range(1, 17)]
    if fits[0]:
        assert fits[d - 1]
        assert d == 16 or not fits[d]
    else:
        assert d == 1


def test_stream_serialization_and_malformed():
    s = octree_encode(np.random.default_rng(2).uniform(size=(20, 3)), 4)
    blob = s.serialize()
    back, pos = parse_stream(blob)
    assert back == s and pos == len(blob)
    with pytest.raises(MalformedStreamError):
        parse_stream(blob[:-1])
    with pytest.raises(MalformedStreamError):
        octree_decode(OctreeStream(s.depth, s.occupancy[:-1], s.leaf_count))
    with pytest.raises(MalformedStreamError):
        octree_decode(OctreeStream(s.depth, b"\x00" + s.occupancy[1:], s.leaf_count))
    with pytest.raises(MalformedStreamError):
        octree_decode(OctreeStream(s.depth, s.occupancy + b"\x01", s.leaf_count))
    with pytest.raises(MalformedStreamError):
        octree_decode(OctreeStream(0, s.occupancy, s.leaf_count))

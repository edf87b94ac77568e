"""Reading and writing ASCII PLY and XYZ point clouds."""

import os

import numpy as np

from patchpcc.errors import CloudParseError
from patchpcc.geometry import PointCloud

_PLY_TYPES = {"char", "uchar", "short", "ushort", "int", "uint", "float", "double",
              "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64"}


def parse_cloud(path):
    """Load a cloud from an ASCII ``.ply`` or a whitespace separated ``.xyz`` file.

    PLY is detected from the ``ply`` magic line rather than the extension.
    Vertex properties other than x, y and z are ignored.
    """
    try:
        with open(path, "r", encoding="ascii", errors="strict") as fh:
            lines = fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise CloudParseError("file is not ASCII (binary PLY is not supported)", path=path) from exc
    if lines and lines[0].strip() == "ply":
        points = _parse_ply(lines, path)
    else:
        points = _parse_xyz(lines, path)
    return PointCloud(points)


def _parse_xyz(lines, path, start=0):
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if len(fields) < 3:
            raise CloudParseError(f"expected 3 coordinates, found {len(fields)}", lineno, path)
        rows.append(_floats(fields[:3], lineno, path))
    if not rows:
        raise CloudParseError("no points found", path=path)
    return np.array(rows, dtype=np.float64)


def _floats(fields, lineno, path):
    try:
        values = [float(f) for f in fields]
    except ValueError:
        raise CloudParseError(f"non-numeric field in {' '.join(fields)!r}", lineno, path) from None
    if not all(np.isfinite(values)):
        raise CloudParseError("non-finite coordinate", lineno, path)
    return values


def _parse_ply(lines, path):
    count = None
    props = []
    in_vertex = False
    elements_before = []      # (count, n_props) of elements preceding 'vertex'
    current = None
    end = None
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if not fields:
            continue
        key = fields[0]
        if key == "format":
            if len(fields) < 2 or fields[1] != "ascii":
                raise CloudParseError(f"unsupported PLY format {' '.join(fields[1:])!r}", lineno, path)
        elif key in ("comment", "obj_info"):
            continue
        elif key == "element":
            if len(fields) != 3:
                raise CloudParseError("malformed element line", lineno, path)
            try:
                n_el = int(fields[2])
            except ValueError:
                raise CloudParseError(f"bad element count {fields[2]!r}", lineno, path) from None
            in_vertex = fields[1] == "vertex"
            if in_vertex:
                count = n_el
            elif count is None:
                current = [n_el, 0]
                elements_before.append(current)
        elif key == "property":
            if len(fields) < 3:
                raise CloudParseError("malformed property line", lineno, path)
            if fields[1] == "list":
                if in_vertex:
                    raise CloudParseError("list properties on vertices are not supported", lineno, path)
            elif fields[1] not in _PLY_TYPES:
                raise CloudParseError(f"unknown property type {fields[1]!r}", lineno, path)
            if in_vertex:
                props.append(fields[-1])
            elif count is None and current is not None:
                current[1] += 1
        elif key == "end_header":
            end = lineno
            break
        else:
            raise CloudParseError(f"unexpected header keyword {key!r}", lineno, path)
    if end is None:
        raise CloudParseError("missing end_header", path=path)
    if count is None:
        raise CloudParseError("no vertex element", path=path)
    missing = [a for a in "xyz" if a not in props]
    if missing:
        raise CloudParseError(f"vertex element lacks properties {missing}", path=path)
    if count == 0:
        raise CloudParseError("vertex element has zero points", path=path)
    cols = [props.index(a) for a in "xyz"]

    body = [(i, lines[i - 1].split()) for i in range(end + 1, len(lines) + 1)]
    body = [(i, f) for i, f in body if f]
    skip = sum(c for c, _ in elements_before)
    if len(body) < skip + count:
        raise CloudParseError(f"header declares {count} vertices, file has {max(len(body) - skip, 0)}",
                              path=path)
    points = np.empty((count, 3))
    for row, (lineno, fields) in enumerate(body[skip:skip + count]):
        if len(fields) != len(props):
            raise CloudParseError(f"expected {len(props)} vertex fields, found {len(fields)}", lineno, path)
        points[row] = _floats([fields[c] for c in cols], lineno, path)
    return points


def write_cloud(path, cloud, fmt=None):
    """Write ``cloud`` as XYZ (default) or ASCII PLY, chosen by ``fmt`` or the extension.

    Coordinates are written with ``repr`` so XYZ files roundtrip exactly.
    """
    points = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    if fmt is None:
        fmt = "ply" if os.fspath(path).lower().endswith(".ply") else "xyz"
    rows = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist())
    with open(path, "w", encoding="ascii") as fh:
        if fmt == "ply":
            fh.write("ply\nformat ascii 1.0\n"
                     f"element vertex {len(points)}\n"
                     "property double x\nproperty double y\nproperty double z\nend_header\n")
        elif fmt != "xyz":
            raise ValueError(f"unknown cloud format {fmt!r}")
        fh.write(rows)

"""Weight file I/O.

Layout (little-endian): magic ``IPDW``, version byte, u32 tensor count, then
per tensor a u32 rank, u32 extents and float32 values.
"""

import struct

import numpy as np

from patchpcc.errors import FormatMismatchError

MAGIC = b"IPDW"
VERSION = 1


def dump_weights(arrays):
    out = [MAGIC, struct.pack("<BI", VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a)
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.astype("<f4").tobytes())
    return b"".join(out)


def load_weights(data):
    """Parse weight-file bytes into float64 arrays."""
    if data[:4] != MAGIC:
        raise FormatMismatchError("not a weight file (bad magic)")
    if len(data) < 9:
        raise FormatMismatchError("truncated weight file header")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise FormatMismatchError(f"unsupported weight file version {version}")
    pos = 9
    arrays = []
    try:
        for _ in range(count):
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise FormatMismatchError("truncated weight tensor")
            values = np.frombuffer(data, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            arrays.append(values.astype(np.float64).reshape(shape))
    except struct.error as exc:
        raise FormatMismatchError(f"truncated weight file: {exc}") from None
    if pos != len(data):
        raise FormatMismatchError("trailing bytes after last weight tensor")
    return arrays


def save_weights(path, arrays):
    with open(path, "wb") as fh:
        fh.write(dump_weights(arrays))


def read_weights(path):
    with open(path, "rb") as fh:
        return load_weights(fh.read())

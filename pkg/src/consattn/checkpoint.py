"""Flat binary checkpoint files for named float64 arrays.

Layout (all integers little-endian):

    magic    4 bytes  b"VCFK"
    version  u32
    count    u32      number of entries
    entry*   count times:
        name_len  u16
        name      UTF-8 bytes
        rank      u8
        extents   rank x u64
        payload   row-major float64 (little-endian)

Entries are written in sorted-name order so save -> load -> save is
byte-identical.
"""

import struct

import numpy as np

MAGIC = b"VCFK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, arrays):
    """Write a mapping of name -> float64 ndarray (rank <= 3)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.ndim:
                arr = np.ascontiguousarray(arr)  # keeps 0-d scalars rank 0
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load(path):
    """Read a checkpoint back into {name: ndarray}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = tuple(struct.unpack_from("<" + "Q" * rank, blob, off)) if rank else ()
        off += 8 * rank
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = arr.astype(np.float64)
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes after last entry")
    return out

"""Binary checkpoint format: named float64 arrays, bit-exact round-trip.

Layout: magic ``CCKP`` + version byte + u32 record count, then per record a
u16-length UTF-8 name, u8 rank, u32 dims, and the little-endian f64 payload.
Shared parameters appear once (one record per distinct Parameter).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CCKP"
VERSION = 1


def save_arrays(path: str, named: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path!r} is not a checkpoint file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        named: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
            payload = fh.read(n_bytes)
            named[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        return named

"""Parameter/input blob format shared by the CLI, the simulator dumps and the
emitted C programs.

Layout: magic ``CGW1``, then records of (u32 LE name length, name bytes,
u64 LE payload length, payload).  A JSON sidecar index (name -> offset/bytes)
is written next to blobs produced by the CLI for tooling convenience.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CGW1"


class BlobError(ValueError):
    pass


def write_blob(path, arrays: Mapping[str, np.ndarray], sidecar: bool = True) -> None:
    path = Path(path)
    index = {}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays.items():
            payload = np.ascontiguousarray(arr).tobytes()
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", len(payload)))
            index[name] = {"offset": fh.tell(), "bytes": len(payload),
                           "dtype": str(arr.dtype), "shape": list(arr.shape)}
            fh.write(payload)
    if sidecar:
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=2)


def read_blob(path) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BlobError(f"{path}: bad magic {data[:4]!r}")
    pos = 4
    while pos < len(data):
        if pos + 4 > len(data):
            raise BlobError(f"{path}: truncated record header")
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (plen,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + plen > len(data):
            raise BlobError(f"{path}: truncated payload for {name!r}")
        out[name] = data[pos:pos + plen]
        pos += plen
    return out


def read_blob_arrays(path, dtype) -> dict[str, np.ndarray]:
    return {name: np.frombuffer(payload, dtype=dtype)
            for name, payload in read_blob(path).items()}

"""Binary checkpoint container.

Layout (all integers little-endian uint32 unless noted):

    magic bytes  b"RFL3DCKPT1"
    format version
    config text: byte length (uint64) + UTF-8 payload
    parameter count
    per parameter: name length + name bytes, rank, dims..., float32
    payload (little-endian, row-major)

The config text is the flat key=value run configuration echoed at save
time; the vocabulary rides along in it as a space-joined token list.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFL3DCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, config_text: str, params: dict[str, np.ndarray]) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    cfg = config_text.encode("utf-8")
    blob += struct.pack("<Q", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(params))
    for name, arr in params.items():
        payload = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<I", payload.ndim)
        for d in payload.shape:
            blob += struct.pack("<I", d)
        blob += payload.tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError("truncated checkpoint")
        chunk = raw[off:off + n]
        off += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<Q", take(8))
    config_text = take(cfg_len).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack("<" + "I" * rank, take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).copy()
        params[name] = arr
    if off != len(raw):
        raise CheckpointError("trailing bytes after last parameter")
    return config_text, params

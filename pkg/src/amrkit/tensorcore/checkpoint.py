"""Binary parameter checkpoints ("AMRW").

Layout, little-endian::

    b"AMRW" | count u32 | count x (name_len u16 | utf-8 name | rank u8 |
                                   dims u32 x rank | float32 values)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError, WriteError

MAGIC = b"AMRW"


def encode_state(state: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, value in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_state(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise FormatError("not an AMRW checkpoint (bad magic)")
    (count,) = struct.unpack_from("<I", blob, 4)
    pos = 8
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            state[name] = values.reshape(dims).astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated AMRW checkpoint: {exc}") from None
    if pos != len(blob):
        raise FormatError(f"AMRW checkpoint has {len(blob) - pos} trailing bytes")
    return state


def save_state(state: Mapping[str, np.ndarray], path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_state(state))
    except OSError as exc:
        raise WriteError(f"cannot write checkpoint: {exc}", path=str(path)) from exc
    return path


def load_state(path) -> "OrderedDict[str, np.ndarray]":
    return decode_state(Path(path).read_bytes())

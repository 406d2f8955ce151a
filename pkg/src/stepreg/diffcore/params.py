"""Named parameter collections and their binary file format.

File layout (all integers little-endian u32): magic "AMRW", format version,
then per tensor: name length, utf-8 name, rank, dims, raw float32 values;
a CRC32 of everything before it closes the file.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .tensor import Tensor

MAGIC = b"AMRW"
FORMAT_VERSION = 1


class ParameterSet:
    """Ordered name -> Tensor mapping with gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def subset(self, prefix: str) -> dict:
        """Tensors under 'prefix.' keyed by the remainder of the name."""
        out = {}
        for name, t in self._params.items():
            if name.startswith(prefix + "."):
                out[name[len(prefix) + 1:]] = t
        return out

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def copy(self) -> "ParameterSet":
        ps = ParameterSet()
        for name, t in self._params.items():
            ps.add(name, t.data.copy())
        return ps

    def arrays(self) -> dict:
        return {name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays: dict):
        for name, t in self._params.items():
            if name not in arrays:
                raise ValueError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr


def write_tensor_file(path, items: dict):
    """Write named arrays in the AMRW format (values stored as float32)."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in items.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_tensor_file(path) -> dict:
    """Read an AMRW file back into an ordered name -> float64 array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ValueError("not an AMRW parameter file")
    payload, crc_bytes = blob[:-4], blob[-4:]
    (crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ValueError("parameter file checksum mismatch")
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    pos = 8
    out = {}
    while pos < len(payload):
        (name_len,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        name = payload[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", payload, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(payload, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        out[name] = values.reshape(dims).astype(np.float64)
    return out

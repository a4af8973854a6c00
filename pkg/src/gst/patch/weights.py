"""Named-tensor weight store and its ``GSW1`` file format.

File layout (little-endian)::

    b"GSW1"
    repeated until EOF:
        u32 name_length, name (UTF-8), u32 rank, rank x u32 dims, f32 data
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from gst.errors import FormatError, InputError

MAGIC = b"GSW1"


class WeightStore(Mapping):
    """Read-only mapping of tensor name -> float32 array."""

    def __init__(self, tensors: Mapping):
        self._tensors = {}
        for name, value in tensors.items():
            arr = np.array(value, dtype=np.float32, copy=True)
            arr.setflags(write=False)
            self._tensors[str(name)] = arr

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"weight tensor {name!r} not found") from None

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def get64(self, name: str) -> np.ndarray:
        return self[name].astype(np.float64)

    def expect(self, name: str, shape: tuple) -> np.ndarray:
        if name not in self._tensors:
            raise InputError(f"weight tensor {name!r} not found")
        arr = self[name]
        if arr.shape != tuple(shape):
            raise InputError(f"weight {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        return arr.astype(np.float64)

    def save(self, path) -> None:
        chunks = [MAGIC]
        for name in sorted(self._tensors):
            arr = self._tensors[name]
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)) + raw)
            chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            chunks.append(arr.astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "WeightStore":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise FormatError(path, "bad magic, expected GSW1", 0)
        pos = 4
        tensors = {}

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise FormatError(path, f"truncated: need {n} bytes", pos)
            out = data[pos : pos + n]
            pos += n
            return out

        while pos < len(data):
            (name_len,) = struct.unpack("<I", take(4))
            try:
                name = take(name_len).decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError(path, "tensor name is not UTF-8", pos - name_len) from None
            (rank,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
            if name in tensors:
                raise FormatError(path, f"duplicate tensor {name!r}", pos)
            tensors[name] = arr
        return cls(tensors)


def random_matrix(rng: np.random.Generator, rows: int, cols: int, fan_in: int | None = None):
    scale = 1.0 / np.sqrt(fan_in if fan_in else cols)
    return (rng.standard_normal((rows, cols)) * scale).astype(np.float32)

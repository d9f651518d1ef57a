"""Named parameter collections, seeded initialisation and checkpoint I/O."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

MAGIC = b"STTK"
VERSION = 1


class ParameterSet:
    """Ordered map from dotted parameter path to a trainable tensor."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = int(seed)
        self._tensors: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def add(self, name: str, values) -> Tensor:
        if name in self._tensors:
            raise ContractError(f"duplicate parameter {name!r}")
        t = Tensor(values, requires_grad=True)
        self._tensors[name] = t
        return t

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        """Draw from U[-s, s] with s = 1/sqrt(fan_in).

        Each tensor gets its own generator keyed on (seed, name) so adding a
        parameter elsewhere never shifts the values of existing ones.
        """
        rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
        s = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-s, s, size=shape))

    def set(self, name: str, values) -> None:
        t = self._tensors[name]
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != t.shape:
            raise ContractError(f"{name}: shape {arr.shape} != {t.shape}")
        t.data = arr.copy()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def copy(self) -> ParameterSet:
        out = ParameterSet(self.seed)
        for name, t in self._tensors.items():
            out.add(name, t.data)
        return out

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def merge(self, other: ParameterSet) -> None:
        for name, t in other.items():
            self.add(name, t.data)


def save_checkpoint(params: ParameterSet, path: str | Path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(t.data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path, seed: int = 0) -> ParameterSet:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    params = ParameterSet(seed)
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        params.add(name, values.astype(np.float64))
    if pos != len(buf):
        raise ContractError(f"{path}: {len(buf) - pos} trailing bytes")
    return params

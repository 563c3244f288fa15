"""Discrepancy-map banks, the append-only task memory, and the DDMB file
format.

DDMB layout (all little-endian)::

    b"DDMB" | version u32 | bank count u32
    per bank: task_id u32 | K u32 | rank u32 | dims u64 * rank | K * prod(dims) f64
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import FormatError, read_exact, as_tensor, encode_shape, read_payload, read_shape

MEMORY_MAGIC = b"DDMB"
MEMORY_VERSION = 1


@dataclass(frozen=True)
class DdmBank:
    task_id: int
    maps: np.ndarray  # [K, *map_shape]

    def __post_init__(self):
        maps = as_tensor(self.maps, "maps")
        if maps.ndim < 2 or maps.shape[0] < 1:
            raise ValueError("a bank needs at least one map")
        if self.task_id < 0:
            raise ValueError("task_id must be non-negative")
        object.__setattr__(self, "maps", maps)

    @property
    def K(self) -> int:
        return self.maps.shape[0]

    @property
    def map_shape(self) -> tuple[int, ...]:
        return self.maps.shape[1:]

    def frozen(self) -> "DdmBank":
        maps = np.array(self.maps, copy=True)
        maps.flags.writeable = False
        return DdmBank(self.task_id, maps)


@dataclass(frozen=True)
class Memory:
    banks: tuple[DdmBank, ...] = ()

    def __len__(self) -> int:
        return len(self.banks)

    @property
    def task_ids(self) -> list[int]:
        return [b.task_id for b in self.banks]


def memory_append(memory: Memory, bank: DdmBank) -> Memory:
    """New memory with ``bank`` frozen and appended; ``memory`` is untouched."""
    if memory.banks and bank.task_id <= memory.banks[-1].task_id:
        raise ValueError(
            f"task_id {bank.task_id} must exceed the last stored id {memory.banks[-1].task_id}")
    if memory.banks and bank.map_shape != memory.banks[0].map_shape:
        raise ValueError("all banks must share one map shape")
    return Memory(memory.banks + (bank.frozen(),))


def memory_to_bytes(memory: Memory) -> bytes:
    out = [MEMORY_MAGIC, struct.pack("<II", MEMORY_VERSION, len(memory.banks))]
    for bank in memory.banks:
        out.append(struct.pack("<II", bank.task_id, bank.K))
        out.append(encode_shape(bank.map_shape))
        out.append(bank.maps.astype("<f8").tobytes(order="C"))
    return b"".join(out)


def memory_from_bytes(data: bytes) -> Memory:
    fh = io.BytesIO(data)
    magic = fh.read(4)
    if magic != MEMORY_MAGIC:
        raise FormatError(f"bad memory magic {magic!r}, expected {MEMORY_MAGIC!r}")
    version, count = struct.unpack("<II", read_exact(fh, 8, "memory header"))
    if version != MEMORY_VERSION:
        raise FormatError(f"unsupported memory version {version}")
    memory = Memory()
    for _ in range(count):
        task_id, k = struct.unpack("<II", read_exact(fh, 8, "bank header"))
        shape = read_shape(fh)
        maps = read_payload(fh, (k,) + shape)
        try:
            memory = memory_append(memory, DdmBank(task_id, maps))
        except ValueError as exc:
            raise FormatError(f"invalid bank in memory file: {exc}") from exc
    if fh.read(1):
        raise FormatError("trailing bytes after memory payload")
    return memory


def save_memory(memory: Memory, path) -> None:
    with open(path, "wb") as fh:
        fh.write(memory_to_bytes(memory))


def load_memory(path) -> Memory:
    with open(path, "rb") as fh:
        return memory_from_bytes(fh.read())

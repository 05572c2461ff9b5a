"""Row-index bitsets backed by Python integers.

Bit ``i`` of the integer is set when row ``i`` belongs to the set.  CPython
stores big integers as arrays of machine digits, so ``&``, ``|`` and
``int.bit_count`` run as tight word loops in C.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np


def from_bool(mask: np.ndarray) -> int:
    """Pack a 1-D boolean array into an integer bitset."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0
    packed = np.packbits(mask, bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def to_bool(bits: int, n: int) -> np.ndarray:
    nbytes = (n + 7) // 8
    raw = np.frombuffer(bits.to_bytes(nbytes, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].astype(bool)


def from_indices(indices: Iterable[int]) -> int:
    bits = 0
    for i in indices:
        bits |= 1 << i
    return bits


def indices(bits: int) -> Iterator[int]:
    """Yield set bit positions in increasing order."""
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


def full(n: int) -> int:
    return (1 << n) - 1


def popcount(bits: int) -> int:
    return bits.bit_count()


@dataclass(frozen=True)
class CoverageSet:
    """A set of row indices out of a universe of ``n`` rows."""

    bits: int
    n: int
    count: int = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "count", self.bits.bit_count())

    @classmethod
    def all(cls, n: int) -> "CoverageSet":
        return cls(full(n), n)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "CoverageSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(from_bool(mask), mask.size)

    @classmethod
    def from_indices(cls, idx: Iterable[int], n: int) -> "CoverageSet":
        return cls(from_indices(idx), n)

    def __len__(self) -> int:
        return self.count

    def __contains__(self, i: int) -> bool:
        return bool(self.bits >> i & 1)

    def __iter__(self) -> Iterator[int]:
        return indices(self.bits)

    def __and__(self, other: "CoverageSet") -> "CoverageSet":
        return CoverageSet(self.bits & other.bits, self.n)

    def __or__(self, other: "CoverageSet") -> "CoverageSet":
        return CoverageSet(self.bits | other.bits, self.n)

    def __sub__(self, other: "CoverageSet") -> "CoverageSet":
        return CoverageSet(self.bits & ~other.bits, self.n)

    def issubset(self, other: "CoverageSet") -> bool:
        return self.bits & ~other.bits == 0

    def to_mask(self) -> np.ndarray:
        return to_bool(self.bits, self.n)

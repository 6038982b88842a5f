"""Unitary DFT matrices over the scan axes and the outer-product streaming transform.

The 2-D scan transform is ``F_2D = F_y (x) F_x`` (Kronecker product) acting on
row-major flattened scan indices. Only single columns of it are ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def dft_matrix(m: int) -> np.ndarray:
    """Unitary ``m x m`` DFT matrix with entry ``(f, x) = exp(-2 pi i f x / m) / sqrt(m)``."""
    if m < 1:
        raise ValueError(f"DFT size must be at least 1, got {m}")
    k = np.arange(m)
    # reduce f*x mod m before scaling so large m keeps full phase accuracy
    return np.exp(-2j * np.pi * (np.outer(k, k) % m) / m) / np.sqrt(m)


@dataclass(frozen=True, eq=False)
class DftPair:
    F_y: np.ndarray
    F_x: np.ndarray

    @classmethod
    def for_scan(cls, scan_shape: tuple[int, int]) -> "DftPair":
        return cls(dft_matrix(scan_shape[0]), dft_matrix(scan_shape[1]))

    @property
    def scan_shape(self) -> tuple[int, int]:
        return (self.F_y.shape[0], self.F_x.shape[0])

    @property
    def size(self) -> int:
        return self.F_y.shape[0] * self.F_x.shape[0]


def f2d_column(pair: DftPair, s: int) -> np.ndarray:
    """Column ``s`` of ``F_y (x) F_x``, as a flat vector in natural frequency order."""
    sy, sx = pair.scan_shape
    if not 0 <= s < sy * sx:
        raise IndexError(f"scan index {s} out of range for scan {pair.scan_shape}")
    iy, ix = divmod(int(s), sx)
    return np.outer(pair.F_y[:, iy], pair.F_x[:, ix]).ravel()


class StreamingTransform:
    """Accumulates ``F_2D @ I`` one row ``i_s`` of ``I`` at a time.

    Each call to :meth:`add` adds the outer product ``f_s i_s^T``. Missing or
    duplicated scan indices are reported by :meth:`finalize`.
    """

    def __init__(self, pair: DftPair, width: int, dtype=complex):
        self.pair = pair
        self.width = int(width)
        self.buffer = np.zeros((pair.size, self.width), dtype=dtype)
        self.counts = np.zeros(pair.size, dtype=np.int64)

    def add(self, s: int, row) -> None:
        row = np.asarray(row).reshape(-1)
        if row.size != self.width:
            raise ValueError(f"row has length {row.size}, expected {self.width}")
        self.buffer += np.outer(f2d_column(self.pair, s), row)
        self.counts[s] += 1

    def merge(self, other: "StreamingTransform") -> "StreamingTransform":
        if other.pair.scan_shape != self.pair.scan_shape or other.width != self.width:
            raise ValueError("cannot merge transforms of different shape")
        out = StreamingTransform(self.pair, self.width, self.buffer.dtype)
        out.buffer = self.buffer + other.buffer
        out.counts = self.counts + other.counts
        return out

    def finalize(self) -> np.ndarray:
        duplicated = np.flatnonzero(self.counts > 1)
        missing = np.flatnonzero(self.counts == 0)
        if duplicated.size or missing.size:
            raise ValueError(
                f"incomplete stream: {missing.size} missing (first {missing[:5].tolist()}), "
                f"{duplicated.size} duplicated (first {duplicated[:5].tolist()})"
            )
        return self.buffer.copy()


def streaming_transform(frames, pair: DftPair) -> np.ndarray:
    """``F_2D @ I`` from an iterable of ``(s, i_s)`` pairs in any order."""
    acc = None
    for s, row in frames:
        if acc is None:
            acc = StreamingTransform(pair, np.size(row))
        acc.add(s, row)
    if acc is None:
        raise ValueError("no frames given")
    return acc.finalize()

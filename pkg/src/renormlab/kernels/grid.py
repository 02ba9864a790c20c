"""Scalar fields on centred uniform lattices."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

_MAGIC = b"GRDF"
_VERSION = 1


@dataclass
class GridField:
    """Values at center + h*k for integer k with |k_i| <= m_i (odd extent per axis)."""

    values: np.ndarray
    center: np.ndarray
    h: float
    level: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64).reshape(self.values.ndim)
        if any(n % 2 == 0 for n in self.values.shape):
            raise ValueError(f"grid extents must be odd, got {self.values.shape}")
        if not self.h > 0:
            raise ValueError("spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def half_counts(self) -> tuple[int, ...]:
        return tuple((n - 1) // 2 for n in self.values.shape)

    @property
    def half_widths(self) -> np.ndarray:
        return self.h * np.asarray(self.half_counts, dtype=float)

    @classmethod
    def sample(
        cls, fn: Callable[[np.ndarray], np.ndarray], center, half_width, h: float, level: int | None = None
    ) -> "GridField":
        """Sample ``fn(points (N, d)) -> (N,)`` on the grid covering the given cube."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        d = center.size
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (d,))
        counts = tuple(int(math.floor(w / h + 1e-9)) for w in hw)
        shape = tuple(2 * m + 1 for m in counts)
        pts = grid_points(center, counts, h)
        vals = np.asarray(fn(pts), dtype=float).reshape(shape)
        return cls(vals, center, h, level)

    @classmethod
    def constant(cls, c: float, center, half_width, h: float) -> "GridField":
        return cls.sample(lambda p: np.full(len(p), float(c)), center, half_width, h)

    def axes(self) -> list[np.ndarray]:
        return [self.center[i] + self.h * np.arange(-m, m + 1) for i, m in enumerate(self.half_counts)]

    def points(self) -> np.ndarray:
        return grid_points(self.center, self.half_counts, self.h)

    def index_of(self, x) -> tuple[int, ...]:
        """Array index of grid point ``x``; raises if ``x`` is not on the grid."""
        x = np.asarray(x, dtype=float).reshape(self.d)
        k = (x - self.center) / self.h
        kr = np.rint(k)
        if np.any(np.abs(k - kr) > 1e-6) or np.any(np.abs(kr) > np.asarray(self.half_counts)):
            raise ValueError(f"{x} is not a point of this grid")
        return tuple(int(v) + m for v, m in zip(kr, self.half_counts))

    def value_at(self, x) -> float:
        return float(self.values[self.index_of(x)])

    def at_center(self) -> float:
        return float(self.values[self.half_counts])

    def crop(self, half_counts) -> "GridField":
        """Centred sub-grid with the given half counts per axis."""
        hc = np.broadcast_to(np.asarray(half_counts, dtype=int), (self.d,))
        cur = self.half_counts
        if np.any(hc > np.asarray(cur)) or np.any(hc < 0):
            raise ValueError(f"cannot crop half counts {cur} to {tuple(hc)}")
        sl = tuple(slice(c - k, c + k + 1) for c, k in zip(cur, hc))
        return GridField(self.values[sl].copy(), self.center, self.h, self.level)

    def shrink(self, cells: int) -> "GridField":
        hc = np.asarray(self.half_counts) - int(cells)
        if np.any(hc < 0):
            raise ValueError(f"box too small to shrink by {cells} cells")
        return self.crop(hc)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.center, self.h, self.level)

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def distance_from(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.d)
        grids = np.meshgrid(*[a - xi for a, xi in zip(self.axes(), x)], indexing="ij")
        return np.sqrt(sum(g * g for g in grids))

    # -- serialization ----------------------------------------------------
    def to_bytes(self) -> bytes:
        d = self.d
        level = -1 if self.level is None else int(self.level)
        head = struct.pack(f"<4sHHq{d}q{d}d{d}dd", _MAGIC, _VERSION, d, level,
                           *self.values.shape, *self.center, *self.half_widths, self.h)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridField":
        magic, version, d = struct.unpack_from("<4sHH", blob, 0)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("not a GridField blob")
        fmt = f"<4sHHq{d}q{d}d{d}dd"
        fields = struct.unpack_from(fmt, blob, 0)
        level = fields[3]
        shape = tuple(fields[4 : 4 + d])
        center = np.array(fields[4 + d : 4 + 2 * d])
        h = fields[-1]
        payload = np.frombuffer(blob, dtype="<f8", offset=struct.calcsize(fmt))
        if payload.size != int(np.prod(shape)):
            raise ValueError("payload size does not match header")
        return cls(payload.reshape(shape).astype(np.float64), center, h, None if level < 0 else level)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(self.d)] + ["value"])
        for p, v in zip(self.points(), self.values.ravel()):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()


def grid_points(center: np.ndarray, half_counts, h: float) -> np.ndarray:
    axes = [center[i] + h * np.arange(-m, m + 1) for i, m in enumerate(half_counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def common_crop(*fields: GridField) -> list[GridField]:
    """Crop fields sharing center and spacing to their common box."""
    hc = np.min([f.half_counts for f in fields], axis=0)
    for f in fields[1:]:
        if f.h != fields[0].h or not np.array_equal(f.center, fields[0].center):
            raise ValueError("fields must share center and spacing")
    return [f.crop(hc) for f in fields]

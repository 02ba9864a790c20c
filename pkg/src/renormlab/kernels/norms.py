"""Rescaled Hölder norm and radial cutoffs on grids."""

from __future__ import annotations

import itertools
import math

import numba
import numpy as np

from .grid import GridField, grid_points


def pair_offsets(d: int, max_cells: float) -> np.ndarray:
    """Integer offsets 0 < |k| <= max_cells, one from each +/- pair."""
    r = int(math.floor(max_cells + 1e-9))
    rng = range(-r, r + 1)
    out = []
    for k in itertools.product(rng, repeat=d):
        nz = next((c for c in k if c != 0), 0)
        if nz > 0 and sum(c * c for c in k) <= max_cells * max_cells + 1e-9:
            out.append(k)
    return np.array(out, dtype=np.int64).reshape(-1, d)


@numba.njit(cache=True)
def _max_abs_diffs(u, shape, offs):
    d = shape.shape[0]
    n = u.shape[0]
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    n_off = offs.shape[0]
    out = np.zeros(n_off)
    flat = np.zeros(n_off, dtype=np.int64)
    for o in range(n_off):
        for i in range(d):
            flat[o] += offs[o, i] * strides[i]
    idx = np.zeros(d, dtype=np.int64)
    for c in range(n):
        rem = c
        for i in range(d):
            idx[i] = rem // strides[i]
            rem -= idx[i] * strides[i]
        uc = u[c]
        for o in range(n_off):
            ok = True
            for i in range(d):
                j = idx[i] + offs[o, i]
                if j < 0 or j >= shape[i]:
                    ok = False
                    break
            if ok:
                diff = abs(u[c + flat[o]] - uc)
                if diff > out[o]:
                    out[o] = diff
    return out


def holder_parts(f: GridField, L: float, beta: float) -> tuple[float, float]:
    """(sup |f|, max Hölder quotient over grid pairs with |x - y| <= 2L)."""
    if f.values.size < 2:
        raise ValueError("Hölder norm needs at least two grid points")
    offs = pair_offsets(f.d, 2.0 * L / f.h)
    sup = float(np.abs(f.values).max())
    if len(offs) == 0:
        return sup, 0.0
    diffs = _max_abs_diffs(
        np.ascontiguousarray(f.values).ravel(), np.array(f.values.shape, dtype=np.int64), offs
    )
    dist = f.h * np.sqrt((offs * offs).sum(axis=1).astype(float))
    return sup, float(np.max(diffs / dist**beta))


def scaled_holder_norm(f: GridField, L: float, beta: float) -> float:
    """sup|f| + L^beta * max |f(x) - f(y)| / |x - y|^beta over pairs with |x - y| <= 2L."""
    sup, q = holder_parts(f, L, beta)
    return sup + float(L) ** beta * q


def cutoff_profile(r: np.ndarray, v: float) -> np.ndarray:
    """chi(r / v) with chi(y) = min(1, (2 - |y|)_+)."""
    return np.minimum(1.0, np.maximum(0.0, 2.0 - np.asarray(r, dtype=float) / v))


def cutoff_field(v: float, center, box, h: float) -> GridField:
    """Sample chi((y - x)/v) on the grid of ``box = (box_center, half_width)``."""
    if not v > 0:
        raise ValueError("cutoff radius must be positive")
    x = np.atleast_1d(np.asarray(center, dtype=float))
    box_center, half = box
    box_center = np.broadcast_to(np.asarray(box_center, dtype=float), x.shape)

    def fn(p: np.ndarray) -> np.ndarray:
        return cutoff_profile(np.sqrt(((p - x) ** 2).sum(axis=1)), v)

    return GridField.sample(fn, box_center, half, h)


def cutoff_like(f: GridField, v: float, center=None) -> GridField:
    x = f.center if center is None else np.asarray(center, dtype=float)
    pts = grid_points(f.center, f.half_counts, f.h)
    vals = cutoff_profile(np.sqrt(((pts - x) ** 2).sum(axis=1)), v).reshape(f.values.shape)
    return f.with_values(vals)

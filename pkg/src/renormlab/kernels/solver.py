"""Explicit monotone finite differences for u_t = 1/2 tr(A D^2 u) - b . Du.

Each update is written in difference form u0 + dt * sum_k w_k (u_k - u0) with
nonnegative weights and dt * sum_k w_k <= 1, so constants are reproduced
exactly and the new value is a convex combination of neighbours.  The result
is clipped to the neighbourhood range, which turns the discrete maximum
principle into an exact floating point statement.

Mixed derivatives use the seven point stencil oriented by the sign of a_ij.
The drift is centred where that keeps the weights nonnegative and upwinded
elsewhere.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np

from ..environment import EnvironmentRealization, EnvironmentSpec
from .grid import GridField


class StabilityError(ValueError):
    """Time step or coefficients violate the monotonicity conditions."""


class BudgetError(RuntimeError):
    """Requested computation exceeds the configured work ceiling."""


@dataclass(frozen=True)
class SolverParams:
    h: float
    dt: float | None = None
    margin: float | None = None
    scheme: str = "explicit-monotone"
    tail_tol: float = 1e-10
    crop: bool = True
    budget: float = math.inf  # cell updates

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("spatial step h must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.margin is not None and self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.scheme != "explicit-monotone":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.tail_tol < 1:
            raise ValueError("tail_tol must lie in (0, 1)")


def box_margin(spec: EnvironmentSpec, t: float, tol: float) -> float:
    """Distance r with P(a path leaves the cube of half-width r within t) <= tol.

    Each coordinate is a drift of speed <= B plus a martingale with quadratic
    variation <= lambda_max t; union bound over 2d half-spaces.
    """
    if t <= 0:
        return 0.0
    lam = spec.eigen_range[1]
    return spec.drift_bound * t + math.sqrt(2.0 * lam * t * math.log(2.0 * spec.d / tol))


def max_stable_dt(spec: EnvironmentSpec, h: float) -> float:
    return h * h / (2.0 * spec.d * spec.ellipticity)


def neighbour_vectors(d: int) -> np.ndarray:
    vecs = []
    for i in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[i] = 1
        vecs += [e, -e]
    for i, j in itertools.combinations(range(d), 2):
        for si, sj in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
            e = np.zeros(d, dtype=np.int64)
            e[i], e[j] = si, sj
            vecs.append(e)
    return np.array(vecs, dtype=np.int64).reshape(-1, d)


def stencil_weights(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """Nonnegative neighbour weights (N, 2d^2) in :func:`neighbour_vectors` order."""
    n, d = b.shape
    half = 0.5 * a
    h2 = h * h
    n_nb = 2 * d + 2 * d * (d - 1)
    w = np.zeros((n, n_nb))
    off = np.abs(half).sum(axis=2) - np.abs(np.diagonal(half, axis1=1, axis2=2))
    base = (np.diagonal(half, axis1=1, axis2=2) - off) / h2
    if np.any(base < 0):
        raise StabilityError("diffusion matrix not diagonally dominant; seven point stencil is not monotone")
    for i in range(d):
        bi = b[:, i]
        centred = base[:, i] >= np.abs(bi) / (2.0 * h)
        wp = np.where(centred, base[:, i] - bi / (2.0 * h), base[:, i] + np.maximum(-bi, 0.0) / h)
        wm = np.where(centred, base[:, i] + bi / (2.0 * h), base[:, i] + np.maximum(bi, 0.0) / h)
        w[:, 2 * i] = wp
        w[:, 2 * i + 1] = wm
    k = 2 * d
    for i, j in itertools.combinations(range(d), 2):
        c = half[:, i, j] / h2
        pos, neg = np.maximum(c, 0.0), np.maximum(-c, 0.0)
        w[:, k], w[:, k + 1], w[:, k + 2], w[:, k + 3] = pos, pos, neg, neg
        k += 4
    return w


@numba.njit(cache=True)
def _evolve(u, idx, offs, w, n_steps, dt):
    buf = u.copy()
    na = idx.shape[0]
    nb = offs.shape[0]
    for _ in range(n_steps):
        for a in range(na):
            i = idx[a]
            u0 = u[i]
            acc = 0.0
            lo = u0
            hi = u0
            for k in range(nb):
                uk = u[i + offs[k]]
                acc += w[a, k] * (uk - u0)
                if uk < lo:
                    lo = uk
                elif uk > hi:
                    hi = uk
            v = u0 + dt * acc
            if v < lo:
                v = lo
            elif v > hi:
                v = hi
            buf[i] = v
        tmp = u
        u = buf
        buf = tmp
    return u


class QuenchedOperator:
    """The discrete evolution on one grid, with weights frozen for reuse.

    ``active`` marks cells that evolve; every other cell keeps its initial
    value (Dirichlet data).  The outer ring of the grid is never active.
    """

    def __init__(self, realization: EnvironmentRealization, template: GridField, active: np.ndarray):
        shape = template.values.shape
        d = template.d
        active = np.array(active, dtype=bool, copy=True)
        ring = np.ones(shape, dtype=bool)
        ring[tuple(slice(1, -1) for _ in range(d))] = False
        if np.any(active & ring):
            raise ValueError("active cells touch the grid boundary")
        spec = realization.spec
        self.spec = spec
        self.h = template.h
        self.shape = shape
        self.idx = np.flatnonzero(active).astype(np.int64)
        pts = template.points()[self.idx]
        if len(pts):
            realization.require_inside(
                np.vstack([pts.min(axis=0), pts.max(axis=0)]), margin=spec.rho
            )
        a, b = realization.coefficients(pts) if len(pts) else (np.zeros((0, d, d)), np.zeros((0, d)))
        self.weights = stencil_weights(a, b, self.h)
        strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(d)], dtype=np.int64)
        self.offsets = neighbour_vectors(d) @ strides
        self.max_rate = float(self.weights.sum(axis=1).max()) if len(pts) else 0.0

    @property
    def n_active(self) -> int:
        return len(self.idx)

    def step_plan(self, t: float, dt: float | None = None) -> tuple[int, float]:
        """(number of steps, step) for evolving over time t."""
        if t < 0:
            raise ValueError("duration must be non-negative")
        if t == 0:
            return 0, 0.0
        dt_max = max_stable_dt(self.spec, self.h)
        if dt is None:
            K = max(1, math.ceil(t / dt_max * (1 - 1e-12)))
            dt = t / K
        else:
            K = int(round(t / dt))
            if K < 1 or abs(K * dt - t) > 1e-9 * t:
                raise ValueError(f"dt={dt} does not divide t={t}")
            if dt > dt_max * (1 + 1e-12):
                raise StabilityError(f"dt={dt} exceeds h^2/(2 d nu) = {dt_max}")
        if dt * self.max_rate > 1.0 + 1e-12:
            raise StabilityError(f"dt * max weight sum = {dt * self.max_rate} exceeds 1")
        return K, dt

    def evolve(self, values: np.ndarray, t: float, dt: float | None = None, budget: float = math.inf) -> np.ndarray:
        K, dt = self.step_plan(t, dt)
        if K * self.n_active > budget:
            raise BudgetError(f"solve needs {K * self.n_active:.3g} cell updates, budget {budget:.3g}")
        u = np.ascontiguousarray(values, dtype=np.float64).ravel().copy()
        if K == 0 or self.n_active == 0:
            return u.reshape(self.shape)
        return _evolve(u, self.idx, self.offsets, self.weights, K, dt).reshape(self.shape)


def interior_mask(shape: tuple[int, ...]) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[tuple(slice(1, -1) for _ in shape)] = True
    return m


def ball_mask(template: GridField, center, radius: float) -> np.ndarray:
    return (template.distance_from(center) < radius) & interior_mask(template.values.shape)


def margin_cells(spec: EnvironmentSpec, t: float, params: SolverParams) -> int:
    m = params.margin if params.margin is not None else box_margin(spec, t, params.tail_tol)
    return int(math.ceil(m / params.h - 1e-9))


def solve_quenched(realization: EnvironmentRealization, f: GridField, t: float, params: SolverParams) -> GridField:
    """Evolve f for time t on its grid (outer ring frozen), then crop the margin."""
    if abs(f.h - params.h) > 1e-12 * params.h:
        raise ValueError(f"grid spacing {f.h} does not match params.h={params.h}")
    cells = margin_cells(realization.spec, t, params) if params.crop else 0
    if params.crop and min(f.half_counts) - cells < 0:
        raise ValueError(
            f"margin insufficient: box half counts {f.half_counts} smaller than margin {cells} cells"
        )
    op = QuenchedOperator(realization, f, interior_mask(f.values.shape))
    u = f.with_values(op.evolve(f.values, t, params.dt, params.budget))
    return u.shrink(cells) if cells else u


def solve_localized(
    realization: EnvironmentRealization, f: GridField, t: float, radius: float, center, params: SolverParams
) -> GridField:
    """Evolve inside the open ball B_radius(center); all other cells stay at f."""
    center = np.asarray(center, dtype=float).reshape(f.d)
    if np.any(np.abs(center - f.center) + radius > f.half_widths - f.h + 1e-9):
        raise ValueError("localization ball exits the grid box")
    op = QuenchedOperator(realization, f, ball_mask(f, center, radius))
    return f.with_values(op.evolve(f.values, t, params.dt, params.budget))

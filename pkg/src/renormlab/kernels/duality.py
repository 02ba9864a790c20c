"""Finite differences against Monte Carlo: R_t g(x) = E_x g(X_t)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..diffusion import PathConfig, simulate_ensemble
from ..environment import EnvironmentRealization
from ..stats import Estimate
from .grid import GridField
from .solver import SolverParams, box_margin, solve_quenched


@dataclass
class DualityReport:
    probes: list[list[float]]
    h_values: list[float]
    fd_values: list[list[float]]  # per h, per probe
    mc_mean: list[float]
    mc_stderr: list[float]
    discretization: list[float]  # Richardson estimate for the finest grid, per probe
    refinement_diffs: list[float]  # max over probes of |u_h - u_{h/2}|
    refinement_slope: float
    discrepancy: list[float]
    tolerance: list[float]

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancy)

    @property
    def ok(self) -> bool:
        return all(e <= t for e, t in zip(self.discrepancy, self.tolerance))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def refinement_slope(h_values, diffs) -> float:
    """Least-squares slope of log(diff) against log(h) (nan if any diff is 0)."""
    diffs = np.asarray(diffs, dtype=float)
    if len(diffs) < 2 or np.any(diffs <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(h_values[: len(diffs)], dtype=float)), np.log(diffs), 1)[0])


def duality_check(
    realization: EnvironmentRealization,
    f: Callable[[np.ndarray], np.ndarray],
    t: float,
    h_values,
    probes,
    n_paths: int,
    dt_mc: float,
    seed: int,
    tail_tol: float = 1e-10,
) -> DualityReport:
    """Compare the grid solution at ``probes`` with Monte Carlo averages of f(X_t).

    ``h_values`` is a refinement sequence (each the previous halved); every
    probe must be a point of the coarsest grid.  The discretization estimate
    is the Richardson extrapolation |u_{h/2} - u_h| / 3 on the two finest
    grids, assuming second order.
    """
    spec = realization.spec
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    h_values = [float(h) for h in h_values]
    center = np.zeros(spec.d)
    reach = float(np.abs(probes).max())
    margin = box_margin(spec, t, tail_tol)
    fd = []
    for h in h_values:
        grid = GridField.sample(f, center, reach + margin + 2 * h, h)
        u = solve_quenched(realization, grid, t, SolverParams(h=h, margin=margin, tail_tol=tail_tol))
        fd.append([u.value_at(p) for p in probes])
    fd_arr = np.array(fd)
    diffs = [float(np.max(np.abs(fd_arr[i + 1] - fd_arr[i]))) for i in range(len(h_values) - 1)]
    slope = refinement_slope(h_values, diffs)
    if len(h_values) >= 2:
        disc = np.abs(fd_arr[-1] - fd_arr[-2]) / 3.0
    else:
        disc = np.zeros(len(probes))

    n_probe = len(probes)
    batch = simulate_ensemble(
        [realization] * n_probe,
        PathConfig(dt=dt_mc, T=t),
        [(seed, 30, j) for j in range(n_probe)],
        n_paths,
        starts=probes,
    )
    vals = np.asarray(f(batch.endpoint), dtype=float)
    ests = [Estimate.from_samples(vals[batch.env == j], (seed, 30, j)) for j in range(n_probe)]
    mc_mean = [e.mean for e in ests]
    mc_se = [e.stderr for e in ests]
    discrepancy = [abs(fd_arr[-1, j] - mc_mean[j]) for j in range(n_probe)]
    tolerance = [3.0 * mc_se[j] + float(disc[j]) for j in range(n_probe)]
    return DualityReport(
        probes=probes.tolist(),
        h_values=h_values,
        fd_values=fd_arr.tolist(),
        mc_mean=mc_mean,
        mc_stderr=mc_se,
        discretization=[float(x) for x in disc],
        refinement_diffs=diffs,
        refinement_slope=slope,
        discrepancy=discrepancy,
        tolerance=tolerance,
    )


def bump(width: float, center=None) -> Callable[[np.ndarray], np.ndarray]:
    """exp(-|x - c|^2 / (2 width^2)), vectorized over rows."""

    def f(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        c = np.zeros(x.shape[1]) if center is None else np.asarray(center, dtype=float)
        return np.exp(-((x - c) ** 2).sum(axis=1) / (2.0 * width * width))

    return f


def heat_solution_bump(width: float, t: float, diffusion: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """Closed form of E f(x + sqrt(diffusion) B_t) for the centred Gaussian bump."""
    var = width * width + diffusion * t

    def u(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        d = x.shape[1]
        return (width * width / var) ** (d / 2) * np.exp(-(x**2).sum(axis=1) / (2.0 * var))

    return u


"""Homogenization experiments driven by the unscaled quenched solver.

u^eps(x, t) is always read off the unscaled solution at (x/eps, t/eps^2);
there is no separate oscillatory-coefficient solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .diffusion import tail_radius
from .environment import (
    BoxExitError,
    EnvironmentRealization,
    EnvironmentSpec,
    LocalObservable,
    sample_environment,
    sqrt_spd,
)
from .kernels import BudgetError, GridField, QuenchedOperator, SolverParams, box_margin, interior_mask
from .renorm import PiParams, PiRecord, estimate_pi_n
from .scales import ScaleHierarchy
from .stats import Estimate, bootstrap_std_band, map_units

SWEEP_STREAM = 50
BOOT_STREAM = 51
PATH_STREAM = 60


class _Snapshots:
    """One grid around x/eps evolved with a fixed step up to ``t_max``.

    Values between solver steps are linear in time, so every quadrature
    refinement integrates the same function.
    """

    def __init__(self, realization, obs, x_scaled, t_max, params: SolverParams):
        spec = realization.spec
        h = params.h
        half = box_margin(spec, t_max, params.tail_tol) + 2.0 * h
        cells = (2.0 * half / h + 3) ** spec.d
        dt_max = h * h / (2.0 * spec.d * spec.ellipticity)
        cost = cells * math.ceil(t_max / dt_max)
        if cost > params.budget:
            raise BudgetError(f"solve to time {t_max:g} needs ~{cost:.3g} cell updates; budget {params.budget:.3g}")
        self.grid = GridField.sample(lambda p: obs(realization, p), x_scaled, half, h)
        self.op = QuenchedOperator(realization, self.grid, interior_mask(self.grid.values.shape))
        if t_max > 0:
            self.steps, self.dt = self.op.step_plan(t_max, params.dt)
        else:
            self.steps, self.dt = 0, 0.0
        self.k = 0
        self.u = self.grid.values
        self.u_next = None
        self.c = self.grid.half_counts

    def _goto(self, k: int) -> None:
        if k == self.k + 1 and self.u_next is not None:
            self.u = self.u_next
        elif k > self.k:
            self.u = self.op.evolve(self.u, (k - self.k) * self.dt, self.dt)
        self.u_next = None
        self.k = k

    def advance(self, t: float) -> float:
        """Value at the grid centre at time t (t never decreases)."""
        if t <= 0 or self.dt == 0:
            return float(self.u[self.c]) if self.k == 0 else self._fail(t)
        q = t / self.dt
        k = min(int(math.floor(q + 1e-9)), self.steps)
        frac = q - k if q - k > 1e-9 else 0.0
        if k < self.k:
            self._fail(t)
        self._goto(k)
        if frac == 0.0:
            return float(self.u[self.c])
        if self.u_next is None:
            self.u_next = self.op.evolve(self.u, self.dt, self.dt)
        return float((1.0 - frac) * self.u[self.c] + frac * self.u_next[self.c])

    def _fail(self, t):
        raise ValueError(f"snapshot time {t:g} precedes the current step")


def solve_epsilon(
    realization: EnvironmentRealization, obs: LocalObservable, eps: float, probe, params: SolverParams
) -> float:
    """u^eps(x, t, omega) = u(x/eps, t/eps^2, omega) with initial data f(., omega)."""
    x, t = probe
    if not eps > 0:
        raise ValueError("eps must be positive")
    x_scaled = np.atleast_1d(np.asarray(x, dtype=float)) / eps
    t_scaled = float(t) / (eps * eps)
    return _Snapshots(realization, obs, x_scaled, t_scaled, params).advance(t_scaled)


def _trapezoid_rhs(snap: _Snapshots, t: float, eps: float, n: int) -> float:
    vals = [snap.advance((t * j / n) / (eps * eps)) for j in range(n + 1)]
    return t / n * (math.fsum(vals[1:-1]) + 0.5 * (vals[0] + vals[-1]))


def _geometric_nodes(T: float, n: int) -> np.ndarray:
    g = math.log1p(T)
    return np.expm1(g * np.arange(n + 1) / n) / math.expm1(g) * T


def _exp_weighted(snap: _Snapshots, T: float, eps: float, n: int) -> float:
    """Integral of e^{-s} times the piecewise-linear interpolant of the snapshots."""
    s = _geometric_nodes(T, n)
    vals = [snap.advance(si / (eps * eps)) for si in s]
    terms = []
    for j in range(n):
        a, b = s[j], s[j + 1]
        span = b - a
        ea = math.exp(-a)
        diff = -ea * math.expm1(-span)  # e^{-a} - e^{-b}
        wa = ea - diff / span
        wb = diff / span - (ea - diff)
        terms.append(wa * vals[j] + wb * vals[j + 1])
    return math.fsum(terms)


def variant_solutions(
    realization: EnvironmentRealization,
    obs: LocalObservable,
    eps: float,
    probe,
    kind: str,
    params: SolverParams,
    tol: float = 1e-6,
    t_trunc: float | None = None,
    trunc_tol: float = 1e-6,
    max_doublings: int = 10,
) -> float:
    """Right-hand-side (``rhs``) or resolvent (``elliptic``) variant at one probe.

    rhs: int_0^t u^eps(x, s) ds by the trapezoid rule on a uniform grid.
    elliptic: int_0^T e^{-s} u^eps(x, s) ds on a geometric grid, the product
    rule being exact for piecewise-linear integrands.  Both double the number
    of nodes until two answers differ by less than ``tol``.
    """
    x, t = probe
    x_scaled = np.atleast_1d(np.asarray(x, dtype=float)) / eps
    if kind == "rhs":
        horizon = float(t)
        rule = _trapezoid_rhs
    elif kind == "elliptic":
        horizon = -math.log(trunc_tol) if t_trunc is None else float(t_trunc)
        if math.exp(-horizon) > trunc_tol * (1.0 + 1e-9):
            raise ValueError(f"truncation at {horizon:g} leaves tail e^-T = {math.exp(-horizon):.3g} > {trunc_tol:g}")
        rule = _exp_weighted
    else:
        raise ValueError(f"unknown variant {kind!r}; expected 'rhs' or 'elliptic'")
    if horizon == 0:
        return 0.0
    t_max = horizon / (eps * eps)
    n = 4
    prev = rule(_Snapshots(realization, obs, x_scaled, t_max, params), horizon, eps, n)
    for _ in range(max_doublings):
        n *= 2
        cur = rule(_Snapshots(realization, obs, x_scaled, t_max, params), horizon, eps, n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    raise RuntimeError(f"{kind} quadrature did not reach tol={tol:g} with {n} intervals")


# -- sweeps -----------------------------------------------------------------


@dataclass
class HomogenizationRun:
    observable: str
    eps: list[float]
    probes: list[tuple[list[float], float]]
    samples: list[list[list[float]]]  # [eps][probe][environment]
    bands: list[list[tuple[float, float]]]  # bootstrap band of the std, [eps][probe]
    n_env: list[int]
    reference: float | None = None
    reference_stderr: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps list must be strictly decreasing")

    def estimate(self, i: int, j: int) -> Estimate:
        return Estimate.from_samples(self.samples[i][j])

    def std(self, i: int, j: int) -> float:
        return float(np.std(self.samples[i][j], ddof=1))

    def deviation(self, i: int, j: int) -> float:
        return abs(self.estimate(i, j).mean - self.reference)

    def combined_stderr(self, i: int, j: int) -> float:
        return math.hypot(self.estimate(i, j).stderr, self.reference_stderr or 0.0)

    def std_trend_ok(self, j: int = 0) -> bool:
        """Each std lies below the upper bootstrap band of the previous (larger) eps,
        and the smallest-eps band sits entirely below the largest-eps band."""
        k = len(self.eps)
        steps = all(self.std(i + 1, j) <= self.bands[i][j][1] for i in range(k - 1))
        return steps and self.bands[-1][j][1] < self.bands[0][j][0]

    def csv_rows(self) -> list[dict]:
        rows = []
        for i, e in enumerate(self.eps):
            for j, (x, t) in enumerate(self.probes):
                est = self.estimate(i, j)
                rows.append(
                    {
                        "eps": e,
                        "x": " ".join(f"{v:g}" for v in x),
                        "t": t,
                        "mean": est.mean,
                        "stderr": est.stderr,
                        "std": self.std(i, j),
                        "std_lo": self.bands[i][j][0],
                        "std_hi": self.bands[i][j][1],
                        "abs_dev": self.deviation(i, j) if self.reference is not None else float("nan"),
                        "n_env": self.n_env[i],
                    }
                )
        return rows


def sweep_half_width(spec: EnvironmentSpec, obs: LocalObservable, eps_list, probes, params: SolverParams) -> float:
    need = 0.0
    for e in eps_list:
        for x, t in probes:
            reach = float(np.abs(np.asarray(x, dtype=float)).max(initial=0.0)) / e
            need = max(need, reach + box_margin(spec, t / (e * e), params.tail_tol) + 3.0 * params.h)
    return need + obs.radius + spec.rho + spec.R


def _sweep_unit(args):
    spec, obs, eps_list, probes, params, seed, e, half = args
    real = sample_environment(spec, (seed, SWEEP_STREAM, e), (np.zeros(spec.d), half))
    return [[solve_epsilon(real, obs, ep, (x, t), params) for x, t in probes] for ep in eps_list]


def convergence_sweep(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    obs: LocalObservable,
    eps_list,
    n_env: int,
    probes,
    params: SolverParams,
    seed: int,
    reference: PiRecord | None = None,
    reference_level: int = 0,
    n_env_reference: int | None = None,
    n_boot: int = 1000,
    workers: int = 1,
) -> HomogenizationRun:
    """u^eps at each probe over n_env environments, against pi^(f).

    Without ``reference`` the renorm estimator runs at ``reference_level`` on
    its own environment stream, independent of the sweep's.
    """
    eps_list = [float(e) for e in eps_list]
    probes = [(list(np.atleast_1d(np.asarray(x, dtype=float))), float(t)) for x, t in probes]
    half = sweep_half_width(spec, obs, eps_list, probes, params)
    units = [(spec, obs, eps_list, probes, params, seed, e, half) for e in range(n_env)]
    per_env = map_units(_sweep_unit, units, workers)
    samples = [[[per_env[e][i][j] for e in range(n_env)] for j in range(len(probes))] for i in range(len(eps_list))]
    bands = [
        [bootstrap_std_band(np.asarray(samples[i][j]), n_boot, rng.generator(seed, BOOT_STREAM, i, j)) for j in range(len(probes))]
        for i in range(len(eps_list))
    ]
    if reference is None:
        reference = estimate_pi_n(
            spec,
            hierarchy,
            reference_level,
            obs,
            n_env_reference or n_env,
            PiParams(h=params.h, tail_tol=params.tail_tol, budget=params.budget),
            seed,
            workers,
        )
    return HomogenizationRun(
        observable=obs.name,
        eps=eps_list,
        probes=probes,
        samples=samples,
        bands=bands,
        n_env=[n_env] * len(eps_list),
        reference=reference.mean,
        reference_stderr=reference.estimate.stderr,
        metadata={"h": params.h, "tail_tol": params.tail_tol, "reference_level": reference.level, "seed": seed},
    )


# -- time averages ----------------------------------------------------------


@dataclass
class TimeAverageTrace:
    times: list[float]
    averages: list[float]
    n_steps: int
    dt: float
    seed_lineage: tuple

    @property
    def final(self) -> float:
        return self.averages[-1]


def environment_time_average(
    realization: EnvironmentRealization,
    obs: LocalObservable,
    T: float,
    dt: float,
    seed: int,
    n_out: int = 40,
    path: int = 0,
) -> TimeAverageTrace:
    """Running averages (1/s) int_0^s f(X_r, omega) dr of one path from the origin.

    Left-point sums on the Euler grid, reported on a logarithmic grid of
    output times ending at T.  Exploratory: only the flattening is checked.
    """
    spec = realization.spec
    d = spec.d
    K = math.ceil(T / dt - 1e-9)
    step = T / K
    need = tail_radius(spec, T) + obs.radius + spec.rho
    if not np.all(realization.contains(np.zeros((1, d)), margin=need)):
        raise BoxExitError(f"active box too small for a path of duration {T:g}: need half width {need:.4g}")
    out_steps = sorted(set(np.unique(np.geomspace(1, K, n_out).round().astype(int)).tolist()))
    gen = rng.generator(seed, PATH_STREAM, path)
    x = np.zeros((1, d))
    sq = math.sqrt(step)
    acc = []
    times, avgs = [], []
    block = 4096
    k = 0
    margin = obs.radius + spec.rho
    nxt = 0
    while k < K:
        xi = gen.standard_normal((min(block, K - k), d))
        for row in xi:
            if not realization.contains(x, margin=margin)[0]:
                raise BoxExitError(f"path left the active box at step {k}")
            acc.append(float(obs(realization, x)[0]))
            if spec.eta0 == 0.0:
                x = x + sq * math.sqrt(spec.diffusion_scale) * row
            else:
                a, b = realization.coefficients(x)
                x = x - b * step + sq * (sqrt_spd(a)[0] @ row)
            k += 1
            if k == out_steps[nxt]:
                times.append(k * step)
                avgs.append(math.fsum(acc) / k)
                nxt += 1
    return TimeAverageTrace(times=times, averages=avgs, n_steps=K, dt=step, seed_lineage=(seed, PATH_STREAM, path))

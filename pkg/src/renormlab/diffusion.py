"""Euler-Maruyama paths in a fixed environment and the estimators built on them.

The scheme is X_{k+1} = X_k - b(X_k) dt + sigma(X_k) sqrt(dt) xi_k with sigma the
symmetric square root of A.  Noise for a work unit comes from its own counter
based stream, so batching environments together never changes a path.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .environment import (
    BoxExitError,
    EnvironmentBatch,
    EnvironmentRealization,
    EnvironmentSpec,
    SignedPermutation,
    sample_environment,
    sqrt_spd,
)
from .scales import ScaleHierarchy
from .stats import Estimate, binomial_stderr, exact_mean, map_units


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathConfig:
    dt: float
    T: float
    rho_stop: float | None = None
    x0: tuple[float, ...] | None = None
    freeze_at_exit: bool = False

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if self.dt > self.T * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds horizon T={self.T}")
        if self.rho_stop is not None and self.rho_stop < 0:
            raise ValueError("rho_stop must be non-negative")

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.dt - 1e-9))

    @property
    def step(self) -> float:
        """Actual step T / n_steps (equal to dt when dt divides T)."""
        return self.T / self.n_steps

    def start(self, d: int) -> np.ndarray:
        return np.zeros(d) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(d)


@dataclass(frozen=True)
class PathResult:
    endpoint: np.ndarray
    running_max: float
    exit_time: float | None
    stopped_endpoint: np.ndarray


@dataclass
class PathBatch:
    """Paths of one or more environments; ``env`` labels each row."""

    x0: np.ndarray
    endpoint: np.ndarray
    running_max: np.ndarray
    exit_time: np.ndarray  # nan where the path never exited
    stopped_endpoint: np.ndarray
    env: np.ndarray

    def __len__(self) -> int:
        return len(self.endpoint)

    def __getitem__(self, i: int) -> PathResult:
        et = self.exit_time[i]
        return PathResult(
            endpoint=self.endpoint[i],
            running_max=float(self.running_max[i]),
            exit_time=None if np.isnan(et) else float(et),
            stopped_endpoint=self.stopped_endpoint[i],
        )


def _check_drift_step(spec: EnvironmentSpec, config: PathConfig) -> None:
    if config.rho_stop:
        if spec.drift_bound * config.step > config.rho_stop / 100.0:
            raise ValueError(
                f"step {config.step} too coarse: drift displacement {spec.drift_bound * config.step:.3g} "
                f"exceeds rho_stop/100 = {config.rho_stop / 100:.3g}"
            )


def _integrate(coeff, inside, spec: EnvironmentSpec, x0: np.ndarray, streams, config: PathConfig):
    """Core loop.  ``streams`` is a list of (generator, n_rows) in row order."""
    n, d = x0.shape
    K = config.n_steps
    dt = config.step
    sqrt_dt = math.sqrt(dt)
    rho_stop = config.rho_stop
    eta_zero = spec.eta0 == 0.0
    root_s = math.sqrt(spec.diffusion_scale)
    x = x0.copy()
    rmax = np.zeros(n)
    exit_time = np.full(n, np.nan)
    stopped = np.full((n, d), np.nan)
    exited = np.zeros(n, dtype=bool)
    if rho_stop is not None and rho_stop <= 0.0:
        exited[:] = True
        exit_time[:] = 0.0
        stopped[:] = x0
    for k in range(K):
        xi = np.concatenate([g.standard_normal((m, d)) for g, m in streams]) if len(streams) > 1 else streams[0][0].standard_normal((n, d))
        if eta_zero:
            x_new = x + sqrt_dt * (root_s * xi if root_s != 1.0 else xi)
        else:
            a, b = coeff(x)
            incr = np.einsum("nij,nj->ni", sqrt_spd(a), xi)
            x_new = x - b * dt + sqrt_dt * incr
        if config.freeze_at_exit:
            x_new[exited] = x[exited]
        x = x_new
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite state at step {k + 1}")
        ok = inside(x)
        if not np.all(ok):
            i = int(np.nonzero(~ok)[0][0])
            raise BoxExitError(f"path {i} left the active box at step {k + 1}: {x[i]}")
        dist = np.sqrt(np.einsum("ij,ij->i", x - x0, x - x0))
        np.maximum(rmax, dist, out=rmax)
        if rho_stop is not None:
            new = (~exited) & (dist >= rho_stop)
            if np.any(new):
                exit_time[new] = (k + 1) * config.T / K
                stopped[new] = x[new]
                exited |= new
    stopped[~exited] = x[~exited]
    return x, rmax, exit_time, stopped


def _lineage(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)


def simulate_path(realization: EnvironmentRealization, config: PathConfig, seed) -> PathResult:
    """One Euler-Maruyama path; a pure function of (realization, config, seed)."""
    spec = realization.spec
    _check_drift_step(spec, config)
    x0 = config.start(spec.d)[None, :]
    realization.require_inside(x0, margin=spec.rho)
    gen = rng.generator(*_lineage(seed))
    x, rmax, et, stopped = _integrate(
        realization.coefficients,
        lambda y: realization.contains(y, margin=spec.rho),
        spec,
        x0,
        [(gen, 1)],
        config,
    )
    return PathBatch(x0, x, rmax, et, stopped, np.zeros(1, dtype=np.int64))[0]


def simulate_paths(realization: EnvironmentRealization, config: PathConfig, seed, n_paths: int) -> PathBatch:
    """``n_paths`` independent paths in one environment from one noise stream."""
    return simulate_ensemble([realization], config, [_lineage(seed)], n_paths)


def simulate_ensemble(
    realizations: list[EnvironmentRealization],
    config: PathConfig,
    streams: list[tuple],
    n_paths: int,
    starts: np.ndarray | None = None,
) -> PathBatch:
    """n_paths per realization; realization e draws noise from stream ``streams[e]``.

    ``starts`` optionally gives one start point per realization (else config.x0).
    """
    spec = realizations[0].spec
    _check_drift_step(spec, config)
    d = spec.d
    E = len(realizations)
    env = np.repeat(np.arange(E), n_paths)
    if starts is None:
        x0 = np.broadcast_to(config.start(d), (E * n_paths, d)).copy()
    else:
        x0 = np.repeat(np.asarray(starts, dtype=float).reshape(E, d), n_paths, axis=0)
    plain = all(r.shift is None and r.rotation is None and r.override is None for r in realizations)
    if plain:
        batch = EnvironmentBatch(realizations)
        coeff = lambda y: batch.coefficients(env, y)  # noqa: E731
        inside = lambda y: batch.contains(env, y, margin=spec.rho)  # noqa: E731
    else:
        r0 = realizations[0]
        if any(r is not r0 for r in realizations):
            raise ValueError("transformed realizations must be simulated one at a time")
        coeff = r0.coefficients
        inside = lambda y: r0.contains(y, margin=spec.rho)  # noqa: E731
    if not np.all(inside(x0)):
        raise BoxExitError("start point outside the active box")
    gens = [(rng.generator(*s), n_paths) for s in streams]
    x, rmax, et, stopped = _integrate(coeff, inside, spec, x0, gens, config)
    return PathBatch(x0, x, rmax, et, stopped, env)


# -- box sizing -------------------------------------------------------------


def tail_radius(spec: EnvironmentSpec, t: float, tol: float = 1e-12) -> float:
    """Radius r with P(sup_{s<=t} |X_s - X_0| >= r) <= tol.

    Drift moves at most B t; each martingale coordinate has quadratic
    variation <= nu t, and a union bound over coordinates gives the rest.
    """
    d = spec.d
    nu = spec.ellipticity
    return spec.drift_bound * t + math.sqrt(2.0 * d * nu * t * math.log(2.0 * d / tol))


def _overshoot(spec: EnvironmentSpec, dt: float) -> float:
    return spec.drift_bound * dt + 10.0 * math.sqrt(spec.ellipticity * spec.d * dt)


def _box_half_width(spec: EnvironmentSpec, config: PathConfig) -> float:
    reach = tail_radius(spec, config.T)
    if config.freeze_at_exit and config.rho_stop is not None:
        reach = min(reach, config.rho_stop + _overshoot(spec, config.step))
    return reach + spec.R + 1.0


# -- estimators -------------------------------------------------------------


def _env_units(n_env: int, chunk: int) -> list[list[int]]:
    return [list(range(i, min(i + chunk, n_env))) for i in range(0, n_env, chunk)]


def _alpha_unit(args) -> list[float]:
    spec, seed, n, L, D_tilde, n_paths, dt, envs = args
    config = PathConfig(dt=dt, T=float(L) ** 2, rho_stop=D_tilde, freeze_at_exit=True)
    half = _box_half_width(spec, config)
    reals = [sample_environment(spec, (seed, 1, n, e), (np.zeros(spec.d), half)) for e in envs]
    batch = simulate_ensemble(reals, config, [(seed, 2, n, e) for e in envs], n_paths)
    sq = np.einsum("ij,ij->i", batch.stopped_endpoint, batch.stopped_endpoint) / (spec.d * float(L) ** 2)
    return [exact_mean(sq[batch.env == i]) for i in range(len(envs))]


def alpha_samples(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    n: int,
    n_env: int,
    n_paths: int,
    dt: float | None,
    seed: int,
    workers: int = 1,
    chunk: int = 16,
) -> list[float]:
    """Per-environment means of |X_{T_n ^ L_n^2}|^2 / (d L_n^2)."""
    lv = hierarchy[n]
    dt = float(lv.L) ** 2 / 1e4 if dt is None else float(dt)
    units = [(spec, seed, n, lv.L, lv.D_tilde, n_paths, dt, envs) for envs in _env_units(n_env, chunk)]
    out: list[float] = []
    for part in map_units(_alpha_unit, units, workers):
        out.extend(part)
    return out


def estimate_alpha(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    n: int,
    n_env: int,
    n_paths: int,
    dt: float | None,
    seed: int,
    workers: int = 1,
) -> Estimate:
    """Annealed effective diffusivity at level n.

    The standard error is taken across environments, since paths within one
    environment are not independent draws of the annealed law.
    """
    if n_env < 2 or n_paths < 1:
        raise ValueError("estimate_alpha needs n_env >= 2 and n_paths >= 1")
    per_env = alpha_samples(spec, hierarchy, n, n_env, n_paths, dt, seed, workers)
    return Estimate.from_samples(per_env, seed_lineage=(seed, n))


def calibrate_dt(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    n: int,
    n_env: int,
    n_paths: int,
    seed: int,
    dt0: float | None = None,
    max_halvings: int = 4,
) -> tuple[float, list[tuple[float, Estimate]]]:
    """Halve dt until alpha-hat moves by less than its standard error."""
    dt = float(hierarchy[n].L) ** 2 / 1e4 if dt0 is None else dt0
    history = [(dt, estimate_alpha(spec, hierarchy, n, n_env, n_paths, dt, seed))]
    for _ in range(max_halvings):
        dt /= 2.0
        est = estimate_alpha(spec, hierarchy, n, n_env, n_paths, dt, seed)
        prev = history[-1][1]
        history.append((dt, est))
        if abs(est.mean - prev.mean) < max(est.stderr, prev.stderr):
            break
    return history[-1][0], history


@dataclass
class TailReport:
    level: int
    D: float
    horizon: float
    n_samples: int
    tail_rows: list[dict] = field(default_factory=list)
    mean_displacement: list[dict] = field(default_factory=list)
    symmetry_rows: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        rows = self.tail_rows + self.mean_displacement + self.symmetry_rows
        return all(r["pass"] for r in rows)

    def csv_rows(self) -> list[dict]:
        return [
            {"level": self.level, "v": r["v"], "empirical": r["empirical"], "envelope": r["envelope"], "stderr": r["stderr"]}
            for r in self.tail_rows
        ]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _sample_paths(target, config: PathConfig, seed: tuple, n_samples: int, n_env: int) -> PathBatch:
    if isinstance(target, EnvironmentRealization):
        return simulate_paths(target, config, seed, n_samples)
    spec: EnvironmentSpec = target
    per = max(1, n_samples // n_env)
    half = _box_half_width(spec, config)
    reals = [sample_environment(spec, seed + (1, e), (np.zeros(spec.d), half)) for e in range(n_env)]
    return simulate_ensemble(reals, config, [seed + (2, e) for e in range(n_env)], per)


def _mean_estimates(values: np.ndarray, env: np.ndarray, annealed: bool, lineage: tuple) -> list[Estimate]:
    """Per-coordinate estimates; annealed ones are clustered by environment."""
    out = []
    for j in range(values.shape[1]):
        col = values[:, j]
        if annealed:
            samples = [exact_mean(col[env == e]) for e in np.unique(env)]
        else:
            samples = col.tolist()
        out.append(Estimate.from_samples(samples, lineage))
    return out


def default_symmetries(d: int) -> list[SignedPermutation]:
    elems = [SignedPermutation(tuple(range(d)), (-1,) * d)]
    if d >= 2:
        elems.append(SignedPermutation((1, 0) + tuple(range(2, d)), (1,) * d))
    return elems


def path_statistics(
    target,
    hierarchy: ScaleHierarchy,
    n: int,
    v,
    t: float,
    n_samples: int,
    seed: int,
    dt: float,
    n_env: int = 100,
    x: np.ndarray | None = None,
    symmetries: list[SignedPermutation] | None = None,
) -> TailReport:
    """Tail exceedance of X*, annealed mean displacement and symmetry checks.

    ``target`` is an EnvironmentSpec (annealed: fresh environments) or a
    single EnvironmentRealization (quenched).
    """
    annealed = isinstance(target, EnvironmentSpec)
    spec = target if annealed else target.spec
    d = spec.d
    lv = hierarchy[n]
    vs = [float(u) for u in np.atleast_1d(v)]
    if min(vs) < lv.D:
        raise ValueError(f"tail levels must satisfy v >= D_n = {lv.D}")
    horizon = float(lv.L) ** 2
    rep = TailReport(level=n, D=lv.D, horizon=horizon, n_samples=n_samples)

    tail = _sample_paths(target, PathConfig(dt=dt, T=horizon), (seed, 10, n), n_samples, n_env)
    N = len(tail)
    for u in vs:
        p = float(np.count_nonzero(tail.running_max >= u)) / N
        se = binomial_stderr(p, N)
        env_val = math.exp(-u / lv.D)
        rep.tail_rows.append(
            {"v": u, "empirical": p, "envelope": env_val, "stderr": se, "pass": p <= env_val + 3.0 * se}
        )

    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    base = _sample_paths(target, PathConfig(dt=dt, T=t, x0=tuple(x)), (seed, 11, n), n_samples, n_env)
    disp = base.endpoint - base.x0
    for j, est in enumerate(_mean_estimates(disp, base.env, annealed, (seed, 11, n))):
        rep.mean_displacement.append(
            {"coordinate": j, "mean": est.mean, "stderr": est.stderr, "pass": abs(est.mean) <= 3.0 * est.stderr}
        )

    for k, r in enumerate(symmetries or default_symmetries(d)):
        rx = r.apply(x)
        other = _sample_paths(target, PathConfig(dt=dt, T=t, x0=tuple(rx)), (seed, 12, n, k), n_samples, n_env)
        lhs = _mean_estimates(r.apply(base.endpoint), base.env, annealed, (seed, 11, n))
        rhs = _mean_estimates(other.endpoint, other.env, annealed, (seed, 12, n, k))
        for j in range(d):
            diff = abs(lhs[j].mean - rhs[j].mean)
            joint = math.hypot(lhs[j].stderr, rhs[j].stderr)
            rep.symmetry_rows.append(
                {
                    "element": f"perm={r.perm},signs={r.signs}",
                    "coordinate": j,
                    "discrepancy": diff,
                    "joint_stderr": joint,
                    "pass": diff <= 3.0 * joint,
                }
            )
    return rep

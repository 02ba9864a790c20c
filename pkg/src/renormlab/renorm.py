"""Multiscale estimators: pi_n(f), Cauchy gaps, contraction statistics and the coarse comparison."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .environment import EnvironmentRealization, EnvironmentSpec, LocalObservable, sample_environment
from .kernels import (
    BudgetError,
    GridField,
    QuenchedOperator,
    SolverParams,
    ball_mask,
    box_margin,
    common_crop,
    cutoff_like,
    gaussian_cells,
    gaussian_step,
    heat_defect_bound,
    interior_mask,
    scaled_holder_norm,
)
from .scales import ScaleHierarchy, decay_envelope
from .stats import Estimate, map_units

PI_STREAM = 20
CONTROL_STREAM = 41
NOISE_STREAM = 40


@dataclass(frozen=True)
class PiParams:
    h: float
    tail_tol: float = 1e-10
    budget: float = 2e10  # cell updates per realization
    smoothing_time: float = 1.0
    n_localized: int = 6


@dataclass
class PiRecord:
    level: int
    observable: str
    estimate: Estimate
    n_env: int
    samples: list[float]
    direct: list[float]  # f(0, omega) for the same environments
    metadata: dict = field(default_factory=dict)
    seed_lineage: tuple = ()

    @property
    def mean(self) -> float:
        return self.estimate.mean

    def fubini_check(self) -> Estimate:
        """Paired estimate of E[pi-sample - f(0, omega)] (zero when eta0 = 0)."""
        return Estimate.from_samples([a - b for a, b in zip(self.samples, self.direct)], self.seed_lineage)

    def to_row(self) -> dict:
        return {
            "level": self.level,
            "observable": self.observable,
            "mean": self.estimate.mean,
            "stderr": self.estimate.stderr,
            "n_env": self.n_env,
        }


def _pi_geometry(spec: EnvironmentSpec, hierarchy: ScaleHierarchy, n: int, params: PiParams):
    lv = hierarchy[n]
    h = params.h
    radius = 6.0 * lv.D_tilde
    inner = radius + 2.0 * h
    m1 = box_margin(spec, params.smoothing_time, params.tail_tol)
    outer = inner + m1 + 2.0 * h
    return lv, radius, inner, m1, outer


def pi_cost(spec: EnvironmentSpec, hierarchy: ScaleHierarchy, n: int, params: PiParams) -> float:
    """Cell updates for one realization of the pi_n pipeline."""
    lv, radius, inner, m1, outer = _pi_geometry(spec, hierarchy, n, params)
    h = params.h
    d = spec.d
    dt = h * h / (2.0 * d * spec.ellipticity)
    full = (2 * outer / h + 1) ** d * math.ceil(params.smoothing_time / dt)
    ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (radius / h) ** d
    return full + params.n_localized * ball * math.ceil(float(lv.L) ** 2 / dt)


def pi_sample(
    realization: EnvironmentRealization,
    hierarchy: ScaleHierarchy,
    n: int,
    observables: list[LocalObservable],
    params: PiParams,
    center=None,
) -> list[tuple[float, float]]:
    """(R~_n)^6 R_1 f(center) and f(center) for each observable in one environment."""
    spec = realization.spec
    d = spec.d
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    cost = pi_cost(spec, hierarchy, n, params)
    if cost > params.budget:
        raise BudgetError(f"pi_{n} needs ~{cost:.3g} cell updates per environment; budget {params.budget:.3g}")
    lv, radius, inner, m1, outer = _pi_geometry(spec, hierarchy, n, params)
    h = params.h
    t = float(lv.L) ** 2
    template = GridField.sample(lambda p: np.zeros(len(p)), center, outer, h)
    full = QuenchedOperator(realization, template, interior_mask(template.values.shape))
    inner_cells = int(math.floor(inner / h + 1e-9))
    local_template = template.crop(inner_cells)
    local = QuenchedOperator(realization, local_template, ball_mask(local_template, center, radius))
    out = []
    pts = template.points()
    for obs in observables:
        f = template.with_values(obs(realization, pts).reshape(template.values.shape))
        u = f.with_values(full.evolve(f.values, params.smoothing_time)).crop(inner_cells)
        for _ in range(params.n_localized):
            u = u.with_values(local.evolve(u.values, t))
        out.append((u.at_center(), f.at_center()))
    return out


def pi_environment(spec: EnvironmentSpec, hierarchy: ScaleHierarchy, n: int, params: PiParams, seed: int, e: int,
                   extra: float = 0.0) -> EnvironmentRealization:
    """Environment e of the pi experiments; identical field for every level and eta0."""
    _, _, _, _, outer = _pi_geometry(spec, hierarchy, n, params)
    return sample_environment(spec, (seed, PI_STREAM, e), (np.zeros(spec.d), outer + extra + spec.R + 1.0))


def _pi_unit(args):
    spec, hierarchy, n, observables, params, seed, e = args
    extra = max(o.radius for o in observables)
    real = pi_environment(spec, hierarchy, n, params, seed, e, extra)
    return pi_sample(real, hierarchy, n, observables, params)


def estimate_pi_n(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    n: int,
    obs,
    n_env: int,
    params: PiParams,
    seed: int,
    workers: int = 1,
):
    """pi_n(f) = E[(R~_n)^6 R_1 f(0, omega)] averaged over n_env environments.

    ``obs`` is one LocalObservable or a list; a list returns one record each,
    all computed on the same environments.
    """
    single = isinstance(obs, LocalObservable)
    observables = [obs] if single else list(obs)
    if n_env < 2:
        raise ValueError("estimate_pi_n needs n_env >= 2")
    units = [(spec, hierarchy, n, observables, params, seed, e) for e in range(n_env)]
    results = map_units(_pi_unit, units, workers)
    lv = hierarchy[n]
    records = []
    for j, o in enumerate(observables):
        samples = [r[j][0] for r in results]
        direct = [r[j][1] for r in results]
        records.append(
            PiRecord(
                level=n,
                observable=o.name,
                estimate=Estimate.from_samples(samples, (seed, PI_STREAM, n)),
                n_env=n_env,
                samples=samples,
                direct=direct,
                metadata={
                    "h": params.h,
                    "ball_radius": 6.0 * lv.D_tilde,
                    "localized_time": float(lv.L) ** 2,
                    "n_localized": params.n_localized,
                    "smoothing_time": params.smoothing_time,
                    "tail_tol": params.tail_tol,
                },
                seed_lineage=(seed, PI_STREAM),
            )
        )
    return records[0] if single else records


@dataclass
class CauchyGap:
    level: int
    gap: float
    stderr: float
    envelope: float
    lower: PiRecord
    upper: PiRecord

    @property
    def ratio(self) -> float:
        return self.gap / self.envelope if self.envelope > 0 else math.inf

    def within(self) -> bool:
        return self.gap <= max(3.0 * self.stderr, self.envelope)

    def to_row(self) -> dict:
        return {
            "level": self.level,
            "pi_n": self.lower.mean,
            "pi_n1": self.upper.mean,
            "gap": self.gap,
            "stderr": self.stderr,
            "envelope": self.envelope,
            "ratio": self.ratio,
        }


def cauchy_gap(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    n: int,
    obs: LocalObservable,
    n_env: int,
    params: PiParams,
    seed: int,
    workers: int = 1,
) -> CauchyGap:
    """|pi_{n+1} - pi_n| on matched environments; stderr from the paired differences."""
    if n + 1 >= len(hierarchy):
        raise ValueError(f"hierarchy has no level {n + 1}")
    lo = estimate_pi_n(spec, hierarchy, n, obs, n_env, params, seed, workers)
    hi = estimate_pi_n(spec, hierarchy, n + 1, obs, n_env, params, seed, workers)
    diff = Estimate.from_samples([b - a for a, b in zip(lo.samples, hi.samples)])
    return CauchyGap(
        level=n,
        gap=abs(hi.mean - lo.mean),
        stderr=diff.stderr,
        envelope=decay_envelope(hierarchy, n, "cauchy_gap"),
        lower=lo,
        upper=hi,
    )


# -- contraction statistics ------------------------------------------------


@dataclass(frozen=True)
class ControlParams:
    h: float
    tail_tol: float = 1e-10
    correlation_length: float | None = None  # default L_n / 2
    cutoff_radius: float | None = None  # default 30 sqrt(d) L_n
    n_fields: int = 2
    budget: float = 2e10


@dataclass
class ControlStatistics:
    level: int
    eta0: float
    alpha: float
    ratios: list[list[float]]  # per environment, per field
    tolerances: list[float]  # constant-coefficient defect bound per field
    exit_probability: list[float]
    tail_pass: list[bool]
    envelope: float
    quantiles: dict[str, float] = field(default_factory=dict)
    fraction_below_envelope: float = 0.0
    event_frequency: float = 0.0

    @property
    def flat_ratios(self) -> np.ndarray:
        return np.asarray(self.ratios, dtype=float).ravel()

    @property
    def median(self) -> float:
        return float(np.median(self.flat_ratios))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def field_ensemble(
    template: GridField, L: float, beta: float, corr: float, n_fields: int, seed: int, stream: tuple = ()
) -> list[GridField]:
    """Gaussian-smoothed white noise on ``template``'s grid, normalized to |f|_n = 1."""
    s = corr * corr
    pad = gaussian_cells(s, template.h)
    out = []
    for j in range(n_fields):
        gen = rng.generator(seed, NOISE_STREAM, *stream, j)
        hc = np.asarray(template.half_counts) + pad
        noise = GridField(gen.standard_normal(tuple(2 * hc + 1)), template.center, template.h)
        f = gaussian_step(noise, s)
        f = f.with_values(f.values / scaled_holder_norm(f, L, beta))
        out.append(f)
    return out


def _control_geometry(spec: EnvironmentSpec, L: float, alpha: float, params: ControlParams):
    h = params.h
    v = params.cutoff_radius if params.cutoff_radius is not None else 30.0 * math.sqrt(spec.d) * L
    t = float(L) ** 2
    mq = box_margin(spec, t, params.tail_tol)
    mg = gaussian_cells(alpha * t, h) * h
    eval_half = 2.0 * v + 2.0 * L + 2.0 * h
    outer = eval_half + max(mq, mg) + 2.0 * h
    return v, t, eval_half, outer


def control_template(spec: EnvironmentSpec, hierarchy: ScaleHierarchy, n: int, params: ControlParams, alpha: float) -> GridField:
    """Zero field on the grid used by :func:`contraction_stat`."""
    _, _, _, outer = _control_geometry(spec, float(hierarchy[n].L), alpha, params)
    return GridField.sample(lambda p: np.zeros(len(p)), np.zeros(spec.d), outer, params.h)


def contraction_stat(
    spec: EnvironmentSpec,
    hierarchy: ScaleHierarchy,
    n: int,
    n_env: int,
    params: ControlParams,
    seed: int,
    alpha: float,
    tail_level: float | None = None,
    fields: list[GridField] | None = None,
) -> ControlStatistics:
    """Ratios |chi_{n,0} S_n f|_n / |f|_n over environments and a normalized field ensemble.

    S_n f is the quenched solve over time L_n^2 minus the Gaussian step with
    the frozen ``alpha``.  Environments use stream (seed, 41, e) and fields
    (seed, 40, j), so runs at different eta0 are paired.  The tail check is
    the exact discrete exit probability P_0(X*_{L_n^2} >= v) from a
    localized solve, compared with exp(-v/D_n) at v = ``tail_level`` (D_n).
    ``fields`` replaces the random ensemble; they must live on
    :func:`control_template`'s grid.
    """
    lv = hierarchy[n]
    L = float(lv.L)
    beta = hierarchy.params.beta
    d = spec.d
    h = params.h
    v, t, eval_half, outer = _control_geometry(spec, L, alpha, params)
    corr = params.correlation_length if params.correlation_length is not None else L / 2.0
    template = control_template(spec, hierarchy, n, params, alpha)
    cells = template.values.size
    dt = h * h / (2.0 * d * spec.ellipticity)
    cost = cells * math.ceil(t / dt) * n_env
    if cost > params.budget:
        raise BudgetError(f"contraction statistics need ~{cost:.3g} cell updates; budget {params.budget:.3g}")
    if fields is None:
        fields = field_ensemble(template, L, beta, corr, params.n_fields, seed)
    for f in fields:
        if f.half_counts != template.half_counts or f.h != h or np.any(f.center != template.center):
            raise ValueError("fields must live on the control template grid")
        norm = scaled_holder_norm(f, L, beta)
        if not 0.5 <= norm <= 2.0:
            raise ValueError(f"field norm |f|_n = {norm:.4g} outside [1/2, 2]")
    eval_cells = int(math.floor(eval_half / h + 1e-9))
    chi = cutoff_like(template.crop(eval_cells), v)
    tail_v = lv.D if tail_level is None else float(tail_level)
    env_bound = math.exp(-tail_v / lv.D)
    s_gauss = alpha * t

    ratios, exits, passes = [], [], []
    K = dt_used = None
    for e in range(n_env):
        real = sample_environment(spec, (seed, CONTROL_STREAM, e), (np.zeros(d), outer + spec.R + 1.0))
        op = QuenchedOperator(real, template, interior_mask(template.values.shape))
        K, dt_used = op.step_plan(t)
        row = []
        for f in fields:
            rq = f.with_values(op.evolve(f.values, t))
            rg = gaussian_step(f, s_gauss)
            rq, rg = common_crop(rq.crop(eval_cells), rg.crop(min(eval_cells, min(rg.half_counts))))
            if rq.half_counts != chi.half_counts:
                raise ValueError("evaluation box larger than the valid defect region")
            s = rq.with_values(chi.values * (rq.values - rg.values))
            row.append(scaled_holder_norm(s, L, beta) / scaled_holder_norm(f, L, beta))
        ratios.append(row)
        p_exit = exit_probability(real, tail_v, t, h)
        exits.append(p_exit)
        passes.append(p_exit <= env_bound)

    tolerances = [] if spec.eta0 != 0.0 else [
        heat_defect_bound(f, K, dt_used, spec.diffusion_scale, s_gauss, L, beta, cutoff_radius=v)
        / scaled_holder_norm(f, L, beta)
        + 4.0 * params.tail_tol
        + 1e-12
        for f in fields
    ]
    envelope = decay_envelope(hierarchy, n, "holder_contraction")
    flat = np.asarray(ratios).ravel()
    below = [all(r <= envelope for r in row) for row in ratios]
    stats = ControlStatistics(
        level=n,
        eta0=spec.eta0,
        alpha=alpha,
        ratios=ratios,
        tolerances=tolerances,
        exit_probability=exits,
        tail_pass=passes,
        envelope=envelope,
        quantiles={f"q{int(q * 100)}": float(np.quantile(flat, q)) for q in (0.1, 0.5, 0.9)},
        fraction_below_envelope=float(np.mean(flat <= envelope)),
        event_frequency=float(np.mean([a and b for a, b in zip(below, passes)])),
    )
    return stats


def exit_probability(realization: EnvironmentRealization, radius: float, t: float, h: float) -> float:
    """P_0(sup_{s<=t}|X_s| >= radius) for the grid chain, from the localized solve of 1_{ball}."""
    d = realization.d
    tmpl = GridField.sample(lambda p: np.zeros(len(p)), np.zeros(d), radius + 2.0 * h, h)
    mask = ball_mask(tmpl, np.zeros(d), radius)
    op = QuenchedOperator(realization, tmpl, mask)
    u = op.evolve(mask.astype(float), t)
    return float(1.0 - u[tmpl.half_counts])


# -- coarse comparison -----------------------------------------------------


@dataclass
class CoarseComparison:
    level: int
    k: int
    sup_difference: float
    envelope: float
    eval_radius: float
    quenched_time: float
    n_gaussian: int

    @property
    def ratio(self) -> float:
        return self.sup_difference / self.envelope


def coarse_comparison_cost(spec: EnvironmentSpec, hierarchy: ScaleHierarchy, n: int, k: int, f: GridField) -> float:
    lv = hierarchy[n]
    dt = f.h**2 / (2.0 * spec.d * spec.ellipticity)
    return f.values.size * math.ceil(k * lv.ell**2 * float(lv.L) ** 2 / dt)


def _comparison_geometry(spec, hierarchy, n, k, alpha, h, tail_tol):
    lv, nxt = hierarchy[n], hierarchy[n + 1]
    n_steps = k * lv.ell**2
    t = float(lv.L) ** 2
    r_eval = 4.0 * math.sqrt(k) * nxt.D_tilde
    eval_cells = int(math.floor(r_eval / h + 1e-9)) + 1
    reach = (n_steps - 6) * gaussian_cells(alpha * t, h) * h
    ball = 6.0 * lv.D_tilde + r_eval + reach
    q_cells = int(math.ceil(box_margin(spec, n_steps * t, tail_tol) / h))
    need = max(eval_cells + q_cells, int(math.ceil(ball / h)) + 2)
    return r_eval, eval_cells, ball, need


def comparison_half_width(
    spec: EnvironmentSpec, hierarchy: ScaleHierarchy, n: int, k: int, alpha: float, h: float, tail_tol: float
) -> float:
    """Smallest grid half width accepted by :func:`coarse_comparison`."""
    return _comparison_geometry(spec, hierarchy, n, k, alpha, h, tail_tol)[3] * h


def coarse_comparison(
    realization: EnvironmentRealization,
    hierarchy: ScaleHierarchy,
    n: int,
    k: int,
    f: GridField,
    alpha: float,
    params: SolverParams,
) -> CoarseComparison:
    """sup over B_{4 sqrt(k) D~_{n+1}} of |R^{k l_n^2} f - G^{k l_n^2 - 6} R~^6 f|.

    The quenched side is one evolution over k l_n^2 L_n^2 (the same steps as
    k l_n^2 consecutive solves).  The localized solves use a ball of radius
    6 D~_n + (evaluation radius + Gaussian reach) centred at the grid centre
    so that every evaluation point sees its own 6 D~_n ball inside it.
    """
    if n + 1 >= len(hierarchy):
        raise ValueError(f"hierarchy has no level {n + 1}")
    lv, nxt = hierarchy[n], hierarchy[n + 1]
    n_steps = k * lv.ell**2
    if not 1 <= k < nxt.ell**2:
        raise ValueError("k must satisfy 1 <= k < l_{n+1}^2")
    if n_steps <= 6:
        raise ValueError("need k l_n^2 > 6")
    spec = realization.spec
    h = f.h
    cost = coarse_comparison_cost(spec, hierarchy, n, k, f)
    if cost > params.budget:
        raise BudgetError(f"coarse comparison needs ~{cost:.3g} cell updates; budget {params.budget:.3g}")
    t = float(lv.L) ** 2
    s = alpha * t
    n_gauss = n_steps - 6
    r_eval, eval_cells, ball, need = _comparison_geometry(spec, hierarchy, n, k, alpha, h, params.tail_tol)
    if min(f.half_counts) < need:
        raise ValueError(f"grid too small: need half count {need}, have {min(f.half_counts)}")

    full = QuenchedOperator(realization, f, interior_mask(f.values.shape))
    left = f.with_values(full.evolve(f.values, n_steps * t))
    local = QuenchedOperator(realization, f, ball_mask(f, f.center, ball))
    right = f
    for _ in range(6):
        right = right.with_values(local.evolve(right.values, t))
    for _ in range(n_gauss):
        right = gaussian_step(right, s)
    left, right = common_crop(left.crop(min(f.half_counts)), right)
    left, right = left.crop(eval_cells), right.crop(eval_cells)
    inside = left.distance_from(left.center) <= r_eval
    diff = float(np.abs(left.values - right.values)[inside].max())
    return CoarseComparison(
        level=n,
        k=k,
        sup_difference=diff,
        envelope=decay_envelope(hierarchy, n, "cauchy_gap"),
        eval_radius=r_eval,
        quenched_time=n_steps * t,
        n_gaussian=n_gauss,
    )

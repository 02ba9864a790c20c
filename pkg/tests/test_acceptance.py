"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest -m acceptance -s`` (the lines are printed even without -s).
Hierarchies are chosen per criterion: the level-0 diffusivity is a stopped
second moment, so criteria about alpha use a wide hierarchy in which
stopping at D~_0 is negligible.
"""

import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renormlab.cli.main import main as cli_main
from renormlab.diffusion import estimate_alpha, path_statistics
from renormlab.environment import (
    EnvironmentSpec,
    constant,
    linear_combination,
    sample_environment,
    site_drift,
    window_mean_perturbation,
)
from renormlab.homogenize import convergence_sweep
from renormlab.kernels import (
    GridField,
    SolverParams,
    bump,
    cutoff_field,
    duality_check,
    gaussian_step,
    scaled_holder_norm,
    solve_quenched,
)
from renormlab.renorm import ControlParams, PiParams, cauchy_gap, contraction_stat, estimate_pi_n
from renormlab.scales import ScaleParams, build_hierarchy
from renormlab.stats import Estimate

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion (bypassing capture), then assert."""

    def report(number: int, ok: bool, detail: str, elapsed: float, limit: float):
        in_time = elapsed <= limit
        line = f"{'PASS' if ok and in_time else 'FAIL'} criterion {number}: {detail} [{elapsed:.1f}s / {limit:.0f}s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
        assert in_time, line

    return report


def hierarchy(d, L0, c0, N=0):
    return build_hierarchy(ScaleParams(d=d, beta=0.5, a=1.0, L0=L0, c0=c0, N=N))


# 1 ---------------------------------------------------------------------------------


def test_criterion_01_brownian_diffusivity(verdict):
    start = time.perf_counter()
    hier = hierarchy(3, 25, 5.0)  # D~_0 is astronomically large: no stopping
    est = estimate_alpha(EnvironmentSpec(d=3, eta0=0.0), hier, 0, n_env=10, n_paths=10_000, dt=625 / 400, seed=1)
    ok = abs(est.mean - 1.0) <= 3 * est.stderr and est.stderr <= 0.02
    verdict(1, ok, f"alpha_0 = {est.mean:.5f} +- {est.stderr:.5f} (target 1)", time.perf_counter() - start, 60)


# 2 ---------------------------------------------------------------------------------


def test_criterion_02_ellipticity_bounds(verdict):
    start = time.perf_counter()
    hier = hierarchy(2, 5, 5.0)
    parts, ok = [], True
    for eta0 in (0.05, 0.1):
        spec = EnvironmentSpec(d=2, eta0=eta0, nu=2.0)
        est = estimate_alpha(spec, hier, 0, n_env=20, n_paths=500, dt=0.05, seed=2)
        lo, hi = 1.0 / (2 * spec.nu), 2 * spec.nu
        ok &= lo + 3 * est.stderr <= est.mean <= hi - 3 * est.stderr
        parts.append(f"eta0={eta0}: {est.mean:.4f} +- {est.stderr:.4f}")
    verdict(2, ok, "alpha_0 in [0.25, 4] with 3 se margin; " + ", ".join(parts), time.perf_counter() - start, 300)


# 3 ---------------------------------------------------------------------------------


def test_criterion_03_fd_mc_duality(verdict):
    start = time.perf_counter()
    spec = EnvironmentSpec(d=2, eta0=0.1)
    probes = [[0.0, 0.0], [0.5, -0.25], [1.0, 1.0]]
    ok, worst, slopes = True, 0.0, []
    for e in range(5):
        real = sample_environment(spec, (3, e), (np.zeros(2), 40.0))
        rep = duality_check(real, bump(1.5), 4.0, [0.25, 0.125, 0.0625], probes, 20_000, 0.02, seed=e, tail_tol=1e-8)
        slopes.append(rep.refinement_slope)
        ok &= rep.ok and abs(rep.refinement_slope - 2.0) <= 0.3
        worst = max(worst, max(d / t for d, t in zip(rep.discrepancy, rep.tolerance)))
    detail = f"max discrepancy/tolerance = {worst:.3f}; refinement slopes {', '.join(f'{s:.2f}' for s in slopes)}"
    verdict(3, ok, detail, time.perf_counter() - start, 600)


# 4 ---------------------------------------------------------------------------------

SEEDS = st.integers(0, 2**32 - 1)
CASES = 100


def _field(seed, half, h=0.5, scale=1.0):
    gen = np.random.default_rng(seed)
    return GridField.sample(lambda p: scale * gen.uniform(-1, 1, len(p)), np.zeros(2), half, h)


def _run_suite(prop, strategies) -> tuple[int, str | None]:
    count = [0]

    @settings(max_examples=CASES, deadline=None, database=None)
    @given(st.tuples(*strategies))
    def check(args):
        count[0] += 1
        prop(*args)

    try:
        check()
    except Exception as e:  # the falsifying example is reported in the verdict line
        return count[0], f"{type(e).__name__}: {e}"
    return count[0], None


def test_criterion_04_exact_inequality_suites(verdict):
    start = time.perf_counter()
    real = sample_environment(EnvironmentSpec(d=2, eta0=0.2), 21, (np.zeros(2), 30.0))

    def solver_contraction(seed, t):
        f = _field(seed, 6.0)
        out = solve_quenched(real, f, t, SolverParams(h=0.5, crop=False))
        assert out.values.max() <= f.values.max() and out.values.min() >= f.values.min()
        assert out.sup() <= f.sup()

    def product(s1, s2, L, beta):
        f, g = _field(s1, 4.0), _field(s2, 4.0, scale=3.0)
        fg = f.with_values(f.values * g.values)
        assert scaled_holder_norm(fg, L, beta) <= scaled_holder_norm(f, L, beta) * scaled_holder_norm(g, L, beta) * (1 + 1e-12)

    def patching(seed, n_pieces, beta):
        # f agrees with g_i on B(x_i, 20 sqrt(d) L) and vanishes off the union of B(x_i, 10 sqrt(d) L)
        d, L, h = 2, 0.25, 0.25
        gen = np.random.default_rng(seed)
        base = GridField.sample(lambda p: gen.uniform(-1, 1, len(p)), np.zeros(d), 12.0, h)
        pts = base.points()
        centers = gen.uniform(-8, 8, size=(n_pieces, d))
        dist = np.linalg.norm(pts[:, None, :] - centers[None], axis=2)
        f_vals = np.where((dist < 10 * math.sqrt(d) * L).any(axis=1), base.values.ravel(), 0.0)
        f = base.with_values(f_vals.reshape(base.values.shape))
        pieces = [
            base.with_values(
                np.where(dist[:, i] < 20 * math.sqrt(d) * L, f_vals, gen.uniform(-2, 2, len(pts))).reshape(base.values.shape)
            )
            for i in range(n_pieces)
        ]
        assert scaled_holder_norm(f, L, beta) <= 3 * max(scaled_holder_norm(g, L, beta) for g in pieces)

    def gaussian_constants(c, s):
        assert np.all(gaussian_step(GridField.constant(c, [0.0, 0.0], 14.0, 0.5), s).values == c)

    def gaussian_contraction(seed, s, L, beta):
        f = _field(seed, 12.0)
        out = gaussian_step(f, s)
        assert out.sup() <= f.sup() + 1e-9
        assert scaled_holder_norm(out, L, beta) <= scaled_holder_norm(f, L, beta) + 1e-9

    def cutoff_range(v, x, h):
        c = cutoff_field(v, x, (np.zeros(2), 6.0), h)
        assert c.values.min() >= 0.0 and c.values.max() <= 1.0

    suites = {
        "solver sup contraction": (solver_contraction, (SEEDS, st.floats(0.05, 2.0))),
        "product": (product, (SEEDS, SEEDS, st.floats(0.5, 4.0), st.floats(0.05, 1.0))),
        "patching": (patching, (SEEDS, st.integers(1, 4), st.floats(0.05, 1.0))),
        "gaussian constants": (gaussian_constants, (st.floats(-100, 100), st.floats(0.05, 4.0))),
        "gaussian contraction": (gaussian_contraction, (SEEDS, st.floats(0.1, 3.0), st.floats(0.5, 6.0), st.floats(0.05, 1.0))),
        "cutoff range": (
            cutoff_range,
            (st.floats(0.1, 10.0), st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(0.1, 1.0)),
        ),
    }
    ok, parts = True, []
    for name, (prop, strategies) in suites.items():
        n, err = _run_suite(prop, strategies)
        ok &= err is None and n >= CASES
        parts.append(f"{name} {n}" + ("" if err is None else f" ({err})"))
    verdict(4, ok, "cases per suite, zero failures: " + "; ".join(parts), time.perf_counter() - start, 120)


# 5 ---------------------------------------------------------------------------------


def test_criterion_05_defect_calibration(verdict):
    start = time.perf_counter()
    hier = hierarchy(2, 5, 2.5)
    params = ControlParams(h=1.25)
    medians, ok = [], True
    for eta0 in (0.0, 0.05, 0.2):
        spec = EnvironmentSpec(d=2, eta0=eta0)
        # the flat diffusivity is exactly diffusion_scale; otherwise freeze the estimate
        alpha = spec.diffusion_scale if eta0 == 0.0 else estimate_alpha(spec, hier, 0, 8, 2000, 0.05, seed=7).mean
        stats = contraction_stat(spec, hier, 0, 4, params, seed=11, alpha=alpha)
        if eta0 == 0.0:
            ok &= all(r <= tol for row in stats.ratios for r, tol in zip(row, stats.tolerances))
            flat = f"max ratio/tolerance {max(r / t for row in stats.ratios for r, t in zip(row, stats.tolerances)):.3f}"
        medians.append(stats.median)
    ok &= medians[0] < medians[1] < medians[2]
    detail = f"eta0=0 {flat}; medians {' < '.join(f'{m:.3e}' for m in medians)}"
    verdict(5, ok, detail, time.perf_counter() - start, 600)


# 6 ---------------------------------------------------------------------------------


def test_criterion_06_pi_oracles(verdict):
    start = time.perf_counter()
    hier = hierarchy(2, 5, 0.05)
    params = PiParams(h=0.5)
    noisy = EnvironmentSpec(d=2, eta0=0.1)
    f, g = site_drift(0), window_mean_perturbation(noisy, 0.5)
    combo = linear_combination([f, g], [2.0, -0.5])
    one, rf, rg, rc = estimate_pi_n(noisy, hier, 0, [constant(1.0), f, g, combo], 4, params, seed=6)
    ok_const = all(v == 1.0 for v in one.samples) and one.mean == 1.0
    lin_err = max(abs(c - (2.0 * a - 0.5 * b)) for a, b, c in zip(rf.samples, rg.samples, rc.samples))
    ok_lin = lin_err <= 1e-12

    flat = EnvironmentSpec(d=2, eta0=0.0)
    obs = [site_drift(0), window_mean_perturbation(flat, 0.5, unscaled=True)]
    recs = estimate_pi_n(flat, hier, 0, obs, 40, params, seed=4)
    ok_fub, parts = True, []
    for rec in recs:
        direct = Estimate.from_samples(rec.direct)
        combined = math.hypot(rec.estimate.stderr, direct.stderr)
        gap = abs(rec.mean - direct.mean)
        ok_fub &= gap <= 3 * combined
        parts.append(f"{rec.observable} |gap| {gap:.2e} <= 3*{combined:.2e}")
    detail = f"pi(1) = {one.mean!r}; linearity error {lin_err:.1e}; " + "; ".join(parts)
    verdict(6, ok_const and ok_lin and ok_fub, detail, time.perf_counter() - start, 600)


# 7 ---------------------------------------------------------------------------------


def test_criterion_07_cauchy_gap_trend(verdict):
    start = time.perf_counter()
    hier = hierarchy(2, 5, 0.05, N=1)
    params = PiParams(h=1.25)
    gaps = {
        eta0: cauchy_gap(EnvironmentSpec(d=2, eta0=eta0), hier, 0, site_drift(0), 8, params, seed=12)
        for eta0 in (0.05, 0.1, 0.2)
    }
    mid = gaps[0.1]
    ok_mid = mid.within()
    lo, hi = gaps[0.05], gaps[0.2]
    band = 3 * math.hypot(lo.stderr, hi.stderr)
    ok_trend = lo.gap <= hi.gap + band
    detail = (
        f"eta0=0.1 gap {mid.gap:.2e} (3 se {3 * mid.stderr:.2e}, envelope {mid.envelope:.2e}); "
        f"gap(0.05) {lo.gap:.2e} <= gap(0.2) {hi.gap:.2e} + {band:.2e}"
    )
    verdict(7, ok_mid and ok_trend, detail, time.perf_counter() - start, 3600)


# 8 ---------------------------------------------------------------------------------


def test_criterion_08_homogenization_variance_decay(verdict):
    start = time.perf_counter()
    hier = hierarchy(2, 5, 0.05)
    spec = EnvironmentSpec(d=2, eta0=0.1)
    run = convergence_sweep(
        spec, hier, site_drift(0), [1.0, 0.5, 0.25, 0.125], 40, [(np.zeros(2), 1.0)], SolverParams(h=0.5, tail_tol=1e-8), seed=3
    )
    last = len(run.eps) - 1
    dev, comb = run.deviation(last, 0), run.combined_stderr(last, 0)
    ok = run.std_trend_ok() and dev <= 3 * comb
    stds = ", ".join(f"{run.std(i, 0):.2e}" for i in range(len(run.eps)))
    verdict(8, ok, f"std over eps 1..1/8: {stds}; |mean - pi| {dev:.2e} <= 3*{comb:.2e}", time.perf_counter() - start, 1800)


# 9, 10 -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def annealed_paths():
    start = time.perf_counter()
    hier = hierarchy(2, 10, 1.0)  # kappa_0 about 2, so D_0 is twice L_0
    D = hier[0].D
    spec = EnvironmentSpec(d=2, eta0=0.1)
    rep = path_statistics(spec, hier, 0, [D, 2 * D], t=4.0, n_samples=20_000, seed=9, dt=0.05, n_env=100)
    return rep, time.perf_counter() - start


def test_criterion_09_tail_envelope(verdict, annealed_paths):
    rep, elapsed = annealed_paths
    parts = [f"v={r['v']:.2f}: P={r['empirical']:.4f} vs exp {r['envelope']:.4f} + 3*{r['stderr']:.1e}" for r in rep.tail_rows]
    verdict(9, all(r["pass"] for r in rep.tail_rows), "; ".join(parts), elapsed, 300)


def test_criterion_10_annealed_symmetry(verdict, annealed_paths):
    rep, elapsed = annealed_paths
    means = rep.mean_displacement
    sym = rep.symmetry_rows
    ok = all(r["pass"] for r in means + sym)
    worst_mean = max(abs(r["mean"]) / r["stderr"] for r in means)
    worst_sym = max(r["discrepancy"] / r["joint_stderr"] for r in sym)
    detail = f"max |E X_t|/se {worst_mean:.2f}; max swap discrepancy/joint se {worst_sym:.2f} over {len(sym)} checks"
    verdict(10, ok, detail, elapsed, 300)


# 11 --------------------------------------------------------------------------------


def test_criterion_11_rerun_is_bit_identical(verdict, tmp_path, capsys):
    start = time.perf_counter()
    configs = sorted(CONFIGS.glob("*.toml"))
    ok, mismatched = len(configs) == 8, []
    for cfg in configs:
        first, second = tmp_path / f"{cfg.stem}-a", tmp_path / f"{cfg.stem}-b"
        ok &= cli_main(["run", str(cfg), "--out", str(first)]) == 0
        ok &= cli_main(["run", str(first / "manifest.json"), "--out", str(second)]) == 0
        csvs = sorted(first.glob("*.csv"))
        ok &= bool(csvs)
        for p in csvs:
            if (second / p.name).read_bytes() != p.read_bytes():
                mismatched.append(f"{cfg.stem}/{p.name}")
        shutil.rmtree(second)
    capsys.readouterr()
    ok &= not mismatched
    detail = f"{len(configs)} experiment kinds rerun from their manifests; mismatched CSVs: {mismatched or 'none'}"
    verdict(11, ok, detail, time.perf_counter() - start, 300)

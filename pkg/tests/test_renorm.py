import numpy as np
import pytest

from renormlab.environment import (
    EnvironmentSpec,
    constant,
    linear_combination,
    sample_environment,
    site_drift,
    window_mean_perturbation,
)
from renormlab.kernels import BudgetError, GridField, SolverParams
from renormlab.renorm import (
    ControlParams,
    PiParams,
    cauchy_gap,
    coarse_comparison,
    comparison_half_width,
    contraction_stat,
    control_template,
    estimate_pi_n,
    exit_probability,
    field_ensemble,
    pi_environment,
    pi_sample,
)

PI = PiParams(h=1.25)


def test_pi_of_constant_is_exact(env2, small_hierarchy):
    rec = estimate_pi_n(env2, small_hierarchy, 0, constant(0.3), 3, PI, seed=1)
    assert rec.samples == [0.3, 0.3, 0.3]
    assert rec.mean == 0.3 and rec.estimate.stderr == 0.0
    zero = estimate_pi_n(env2, small_hierarchy, 0, constant(0.0), 2, PI, seed=1)
    assert zero.samples == [0.0, 0.0]


def test_pi_linear_and_monotone(env2, small_hierarchy):
    f, g = site_drift(0), window_mean_perturbation(env2, 0.5)
    combo = linear_combination([f, g], [2.0, -0.5])
    shifted = linear_combination([f, constant(1.0)], [1.0, 1.0])
    recs = estimate_pi_n(env2, small_hierarchy, 0, [f, g, combo, shifted], 3, PI, seed=2)
    for i in range(3):
        lin = 2.0 * recs[0].samples[i] - 0.5 * recs[1].samples[i]
        assert abs(recs[2].samples[i] - lin) <= 1e-12
        assert recs[3].samples[i] >= recs[0].samples[i]
        assert abs(recs[3].samples[i] - recs[0].samples[i] - 1.0) <= 1e-12


def test_pi_sample_is_shift_covariant(env2, small_hierarchy):
    real = pi_environment(env2, small_hierarchy, 0, PI, seed=3, e=0, extra=4.0)
    y = np.array([2.0, -3.0])
    obs = [site_drift(1)]
    moved = pi_sample(real.transform(y), small_hierarchy, 0, obs, PI)
    direct = pi_sample(real, small_hierarchy, 0, obs, PI, center=y)
    assert moved == direct


def test_fubini_with_flat_coefficients(small_hierarchy):
    spec = EnvironmentSpec(d=2, eta0=0.0)
    rec = estimate_pi_n(spec, small_hierarchy, 0, site_drift(0), 40, PI, seed=4)
    check = rec.fubini_check()
    assert abs(check.mean) <= 3 * check.stderr
    assert rec.metadata["ball_radius"] == 6.0 * small_hierarchy[0].D_tilde


def test_pi_budget_and_level_checks(env2, small_hierarchy):
    with pytest.raises(BudgetError):
        estimate_pi_n(env2, small_hierarchy, 0, constant(1.0), 2, PiParams(h=1.25, budget=10), seed=0)
    with pytest.raises(ValueError):
        estimate_pi_n(env2, small_hierarchy, 0, constant(1.0), 1, PI, seed=0)
    with pytest.raises(ValueError):
        cauchy_gap(env2, small_hierarchy, 1, constant(1.0), 2, PI, seed=0)


def test_cauchy_gap_of_constant(env2, small_hierarchy):
    gap = cauchy_gap(env2, small_hierarchy, 0, constant(1.0), 2, PiParams(h=2.5), seed=5)
    assert gap.gap == 0.0 and gap.stderr == 0.0 and gap.within()
    assert gap.envelope > 0 and gap.to_row()["ratio"] == 0.0


CTRL = ControlParams(h=1.25, cutoff_radius=5.0)


def test_field_ensemble_normalized_and_reproducible(env2, small_hierarchy):
    from renormlab.kernels import scaled_holder_norm

    tmpl = control_template(env2, small_hierarchy, 0, CTRL, 1.0)
    a = field_ensemble(tmpl, 5.0, 0.5, 2.5, 2, seed=7)
    b = field_ensemble(tmpl, 5.0, 0.5, 2.5, 2, seed=7)
    for f, g in zip(a, b):
        assert np.array_equal(f.values, g.values)
        assert f.half_counts == tmpl.half_counts
        assert scaled_holder_norm(f, 5.0, 0.5) == pytest.approx(1.0, rel=1e-12)
    assert not np.array_equal(a[0].values, a[1].values)


def test_contraction_of_constant_field(env2, small_hierarchy):
    tmpl = control_template(env2, small_hierarchy, 0, CTRL, 1.0)
    ones = tmpl.with_values(np.ones_like(tmpl.values))
    stats = contraction_stat(env2, small_hierarchy, 0, 2, CTRL, seed=1, alpha=1.0, fields=[ones])
    assert stats.flat_ratios.tolist() == [0.0, 0.0]
    assert stats.tolerances == []
    assert stats.quantiles["q50"] == 0.0 and stats.fraction_below_envelope == 1.0


def test_contraction_rejects_foreign_fields(env2, small_hierarchy):
    tmpl = control_template(env2, small_hierarchy, 0, CTRL, 1.0)
    small = tmpl.shrink(1).with_values(np.ones(tmpl.shrink(1).values.shape))
    with pytest.raises(ValueError, match="template"):
        contraction_stat(env2, small_hierarchy, 0, 1, CTRL, seed=1, alpha=1.0, fields=[small])
    big = tmpl.with_values(np.full(tmpl.values.shape, 3.0))
    with pytest.raises(ValueError, match="outside"):
        contraction_stat(env2, small_hierarchy, 0, 1, CTRL, seed=1, alpha=1.0, fields=[big])
    with pytest.raises(BudgetError):
        contraction_stat(env2, small_hierarchy, 0, 1, ControlParams(h=1.25, cutoff_radius=5.0, budget=1), 1, 1.0)


def test_flat_contraction_within_discretization_tolerance(small_hierarchy):
    spec = EnvironmentSpec(d=2, eta0=0.0)
    stats = contraction_stat(spec, small_hierarchy, 0, 2, CTRL, seed=2, alpha=1.0)
    assert len(stats.tolerances) == CTRL.n_fields
    for row in stats.ratios:
        assert all(r <= tol for r, tol in zip(row, stats.tolerances))


def test_exit_probability_range(real2):
    lo = exit_probability(real2, 6.0, 1.0, 0.5)
    hi = exit_probability(real2, 2.0, 1.0, 0.5)
    assert 0.0 <= lo < hi <= 1.0
    assert lo < 1e-3


def test_coarse_comparison_constant_and_bound(env2, small_hierarchy):
    h = 2.5
    half = comparison_half_width(env2, small_hierarchy, 0, 1, 1.0, h, 1e-10)
    real = sample_environment(env2, 8, (np.zeros(2), half + 2.0))
    params = SolverParams(h=h, tail_tol=1e-10)
    const = GridField.constant(0.4, [0.0, 0.0], half, h)
    res = coarse_comparison(real, small_hierarchy, 0, 1, const, 1.0, params)
    assert res.sup_difference == 0.0 and res.n_gaussian == 19
    gen = np.random.default_rng(0)
    noisy = const.with_values(gen.uniform(-1, 1, const.values.shape))
    res = coarse_comparison(real, small_hierarchy, 0, 1, noisy, 1.0, params)
    assert res.sup_difference <= 2 * noisy.sup()
    with pytest.raises(ValueError, match="too small"):
        coarse_comparison(real, small_hierarchy, 0, 1, const.shrink(2), 1.0, params)
    with pytest.raises(ValueError):
        coarse_comparison(real, small_hierarchy, 0, 0, const, 1.0, params)

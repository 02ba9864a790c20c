import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from renormlab.scales import (
    ScaleError,
    ScaleHierarchy,
    ScaleParams,
    build_hierarchy,
    decay_envelope,
    log_envelope,
    m0_for,
    validate_strict,
)


def hier(**kw):
    base = dict(d=3, beta=0.5, a=0.5, L0=25, c0=0.1, N=2)
    base.update(kw)
    return build_hierarchy(ScaleParams(**base))


def test_floor_recursion_hand_values():
    # 25^0.5 = 5 -> 5 floor(1) = 5; 125^0.5 = 11.18 -> 5 floor(2.236) = 10
    h = hier()
    assert [lv.L for lv in h.levels] == [25, 125, 1250]
    assert [lv.ell for lv in h.levels[:2]] == [5, 10]


def test_delta_at_half_beta():
    assert hier().delta == 5.0 / 64.0


def test_collapse_names_level():
    with pytest.raises(ScaleError, match="level 0"):
        build_hierarchy(ScaleParams(d=3, beta=0.5, a=0.5, L0=10, c0=0.1, N=1))


def test_top_level_may_have_zero_ell():
    h = build_hierarchy(ScaleParams(d=3, beta=0.5, a=0.5, L0=10, c0=0.1, N=0))
    assert h[0].ell == 0 and len(h) == 1


def test_level_quantities():
    h = hier(c0=0.3)
    for lv in h.levels:
        q = math.log(math.log(lv.L)) ** 2
        assert lv.kappa == math.exp(0.3 * q)
        assert lv.kappa_tilde == math.exp(0.6 * q)
        assert lv.D == lv.L * lv.kappa
        assert lv.D_tilde == lv.L * lv.kappa_tilde


def test_m0_and_M0():
    # (1.5)^11 = 86.5, (1.5)^12 = 129.7 -> m0 - 1 = 12
    assert m0_for(0.5) == 13
    h = hier()
    assert h.m0 == 13
    assert h.M0 == 100 * 3 * 1.5 ** 15
    # (1+a)^{m0-1} > 100 >= (1+a)^{m0-2} for small a
    for a in (0.01, 1e-4, 1e-7, 3.0):
        m = m0_for(a)
        assert (1 + a) ** (m - 1) > 100 and (m == 2 or (1 + a) ** (m - 2) <= 100)


def test_params_reject_bad_values():
    with pytest.raises(ValueError):
        ScaleParams(d=3, beta=0.5, a=0.5, L0=12, c0=0.1)
    with pytest.raises(ValueError):
        ScaleParams(d=3, beta=1.5, a=0.5, L0=25, c0=0.1)
    with pytest.raises(ValueError):
        ScaleParams(d=0, beta=0.5, a=0.5, L0=25, c0=0.1)
    with pytest.raises(ValueError):
        ScaleParams(d=3, beta=0.5, a=0.5, L0=25, c0=0.1, strict_mode=True)
    with pytest.raises(ValueError):
        ScaleParams(d=2, beta=0.5, a=1e-5, L0=25, c0=0.1, strict_mode=True)
    ScaleParams(d=3, beta=0.5, a=1e-4, L0=25, c0=0.1, strict_mode=True)


def test_validity_table_matches_direct_evaluation():
    h = hier(a=0.5, c0=0.1, N=2)
    rep = validate_strict(h)
    lv = h.levels
    for i, row in enumerate(rep.levels):
        assert row["L_lt_D"] == (lv[i].L < lv[i].D)
        assert row["D_lt_D_tilde"] == (lv[i].D < lv[i].D_tilde)
        if i + 1 < len(lv):
            assert row["D_tilde_lt_next_L"] == (lv[i].D_tilde < lv[i + 1].L)
            assert row["kappa_tilde_growth"] == (4 * lv[i].kappa_tilde < lv[i + 1].kappa_tilde)
            assert row["next_D_tilde_lt_next_L_sq"] == (3 * lv[i + 1].D_tilde < lv[i + 1].L ** 2)
    assert rep.ok == (all(rep.params.values()) and all(all(r.values()) for r in rep.levels))
    # a = 0.5 is far above beta/(1000 d)
    assert not rep.params["a_below_beta_over_1000d"]
    assert "params.a_below_beta_over_1000d" in rep.violations()
    assert not rep.ok


def test_single_level_has_no_pair_constraints():
    rep = validate_strict(hier(N=0))
    assert set(rep.levels[0]) == {"L_lt_D", "D_lt_D_tilde"}


def test_cauchy_envelope_exponent():
    h = build_hierarchy(ScaleParams(d=3, beta=0.5, a=0.01, L0=125, c0=0.1, N=0))
    # 0.5 - 7 (5/64 - 0.05) = 0.5 - 7 * 0.028125 = 0.303125
    assert h.cauchy_exponent == pytest.approx(0.303125, abs=1e-15)
    assert decay_envelope(h, 0, "cauchy_gap") == pytest.approx(125**0.303125, rel=1e-14)


def test_envelope_special_values():
    assert math.exp(log_envelope("holder_contraction", L=1, beta=0.5, a=0.1, M0=10)) == 1.0
    h = hier()
    assert decay_envelope(h, 1, "localization_tail", v=h[1].D) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert decay_envelope(h, 0, "gaussian_tail") == math.exp(-h[0].kappa_tilde ** 2)
    with pytest.raises(ValueError):
        decay_envelope(h, 0, "nope")
    with pytest.raises(ValueError):
        decay_envelope(h, 0, "localization_tail")


def test_json_round_trip_and_tamper():
    h = hier()
    again = ScaleHierarchy.from_json(h.to_json())
    assert again.levels == h.levels and again.M0 == h.M0
    data = h.to_dict()
    data["levels"][1]["L"] += 5
    with pytest.raises(ScaleError):
        ScaleHierarchy.from_dict(data)


def test_overflow_rejected():
    with pytest.raises(ScaleError, match="2\\^53"):
        build_hierarchy(ScaleParams(d=3, beta=0.5, a=1.0, L0=1000, c0=0.1, N=4))


params_st = st.builds(
    lambda L0, a, N, c0: ScaleParams(d=3, beta=0.5, a=a, L0=L0, c0=c0, N=N),
    L0=st.integers(1, 400).map(lambda k: 5 * k),
    a=st.floats(0.05, 1.0),
    N=st.integers(0, 3),
    c0=st.floats(0.01, 1.0),
)


def _build_or_skip(p):
    try:
        return build_hierarchy(p)
    except ScaleError:
        assume(False)


@given(params_st)
def test_recursion_exact_and_sandwiched(p):
    h = _build_or_skip(p)
    for lv, nxt in zip(h.levels, h.levels[1:]):
        assert nxt.L == lv.ell * lv.L
        assert lv.ell == 5 * math.floor(lv.L**p.a / 5 + 1e-9)
        if lv.ell >= 5:
            assert 0.5 * lv.L ** (1 + p.a) <= nxt.L <= 2.0 * lv.L ** (1 + p.a)


@given(params_st)
def test_monotone_levels(p):
    h = _build_or_skip(p)
    assume(all(lv.ell >= 5 for lv in h.levels[:-1]))
    for lv, nxt in zip(h.levels, h.levels[1:]):
        assert nxt.L > lv.L and nxt.D > lv.D and nxt.D_tilde > lv.D_tilde and nxt.kappa > lv.kappa


@given(
    st.lists(st.integers(5, 10**12), min_size=2, max_size=6, unique=True).map(sorted),
    st.floats(0.05, 0.5),
    st.floats(0.01, 1.0),
)
def test_envelopes_decrease_when_exponent_negative(Ls, beta, frac):
    # beta - 7(delta - 5a) < 0 iff 35 a < (3/32) beta; strict hierarchies collapse at
    # buildable L0, so the check runs on the envelope over increasing scales
    a = frac * (3.0 / 32.0) * beta / 35.0 * 0.999
    M0 = 100 * 3 * (1 + a) ** (m0_for(a) + 2)
    for kind in ("cauchy_gap", "event_failure"):
        logs = [log_envelope(kind, L=L, beta=beta, a=a, M0=M0) for L in Ls]
        assert all(y < x for x, y in zip(logs, logs[1:]))

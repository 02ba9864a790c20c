"""Dispatch from a validated config to the module pipelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..diffusion import alpha_samples, path_statistics, tail_radius
from ..environment import (
    LocalObservable,
    audit_environment,
    constant,
    drift_component,
    sample_environment,
    site_drift,
    window_mean_perturbation,
)
from ..homogenize import convergence_sweep, environment_time_average
from ..kernels import GridField, box_margin
from ..renorm import (
    ControlParams,
    PiParams,
    _control_geometry,
    cauchy_gap,
    coarse_comparison,
    coarse_comparison_cost,
    comparison_half_width,
    contraction_stat,
    estimate_pi_n,
    field_ensemble,
    pi_cost,
)
from ..scales import build_hierarchy
from ..stats import Estimate
from .config import ConfigError, ExperimentConfig

EXACT_AUDIT_CHECKS = ("drift_bounded", "perturbation_bounded", "elliptic", "eigen_range")


@dataclass
class Outcome:
    tables: dict[str, list[dict]]
    assertions: dict[str, bool] = field(default_factory=dict)
    steps: dict[str, float] = field(default_factory=dict)


def parse_observable(text: str, spec) -> LocalObservable:
    """'const:c', 'site_drift:i[:gain]', 'drift:i' or 'window:radius'."""
    name, _, rest = text.partition(":")
    args = rest.split(":") if rest else []
    try:
        if name == "const":
            return constant(float(args[0]))
        if name == "site_drift":
            return site_drift(int(args[0]), *(float(a) for a in args[1:2]))
        if name == "drift":
            return drift_component(int(args[0]))
        if name == "window":
            return window_mean_perturbation(spec, float(args[0]))
    except (IndexError, ValueError) as e:
        raise ConfigError(f"bad observable {text!r}: {e}") from None
    raise ConfigError(f"unknown observable {text!r}; expected const, site_drift, drift or window")


def _row(quantity, level, label, value, stderr=float("nan"), count=0) -> dict:
    return {"quantity": quantity, "level": level, "label": label, "value": float(value), "stderr": float(stderr), "count": int(count)}


def _observables(cfg: ExperimentConfig, spec) -> list[LocalObservable]:
    return [parse_observable(t, spec) for t in cfg.data["observables"]["list"]]


def _const_value(text: str) -> float | None:
    return float(text.split(":")[1]) if text.startswith("const:") else None


def _controls_params(cfg: ExperimentConfig) -> ControlParams:
    c = cfg.section("controls")
    s = cfg.section("solver")
    return ControlParams(
        h=float(s["h"]),
        tail_tol=float(s["tail_tol"]),
        correlation_length=c["correlation_length"],
        cutoff_radius=c["cutoff_radius"],
        n_fields=c["n_fields"],
        budget=cfg.budget,
    )


def _pi_params(cfg: ExperimentConfig) -> PiParams:
    s = cfg.section("solver")
    return PiParams(h=float(s["h"]), tail_tol=float(s["tail_tol"]), budget=cfg.budget)


# -- cost estimates ---------------------------------------------------------


def estimate_cost(cfg: ExperimentConfig) -> dict[str, float]:
    """Work estimate: grid cell updates and Euler steps."""
    kind = cfg.kind
    spec = cfg.environment()
    smp = cfg.section("samples")
    if kind == "audit":
        return {"coefficient_evaluations": float(smp["n_samples"] * smp["n_points"] * 8)}
    if kind == "time-average":
        ta = cfg.section("time_average")
        return {"path_steps": float(smp["n_paths"] * math.ceil(ta["T"] / cfg.data["paths"]["dt"]))}
    hier = build_hierarchy(cfg.scales())
    n = cfg.level
    if kind != "homogenize" and n >= len(hier):
        raise ConfigError(f"experiment.level={n} exceeds the hierarchy's top level {len(hier) - 1}")
    if kind == "alpha":
        t = float(hier[n].L) ** 2
        return {"path_steps": float(smp["n_env"] * smp["n_paths"] * math.ceil(t / cfg.data["paths"]["dt"]))}
    h = float(cfg.data["solver"]["h"])
    dt = h * h / (2.0 * spec.d * spec.ellipticity)
    if kind == "controls":
        c = cfg.section("controls")
        alpha = 1.0 if not isinstance(c["alpha"], (int, float)) else float(c["alpha"])
        _, t, _, outer = _control_geometry(spec, float(hier[n].L), alpha, _controls_params(cfg))
        cells = (2.0 * outer / h + 1) ** spec.d
        out = {"cell_updates": cells * math.ceil(t / dt) * smp["n_env"]}
        if c["alpha"] == "estimate":
            out["path_steps"] = float(max(smp["n_env"], 2) * c["n_paths"] * math.ceil(t / c["path_dt"]))
        if c["tail_samples"]:
            out["path_steps"] = out.get("path_steps", 0.0) + 2.0 * c["tail_samples"] * math.ceil(t / c["path_dt"])
        return out
    n_obs = len(cfg.data["observables"]["list"]) if "observables" in cfg.data else 1
    if kind == "pi":
        return {"cell_updates": pi_cost(spec, hier, n, _pi_params(cfg)) * smp["n_env"] * n_obs}
    if kind == "cauchy":
        if n + 1 >= len(hier):
            raise ConfigError(f"cauchy needs level {n + 1}; raise scales.N")
        p = _pi_params(cfg)
        return {"cell_updates": (pi_cost(spec, hier, n, p) + pi_cost(spec, hier, n + 1, p)) * smp["n_env"] * n_obs}
    if kind == "compare":
        if n + 1 >= len(hier):
            raise ConfigError(f"compare needs level {n + 1}; raise scales.N")
        c = cfg.section("compare")
        half = comparison_half_width(spec, hier, n, c["k"], float(c["alpha"]), h, float(cfg.data["solver"]["tail_tol"]))
        cells = (2 * math.ceil(half / h) + 1) ** spec.d
        blank = GridField(np.zeros((1,) * spec.d), np.zeros(spec.d), h)
        per = coarse_comparison_cost(spec, hier, n, c["k"], blank) * cells
        return {"cell_updates": per * smp["n_env"]}
    if kind == "homogenize":
        hm = cfg.section("homogenize")
        total = 0.0
        for e in hm["eps"]:
            for probe in hm["probes"]:
                t = probe[-1]
                ts = t / (e * e)
                half = box_margin(spec, ts, float(cfg.data["solver"]["tail_tol"])) + 2.0 * h
                total += (2.0 * half / h + 1) ** spec.d * math.ceil(ts / dt)
        ref = pi_cost(spec, hier, hm["reference_level"], _pi_params(cfg))
        return {"cell_updates": (total + ref) * smp["n_env"] * n_obs}
    raise ConfigError(f"no cost model for {kind}")


# -- runners ----------------------------------------------------------------


def run_audit(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    smp = cfg.section("samples")
    rep = audit_environment(spec, smp["n_samples"], cfg.seed, smp["n_points"])
    rows = []
    for key in (
        "max_drift",
        "max_matrix_perturbation",
        "eig_min",
        "eig_max",
        "drift_lipschitz_estimate",
        "matrix_lipschitz_estimate",
        "finite_range_correlation",
        "isotropy_discrepancy",
        "site_law_discrepancy",
    ):
        rows.append(_row(key, 0, "", getattr(rep, key), count=rep.n_samples))
    checks = [{"check": k, "pass": int(v)} for k, v in rep.checks.items()]
    return Outcome(
        tables={"results": rows, "checks": checks},
        assertions={f"audit.{k}": rep.checks[k] for k in EXACT_AUDIT_CHECKS},
    )


def run_alpha(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    hier = build_hierarchy(cfg.scales())
    smp = cfg.section("samples")
    n = cfg.level
    per_env = alpha_samples(spec, hier, n, smp["n_env"], smp["n_paths"], float(cfg.data["paths"]["dt"]), cfg.seed, workers)
    est = Estimate.from_samples(per_env, (cfg.seed, n))
    rows = [_row("alpha", n, "", est.mean, est.stderr, smp["n_env"])]
    env_rows = [{"env": e, "alpha": float(a)} for e, a in enumerate(per_env)]
    return Outcome(
        tables={"results": rows, "alpha_env": env_rows},
        assertions={"alpha.finite": all(math.isfinite(a) for a in per_env)},
        steps=estimate_cost(cfg),
    )


def run_controls(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    hier = build_hierarchy(cfg.scales())
    smp = cfg.section("samples")
    c = cfg.section("controls")
    n = cfg.level
    rows = []
    if c["alpha"] == "estimate":
        per_env = alpha_samples(spec, hier, n, max(smp["n_env"], 2), c["n_paths"], c["path_dt"], cfg.seed, workers)
        est = Estimate.from_samples(per_env)
        alpha = est.mean
        rows.append(_row("alpha", n, "estimated", est.mean, est.stderr, len(per_env)))
    elif isinstance(c["alpha"], (int, float)):
        alpha = float(c["alpha"])
        rows.append(_row("alpha", n, "frozen", alpha))
    else:
        raise ConfigError("controls.alpha must be a number or \"estimate\"")
    st = contraction_stat(spec, hier, n, smp["n_env"], _controls_params(cfg), cfg.seed, alpha)
    count = len(st.flat_ratios)
    for q, v in st.quantiles.items():
        rows.append(_row("contraction_" + q, n, "", v, count=count))
    rows.append(_row("fraction_below_envelope", n, "", st.fraction_below_envelope, count=count))
    rows.append(_row("event_frequency", n, "", st.event_frequency, count=smp["n_env"]))
    rows.append(_row("holder_envelope", n, "", st.envelope))
    ratio_rows = [
        {"env": e, "field": j, "ratio": r, "exit_probability": st.exit_probability[e], "tail_pass": int(st.tail_pass[e])}
        for e, row in enumerate(st.ratios)
        for j, r in enumerate(row)
    ]
    tables = {"results": rows, "ratios": ratio_rows}
    assertions = {"controls.finite": bool(np.all(np.isfinite(st.flat_ratios)))}
    if spec.eta0 == 0.0:
        assertions["controls.constant_coefficient_tolerance"] = all(
            r <= tol for row in st.ratios for r, tol in zip(row, st.tolerances)
        )
    if c["tail_samples"]:
        D = hier[n].D
        levels = c["tail_levels"] or [1.0, 2.0]
        rep = path_statistics(spec, hier, n, [k * D for k in levels], float(hier[n].L) ** 2, c["tail_samples"], cfg.seed, c["path_dt"], n_env=smp["n_env"])
        tables["tails"] = [{k: r[k] for k in ("v", "empirical", "envelope", "stderr")} | {"pass": int(r["pass"])} for r in rep.tail_rows]
        tables["symmetry"] = [
            {k: (int(v) if isinstance(v, bool) else v) for k, v in r.items()} for r in rep.mean_displacement + rep.symmetry_rows
        ]
        for r in rep.tail_rows:
            rows.append(_row("tail_probability", n, f"v={r['v']!r}", r["empirical"], r["stderr"], rep.n_samples))
    return Outcome(tables=tables, assertions=assertions, steps=estimate_cost(cfg))


def run_pi(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    hier = build_hierarchy(cfg.scales())
    smp = cfg.section("samples")
    n = cfg.level
    names = cfg.data["observables"]["list"]
    records = estimate_pi_n(spec, hier, n, _observables(cfg, spec), smp["n_env"], _pi_params(cfg), cfg.seed, workers)
    rows, sample_rows, assertions = [], [], {}
    for name, rec in zip(names, records):
        rows.append(_row("pi", n, name, rec.mean, rec.estimate.stderr, rec.n_env))
        fub = rec.fubini_check()
        rows.append(_row("pi_minus_direct", n, name, fub.mean, fub.stderr, rec.n_env))
        for e, (a, b) in enumerate(zip(rec.samples, rec.direct)):
            sample_rows.append({"env": e, "observable": name, "pi_sample": a, "direct": b})
        c = _const_value(name)
        if c is not None:
            assertions[f"pi.constant[{name}]"] = all(s == c for s in rec.samples)
        assertions[f"pi.finite[{name}]"] = all(math.isfinite(s) for s in rec.samples)
    return Outcome(tables={"results": rows, "pi_samples": sample_rows}, assertions=assertions, steps=estimate_cost(cfg))


def run_cauchy(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    hier = build_hierarchy(cfg.scales())
    smp = cfg.section("samples")
    n = cfg.level
    rows, gap_rows, assertions = [], [], {}
    for name, obs in zip(cfg.data["observables"]["list"], _observables(cfg, spec)):
        g = cauchy_gap(spec, hier, n, obs, smp["n_env"], _pi_params(cfg), cfg.seed, workers)
        rows.append(_row("pi", n, name, g.lower.mean, g.lower.estimate.stderr, smp["n_env"]))
        rows.append(_row("pi", n + 1, name, g.upper.mean, g.upper.estimate.stderr, smp["n_env"]))
        rows.append(_row("cauchy_gap", n, name, g.gap, g.stderr, smp["n_env"]))
        rows.append(_row("cauchy_envelope", n, name, g.envelope))
        gap_rows.append({"observable": name} | g.to_row())
        if _const_value(name) is not None:
            assertions[f"cauchy.constant[{name}]"] = g.gap == 0.0
    return Outcome(tables={"results": rows, "cauchy": gap_rows}, assertions=assertions, steps=estimate_cost(cfg))


def run_compare(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    hier = build_hierarchy(cfg.scales())
    smp = cfg.section("samples")
    c = cfg.section("compare")
    n = cfg.level
    params = cfg.solver()
    h = params.h
    alpha = float(c["alpha"])
    half = comparison_half_width(spec, hier, n, c["k"], alpha, h, params.tail_tol)
    L = float(hier[n].L)
    corr = c["correlation_length"] or L / 2.0
    template = GridField.sample(lambda p: np.zeros(len(p)), np.zeros(spec.d), half + h, h)
    rows, cmp_rows = [], []
    for e in range(smp["n_env"]):
        f = field_ensemble(template, L, hier.params.beta, corr, 1, cfg.seed, stream=(e,))[0]
        real = sample_environment(spec, (cfg.seed, 42, e), (np.zeros(spec.d), half + 2 * h + spec.R + 1.0))
        res = coarse_comparison(real, hier, n, c["k"], f, alpha, params)
        cmp_rows.append({"env": e, "sup_difference": res.sup_difference, "envelope": res.envelope, "ratio": res.ratio})
    diffs = [r["sup_difference"] for r in cmp_rows]
    est = Estimate.from_samples(diffs) if len(diffs) >= 2 else Estimate(diffs[0], float("nan"), 2)
    rows.append(_row("coarse_sup_difference", n, f"k={c['k']}", est.mean, est.stderr, len(diffs)))
    rows.append(_row("cauchy_envelope", n, "", cmp_rows[0]["envelope"]))
    return Outcome(
        tables={"results": rows, "compare": cmp_rows},
        assertions={"compare.finite": all(math.isfinite(d) for d in diffs)},
        steps=estimate_cost(cfg),
    )


def run_homogenize(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    hier = build_hierarchy(cfg.scales())
    smp = cfg.section("samples")
    hm = cfg.section("homogenize")
    probes = [(p[:-1], float(p[-1])) for p in hm["probes"]]
    for x, _ in probes:
        if len(x) != spec.d:
            raise ConfigError(f"probe {x} does not have dimension {spec.d}")
    rows, sweep_rows, assertions = [], [], {}
    for name, obs in zip(cfg.data["observables"]["list"], _observables(cfg, spec)):
        run = convergence_sweep(
            spec,
            hier,
            obs,
            hm["eps"],
            smp["n_env"],
            probes,
            cfg.solver(),
            cfg.seed,
            reference_level=hm["reference_level"],
            n_boot=hm["n_boot"],
            workers=workers,
        )
        rows.append(_row("pi_reference", run.metadata["reference_level"], name, run.reference, run.reference_stderr, smp["n_env"]))
        for r in run.csv_rows():
            sweep_rows.append({"observable": name} | r)
            label = f"{name}|eps={r['eps']!r}|x={r['x']}|t={r['t']!r}"
            rows.append(_row("u_eps", 0, label, r["mean"], r["stderr"], r["n_env"]))
            rows.append(_row("u_eps_abs_dev", 0, label, r["abs_dev"], float("nan"), r["n_env"]))
        for j in range(len(probes)):
            rows.append(_row("std_trend_ok", 0, f"{name}|probe={j}", float(run.std_trend_ok(j))))
        c = _const_value(name)
        if c is not None:
            assertions[f"homogenize.constant[{name}]"] = all(v == c for per_eps in run.samples for per_p in per_eps for v in per_p)
    return Outcome(tables={"results": rows, "sweep": sweep_rows}, assertions=assertions, steps=estimate_cost(cfg))


def run_time_average(cfg: ExperimentConfig, workers: int) -> Outcome:
    spec = cfg.environment()
    smp = cfg.section("samples")
    ta = cfg.section("time_average")
    T, dt = float(ta["T"]), float(cfg.data["paths"]["dt"])
    observables = _observables(cfg, spec)
    half = tail_radius(spec, T) + max(o.radius for o in observables) + spec.rho + spec.R + 1.0
    real = sample_environment(spec, (cfg.seed, 70), (np.zeros(spec.d), half))
    rows, trace_rows, assertions = [], [], {}
    for name, obs in zip(cfg.data["observables"]["list"], observables):
        finals = []
        for p in range(smp["n_paths"]):
            tr = environment_time_average(real, obs, T, dt, cfg.seed, ta["n_out"], path=p)
            finals.append(tr.final)
            trace_rows += [{"observable": name, "path": p, "time": t, "average": a} for t, a in zip(tr.times, tr.averages)]
            c = _const_value(name)
            if c is not None:
                key = f"time_average.constant[{name}]"
                assertions[key] = assertions.get(key, True) and all(a == c for a in tr.averages)
        for p, v in enumerate(finals):
            rows.append(_row("time_average", 0, f"{name}|path={p}", v, count=1))
        if len(finals) >= 2:
            est = Estimate.from_samples(finals)
            rows.append(_row("time_average_mean", 0, name, est.mean, est.stderr, len(finals)))
    return Outcome(tables={"results": rows, "trace": trace_rows}, assertions=assertions, steps=estimate_cost(cfg))


RUNNERS = {
    "audit": run_audit,
    "alpha": run_alpha,
    "controls": run_controls,
    "pi": run_pi,
    "cauchy": run_cauchy,
    "compare": run_compare,
    "homogenize": run_homogenize,
    "time-average": run_time_average,
}

"""Experiment configuration: TOML (or JSON) with one section per module."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..environment import EnvironmentSpec
from ..kernels import SolverParams
from ..scales import ScaleParams

KINDS = ("audit", "alpha", "controls", "pi", "cauchy", "compare", "homogenize", "time-average")


class ConfigError(ValueError):
    pass


_NUM = (int, float)

# dotted key -> accepted types; every listed key is required for the kind
_SCALES = {"scales.d": int, "scales.beta": _NUM, "scales.a": _NUM, "scales.L0": int, "scales.c0": _NUM, "scales.N": int}
_ENV = {"environment.d": int, "environment.eta0": _NUM}
_COMMON = {"experiment.kind": str, "experiment.seed": int}

REQUIRED: dict[str, dict] = {
    "audit": {**_ENV, "samples.n_samples": int},
    "alpha": {**_SCALES, **_ENV, "experiment.level": int, "samples.n_env": int, "samples.n_paths": int, "paths.dt": _NUM},
    "controls": {
        **_SCALES,
        **_ENV,
        "experiment.level": int,
        "solver.h": _NUM,
        "samples.n_env": int,
        "controls.n_fields": int,
        "controls.alpha": (str, int, float),
    },
    "pi": {**_SCALES, **_ENV, "experiment.level": int, "solver.h": _NUM, "samples.n_env": int, "observables.list": list},
    "cauchy": {**_SCALES, **_ENV, "experiment.level": int, "solver.h": _NUM, "samples.n_env": int, "observables.list": list},
    "compare": {
        **_SCALES,
        **_ENV,
        "experiment.level": int,
        "solver.h": _NUM,
        "samples.n_env": int,
        "compare.k": int,
        "compare.alpha": _NUM,
    },
    "homogenize": {
        **_SCALES,
        **_ENV,
        "solver.h": _NUM,
        "samples.n_env": int,
        "observables.list": list,
        "homogenize.eps": list,
        "homogenize.probes": list,
    },
    "time-average": {**_ENV, "observables.list": list, "time_average.T": _NUM, "paths.dt": _NUM, "samples.n_paths": int},
}

# optional keys and the values used when absent; the resolved values are echoed in the manifest
OPTIONAL: dict[str, object] = {
    "experiment.budget": 1e11,
    "environment.R": 1.0,
    "environment.nu": 2.0,
    "environment.diffusion_scale": 1.0,
    "scales.strict_mode": False,
    "solver.tail_tol": 1e-10,
    "samples.n_points": 64,
    "controls.cutoff_radius": None,
    "controls.correlation_length": None,
    "controls.n_paths": 2000,
    "controls.path_dt": 0.05,
    "controls.tail_levels": None,
    "controls.tail_samples": 0,
    "compare.correlation_length": None,
    "homogenize.n_boot": 1000,
    "homogenize.reference_level": 0,
    "time_average.n_out": 40,
}


def _get(data: dict, dotted: str):
    cur = data
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def _set(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    cur = data
    for part in parts[:-1]:
        cur = cur.setdefault(part, {})
    cur[parts[-1]] = value


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse TOML, or JSON when the text starts with '{'."""
    stripped = text.lstrip()
    try:
        if stripped.startswith("{"):
            data = json.loads(text)
            if "config" in data and "config_hash" in data:  # a manifest: rerun its echoed config
                data = data["config"]
            return data
        return tomllib.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: JSON parse error at line {e.lineno} column {e.colno}: {e.msg}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{source}: TOML parse error: {e}") from e


def validate(data: dict, source: str = "<config>") -> dict:
    """Check required fields and types; return a resolved deep copy."""
    for key, typ in _COMMON.items():
        _check(data, key, typ, source)
    kind = data["experiment"]["kind"]
    if kind not in KINDS:
        raise ConfigError(f"{source}: experiment.kind={kind!r} is not one of {', '.join(KINDS)}")
    for key, typ in REQUIRED[kind].items():
        _check(data, key, typ, source)
    out = copy.deepcopy(data)
    for key, default in OPTIONAL.items():
        section = key.split(".")[0]
        if section in out or section in ("experiment",):
            try:
                _get(out, key)
            except KeyError:
                _set(out, key, default)
    if "scales" in out and out["environment"]["d"] != out["scales"]["d"]:
        raise ConfigError(f"{source}: environment.d and scales.d differ")
    if kind == "homogenize":
        eps = out["homogenize"]["eps"]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"{source}: homogenize.eps must be strictly decreasing")
    return out


def _check(data: dict, key: str, typ, source: str) -> None:
    try:
        val = _get(data, key)
    except KeyError:
        raise ConfigError(f"{source}: missing required field '{key}'") from None
    if isinstance(val, bool) or not isinstance(val, typ):
        raise ConfigError(f"{source}: field '{key}' has type {type(val).__name__}")


def load_config(path) -> "ExperimentConfig":
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    return ExperimentConfig(validate(parse_text(text, str(p)), str(p)))


def canonical(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: dict) -> str:
    return hashlib.sha256(canonical(data).encode()).hexdigest()


@dataclass
class ExperimentConfig:
    data: dict

    @property
    def kind(self) -> str:
        return self.data["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.data["experiment"]["seed"]

    @property
    def level(self) -> int:
        return self.data["experiment"].get("level", 0)

    @property
    def budget(self) -> float:
        return float(self.data["experiment"]["budget"])

    @property
    def output(self) -> str | None:
        return self.data["experiment"].get("output")

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def environment(self) -> EnvironmentSpec:
        e = self.data["environment"]
        return EnvironmentSpec(
            d=e["d"], eta0=float(e["eta0"]), R=float(e["R"]), nu=float(e["nu"]), diffusion_scale=float(e["diffusion_scale"])
        )

    def scales(self) -> ScaleParams:
        s = self.data["scales"]
        return ScaleParams(
            d=s["d"], beta=float(s["beta"]), a=float(s["a"]), L0=s["L0"], c0=float(s["c0"]), N=s["N"], strict_mode=s["strict_mode"]
        )

    def solver(self) -> SolverParams:
        s = self.data["solver"]
        return SolverParams(h=float(s["h"]), tail_tol=float(s["tail_tol"]), budget=self.budget)

    def hash(self) -> str:
        return config_hash(self.data)

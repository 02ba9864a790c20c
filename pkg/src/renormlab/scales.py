"""Scale hierarchy L_n, ell_n, kappa_n, D_n and the decay envelopes built on it."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

_EXACT_LIMIT = 2**53

ENVELOPE_KINDS = (
    "holder_contraction",
    "cauchy_gap",
    "event_failure",
    "gaussian_tail",
    "localization_tail",
)


class ScaleError(ValueError):
    """Raised when the scale recursion cannot be carried out."""


@dataclass(frozen=True)
class ScaleParams:
    d: int
    beta: float
    a: float
    L0: int
    c0: float
    N: int = 1
    strict_mode: bool = False

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.a > 0.0:
            raise ValueError(f"growth exponent a must be positive, got {self.a}")
        if int(self.L0) != self.L0 or self.L0 < 1 or self.L0 % 5 != 0:
            raise ValueError(f"L0 must be a positive multiple of 5, got {self.L0}")
        if not self.c0 > 0.0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError(f"max level N must be a non-negative integer, got {self.N}")
        if self.strict_mode:
            if self.d < 3:
                raise ValueError(f"strict mode needs d >= 3, got {self.d}")
            if self.beta > 0.5:
                raise ValueError(f"strict mode needs beta <= 1/2, got {self.beta}")
            if self.a > self.beta / (1000.0 * self.d):
                raise ValueError(f"strict mode needs a <= beta/(1000 d) = {self.beta / (1000.0 * self.d):.3g}, got {self.a}")


@dataclass(frozen=True)
class ScaleLevel:
    n: int
    L: int
    ell: int
    kappa: float
    kappa_tilde: float
    D: float
    D_tilde: float


@dataclass(frozen=True)
class ValidityReport:
    params: dict[str, bool]
    levels: list[dict[str, bool]]
    ok: bool

    def violations(self) -> list[str]:
        out = [f"params.{k}" for k, v in self.params.items() if not v]
        for i, row in enumerate(self.levels):
            out.extend(f"level{i}.{k}" for k, v in row.items() if not v)
        return out


@dataclass(frozen=True)
class ScaleHierarchy:
    params: ScaleParams
    levels: tuple[ScaleLevel, ...]
    delta: float
    m0: int
    M0: float
    validity: ValidityReport = field(compare=False, repr=False, default=None)

    def __getitem__(self, n: int) -> ScaleLevel:
        return self.levels[n]

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def cauchy_exponent(self) -> float:
        """Exponent beta - 7(delta - 5a) of the Cauchy-gap envelope."""
        p = self.params
        return p.beta - 7.0 * (self.delta - 5.0 * p.a)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "levels": [asdict(lv) for lv in self.levels],
            "delta": self.delta,
            "m0": self.m0,
            "M0": self.M0,
            "validity": asdict(self.validity) if self.validity is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ScaleHierarchy":
        h = build_hierarchy(ScaleParams(**data["params"]))
        stored = tuple(ScaleLevel(**lv) for lv in data["levels"])
        if stored != h.levels:
            raise ScaleError("stored levels do not match the recursion for the stored params")
        return h

    @classmethod
    def from_json(cls, text: str) -> "ScaleHierarchy":
        return cls.from_dict(json.loads(text))


def _loglog_sq(L: int) -> float:
    return math.log(math.log(L)) ** 2


def _ell(L: int, a: float) -> int:
    x = L**a / 5.0
    k = round(x)
    # L**a can land one ulp below an exact multiple of 5 (e.g. 125**(1/3))
    if abs(x - k) <= 1e-9 * max(1.0, x):
        return 5 * int(k)
    return 5 * math.floor(x)


def _level(n: int, L: int, ell: int, c0: float) -> ScaleLevel:
    q = _loglog_sq(L)
    kappa = math.exp(c0 * q)
    kappa_t = math.exp(2.0 * c0 * q)
    return ScaleLevel(n=n, L=L, ell=ell, kappa=kappa, kappa_tilde=kappa_t, D=L * kappa, D_tilde=L * kappa_t)


def m0_for(a: float) -> int:
    """Smallest m >= 2 with (1+a)**(m-1) > 100."""
    if not a > 0:
        raise ValueError(f"growth exponent a must be positive, got {a}")
    m = max(2, int(math.log(100.0) / math.log1p(a)))
    while m > 2 and (1.0 + a) ** (m - 2) > 100.0:
        m -= 1
    while (1.0 + a) ** (m - 1) <= 100.0:
        m += 1
    return m


def build_hierarchy(params: ScaleParams) -> ScaleHierarchy:
    """Apply the integer recursion L_{n+1} = ell_n L_n for levels 0..N."""
    if params.L0 < 3:
        raise ScaleError("log log L0 undefined for L0 < 3")
    levels = []
    L = int(params.L0)
    for n in range(params.N + 1):
        ell = _ell(L, params.a)
        if n < params.N and ell == 0:
            raise ScaleError(
                f"scale recursion collapses at level {n}: ell_{n} = 5*floor({L}^{params.a}/5) = 0"
            )
        levels.append(_level(n, L, ell, params.c0))
        if n < params.N:
            L = ell * L
            if L > _EXACT_LIMIT:
                raise ScaleError(f"L_{n + 1} = {L} exceeds 2^53; integer exactness lost")
    m0 = m0_for(params.a)
    h = ScaleHierarchy(
        params=params,
        levels=tuple(levels),
        delta=5.0 * params.beta / 32.0,
        m0=m0,
        M0=100.0 * params.d * (1.0 + params.a) ** (m0 + 2),
    )
    object.__setattr__(h, "validity", validate_strict(h))
    return h


def validate_strict(h: ScaleHierarchy) -> ValidityReport:
    """Evaluate every scale constraint; never raises."""
    p = h.params
    param_checks = {
        "dimension_at_least_3": p.d >= 3,
        "beta_in_half_interval": 0.0 < p.beta <= 0.5,
        "a_below_beta_over_1000d": 0.0 < p.a <= p.beta / (1000.0 * p.d),
        "cauchy_exponent_negative": h.cauchy_exponent < 0.0,
        "delta_exceeds_5a": 5.0 * p.a - h.delta < 0.0,
    }
    rows = []
    for i, lv in enumerate(h.levels):
        row = {
            "L_lt_D": lv.L < lv.D,
            "D_lt_D_tilde": lv.D < lv.D_tilde,
        }
        if i + 1 < len(h.levels):
            nxt = h.levels[i + 1]
            row["D_tilde_lt_next_L"] = lv.D_tilde < nxt.L
            row["kappa_tilde_growth"] = 4.0 * lv.kappa_tilde < nxt.kappa_tilde
            row["next_D_tilde_lt_next_L_sq"] = 3.0 * nxt.D_tilde < float(nxt.L) ** 2
            row["sandwich"] = 0.5 * lv.L ** (1 + p.a) <= nxt.L <= 2.0 * lv.L ** (1 + p.a)
        rows.append(row)
    ok = all(param_checks.values()) and all(all(r.values()) for r in rows)
    return ValidityReport(params=param_checks, levels=rows, ok=ok)


def log_envelope(
    kind: str,
    *,
    L: float,
    beta: float,
    a: float,
    M0: float,
    kappa_tilde: float | None = None,
    D: float | None = None,
    v: float | None = None,
) -> float:
    """Natural log of a decay envelope with unit leading constant."""
    delta = 5.0 * beta / 32.0
    if kind == "holder_contraction":
        return -delta * math.log(L)
    if kind == "cauchy_gap":
        return (beta - 7.0 * (delta - 5.0 * a)) * math.log(L)
    if kind == "event_failure":
        return -M0 * math.log(L)
    if kind == "gaussian_tail":
        if kappa_tilde is None:
            raise ValueError("gaussian_tail needs kappa_tilde")
        return -(kappa_tilde**2)
    if kind == "localization_tail":
        if v is None or D is None:
            raise ValueError("localization_tail needs v and D")
        return -v / D
    raise ValueError(f"unknown envelope kind {kind!r}; expected one of {ENVELOPE_KINDS}")


def decay_envelope(h: ScaleHierarchy, n: int, kind: str, v: float | None = None) -> float:
    """Envelope value at level n.  event_failure underflows to 0.0 at realistic M0;
    use :func:`log_envelope` when the magnitude matters."""
    lv = h.levels[n]
    p = h.params
    return math.exp(
        log_envelope(kind, L=lv.L, beta=p.beta, a=p.a, M0=h.M0, kappa_tilde=lv.kappa_tilde, D=lv.D, v=v)
    )

"""Random coefficient fields A(x), b(x) built from i.i.d. lattice site variables.

A realization is

    b(x) = eta0 * sum_z V_z psi(x - z - U)
    A(x) = s I + eta0 * sum_z M_z psi(x - z - U)

with psi a compactly supported radial bump of radius rho < R/2, U uniform on
the unit cell and (V_z, M_z) drawn from a signed-permutation invariant law.
Site variables are hashed from (key, z), so nothing is materialized.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import rng

_T_STAR = 1.0 / math.sqrt(7.0)


@dataclass(frozen=True)
class SignedPermutation:
    """The map (r x)_i = signs[i] * x[perm[i]]."""

    perm: tuple[int, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        d = len(self.perm)
        if sorted(self.perm) != list(range(d)) or len(self.signs) != d:
            raise ValueError("perm must be a permutation of 0..d-1 with one sign per axis")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +1 or -1")

    @classmethod
    def identity(cls, d: int) -> "SignedPermutation":
        return cls(tuple(range(d)), (1,) * d)

    @property
    def d(self) -> int:
        return len(self.perm)

    @property
    def is_identity(self) -> bool:
        return self.perm == tuple(range(self.d)) and all(s == 1 for s in self.signs)

    def matrix(self) -> np.ndarray:
        r = np.zeros((self.d, self.d))
        r[np.arange(self.d), self.perm] = self.signs
        return r

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply to the last axis of ``x`` (exact: only reorders and negates)."""
        x = np.asarray(x, dtype=float)
        return x[..., list(self.perm)] * np.asarray(self.signs, dtype=float)

    def conjugate(self, m: np.ndarray) -> np.ndarray:
        """r m r^T for matrices stacked on the last two axes."""
        m = np.asarray(m, dtype=float)
        s = np.asarray(self.signs, dtype=float)
        p = list(self.perm)
        return m[..., p, :][..., :, p] * s[:, None] * s[None, :]

    def compose(self, other: "SignedPermutation") -> "SignedPermutation":
        """self o other."""
        perm = tuple(other.perm[self.perm[i]] for i in range(self.d))
        signs = tuple(self.signs[i] * other.signs[self.perm[i]] for i in range(self.d))
        return SignedPermutation(perm, signs)

    def inverse(self) -> "SignedPermutation":
        inv = [0] * self.d
        signs = [0] * self.d
        for i, j in enumerate(self.perm):
            inv[j] = i
            signs[j] = self.signs[i]
        return SignedPermutation(tuple(inv), tuple(signs))


def signed_permutation_group(d: int) -> list[SignedPermutation]:
    """All 2^d d! coordinate-axis preserving orthogonal maps."""
    return [
        SignedPermutation(tuple(p), tuple(s))
        for p in itertools.permutations(range(d))
        for s in itertools.product((1, -1), repeat=d)
    ]


def bump(r2: np.ndarray, rho: float) -> np.ndarray:
    """psi(|y|) = (1 - |y|^2/rho^2)^4 on |y| < rho, from squared radius."""
    q = np.clip(1.0 - r2 / (rho * rho), 0.0, None)
    q2 = q * q
    return q2 * q2


@dataclass(frozen=True)
class EnvironmentSpec:
    d: int
    eta0: float
    R: float = 1.0
    nu: float = 2.0
    rho: float | None = None
    diffusion_scale: float = 1.0  # test hook: A = s I + perturbation
    site_law: str = "uniform"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if self.eta0 < 0:
            raise ValueError("eta0 must be non-negative")
        if not self.R > 0:
            raise ValueError("dependence range R must be positive")
        if not self.nu > 1:
            raise ValueError("ellipticity nu must exceed 1")
        if self.rho is None:
            object.__setattr__(self, "rho", 0.45 * self.R)
        if not 0 < self.rho < self.R / 2:
            raise ValueError(f"bump radius rho={self.rho} must satisfy 0 < rho < R/2 = {self.R / 2}")
        if not self.diffusion_scale > 0:
            raise ValueError("diffusion_scale must be positive")
        if self.site_law != "uniform":
            raise ValueError(f"unknown site law {self.site_law!r}")

    @property
    def overlap_count(self) -> int:
        """Max number of bumps covering one point: ceil(2 rho)^d."""
        return math.ceil(2.0 * self.rho) ** self.d

    @property
    def site_matrix_bound(self) -> float:
        """Gershgorin bound on the operator norm of a site matrix."""
        return 1.0 + 0.5 * (self.d - 1)

    @property
    def perturbation_bound(self) -> float:
        """sup_x |A(x) - s I| in operator norm."""
        return self.eta0 * self.overlap_count * self.site_matrix_bound

    @property
    def drift_bound(self) -> float:
        return self.eta0 * self.overlap_count * math.sqrt(self.d)

    @property
    def bump_lipschitz(self) -> float:
        t = _T_STAR
        return 8.0 * t * (1.0 - t * t) ** 3 / self.rho

    @property
    def drift_lipschitz(self) -> float:
        return self.drift_bound * self.bump_lipschitz

    @property
    def matrix_lipschitz(self) -> float:
        return self.perturbation_bound * self.bump_lipschitz

    @property
    def eigen_range(self) -> tuple[float, float]:
        p = self.perturbation_bound
        return self.diffusion_scale - p, self.diffusion_scale + p

    @property
    def ellipticity(self) -> float:
        """Smallest nu' with 1/nu' <= A <= nu' guaranteed by construction."""
        lo, hi = self.eigen_range
        if lo <= 0:
            return math.inf
        return max(hi, 1.0 / lo, 1.0 + 1e-12)

    def check_ellipticity(self) -> None:
        lo, hi = self.eigen_range
        if lo < 1.0 / self.nu or hi > self.nu:
            raise ValueError(
                f"eta0={self.eta0} incompatible with nu={self.nu}: guaranteed eigenvalue "
                f"range [{lo:.4g}, {hi:.4g}] is not inside [{1 / self.nu:.4g}, {self.nu:.4g}]"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def _n_site_components(d: int) -> int:
    return 2 * d + d * (d - 1) // 2


def site_variables(key, sites: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Drift vectors V (N, d) and symmetric matrices M (N, d, d) at ``sites``."""
    u = rng.site_uniforms(key, sites, _n_site_components(d))
    v = 2.0 * u[:, :d] - 1.0
    m = np.zeros((len(sites), d, d))
    idx = np.arange(d)
    m[:, idx, idx] = 2.0 * u[:, d : 2 * d] - 1.0
    k = 2 * d
    for i in range(d):
        for j in range(i + 1, d):
            m[:, i, j] = m[:, j, i] = u[:, k] - 0.5
            k += 1
    return v, m


def sqrt_spd(a: np.ndarray) -> np.ndarray:
    """Symmetric positive square root of stacked SPD matrices (closed form for d <= 2, eigendecomposition above)."""
    if a.shape[-1] == 1:
        return np.sqrt(a)
    if a.shape[-1] == 2:
        # sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det)) for 2x2 SPD
        s = np.sqrt(a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0])
        t = np.sqrt(a[..., 0, 0] + a[..., 1, 1] + 2.0 * s)
        out = a.copy()
        out[..., 0, 0] += s
        out[..., 1, 1] += s
        return out / t[..., None, None]
    w, q = np.linalg.eigh(a)
    root = (q * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(q, -1, -2)
    return 0.5 * (root + np.swapaxes(root, -1, -2))


def _site_contributions(y: np.ndarray, rho: float):
    """Yield (point index, site, squared distance) for every bump covering y.

    ``y`` are positions relative to the lattice offset U.
    """
    d = y.shape[1]
    n_per_axis = math.ceil(2.0 * rho)
    base = np.floor(y - rho).astype(np.int64) + 1
    for combo in itertools.product(range(n_per_axis), repeat=d):
        z = base + np.asarray(combo, dtype=np.int64)
        diff = y - z
        r2 = np.einsum("ij,ij->i", diff, diff)
        hit = np.nonzero(r2 < rho * rho)[0]
        if hit.size:
            yield hit, z[hit], r2[hit]


class BoxExitError(RuntimeError):
    """Evaluation requested outside the realization's active box."""


@dataclass(frozen=True)
class EnvironmentRealization:
    spec: EnvironmentSpec
    key: int
    offset: np.ndarray
    box_center: np.ndarray
    box_half_width: float
    seed_lineage: tuple
    shift: np.ndarray | None = None
    rotation: SignedPermutation | None = None
    override: tuple | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.spec.d

    # -- geometry ---------------------------------------------------------
    def to_world(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.rotation is not None:
            x = self.rotation.apply(x)
        if self.shift is not None:
            x = x + self.shift
        return x

    def contains(self, x: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Mask of points (view coordinates) inside the active box shrunk by margin."""
        xw = self.to_world(np.atleast_2d(x))
        return np.all(np.abs(xw - self.box_center) <= self.box_half_width - margin, axis=-1)

    def require_inside(self, x: np.ndarray, margin: float = 0.0) -> None:
        inside = self.contains(x, margin)
        if not np.all(inside):
            bad = np.atleast_2d(x)[~inside][0]
            raise BoxExitError(f"point {bad} outside active box (margin {margin})")

    def transform(self, y=None, r: SignedPermutation | None = None) -> "EnvironmentRealization":
        """View with coefficients A'(x) = A(r x + y), b'(x) = b(r x + y)."""
        d = self.d
        y = np.zeros(d) if y is None else np.asarray(y, dtype=float).reshape(d)
        if r is not None and r.is_identity:
            r = None
        # compose with the existing view: A0(r0 (r x + y) + y0)
        rot = self.rotation
        if r is not None:
            rot = r if rot is None else rot.compose(r)
        shift = y if self.rotation is None else self.rotation.apply(y)
        if self.shift is not None:
            shift = shift + self.shift
        if not np.any(shift):
            shift = None
        return EnvironmentRealization(
            spec=self.spec,
            key=self.key,
            offset=self.offset,
            box_center=self.box_center,
            box_half_width=self.box_half_width,
            seed_lineage=self.seed_lineage,
            shift=shift,
            rotation=rot,
            override=self.override,
        )

    def with_resampled_outside(self, center, radius: float, alt_seed: int) -> "EnvironmentRealization":
        """Copy whose sites with |z + U - center| >= radius use fresh variables.

        ``center`` is in world coordinates.  Used to verify locality claims.
        """
        alt = rng.derive_key(alt_seed, 0xA17)
        return EnvironmentRealization(
            spec=self.spec,
            key=self.key,
            offset=self.offset,
            box_center=self.box_center,
            box_half_width=self.box_half_width,
            seed_lineage=self.seed_lineage + ("resampled", alt_seed),
            shift=self.shift,
            rotation=self.rotation,
            override=(np.asarray(center, dtype=float), float(radius), alt),
        )

    # -- site bookkeeping -------------------------------------------------
    def _site_vars(self, sites: np.ndarray):
        d = self.d
        if self.override is None:
            return site_variables(self.key, sites, d)
        center, radius, alt = self.override
        outside = np.linalg.norm(sites + self.offset - center, axis=1) >= radius
        v, m = site_variables(self.key, sites, d)
        if np.any(outside):
            v2, m2 = site_variables(alt, sites[outside], d)
            v[outside] = v2
            m[outside] = m2
        return v, m

    def sites_influencing(self, x: np.ndarray) -> set[tuple[int, ...]]:
        """Lattice sites whose variables enter the coefficients at points ``x``."""
        xw = self.to_world(np.atleast_2d(x))
        out: set[tuple[int, ...]] = set()
        for _, z, _ in _site_contributions(xw - self.offset, self.spec.rho):
            out.update(map(tuple, z.tolist()))
        return out

    # -- fields -----------------------------------------------------------
    def profile(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unscaled perturbation fields sum_z V_z psi and sum_z M_z psi.

        These carry the environment's randomness even when eta0 = 0.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xw = self.to_world(x)
        n, d = xw.shape
        pv = np.zeros((n, d))
        pm = np.zeros((n, d, d))
        for hit, z, r2 in _site_contributions(xw - self.offset, self.spec.rho):
            w = bump(r2, self.spec.rho)
            v, m = self._site_vars(z)
            pv[hit] += w[:, None] * v
            pm[hit] += w[:, None, None] * m
        return pv, pm

    def coefficients(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) at points ``x`` with shapes (N, d, d) and (N, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        s = self.spec.diffusion_scale
        eye = np.broadcast_to(np.eye(d) * s, (n, d, d))
        if self.spec.eta0 == 0.0:
            return eye.copy(), np.zeros((n, d))
        pv, pm = self.profile(x)
        eta = self.spec.eta0
        return eye + eta * pm, eta * pv


class EnvironmentBatch:
    """Several plain realizations of one spec evaluated in a single vectorized call.

    Values are identical to evaluating each realization separately.
    """

    def __init__(self, realizations: list[EnvironmentRealization]):
        if not realizations:
            raise ValueError("empty batch")
        spec = realizations[0].spec
        for r in realizations:
            if r.spec != spec:
                raise ValueError("batch realizations must share one spec")
            if r.shift is not None or r.rotation is not None or r.override is not None:
                raise ValueError("batch evaluation supports only untransformed realizations")
        self.spec = spec
        self.realizations = list(realizations)
        self.keys = np.array([r.key for r in realizations], dtype=np.uint64)
        self.offsets = np.stack([r.offset for r in realizations])
        self.centers = np.stack([r.box_center for r in realizations])
        self.half_widths = np.array([r.box_half_width for r in realizations])

    def __len__(self) -> int:
        return len(self.realizations)

    def contains(self, env: np.ndarray, x: np.ndarray, margin: float = 0.0) -> np.ndarray:
        return np.all(np.abs(x - self.centers[env]) <= (self.half_widths[env] - margin)[:, None], axis=-1)

    def coefficients(self, env: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        s = self.spec.diffusion_scale
        a = np.broadcast_to(np.eye(d) * s, (n, d, d)).copy()
        b = np.zeros((n, d))
        if self.spec.eta0 == 0.0:
            return a, b
        eta = self.spec.eta0
        pv = np.zeros((n, d))
        pm = np.zeros((n, d, d))
        for hit, z, r2 in _site_contributions(x - self.offsets[env], self.spec.rho):
            w = bump(r2, self.spec.rho)
            v, m = site_variables(self.keys[env[hit]], z, d)
            pv[hit] += w[:, None] * v
            pm[hit] += w[:, None, None] * m
        return a + eta * pm, eta * pv


def sample_environment(spec: EnvironmentSpec, seed: int | tuple, active_box) -> EnvironmentRealization:
    """Draw a realization.  ``active_box`` is (center, half_width) of a cube."""
    spec.check_ellipticity()
    center, half = active_box
    center = np.broadcast_to(np.asarray(center, dtype=float), (spec.d,)).copy()
    half = float(half)
    if half < spec.R:
        raise ValueError(f"active box half-width {half} smaller than dependence range R={spec.R}")
    lineage = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    key = rng.derive_key(lineage[0], *lineage[1:], 0xE1)
    offset = rng.generator(lineage[0], *lineage[1:], 0xE2).random(spec.d)
    return EnvironmentRealization(
        spec=spec,
        key=key,
        offset=offset,
        box_center=center,
        box_half_width=half,
        seed_lineage=lineage,
    )


def eval_coefficients(realization: EnvironmentRealization, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A, b, sigma) at a single point, sigma the symmetric root of A."""
    x = np.asarray(x, dtype=float).reshape(1, realization.d)
    realization.require_inside(x, margin=realization.spec.rho)
    a, b = realization.coefficients(x)
    return a[0], b[0], sqrt_spd(a)[0]


def transform(realization: EnvironmentRealization, y, r: SignedPermutation | None = None):
    return realization.transform(y, r)


# -- local observables ------------------------------------------------------


@dataclass(frozen=True)
class LocalObservable:
    """f(x, omega) depending on the environment within ``radius`` of x.

    ``func(realization, points)`` is vectorized over an (N, d) array.
    """

    name: str
    radius: float
    bound: float
    func: Callable[[EnvironmentRealization, np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, realization, points) -> np.ndarray:
        return np.asarray(self.func(realization, np.atleast_2d(points)), dtype=float)

    def __add__(self, other: "LocalObservable") -> "LocalObservable":
        return linear_combination([self, other], [1.0, 1.0])

    def __rmul__(self, c: float) -> "LocalObservable":
        return linear_combination([self], [float(c)])


def evaluate_observable(obs: LocalObservable, realization: EnvironmentRealization, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, realization.d)
    realization.require_inside(x, margin=obs.radius + realization.spec.rho)
    val = float(obs(realization, x)[0])
    if abs(val) > obs.bound:
        raise ValueError(f"observable {obs.name} returned {val} outside its bound {obs.bound}")
    return val


def constant(c: float) -> LocalObservable:
    return LocalObservable(
        name=f"const({c:g})",
        radius=0.0,
        bound=abs(float(c)),
        func=lambda real, pts: np.full(len(pts), float(c)),
    )


def drift_component(i: int) -> LocalObservable:
    """clamp(b_i(x)/eta0, -1, 1); identically 0 when eta0 = 0."""

    def f(real, pts):
        _, b = real.coefficients(pts)
        eta = real.spec.eta0
        if eta == 0.0:
            return np.zeros(len(pts))
        return np.clip(b[:, i] / eta, -1.0, 1.0)

    return LocalObservable(name=f"drift{i}", radius=0.0, bound=1.0, func=f)


def site_drift(i: int, gain: float = 2.0) -> LocalObservable:
    """tanh(gain * (sum_z V_z psi)_i): nonconstant even for eta0 = 0."""

    def f(real, pts):
        pv, _ = real.profile(pts)
        return np.tanh(gain * pv[:, i])

    return LocalObservable(name=f"site_drift{i}", radius=0.0, bound=1.0, func=f)


def _window_offsets(d: int, radius: float, spacing: float) -> np.ndarray:
    m = int(math.floor(radius / spacing))
    axes = [np.arange(-m, m + 1) * spacing] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return pts[np.linalg.norm(pts, axis=1) < radius] if radius > 0 else np.zeros((1, d))


def window_mean_perturbation(
    spec: EnvironmentSpec, radius: float, spacing: float = 0.5, unscaled: bool = False
) -> LocalObservable:
    """Mean of |A(z) - s I|_F over a grid of z in B_radius(x).

    With ``unscaled`` the eta0-free matrix profile is used instead, which keeps
    the observable nonconstant at eta0 = 0.
    """

    def f(real, pts):
        d = real.d
        offs = _window_offsets(d, radius, spacing)
        zs = (pts[:, None, :] + offs[None, :, :]).reshape(-1, d)
        if unscaled:
            _, dev = real.profile(zs)
        else:
            a, _ = real.coefficients(zs)
            dev = a - real.spec.diffusion_scale * np.eye(d)
        norms = np.sqrt(np.einsum("nij,nij->n", dev, dev)).reshape(len(pts), len(offs))
        return norms.mean(axis=1)

    # Frobenius <= sqrt(d) * operator norm
    op = spec.overlap_count * spec.site_matrix_bound
    bound = math.sqrt(spec.d) * (op if unscaled else spec.eta0 * op)
    name = f"window_mean_{'profile' if unscaled else 'perturbation'}({radius:g})"
    return LocalObservable(name=name, radius=radius, bound=bound, func=f)


def with_bound(obs: LocalObservable, bound: float) -> LocalObservable:
    return LocalObservable(name=obs.name, radius=obs.radius, bound=float(bound), func=obs.func)


def linear_combination(observables, coeffs) -> LocalObservable:
    observables = list(observables)
    coeffs = [float(c) for c in coeffs]

    def f(real, pts):
        out = np.zeros(len(pts))
        for c, o in zip(coeffs, observables):
            out = out + c * o(real, pts)
        return out

    name = " + ".join(f"{c:g}*{o.name}" for c, o in zip(coeffs, observables))
    return LocalObservable(
        name=name,
        radius=max(o.radius for o in observables),
        bound=sum(abs(c) * o.bound for c, o in zip(coeffs, observables)),
        func=f,
    )


# -- audit ------------------------------------------------------------------


@dataclass
class AuditReport:
    n_samples: int
    max_drift: float
    max_matrix_perturbation: float
    eig_min: float
    eig_max: float
    drift_lipschitz_estimate: float
    matrix_lipschitz_estimate: float
    drift_bound: float
    perturbation_bound: float
    drift_lipschitz_bound: float
    matrix_lipschitz_bound: float
    ellipticity_interval: tuple[float, float]
    finite_range_correlation: float
    correlation_threshold: float
    isotropy_discrepancy: float
    isotropy_scale: float
    site_law_discrepancy: float
    site_law_scale: float
    checks: dict[str, bool] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def _correlation_scale(x: np.ndarray, y: np.ndarray) -> float:
    """Standard error of the sample correlation when the true correlation is 0.

    Equals 1/sqrt(n) for independent x, y.  Here the two values share the
    cell offset U, so they are uncorrelated but not independent.
    """
    xc, yc = x - x.mean(), y - y.mean()
    den = float(np.mean(xc**2) * np.mean(yc**2))
    if den == 0.0:
        return 1.0 / math.sqrt(len(x))
    return math.sqrt(float(np.mean(xc**2 * yc**2)) / den / len(x))


def _moments(b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """First and second moments of the stacked (b, A) features."""
    feats = np.concatenate([b, a.reshape(len(a), -1)], axis=1)
    second = np.einsum("ni,nj->ij", feats, feats) / len(feats)
    return np.concatenate([feats.mean(axis=0), second.ravel()])


def audit_environment(spec: EnvironmentSpec, n_samples: int, seed: int, n_points: int = 64) -> AuditReport:
    """Empirical check of bounds, Lipschitz, finite range and isotropy."""
    if n_samples < 100:
        raise ValueError("audit needs n_samples >= 100")
    d = spec.d
    gen = rng.generator(seed, 0xA0D)
    half = 4.0 * spec.R + 2.0
    s = spec.diffusion_scale
    eye = np.eye(d)
    max_b = max_a = lip_b = lip_a = 0.0
    eig_lo, eig_hi = math.inf, -math.inf
    b_origin = np.empty(n_samples)
    b_far = np.empty(n_samples)
    x0 = gen.uniform(-1.0, 1.0, size=d)
    group = signed_permutation_group(d)
    rx = np.stack([g.apply(x0) for g in group])
    b_x0 = np.empty((n_samples, d))
    a_x0 = np.empty((n_samples, d, d))
    b_rx = np.empty((len(group), n_samples, d))
    a_rx = np.empty((len(group), n_samples, d, d))
    far = np.zeros(d)
    far[0] = spec.R
    step = 1e-3 * spec.rho
    for k in range(n_samples):
        real = sample_environment(spec, (seed, k), (np.zeros(d), half))
        pts = gen.uniform(-1.0, 1.0, size=(n_points, d))
        dirs = gen.normal(size=(n_points, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        a, b = real.coefficients(pts)
        a2, b2 = real.coefficients(pts + step * dirs)
        max_b = max(max_b, float(np.linalg.norm(b, axis=1).max()))
        dev = a - s * eye
        max_a = max(max_a, float(np.abs(np.linalg.eigvalsh(dev)).max()))
        w = np.linalg.eigvalsh(a)
        eig_lo = min(eig_lo, float(w.min()))
        eig_hi = max(eig_hi, float(w.max()))
        lip_b = max(lip_b, float(np.linalg.norm(b2 - b, axis=1).max() / step))
        lip_a = max(lip_a, float(np.abs(np.linalg.eigvalsh(a2 - a)).max() / step))
        ab, bb = real.coefficients(np.stack([np.zeros(d), far]))
        b_origin[k] = bb[0, 0]
        b_far[k] = bb[1, 0]
        a_all, b_all = real.coefficients(np.vstack([x0[None], rx]))
        b_x0[k], a_x0[k] = b_all[0], a_all[0]
        b_rx[:, k], a_rx[:, k] = b_all[1:], a_all[1:]
    iso = 0.0
    iso_scale = 0.0
    for gi, g in enumerate(group):
        m_lhs = _moments(b_rx[gi], a_rx[gi])
        m_rhs = _moments(g.apply(b_x0), g.conjugate(a_x0))
        iso = max(iso, float(np.abs(m_lhs - m_rhs).max()))
    feats = np.concatenate([b_x0, a_x0.reshape(n_samples, -1)], axis=1)
    iso_scale = float(3.0 * 2.0 * max(feats.std(axis=0).max(), (feats**2).std(axis=0).max()) / math.sqrt(n_samples))

    # site-law check on the generator directly
    sites = np.arange(4096, dtype=np.int64)[:, None] * np.ones((1, d), dtype=np.int64)
    sites[:, 0] += 10**6
    v, m = site_variables(rng.derive_key(seed, 0x517E), sites, d)
    law = 0.0
    for g in group:
        law = max(law, float(np.abs(_moments(g.apply(v), g.conjugate(m)) - _moments(v, m)).max()))
    law_scale = 3.0 * 2.0 / math.sqrt(len(sites))

    corr = _pearson(b_origin, b_far)
    thr = 3.0 * _correlation_scale(b_origin, b_far)
    lo, hi = spec.eigen_range
    rep = AuditReport(
        n_samples=n_samples,
        max_drift=max_b,
        max_matrix_perturbation=max_a,
        eig_min=eig_lo,
        eig_max=eig_hi,
        drift_lipschitz_estimate=lip_b,
        matrix_lipschitz_estimate=lip_a,
        drift_bound=spec.drift_bound,
        perturbation_bound=spec.perturbation_bound,
        drift_lipschitz_bound=spec.drift_lipschitz,
        matrix_lipschitz_bound=spec.matrix_lipschitz,
        ellipticity_interval=(1.0 / spec.nu, spec.nu),
        finite_range_correlation=corr,
        correlation_threshold=thr,
        isotropy_discrepancy=iso,
        isotropy_scale=iso_scale,
        site_law_discrepancy=law,
        site_law_scale=law_scale,
    )
    tol = 1e-12
    rep.checks = {
        "drift_bounded": max_b <= spec.drift_bound + tol,
        "perturbation_bounded": max_a <= spec.perturbation_bound + tol,
        "elliptic": eig_lo >= 1.0 / spec.nu - tol and eig_hi <= spec.nu + tol,
        "eigen_range": eig_lo >= lo - tol and eig_hi <= hi + tol,
        # finite differences overestimate by O(step) curvature terms
        "drift_lipschitz": lip_b <= spec.drift_lipschitz * (1 + 1e-2) + tol,
        "matrix_lipschitz": lip_a <= spec.matrix_lipschitz * (1 + 1e-2) + tol,
        "finite_range": abs(corr) <= thr,
        "isotropy": iso <= iso_scale + tol,
        "site_law_isotropy": law <= law_scale,
    }
    return rep

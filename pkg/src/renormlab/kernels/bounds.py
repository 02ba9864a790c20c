"""A priori error envelopes for the grid operators."""

from __future__ import annotations

import math

import numpy as np

from ..environment import EnvironmentSpec
from .gaussian import gaussian_weights
from .grid import GridField


def heat_defect_bound(
    f: GridField,
    n_steps: int,
    dt: float,
    diffusion: float,
    s_gauss: float,
    L: float,
    beta: float,
    cutoff_radius: float | None = None,
) -> float:
    """Bound on |chi (R f - G f)|_n when the coefficients are constant (A = diffusion*I, b = 0).

    Both operators are Fourier multipliers on the lattice: the explicit scheme
    has symbol (1 + dt*diffusion/(2h^2) sum_i (2cos th_i - 2))^K and the
    normalized Gaussian has prod_i sum_k g_k cos(k th_i).  Expanding f in
    lattice Fourier modes and using |e^{ikx}|_n <= 1 + 2^(1-beta) (L|k|)^beta
    gives the bound; the cutoff contributes |chi|_n <= 1 + (L/v)^beta.
    """
    h = f.h
    coef = np.fft.fftn(f.values) / f.values.size
    thetas = [2.0 * np.pi * np.fft.fftfreq(n) for n in f.values.shape]
    g = gaussian_weights(s_gauss, h)
    ks = np.arange(-((len(g) - 1) // 2), (len(g) - 1) // 2 + 1)
    d = f.d
    lap = 0.0
    m_g = 1.0
    k2 = 0.0
    for i, t in enumerate(thetas):
        shape = [1] * d
        shape[i] = len(t)
        lap = lap + (2.0 * np.cos(t) - 2.0).reshape(shape)
        m_g = m_g * (np.cos(np.outer(t, ks)) @ g).reshape(shape)
        k2 = k2 + (t * t).reshape(shape)
    m_fd = (1.0 + dt * diffusion / (2.0 * h * h) * lap) ** n_steps
    kmag = np.sqrt(k2) / h
    mode_norm = 1.0 + 2.0 ** (1.0 - beta) * (L * kmag) ** beta
    bound = float(np.sum(np.abs(coef) * np.abs(m_fd - m_g) * mode_norm))
    if cutoff_radius is not None:
        bound *= 1.0 + (L / cutoff_radius) ** beta
    return bound


def localization_envelope(spec: EnvironmentSpec, radius: float, t: float) -> float:
    """P(sup_{s<=t}|X_s - X_0| >= radius) bound: 2d exp(-(radius - B t)_+^2 / (2 d lambda t))."""
    if t <= 0:
        return 0.0
    lam = spec.eigen_range[1]
    gap = max(radius - spec.drift_bound * t, 0.0)
    return min(1.0, 2.0 * spec.d * math.exp(-(gap**2) / (2.0 * spec.d * lam * t)))

"""Scalar laws of the special Lorentz gas.

Collision frequency, the Maxwellian, the steady drag law ``D0`` and its
derived constants, the decay envelope and the auxiliary velocity integrals.
Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize, special

SQRT_PI = math.sqrt(math.pi)

# face measure of the body section for d = 1, 2, 3
FACE_MEASURE = {1: 1.0, 2: 2.0, 3: math.pi}


@dataclass(frozen=True)
class ModelParams:
    """Physical configuration of one run.

    ``kappa = math.inf`` selects the free-molecular limit.
    """

    epsilon: float
    kappa: float
    d: int
    gamma: float
    h: float = 1.0

    def __post_init__(self):
        if not (self.epsilon >= 0.0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be a finite nonnegative number, got {self.epsilon!r}")
        if not self.kappa > 0.0:
            raise ValueError(f"kappa must be positive (or inf), got {self.kappa!r}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d!r}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError(f"h must be positive, got {self.h!r}")
        if not (self.gamma >= 0.0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be nonnegative, got {self.gamma!r}")

    @property
    def free_molecular(self) -> bool:
        return math.isinf(self.kappa)


@dataclass(frozen=True)
class DragLawConstants:
    c_d: float
    C0: float
    C_gamma: float
    t_gamma: float


class D0Law(NamedTuple):
    D0: float
    K: float


def c_d(d: int) -> float:
    """Normalisation of ``D0``: twice the face measure times the 1-D Maxwellian factor."""
    return 2.0 * FACE_MEASURE[d] / SQRT_PI


def maxwellian(xi) -> np.ndarray:
    """Equilibrium distribution ``pi^{-3/2} exp(-|xi|^2)`` for 3-vectors (last axis)."""
    xi = np.asarray(xi, dtype=float)
    return math.pi ** -1.5 * np.exp(-np.sum(xi * xi, axis=-1))


def nu_eps(epsilon: float, z):
    """Collision frequency of a molecule with speed ``z``.

    At exactly ``z = 0`` the defined value ``2 eps / sqrt(pi)`` is returned;
    ``epsilon = 0`` gives the limit ``sqrt(pi) z / 2``.
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0) or np.any(np.isnan(z_arr)):
        raise ValueError("nu_eps is defined for z >= 0 only")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0.0:
        out = 0.5 * SQRT_PI * z_arr
    else:
        y = z_arr / epsilon
        with np.errstate(divide="ignore", invalid="ignore"):
            erf_over_y = np.where(y > 0, special.erf(y) / np.where(y > 0, y, 1.0), 2.0 / SQRT_PI)
        out = 0.5 * epsilon * (np.exp(-y * y) + SQRT_PI * (y * special.erf(y) + 0.5 * erf_over_y))
        out = np.where(z_arr == 0.0, 2.0 * epsilon / SQRT_PI, out)
    return float(out) if out.ndim == 0 else out


def d0(d: int, U):
    """Steady drag ``D0(U) = c_d [U e^{-U^2} + sqrt(pi) (U^2 + 1/2) erf(U)]``."""
    U = np.asarray(U, dtype=float)
    out = c_d(d) * (U * np.exp(-U * U) + SQRT_PI * (U * U + 0.5) * special.erf(U))
    return float(out) if out.ndim == 0 else out


def d0_quadrature(d: int, U: float) -> float:
    """``D0`` from its defining one-sided integrals (the reference route)."""
    f = lambda u: (u - U) ** 2 * math.exp(-u * u)
    lo, _ = integrate.quad(f, -np.inf, U, epsabs=0.0, epsrel=1e-13, limit=200)
    hi, _ = integrate.quad(f, U, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return c_d(d) * (lo - hi)


def k_coeff(d: int, U):
    """``K(U) = D0(U)/U`` with ``K(0) = D0'(0)``."""
    U = np.asarray(U, dtype=float)
    small = np.abs(U) < 1e-6
    Us = np.where(small, 1.0, U)
    erf_over_u = np.where(small, (2.0 / SQRT_PI) * (1.0 - U * U / 3.0), special.erf(U) / Us)
    out = c_d(d) * (np.exp(-U * U) + SQRT_PI * (U * U + 0.5) * erf_over_u)
    return float(out) if out.ndim == 0 else out


def d0_prime(d: int, U):
    """``D0'(U) = 2 c_d [sqrt(pi) U erf(U) + e^{-U^2}]``."""
    U = np.asarray(U, dtype=float)
    out = 2.0 * c_d(d) * (SQRT_PI * U * special.erf(U) + np.exp(-U * U))
    return float(out) if out.ndim == 0 else out


def d0_law(d: int, U: float) -> D0Law:
    if d not in (1, 2, 3):
        raise ValueError(f"d must be 1, 2 or 3, got {d!r}")
    return D0Law(d0(d, U), k_coeff(d, U))


def drag_constants(d: int, gamma: float) -> DragLawConstants:
    """``c_d``, ``C0 = D0'(0)``, ``C_gamma = D0'(gamma)`` and ``t_gamma``.

    ``t_gamma = log(1/gamma) / C_gamma`` is only meaningful for ``0 < gamma <= 1``;
    it is reported as 0 outside that range.
    """
    C0 = d0_prime(d, 0.0)
    Cg = d0_prime(d, gamma)
    tg = math.log(1.0 / gamma) / Cg if 0.0 < gamma <= 1.0 else 0.0
    return DragLawConstants(c_d=c_d(d), C0=C0, C_gamma=Cg, t_gamma=tg)


def envelope_w(params: ModelParams, t):
    """Decay envelope ``w_{eps,kappa,d}(t)``.

    ``epsilon = 0`` uses ``(1+t)^{-(d+2)} (1+t/kappa)^{-(3-d)}`` (which tends to
    ``(1+t)^{-(d+2)}`` as kappa -> inf); ``kappa = inf`` with ``epsilon > 0``
    uses ``2^{3-d} (1+t)^{-(d+2)}``.
    """
    t = np.asarray(t, dtype=float)
    d, eps, kap = params.d, params.epsilon, params.kappa
    base = (1.0 + t) ** (-(d + 2))
    if eps == 0.0:
        inner = np.ones_like(t) if math.isinf(kap) else 1.0 / (1.0 + t / kap)
    elif math.isinf(kap):
        inner = np.full_like(t, 2.0)
    else:
        inner = 1.0 / np.sqrt(1.0 + t / (eps * kap)) + 1.0 / (1.0 + t / kap)
    out = base * inner ** (3 - d)
    return float(out) if out.ndim == 0 else out


def i_d_sigma(d: int, sigma: int, t: float) -> float:
    """``int_{R^{3-d}} exp(-|x|^2 - |x|^sigma t) dx`` for d, sigma in {1, 2}."""
    if d not in (1, 2) or sigma not in (1, 2):
        raise ValueError("d and sigma must be 1 or 2")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if d == 1:
        f = lambda r: r * math.exp(-r * r - r**sigma * t)
        pref = 2.0 * math.pi
    else:
        f = lambda r: math.exp(-r * r - r**sigma * t)
        pref = 2.0
    scale = 1.0 / (1.0 + t) ** (1.0 / sigma)
    return pref * _half_line_quad(f, scale)


def j_integral(params: ModelParams, xi_tilde, t: float) -> float:
    """``int exp(-|xh|^2) exp(-nu(|xi|) t / kappa) dxh`` over the ``3-d`` hidden components."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    a2 = float(np.sum(np.asarray(xi_tilde, dtype=float) ** 2))
    rate = 0.0 if params.free_molecular else t / params.kappa
    eps = params.epsilon
    if params.d == 3:
        return math.exp(-nu_eps(eps, math.sqrt(a2)) * rate)

    def relax(q):
        return math.exp(-q * q - nu_eps(eps, math.sqrt(a2 + q * q)) * rate)

    if params.d == 2:
        f, pref = relax, 2.0
    else:
        f, pref = (lambda q: q * relax(q)), 2.0 * math.pi
    # decay length of the relaxation factor in q
    if rate == 0.0:
        scale = 1.0
    elif eps == 0.0:
        scale = min(1.0, 1.0 / rate)
    else:
        scale = min(1.0, 1.0 / rate, math.sqrt(eps / rate))
    return pref * _half_line_quad(f, scale)


def _half_line_quad(f, scale: float) -> float:
    # split [0, inf) at multiples of the decay length so quad sees every scale
    edges = [0.0]
    x = scale
    while x < 8.0:
        edges.append(x)
        x *= 4.0
    edges.append(8.0)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    total += integrate.quad(f, 8.0, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)[0]
    return total


def terminal_velocity(d: int, E: float) -> float:
    """Unique root of ``D0(V) = E``."""
    if E < 0:
        raise ValueError("E must be nonnegative")
    if E == 0.0:
        return 0.0
    hi = 1.0
    while d0(d, hi) < E:
        hi *= 2.0
    return optimize.brentq(lambda v: d0(d, v) - E, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

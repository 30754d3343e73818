"""Coupled body/gas dynamics: Picard iteration of the linearised velocity map and
direct time marching of Newton's equation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .characteristics import VelocityHistory
from .drag import DragSample, DragStats, QuadratureConfig, drag_series
from .model import ModelParams, d0, drag_constants, k_coeff

MODES = ("picard", "time_march")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Numerical configuration of a run.

    ``drag_spacing`` > 0 evaluates the recollision drag only on grid times
    whose spacing is about ``drag_spacing * t`` (every point while that is
    below one step) and interpolates monotonically in between; 0 evaluates
    it at every grid point.
    """

    t_end: float
    dt: float | None = None
    picard_damping: float = 0.5
    picard_tol: float = 1e-8
    picard_max_iter: int = 60
    mode: str = "picard"
    external_force: float = 0.0
    drag_spacing: float = 0.01

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        if self.dt is None:
            object.__setattr__(self, "dt", self.t_end / 4000.0)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.dt > self.t_end / 100.0 * (1 + 1e-12):
            raise ValueError(f"dt must be at most t_end/100, got {self.dt!r}")
        if not 0.0 < self.picard_damping <= 1.0:
            raise ValueError(f"picard_damping must lie in (0, 1], got {self.picard_damping!r}")
        if not self.picard_tol >= 1e-12:
            raise ValueError(f"picard_tol must be >= 1e-12, got {self.picard_tol!r}")
        if not (isinstance(self.picard_max_iter, (int, np.integer)) and self.picard_max_iter >= 1):
            raise ValueError(f"picard_max_iter must be a positive integer, got {self.picard_max_iter!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.external_force >= 0 and math.isfinite(self.external_force)):
            raise ValueError(f"external_force must be nonnegative, got {self.external_force!r}")
        if not self.drag_spacing >= 0:
            raise ValueError(f"drag_spacing must be nonnegative, got {self.drag_spacing!r}")

    def grid(self) -> np.ndarray:
        n = int(math.ceil(self.t_end / self.dt - 1e-9))
        return np.arange(n + 1) * self.dt


@dataclass
class SimulationResult:
    history: VelocityHistory
    drag_series: list
    iterations: int
    converged: bool
    residual: float
    residuals: list = field(default_factory=list)
    stats: DragStats = field(default_factory=DragStats)

    @property
    def times(self) -> np.ndarray:
        return self.history.times

    @property
    def V(self) -> np.ndarray:
        return self.history.values

    def columns(self):
        """``(t, V, D, r_plus, r_minus)`` arrays."""
        ds = self.drag_series
        return (self.history.times, self.history.values,
                np.array([s.D for s in ds]), np.array([s.r_plus for s in ds]),
                np.array([s.r_minus for s in ds]))


def drag_indices(times: np.ndarray, spacing: float) -> np.ndarray:
    """Grid indices where the recollision drag is evaluated."""
    n = times.size
    if spacing <= 0:
        return np.arange(n)
    dt = times[1] - times[0]
    idx = [0]
    k = 0
    while k < n - 1:
        step = max(1, int(spacing * times[k] / dt))
        k = min(k + step, n - 1)
        idx.append(k)
    return np.array(idx)


def _recollision_drag(W: VelocityHistory, params: ModelParams, quad: QuadratureConfig,
                      spacing: float, stats: DragStats):
    t = W.times
    idx = drag_indices(t, spacing)
    rp, rm = drag_series(W, t[idx], params, quad, stats)
    if idx.size == t.size:
        return rp, rm
    interp = lambda r: PchipInterpolator(t[idx], r)(t)
    return interp(rp), interp(rm)


def _phi(z):
    """``phi1 = (1 - e^{-z})/z`` and ``phi2 = (z - 1 + e^{-z})/z^2`` without cancellation."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-3
    zs = np.where(small, 1.0, z)
    em = -np.expm1(-zs)
    phi1 = np.where(small, 1 - z / 2 + z * z / 6 - z ** 3 / 24, em / zs)
    phi2 = np.where(small, 0.5 - z / 6 + z * z / 24 - z ** 3 / 120, (zs - em) / (zs * zs))
    return phi1, phi2


def _linear_response(times, K, source, gamma):
    """Solve ``V' = -K V + source`` with ``K`` constant (trapezoid mean) and the
    source linear on each cell; exact for that data."""
    h = np.diff(times)
    z = 0.5 * (K[1:] + K[:-1]) * h
    phi1, phi2 = _phi(z)
    decay = np.exp(-z)
    a = h * (phi1 - phi2)
    b = h * phi2
    V = np.empty_like(times)
    V[0] = gamma
    for k in range(times.size - 1):
        V[k + 1] = decay[k] * V[k] + a[k] * source[k] + b[k] * source[k + 1]
    return V


def picard_map(W: VelocityHistory, params: ModelParams, quad: QuadratureConfig | None,
               config: SolverConfig, stats: DragStats | None = None, _drag=None) -> VelocityHistory:
    """Velocity that solves Newton's equation when the gas reacts to the path ``W``."""
    quad = quad or QuadratureConfig()
    stats = stats if stats is not None else DragStats()
    if _drag is None:
        rp, rm = _recollision_drag(W, params, quad, config.drag_spacing, stats)
    else:
        rp, rm = _drag
    K = k_coeff(params.d, W.values)
    V = _linear_response(W.times, np.atleast_1d(K), config.external_force - (rp + rm), params.gamma)
    return VelocityHistory(W.times, V)


def _samples(W: VelocityHistory, rp, rm, params: ModelParams):
    D = d0(params.d, W.values) + rp + rm
    return [DragSample(float(t), float(a), float(b), float(c)) for t, a, b, c in zip(W.times, rp, rm, D)]


def solve_picard(params: ModelParams, quad: QuadratureConfig | None, config: SolverConfig,
                 callback=None) -> SimulationResult:
    """Damped fixed-point iteration started from ``gamma exp(-C0 t)``.

    The residual is ``sup |Phi(W) - W| / gamma`` (absolute when gamma = 0).
    The returned history is the last iterate ``W`` and the drag series is the
    one evaluated on it, so ``converged`` certifies ``W`` itself.
    """
    quad = quad or QuadratureConfig()
    t = config.grid()
    C0 = drag_constants(params.d, max(params.gamma, 1e-300)).C0
    W = VelocityHistory(t, params.gamma * np.exp(-C0 * t))
    scale = params.gamma if params.gamma > 0 else 1.0
    theta = config.picard_damping
    residuals = []
    stats = DragStats()
    converged = False
    for it in range(1, config.picard_max_iter + 1):
        it_stats = DragStats()
        rp, rm = _recollision_drag(W, params, quad, config.drag_spacing, it_stats)
        V = picard_map(W, params, quad, config, _drag=(rp, rm))
        res = float(np.max(np.abs(V.values - W.values)) / scale)
        residuals.append(res)
        stats = it_stats
        if callback is not None:
            callback(it, res)
        if res <= config.picard_tol:
            converged = True
            break
        if it == config.picard_max_iter:
            break
        W = VelocityHistory(t, (1.0 - theta) * W.values + theta * V.values)
    return SimulationResult(history=W, drag_series=_samples(W, rp, rm, params), iterations=it,
                            converged=converged, residual=residuals[-1], residuals=residuals,
                            stats=stats)


def time_march(params: ModelParams, quad: QuadratureConfig | None, config: SolverConfig) -> SimulationResult:
    """Heun predictor-corrector for ``V' = E - D`` with the drag taken from the
    history computed so far."""
    quad = quad or QuadratureConfig()
    t = config.grid()
    E = config.external_force
    V = np.zeros_like(t)
    V[0] = params.gamma
    rp_s = np.zeros_like(t)
    rm_s = np.zeros_like(t)
    stats = DragStats()
    guard = 1.0 + abs(E)

    def drag_at(k, values):
        # the drag at t_k only needs the path on [0, t_k]
        if k == 0:
            return 0.0, 0.0
        H = VelocityHistory(t[: k + 1], values[: k + 1])
        rp, rm = drag_series(H, [t[k]], params, quad, stats)
        return float(rp[0]), float(rm[0])

    for k in range(t.size - 1):
        h = t[k + 1] - t[k]
        rp_s[k], rm_s[k] = drag_at(k, V)
        Dk = d0(params.d, V[k]) + rp_s[k] + rm_s[k]
        V[k + 1] = V[k] + h * (E - Dk)
        rp1, rm1 = drag_at(k + 1, V)
        D1 = d0(params.d, V[k + 1]) + rp1 + rm1
        V[k + 1] = V[k] + 0.5 * h * (2.0 * E - Dk - D1)
        if abs(V[k + 1] - V[k]) > h * guard:
            raise SolverError(f"step rejected at t={t[k + 1]:.6g}: |dV| exceeds dt*(1+|E|)")
    rp_s[-1], rm_s[-1] = drag_at(t.size - 1, V)
    H = VelocityHistory(t, V)
    return SimulationResult(history=H, drag_series=_samples(H, rp_s, rm_s, params), iterations=1,
                            converged=True, residual=0.0, residuals=[], stats=stats)


def solve(params: ModelParams, quad: QuadratureConfig | None, config: SolverConfig) -> SimulationResult:
    if config.mode == "picard":
        return solve_picard(params, quad, config)
    return time_march(params, quad, config)

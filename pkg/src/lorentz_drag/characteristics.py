"""Body velocity histories and backward characteristics with specular recollisions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import _kernels as K
from .model import ModelParams, nu_eps

LIPSCHITZ_SLACK = 1e-9
TOL_TANGENT = 1e-8
N_MAX = 64

FACES = ("plus", "minus")


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VelocityHistory:
    """Piecewise-linear body velocity on a grid; position is its exact integral.

    ``position_prefix`` is the trapezoidal prefix integral of ``values``, which
    is exact for the piecewise-linear interpolant.
    """

    times: np.ndarray
    values: np.ndarray
    position_prefix: np.ndarray = field(default=None, repr=False)
    prefix_min: np.ndarray = field(default=None, repr=False)
    prefix_max: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        t = _readonly(self.times)
        v = _readonly(self.values)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("times and values must be 1-D arrays of equal length >= 2")
        if t[0] != 0.0:
            raise ValueError("times must start at 0")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        x = K.trapezoid_prefix(t, v)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "position_prefix", _readonly(x))
        object.__setattr__(self, "prefix_min", _readonly(np.minimum.accumulate(v)))
        object.__setattr__(self, "prefix_max", _readonly(np.maximum.accumulate(v)))

    @classmethod
    def from_function(cls, f: Callable, times) -> "VelocityHistory":
        times = np.asarray(times, dtype=float)
        return cls(times, np.array([f(s) for s in times], dtype=float))

    @classmethod
    def uniform(cls, f: Callable, t_end: float, dt: float) -> "VelocityHistory":
        n = int(round(t_end / dt))
        return cls.from_function(f, np.linspace(0.0, n * dt, n + 1))

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def lipschitz_ok(self, bound: float = 1.0) -> bool:
        dv = np.abs(np.diff(self.values))
        return bool(np.all(dv <= bound * (1.0 + LIPSCHITZ_SLACK) * np.diff(self.times)))

    def _check_time(self, s: float) -> None:
        if not (0.0 <= s <= self.times[-1]):
            raise ValueError(f"time {s!r} outside [0, {self.t_end}]")

    def w(self, s: float) -> float:
        self._check_time(s)
        return float(K.w_at(self.times, self.values, float(s)))

    def x(self, s: float) -> float:
        self._check_time(s)
        return float(K.x_at(self.times, self.values, self.position_prefix, float(s)))

    def mirrored(self) -> "VelocityHistory":
        """History of the body seen in the reflected frame ``x1 -> -x1``."""
        return VelocityHistory(self.times, -self.values)


def window_average(history: VelocityHistory, s: float, t: float) -> float:
    """Mean body velocity over ``[s, t]``; ``W(t)`` when ``s == t``."""
    if s > t:
        raise ValueError(f"need s <= t, got s={s!r}, t={t!r}")
    history._check_time(s)
    history._check_time(t)
    if s == t:
        return history.w(t)
    return (history.x(t) - history.x(s)) / (t - s)


class RecollisionEvent(NamedTuple):
    tau: float
    xi1_pre: float
    xi1_post: float
    lateral: bool


@dataclass(frozen=True)
class RecollisionChain:
    t: float
    face: str
    x_perp: tuple
    xi: tuple
    events: tuple
    terminated_at_zero: bool
    degenerate: bool = False
    capped: bool = False

    @property
    def taus(self) -> np.ndarray:
        return np.array([e.tau for e in self.events], dtype=float)

    def __len__(self) -> int:
        return len(self.events)


def trace_backward(history: VelocityHistory, t: float, face: str, x_perp, xi,
                   params: ModelParams, tol_tangent: float = TOL_TANGENT,
                   n_max: int = N_MAX) -> RecollisionChain:
    """Follow the molecule at a face point backward in time through all recollisions.

    ``face='plus'`` needs ``xi[0] < W(t)``, ``face='minus'`` needs ``xi[0] > W(t)``.
    Face hits are admissible only while the lateral position stays in the unit
    ball; a crossing of the lateral surface while inside the body slab is
    recorded as a lateral event and ends the chain.
    """
    if face not in FACES:
        raise ValueError(f"face must be 'plus' or 'minus', got {face!r}")
    history._check_time(t)
    d = params.d
    xi = np.asarray(xi, dtype=float).reshape(3)
    xp = np.zeros(0) if d == 1 else np.asarray(x_perp, dtype=float).reshape(d - 1)
    if d > 1 and float(np.dot(xp, xp)) > 1.0 + 1e-12:
        raise ValueError("x_perp must lie in the unit ball")
    Wt = history.w(t)
    sgn = 1.0 if face == "plus" else -1.0
    if not sgn * (Wt - xi[0]) > 0.0:
        rel = "<" if face == "plus" else ">"
        raise ValueError(f"face {face!r} requires xi1 {rel} W(t) = {Wt!r}, got {xi[0]!r}")
    tau = np.empty(n_max + 2)
    upre = np.empty(n_max + 2)
    upost = np.empty(n_max + 2)
    lat = np.zeros(n_max + 2, dtype=np.bool_)
    n, status = K.trace_chain(history.times, history.values, history.position_prefix,
                              history.prefix_min, history.prefix_max, float(t), sgn,
                              float(xi[0]), xp, xi[1:d].copy(), d - 1, params.h,
                              float(tol_tangent), int(n_max), tau, upre, upost, lat)
    events = tuple(RecollisionEvent(float(tau[i]), float(upre[i]), float(upost[i]), bool(lat[i]))
                   for i in range(n))
    return RecollisionChain(t=float(t), face=face, x_perp=tuple(xp.tolist()), xi=tuple(xi.tolist()),
                            events=events, terminated_at_zero=(status == 0),
                            degenerate=(status == 1), capped=(status == 2))


def _segments(chain: RecollisionChain):
    """Axial velocity and duration of each backward segment ending at a face event."""
    prev = chain.t
    out = []
    for e in chain.events:
        out.append((e.xi1_pre, prev - e.tau, e))
        prev = e.tau
    return out


def f_deviation(chain: RecollisionChain, params: ModelParams) -> float:
    """``f_W - f_0`` at the chain's starting point as a sum over recollisions."""
    if chain.degenerate or chain.capped:
        raise ValueError("chain is degenerate or truncated; drop the node instead")
    xi = np.asarray(chain.xi)
    trans2 = float(xi[1] ** 2 + xi[2] ** 2)
    pref = math.pi ** -1.5 * math.exp(-trans2)
    total = 0.0
    expo = 0.0
    for u, dur, ev in _segments(chain):
        if not params.free_molecular:
            expo += nu_eps(params.epsilon, math.sqrt(u * u + trans2)) * dur / params.kappa
        if ev.lateral:
            continue
        jump = math.exp(-ev.xi1_post ** 2) - math.exp(-ev.xi1_pre ** 2)
        total += jump * math.exp(-expo)
    return pref * total


def deviation_bound(chain: RecollisionChain, params: ModelParams) -> float:
    """Pointwise bound on ``|f_W - f_0|``: Gaussian tail times the first-segment relaxation."""
    if not chain.events:
        return 0.0
    xi = np.asarray(chain.xi)
    trans2 = float(xi[1] ** 2 + xi[2] ** 2)
    out = math.pi ** -1.5 * math.exp(-trans2)
    if not params.free_molecular:
        speed = float(np.linalg.norm(xi))
        out *= math.exp(-nu_eps(params.epsilon, speed) * (chain.t - chain.events[0].tau) / params.kappa)
    return out


def ordering_holds(chain: RecollisionChain, history: VelocityHistory) -> bool:
    """Interlacing of molecule and body velocities along a chain.

    Front face: ``W(tau_{k-1}) > xi1(tau_k) > W(tau_k) > xi1'(tau_k)``; the rear face
    has every inequality reversed.  ``tau_0 = t``.
    """
    s = 1.0 if chain.face == "plus" else -1.0
    prev = chain.t
    for e in chain.events:
        if e.lateral:
            continue
        Wp, Wk = history.w(prev), history.w(e.tau)
        if not (s * (Wp - e.xi1_pre) > 0 and s * (e.xi1_pre - Wk) > 0 and s * (Wk - e.xi1_post) > 0):
            return False
        prev = e.tau
    return True


def forward_replay(chain: RecollisionChain, history: VelocityHistory) -> float:
    """Replay the chain forward from its earliest event; returns the axial
    position mismatch at time t relative to the face the chain started on."""
    if not chain.events:
        return 0.0
    s = 1.0 if chain.face == "plus" else -1.0
    last = chain.events[-1]
    x1 = history.x(last.tau) + 0.5 * s
    u = last.xi1_pre
    # walk the events from earliest to latest
    evs = list(chain.events)
    prev_tau = last.tau
    for e in reversed(evs[:-1]):
        x1 += u * (e.tau - prev_tau)
        face_pos = history.x(e.tau) + 0.5 * s
        if abs(x1 - face_pos) > 1e-6:
            return abs(x1 - face_pos)
        x1 = face_pos
        u = e.xi1_pre
        prev_tau = e.tau
    x1 += u * (chain.t - prev_tau)
    return abs(x1 - (history.x(chain.t) + 0.5 * s))

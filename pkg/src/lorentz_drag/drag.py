"""Recollision drag corrections on the two faces and the total drag.

The front-face integral is evaluated by a deterministic quadrature whose
axial nodes sit on the set of velocities that can recollide; the rear face
follows from the mirror identity ``r_minus[W] = -r_plus[-W]``.  A Monte Carlo
estimator built on the generic tracer serves as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import optimize

from . import _kernels as K
from .characteristics import FACES, VelocityHistory, window_average
from .model import ModelParams, d0

# capped chains may carry at most this share of the axial quadrature weight
MAX_CAPPED_FRACTION = 1e-3
# a face is skipped when its a-priori bound is below this share of the other face
NEGLIGIBLE_FACE = 1e-10


class DragError(RuntimeError):
    """Raised when the drag quadrature cannot be trusted (e.g. truncated chains)."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Node counts for the drag quadrature.

    ``n_xperp`` is accepted for configuration compatibility; the face
    integral is done exactly (overlap of the face with its shifted copy).
    ``n_xihat`` is split into Gauss-Legendre panels of four nodes.
    """

    n_xi1: int = 48
    n_xperp: int = 16
    n_xiperp: int = 24
    n_xihat: int = 40
    window_padding: float = 1.05
    tol_tangent: float = 1e-8
    n_max: int = 64
    check_bound: bool = True

    def __post_init__(self):
        for name in ("n_xi1", "n_xperp", "n_xiperp", "n_xihat"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 8:
                raise ValueError(f"{name} must be an integer >= 8, got {v!r}")
        if not self.window_padding >= 1.0:
            raise ValueError(f"window_padding must be >= 1, got {self.window_padding!r}")
        if not self.n_max >= 1:
            raise ValueError("n_max must be positive")

    def scaled(self, factor: float) -> "QuadratureConfig":
        kw = asdict(self)
        for name in ("n_xi1", "n_xperp", "n_xiperp", "n_xihat"):
            kw[name] = max(8, int(round(kw[name] * factor)))
        if factor != 1.0:
            kw["n_xihat"] = 4 * max(2, kw["n_xihat"] // 4)
        return QuadratureConfig(**kw)


@dataclass(frozen=True)
class DragSample:
    t: float
    r_plus: float
    r_minus: float
    D: float
    quadrature_error_estimate: float = 0.0


@dataclass
class DragStats:
    """Node bookkeeping accumulated over drag evaluations."""

    nodes: int = 0
    dropped_tangential: int = 0
    capped: int = 0
    bound_violations: int = 0
    max_chain: int = 0
    weight: float = 0.0
    weight_capped: float = 0.0
    worst_capped_share: float = 0.0

    def add(self, stats: np.ndarray, weights: np.ndarray) -> None:
        """Accumulate kernel counters; ``weights`` rows are per time, with the
        faces already summed when both were evaluated."""
        s = np.asarray(stats).reshape(-1, 5)
        w = np.asarray(weights).reshape(-1, 2)
        self.weight += float(w[:, 0].sum())
        self.weight_capped += float(w[:, 1].sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            share = np.where(w[:, 0] > 0, w[:, 1] / np.where(w[:, 0] > 0, w[:, 0], 1.0), 0.0)
        self.worst_capped_share = max(self.worst_capped_share, float(share.max(initial=0.0)))
        self.nodes += int(s[:, 0].sum())
        self.dropped_tangential += int(s[:, 1].sum())
        self.capped += int(s[:, 2].sum())
        self.bound_violations += int(s[:, 3].sum())
        self.max_chain = max(self.max_chain, int(s[:, 4].max(initial=0)))

    def check(self) -> None:
        if self.worst_capped_share > MAX_CAPPED_FRACTION:
            raise DragError(
                f"recollision chains exceeded the length cap on nodes carrying "
                f"{self.worst_capped_share:.2e} of the quadrature weight "
                f"({self.capped} of {self.nodes} nodes)")

    def as_dict(self) -> dict:
        return {"nodes": self.nodes, "dropped_tangential": self.dropped_tangential,
                "capped": self.capped, "bound_violations": self.bound_violations,
                "max_chain": self.max_chain, "worst_capped_share": self.worst_capped_share}


_GL_CACHE: dict = {}


def _gl_table(n: int):
    key = ("table", n)
    if key not in _GL_CACHE:
        x = np.zeros((n, n))
        w = np.zeros((n, n))
        for m in range(1, n + 1):
            xm, wm = np.polynomial.legendre.leggauss(m)
            x[m - 1, :m] = xm
            w[m - 1, :m] = wm
        _GL_CACHE[key] = (x, w)
    return _GL_CACHE[key]


def _gl_unit(n: int):
    """Gauss-Legendre on [0, 1]."""
    key = ("unit", n)
    if key not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[key] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[key]


def _arrays(history: VelocityHistory, mirror: bool):
    s = -1.0 if mirror else 1.0
    W = s * history.values
    X = s * history.position_prefix
    if mirror:
        return W, X, -history.prefix_max, -history.prefix_min
    return W, X, history.prefix_min, history.prefix_max


def front_face_series(history: VelocityHistory, t_eval, params: ModelParams,
                      quad: QuadratureConfig, mirror: bool = False, r_floor=None):
    """Front-face correction at each time in ``t_eval`` (rear face when ``mirror``).

    Returns ``(values, stats, weights)``; for ``mirror=True`` the values are already
    sign-flipped so they equal ``r_minus`` of the original history.
    A face whose a-priori bound is below ``r_floor`` (per time) is reported as 0.
    """
    t_eval = np.ascontiguousarray(np.asarray(t_eval, dtype=float).reshape(-1))
    if np.any(t_eval < 0) or np.any(t_eval > history.t_end):
        raise ValueError("evaluation times must lie inside the history")
    W, X, pmin, pmax = _arrays(history, mirror)
    glx, glw = _gl_table(quad.n_xi1)
    rx, rw = _gl_unit(quad.n_xiperp)
    qgx, qgw = np.polynomial.legendre.leggauss(4)
    kinv = 0.0 if params.free_molecular else 1.0 / params.kappa
    floor = np.zeros_like(t_eval) if r_floor is None else np.broadcast_to(
        np.asarray(r_floor, dtype=float), t_eval.shape).copy()
    r, stats, weights = K.front_face_series(history.times, W, X, pmin, pmax, t_eval, params.d,
                                   float(params.epsilon), kinv, glx, glw, quad.n_xi1,
                                   rx, rw, max(2, quad.n_xihat // 4), qgx, qgw,
                                   quad.tol_tangent, quad.n_max, quad.check_bound, floor)
    if mirror:
        r = -r
    return r, stats, weights


def recollision_window(history: VelocityHistory, t: float, face: str = "plus"):
    """Range of ``<W>_{s,t}`` over ``s in [0, t]`` intersected with the face's half-line.

    Grid values are refined by a bounded scalar search around the extreme cell.
    The plus face keeps the part below ``W(t)``, the minus face the part above.
    """
    if face not in FACES:
        raise ValueError(f"face must be 'plus' or 'minus', got {face!r}")
    history._check_time(t)
    Wt = history.w(t)
    if t == 0.0:
        return (Wt, Wt)
    ts = history.times[history.times < t]
    A = (history.x(t) - history.position_prefix[: ts.size]) / (t - ts)
    A = np.append(A, Wt)
    grid = np.append(ts, t)

    def refine(sign):
        i = int(np.argmin(sign * A))
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, grid.size - 1)]
        best = sign * A[i]
        if hi > lo:
            f = lambda s: sign * window_average(history, s, t)
            res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-12 * max(t, 1.0)})
            best = min(best, float(res.fun))
        return sign * best

    lo, hi = refine(1.0), refine(-1.0)
    if face == "plus":
        return (min(lo, Wt), Wt)
    return (Wt, max(hi, Wt))


def r_pm(history: VelocityHistory, t: float, face: str, params: ModelParams,
         quad: QuadratureConfig | None = None) -> float:
    """Recollision correction ``r^+`` (``face='plus'``) or ``r^-`` at time ``t``."""
    if face not in FACES:
        raise ValueError(f"face must be 'plus' or 'minus', got {face!r}")
    quad = quad or QuadratureConfig()
    r, stats, weights = front_face_series(history, [t], params, quad, mirror=(face == "minus"))
    st = DragStats()
    st.add(stats, weights)
    st.check()
    return float(r[0])


def drag_series(history: VelocityHistory, t_eval, params: ModelParams,
                quad: QuadratureConfig | None = None, stats: DragStats | None = None):
    """``(r_plus, r_minus)`` arrays at ``t_eval``; raises ``DragError`` on truncated chains."""
    quad = quad or QuadratureConfig()
    t_eval = np.ascontiguousarray(np.asarray(t_eval, dtype=float).reshape(-1))
    if np.any(t_eval < 0) or np.any(t_eval > history.t_end):
        raise ValueError("evaluation times must lie inside the history")
    # the face with the larger a-priori bound goes first; the other face is
    # skipped where its bound is below NEGLIGIBLE_FACE of the first result
    widths = K.window_widths(history.times, history.values, history.position_prefix, t_eval)
    plus_first = widths[:, 0] >= widths[:, 1]
    rp = np.zeros_like(t_eval)
    rm = np.zeros_like(t_eval)
    sp = np.zeros((t_eval.size, 5), np.int64)
    sm = np.zeros((t_eval.size, 5), np.int64)
    wp = np.zeros((t_eval.size, 2))
    wm = np.zeros((t_eval.size, 2))
    for first_mask, mirror_first in ((plus_first, False), (~plus_first, True)):
        if not first_mask.any():
            continue
        ts = t_eval[first_mask]
        a, sa, wa = front_face_series(history, ts, params, quad, mirror=mirror_first)
        b, sb, wb = front_face_series(history, ts, params, quad, mirror=not mirror_first,
                                      r_floor=NEGLIGIBLE_FACE * np.abs(a))
        if mirror_first:
            a, b, sa, sb, wa, wb = b, a, sb, sa, wb, wa
        rp[first_mask], sp[first_mask], wp[first_mask] = a, sa, wa
        rm[first_mask], sm[first_mask], wm[first_mask] = b, sb, wb
    st = stats if stats is not None else DragStats()
    st.add(np.concatenate([sp, sm]), wp + wm)
    st.check()
    return rp, rm


def drag_total(history: VelocityHistory, t: float, params: ModelParams,
               quad: QuadratureConfig | None = None) -> DragSample:
    """Total drag ``D0(W(t)) + r_plus + r_minus``.

    The error estimate is the change when every node count is halved.
    """
    quad = quad or QuadratureConfig()
    rp, rm = drag_series(history, [t], params, quad)
    rp2, rm2 = drag_series(history, [t], params, quad.scaled(0.5))
    err = abs(rp[0] - rp2[0]) + abs(rm[0] - rm2[0])
    D = d0(params.d, history.w(t)) + rp[0] + rm[0]
    return DragSample(t=float(t), r_plus=float(rp[0]), r_minus=float(rm[0]), D=float(D),
                      quadrature_error_estimate=float(err))


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_error: float


def _radial_sample(rng, n, dim, scale):
    """Defensive mixture: Gaussian half the time, a heavy radial law of width
    ``scale`` otherwise.  Returns samples and their density."""
    pick = rng.random(n) < 0.5
    if dim == 1:
        g = rng.standard_normal(n) / math.sqrt(2.0)
        e = rng.laplace(0.0, scale, n)
        x = np.where(pick, g, e)[:, None]
        r = np.abs(x[:, 0])
        dens = 0.5 * np.exp(-r * r) / math.sqrt(math.pi) + 0.5 * np.exp(-r / scale) / (2 * scale)
    else:
        g = rng.standard_normal((n, 2)) / math.sqrt(2.0)
        rad = rng.gamma(2.0, scale, n)
        ang = rng.uniform(0.0, 2 * math.pi, n)
        e = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        x = np.where(pick[:, None], g, e)
        r = np.hypot(x[:, 0], x[:, 1])
        # Gamma(2, scale) in the radius spread uniformly over the angle
        dens = 0.5 * np.exp(-r * r) / math.pi + 0.5 * np.exp(-r / scale) / (2 * math.pi * scale ** 2)
    return x, dens


def mc_oracle_r(history: VelocityHistory, t: float, face: str, params: ModelParams,
                n_samples: int = 10**6, seed: int = 0, quad: QuadratureConfig | None = None) -> MCEstimate:
    """Importance-sampled Monte Carlo estimate of the face correction.

    Face points are uniform on the face, ``xi1`` uniform on the recollision
    window and the transverse components are drawn from a Gaussian/heavy-tail
    mixture; each sample is traced with the generic tracer.  Deterministic
    for a given seed.
    """
    if face not in FACES:
        raise ValueError(f"face must be 'plus' or 'minus', got {face!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    quad = quad or QuadratureConfig()
    lo, hi = recollision_window(history, t, face)
    if not hi > lo:
        return MCEstimate(0.0, 0.0)
    Wt = history.w(t)
    rng = np.random.Generator(np.random.PCG64(seed))
    d = params.d
    n = int(n_samples)
    width = hi - lo
    xi1 = lo + width * rng.random(n)
    scale = 1.0 / max(t, 1.0)
    if d == 1:
        xperp = np.zeros((n, 0))
        area = 1.0
    elif d == 2:
        xperp = rng.uniform(-1.0, 1.0, (n, 1))
        area = 2.0
    else:
        rr = np.sqrt(rng.random(n))
        aa = rng.uniform(0.0, 2 * math.pi, n)
        xperp = np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=1)
        area = math.pi
    if d == 1:
        xt = np.zeros((n, 0))
        dens_t = np.ones(n)
    else:
        xt, dens_t = _radial_sample(rng, n, d - 1, scale)
    if d == 3:
        xh = np.zeros((n, 0))
        dens_h = np.ones(n)
    else:
        relax_scale = scale if not params.free_molecular else 1.0
        xh, dens_h = _radial_sample(rng, n, 3 - d, relax_scale)
    xi = np.concatenate([xi1[:, None], xt, xh], axis=1)
    sign = 1.0 if face == "plus" else -1.0
    kinv = 0.0 if params.free_molecular else 1.0 / params.kappa
    xperp = np.ascontiguousarray(xperp if d > 1 else np.zeros((n, 1)))
    vals, capped = K.mc_deviations(history.times, history.values, history.position_prefix,
                                   history.prefix_min, history.prefix_max, float(t), sign,
                                   np.ascontiguousarray(xi), xperp, d - 1, params.h,
                                   float(params.epsilon), kinv, quad.tol_tangent * width, quad.n_max)
    w_axial = (xi1 - Wt) ** 2
    share = float(w_axial[capped].sum() / w_axial.sum())
    if share > MAX_CAPPED_FRACTION:
        raise DragError(f"Monte Carlo chains exceeded the length cap on samples carrying "
                        f"{share:.2e} of the axial weight")
    weight = sign * 2.0 * (xi1 - Wt) ** 2 * area * width / (dens_t * dens_h)
    contrib = weight * vals
    est = float(np.sum(contrib) / n)
    se = float(np.std(contrib, ddof=1) / math.sqrt(n))
    return MCEstimate(est, se)

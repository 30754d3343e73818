"""Decay-rate fits, sign-change detection and diagnostics of the long-time theorems."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import linregress

from .model import ModelParams, drag_constants, envelope_w

MODES = ("algebraic", "exponential")
MIN_POINTS = 10
UPPER_SLACK = 1e-4      # additive, in units of gamma
BRACKET_SLACK = 0.05    # relative, for the small-kappa bracket
RATE_TOL = 0.10         # relative tolerance on fitted late-time rates


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    mode: str
    window: tuple
    rate: float
    r_squared: float
    n_points: int
    intercept: float = 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _split(series):
    if isinstance(series, tuple) or (isinstance(series, list) and len(series) == 2):
        t, v = series
    else:
        arr = np.asarray(series, dtype=float)
        if arr.ndim != 2:
            raise ValueError("series must be (t, V) or a 2-D array")
        t, v = (arr[0], arr[1]) if arr.shape[0] == 2 else (arr[:, 0], arr[:, 1])
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise ValueError("t and V must be 1-D arrays of equal length")
    return t, v


def _crossing_times(t, v):
    s = np.sign(v)
    k = np.nonzero(s[:-1] * s[1:] < 0)[0]
    tc = t[k] - v[k] * (t[k + 1] - t[k]) / (v[k + 1] - v[k])
    return np.concatenate([tc, t[s == 0]])


def usable_points(t, v, window):
    """Mask of points inside ``window`` with ``|V| > 0`` and farther than two
    grid steps from every zero crossing."""
    t_lo, t_hi = window
    mask = (t >= t_lo) & (t <= t_hi) & (v != 0) & np.isfinite(v)
    tc = _crossing_times(t, v)
    if tc.size and t.size > 1:
        step = float(np.median(np.diff(t)))
        near = np.min(np.abs(t[:, None] - tc[None, :]), axis=1) <= 2 * step * (1 + 1e-9)
        mask &= ~near
    return mask


def fit_rate(series, mode: str = "algebraic", window=None) -> RateFit:
    """Least-squares slope of ``log|V|`` against ``log t`` (algebraic) or ``t`` (exponential).

    ``window`` defaults to the last decade ``[t_end/10, t_end]``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    t, v = _split(series)
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    t_lo, t_hi = float(window[0]), float(window[1])
    if not t_lo < t_hi:
        raise ValueError(f"window needs t_lo < t_hi, got {window!r}")
    if mode == "algebraic" and t_lo <= 0:
        raise ValueError("algebraic fits need a window with t > 0")
    m = usable_points(t, v, (t_lo, t_hi))
    n = int(m.sum())
    if n < MIN_POINTS:
        raise FitError(f"only {n} usable points in window {window!r} (need {MIN_POINTS})")
    x = np.log(t[m]) if mode == "algebraic" else t[m]
    y = np.log(np.abs(v[m]))
    if np.ptp(y) == 0.0:
        return RateFit(mode, (t_lo, t_hi), 0.0, float("nan"), n, float(y[0]))
    fit = linregress(x, y)
    return RateFit(mode, (t_lo, t_hi), float(fit.slope), float(fit.rvalue ** 2), n, float(fit.intercept))


def detect_sign_change(series):
    """First zero crossing of V by linear interpolation, or ``None``."""
    t, v = _split(series)
    s = np.sign(v)
    nz = np.nonzero(s)[0]
    if nz.size == 0:
        return None
    s0 = s[nz[0]]
    opp = np.nonzero(s == -s0)[0]
    if opp.size == 0:
        return None
    j = int(opp[0])
    i = j - 1
    if v[i] == 0.0:
        # walk back over exact zeros to where the sign was last s0
        while i > 0 and v[i - 1] == 0.0:
            i -= 1
        return float(t[i])
    return float(t[i] - v[i] * (t[j] - t[i]) / (v[j] - v[i]))


def _check(ok: bool, margin: float, **extra) -> dict:
    out = {"pass": bool(ok), "margin": float(margin)}
    out.update(extra)
    return out


def _decreasing(v) -> tuple:
    """(ok, largest increase) for consecutive samples."""
    if v.size < 2:
        return True, 0.0
    worst = float(np.max(np.diff(v)))
    return worst <= 0.0, worst


def envelope_mode(params: ModelParams) -> str:
    return "algebraic" if (params.epsilon == 0 or params.free_molecular) else "exponential"


def _envelope_rates(params: ModelParams, t, mode, window):
    """Fitted rates of ``w e^{-eps t/kappa}`` and ``w e^{-eps t/(2 kappa)}`` over the window."""
    t = t[(t >= window[0]) & (t <= window[1])]
    w = np.array([envelope_w(params, float(s)) for s in t])
    lam = 0.0 if params.free_molecular else params.epsilon / params.kappa
    fast = fit_rate((t, w * np.exp(-lam * t)), mode, window).rate
    slow = fit_rate((t, w * np.exp(-0.5 * lam * t)), mode, window).rate
    return fast, slow


def _thm1(t, V, params: ModelParams, window) -> dict:
    g = params.gamma
    checks = {}
    if g == 0.0:
        ok, worst = _decreasing(V)
        checks["a_monotone_early"] = _check(ok and worst == 0.0, -worst)
        checks["b_upper_bound"] = _check(bool(np.all(V <= 0.0)), float(-np.max(V)))
        checks["c_sign_change"] = {"pass": True, "applicable": False, "note": "gamma = 0"}
        checks["d_late_rate"] = {"pass": True, "applicable": False, "note": "gamma = 0"}
        return checks

    dc = drag_constants(params.d, g)
    t_g = dc.t_gamma
    early = t <= t_g
    ok, worst = _decreasing(V[early])
    checks["a_monotone_early"] = _check(ok, -worst, t_gamma=t_g)

    upper = g * np.exp(-dc.C0 * t)
    margin = float(np.min(upper + UPPER_SLACK * g - V))
    checks["b_upper_bound"] = _check(margin >= 0.0, margin / g, slack=UPPER_SLACK)

    tc = detect_sign_change((t, V))
    lo, hi = t_g, 8.0 * t_g
    if tc is None:
        checks["c_sign_change"] = _check(False, float("nan"), crossing=None, window=[lo, hi],
                                         note="no sign change within the run (outside proven regime)")
    else:
        ok = lo < tc < hi
        c = _check(ok, min(tc - lo, hi - tc), crossing=tc, window=[lo, hi])
        if not ok:
            c["note"] = "outside proven regime"
        checks["c_sign_change"] = c

    # smallest A1 / largest A2 making the two envelopes hold
    w = np.array([envelope_w(params, float(s)) for s in t])
    lam = 0.0 if params.free_molecular else params.epsilon / params.kappa
    a1 = (g * np.exp(-dc.C_gamma * t) - V) / (g ** 3 * w * np.exp(-0.5 * lam * t))
    late = t >= 2.0 * t_g
    a2 = (upper - V)[late] / (g ** 5 * w[late] * np.exp(-lam * t[late])) if late.any() else np.array([np.inf])
    checks["envelope_constants"] = {"pass": True, "A1_fit": float(max(0.0, np.max(a1))),
                                    "A2_fit": float(np.min(a2))}

    mode = envelope_mode(params)
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    try:
        fit = fit_rate((t, V), mode, window)
        fast, slow = _envelope_rates(params, t, mode, window)
        lo_r = min(fast, slow) - RATE_TOL * abs(min(fast, slow))
        hi_r = max(fast, slow) + RATE_TOL * abs(max(fast, slow))
        ok = lo_r <= fit.rate <= hi_r
        checks["d_late_rate"] = _check(ok, min(fit.rate - lo_r, hi_r - fit.rate), fit=fit.as_dict(),
                                       envelope_rates=[fast, slow], accepted=[lo_r, hi_r])
    except FitError as exc:
        checks["d_late_rate"] = _check(False, float("nan"), note=str(exc))
    return checks


def _thm2(t, V, params: ModelParams) -> dict:
    g = params.gamma
    checks = {}
    dc = drag_constants(params.d, max(g, 1e-300))
    env = g * np.exp(-dc.C0 * t)
    lower = 0.5 * env * (1 - BRACKET_SLACK)
    upper = env * (1 + BRACKET_SLACK)
    scale = np.where(env > 0, env, 1.0)
    m_lo = float(np.min((V - lower) / scale))
    m_hi = float(np.min((upper - V) / scale))
    checks["bracket"] = _check(m_lo >= 0 and m_hi >= 0, min(m_lo, m_hi), lower_margin=m_lo,
                               upper_margin=m_hi, slack=BRACKET_SLACK)
    ok, worst = _decreasing(V)
    checks["monotone"] = _check(ok, -worst)
    regime = params.free_molecular is False and params.epsilon >= 2 * params.kappa * dc.C0
    checks["regime"] = {"pass": True, "eps_ge_2_kappa_C0": bool(regime)}
    return checks


def theorem_check(result, params: ModelParams, which: str = "thm1", window=None) -> dict:
    """Pass/fail report with margins for the large-kappa (``thm1``) or small-kappa
    (``thm2``) long-time statements."""
    if which not in ("thm1", "thm2"):
        raise ValueError(f"which must be 'thm1' or 'thm2', got {which!r}")
    t = np.asarray(result.times, dtype=float)
    V = np.asarray(result.V, dtype=float)
    checks = _thm1(t, V, params, window) if which == "thm1" else _thm2(t, V, params)
    applicable = [c["pass"] for c in checks.values() if c.get("applicable", True)]
    return {"which": which, "pass": bool(all(applicable)), "converged": bool(getattr(result, "converged", True)),
            "checks": checks}


def r_plus_vanishes_early(result, params: ModelParams) -> tuple:
    """(ok, max |r_plus|) over grid times before t_gamma."""
    if params.gamma == 0:
        return True, 0.0
    t_g = drag_constants(params.d, params.gamma).t_gamma
    t, _, _, rp, _ = result.columns()
    m = t < t_g
    worst = float(np.max(np.abs(rp[m]))) if m.any() else 0.0
    return worst == 0.0, worst


def sliding_slopes(series, mode: str = "algebraic", n_windows: int = 4, window=None):
    """Fitted rates on consecutive sub-windows; a pure exponential read in
    algebraic mode gives ever steeper slopes."""
    t, v = _split(series)
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    edges = np.linspace(window[0], window[1], n_windows + 1)
    return [fit_rate((t, v), mode, (edges[i], edges[i + 1])).rate for i in range(n_windows)]



APPROACH_FLOOR = 1e-6


def approach_fit(series, v_inf: float, rel_floor: float = APPROACH_FLOOR) -> RateFit:
    """Exponential fit of ``|V - V_inf|`` from t = 0 until it first falls below
    ``rel_floor`` times its initial value (beyond that the solver tolerance
    dominates the gap)."""
    t, v = _split(series)
    gap = v - v_inf
    g0 = abs(gap[0])
    if g0 == 0.0:
        raise FitError("the run starts at the terminal velocity")
    below = np.nonzero(np.abs(gap) < rel_floor * g0)[0]
    t_hi = float(t[below[0]]) if below.size else float(t[-1])
    return fit_rate((t, gap), "exponential", (float(t[0]), t_hi))

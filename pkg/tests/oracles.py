"""Brute-force reference implementations used by the tests.

They share no code with the package: positions are integrated here, roots
are found by scanning and bisection, and integrals use scipy.
"""

import math

import numpy as np
from scipy import optimize


class PLPath:
    """Piecewise-linear velocity with its exact position integral."""

    def __init__(self, times, values):
        self.t = np.asarray(times, dtype=float)
        self.v = np.asarray(values, dtype=float)
        cell = 0.5 * (self.v[1:] + self.v[:-1]) * np.diff(self.t)
        self.X = np.concatenate([[0.0], np.cumsum(cell)])

    def w(self, s):
        return float(np.interp(s, self.t, self.v))

    def x(self, s):
        s = np.asarray(s, dtype=float)
        k = np.clip(np.searchsorted(self.t, s, side="right") - 1, 0, self.t.size - 2)
        h = s - self.t[k]
        out = self.X[k] + self.v[k] * h + 0.5 * (np.interp(s, self.t, self.v) - self.v[k]) * h
        return float(out) if out.ndim == 0 else out


def chain_1d(path, t, face, u, n_scan=4000, n_max=400, strict=True):
    """Recollision chain of a 1-D molecule leaving a face at time t with
    velocity u, traced backward.  Returns [(tau, pre, post), ...].

    With ``strict=False`` a chain longer than ``n_max`` is returned truncated."""
    sgn = 1.0 if face == "plus" else -1.0
    out = []
    tau = t
    while len(out) < n_max:
        # gap between molecule and face for s < tau, zero at s = tau
        def g(s, tau=tau, u=u):
            return sgn * (path.x(tau) - path.x(s) - u * (tau - s))

        s_grid = np.linspace(tau, 0.0, n_scan + 1)[1:]
        vals = g(s_grid)
        hit = np.nonzero(vals <= 0.0)[0]
        if hit.size == 0:
            return out
        j = int(hit[0])
        hi = tau if j == 0 else s_grid[j - 1]
        if j == 0:
            # root closer to tau than one scan cell: refine on a finer scan
            fine = np.linspace(tau, s_grid[0], 2001)[1:]
            fv = g(fine)
            k = int(np.nonzero(fv <= 0.0)[0][0])
            hi = tau if k == 0 else fine[k - 1]
            lo = fine[k]
        else:
            lo = s_grid[j]
        root = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-14) if g(lo) < 0 else lo
        post = 2.0 * path.w(root) - u
        out.append((root, u, post))
        tau, u = root, post
    if strict:
        raise RuntimeError("chain too long")
    return out


def r_free_molecular_1d(path, t, face, n=3000):
    """Face correction for d = 1, kappa = inf by the midpoint rule in xi1."""
    Wt = path.w(t)
    s = np.linspace(0.0, t, 2001)[:-1]
    avgs = np.concatenate([(path.x(t) - path.x(s)) / (t - s), [Wt]])
    lo, hi = (Wt, float(avgs.max())) if face == "minus" else (float(avgs.min()), Wt)
    if not hi > lo:
        return 0.0
    u = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    total = 0.0
    for ui in u:
        ev = chain_1d(path, t, face, ui, strict=False)
        # the jumps telescope
        if ev:
            total += (ui - Wt) ** 2 * (math.exp(-ev[-1][2] ** 2) - math.exp(-ui * ui))
    sign = 1.0 if face == "plus" else -1.0
    return sign * 2.0 / math.sqrt(math.pi) * total * (hi - lo) / n

"""Compiled inner loops: history interpolation, backward recollision search
and the front-face recollision drag quadrature.

Histories are piecewise linear in W, so X_W is piecewise quadratic and the
recollision condition ``X(a) - X(s) = (a - s) u`` is a quadratic in ``s`` on
each grid cell.
"""

import math

import numpy as np
from numba import njit, prange

SQRT_PI = math.sqrt(math.pi)
PI_M32 = math.pi ** -1.5
RHO_CAP = 6.0
BLOCK_TOL = 1e-3
FACE = np.array([1.0, 2.0, math.pi])
Q_CAP = 6.0


@njit(cache=True)
def nu(eps, z):
    if eps == 0.0:
        return 0.5 * SQRT_PI * z
    if z == 0.0:
        return 2.0 * eps / SQRT_PI
    y = z / eps
    ey = math.erf(y)
    return 0.5 * eps * (math.exp(-y * y) + SQRT_PI * (y * ey + 0.5 * ey / y))


@njit(cache=True)
def trapezoid_prefix(times, W):
    """Prefix trapezoid integral with compensated (Neumaier) summation."""
    n = times.shape[0]
    X = np.empty(n)
    X[0] = 0.0
    acc = 0.0
    comp = 0.0
    for k in range(n - 1):
        term = 0.5 * (W[k] + W[k + 1]) * (times[k + 1] - times[k])
        tot = acc + term
        if abs(acc) >= abs(term):
            comp += (acc - tot) + term
        else:
            comp += (term - tot) + acc
        acc = tot
        X[k + 1] = acc + comp
    return X


@njit(cache=True)
def cell_of(times, s):
    n = times.shape[0]
    k = np.searchsorted(times, s, side="right") - 1
    if k < 0:
        return 0
    if k > n - 2:
        return n - 2
    return k


@njit(cache=True)
def w_at(times, W, s):
    k = cell_of(times, s)
    h = times[k + 1] - times[k]
    return W[k] + (W[k + 1] - W[k]) * (s - times[k]) / h


@njit(cache=True)
def x_at(times, W, X, s):
    k = cell_of(times, s)
    h = times[k + 1] - times[k]
    m = (W[k + 1] - W[k]) / h
    sig = s - times[k]
    return X[k] + W[k] * sig + 0.5 * m * sig * sig


@njit(cache=True)
def _cell_root(c0, b, a2, h, sgn):
    """Largest sigma in [0, h] with a2 sigma^2 + b sigma + c0 = 0.

    The caller guarantees sgn*g(0) <= 0 < sgn*g(h).
    """
    best = -1.0
    tol = 1e-12 * h
    if abs(a2) * h < 1e-14 * (abs(b) + abs(c0) / h + 1e-300):
        if b != 0.0:
            best = -c0 / b
    else:
        disc = b * b - 4.0 * a2 * c0
        if disc < 0.0:
            disc = 0.0
        sq = math.sqrt(disc)
        qq = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
        r1 = qq / a2
        r2 = c0 / qq if qq != 0.0 else r1
        for r in (r1, r2):
            if -tol <= r <= h + tol and r > best:
                best = r
    if best < -tol or best > h + tol or not math.isfinite(best):
        # bisection fallback on the bracketing sign change
        lo, hi = 0.0, h
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            g = c0 + mid * (b + a2 * mid)
            if sgn * g <= 0.0:
                lo = mid
            else:
                hi = mid
        best = 0.5 * (lo + hi)
    return min(max(best, 0.0), h)


@njit(cache=True)
def prev_hit(times, W, X, pmin, pmax, a, u, sgn, s_floor):
    """Largest s in [s_floor, a) with <W>_{s,a} = u, or -1.0 if there is none.

    ``sgn = +1`` when ``u < W(a)`` (molecule in front of the face it just
    left), ``-1`` when ``u > W(a)``.
    """
    if a <= times[0]:
        return -1.0
    ka = cell_of(times, a)
    kc = ka if a > times[ka] else ka - 1
    Wa = w_at(times, W, a)
    Xa = x_at(times, W, X, a)
    if sgn > 0:
        if u < min(pmin[kc], Wa):
            return -1.0
    else:
        if u > max(pmax[kc], Wa):
            return -1.0
    # cell holding a: the window average is (W(s) + W(a)) / 2
    t0 = times[kc]
    m = (W[kc + 1] - W[kc]) / (times[kc + 1] - t0)
    if m != 0.0:
        s = t0 + (2.0 * u - Wa - W[kc]) / m
        if t0 <= s < a:
            return s if s >= s_floor else -1.0
    if t0 <= s_floor:
        return -1.0
    for k in range(kc - 1, -1, -1):
        g = Xa - X[k] - (a - times[k]) * u
        if sgn * g <= 0.0:
            h = times[k + 1] - times[k]
            mk = (W[k + 1] - W[k]) / h
            sig = _cell_root(g, u - W[k], -0.5 * mk, h, sgn)
            s = times[k] + sig
            return s if s >= s_floor else -1.0
        if times[k] <= s_floor:
            return -1.0
    return -1.0


@njit(cache=True)
def trace_chain(times, W, X, pmin, pmax, t, sgn, v, xperp, xiperp, dperp, h_body,
                tol, nmax, tau, upre, upost, lateral):
    """Backward characteristic from a face point at time t.

    Fills event arrays and returns (n_events, status) where status is
    0 ok, 1 degenerate (tangential), 2 chain cap exceeded.
    Face hits are admissible only while |x_perp(s)| <= 1; the first time the
    line leaves the unit ball is ``s_exit``.
    """
    s_floor = 0.0
    if dperp > 0:
        # |x - (t - s) xi| = 1 solved for the backward exit time
        a2 = 0.0
        b = 0.0
        c = -1.0
        for i in range(dperp):
            a2 += xiperp[i] * xiperp[i]
            b += -2.0 * xperp[i] * xiperp[i]
            c += xperp[i] * xperp[i]
        if a2 > 0.0:
            disc = b * b - 4.0 * a2 * c
            if disc < 0.0:
                disc = 0.0
            lam = (-b + math.sqrt(disc)) / (2.0 * a2)
            s_floor = max(t - lam, 0.0)
    n = 0
    a = t
    u = v
    Xa = x_at(times, W, X, t)
    while True:
        s = prev_hit(times, W, X, pmin, pmax, a, u, sgn, s_floor)
        if s < 0.0:
            break
        if n >= nmax:
            return n, 2
        Ws = w_at(times, W, s)
        if abs(u - Ws) <= tol:
            return n, 1
        tau[n] = s
        upre[n] = u
        upost[n] = 2.0 * Ws - u
        lateral[n] = False
        n += 1
        a = s
        u = 2.0 * Ws - u
    if dperp > 0 and s_floor > 0.0:
        # where the line leaves the body shadow, check against the body slab
        xs = x_at(times, W, X, s_floor)
        if n == 0:
            x1 = Xa + sgn * 0.5 * h_body - (t - s_floor) * v
        else:
            x1 = x_at(times, W, X, a) + sgn * 0.5 * h_body - (a - s_floor) * u
        if xs - 0.5 * h_body < x1 < xs + 0.5 * h_body and n < nmax:
            tau[n] = s_floor
            upre[n] = u
            upost[n] = u
            lateral[n] = True
            n += 1
    return n, 0


@njit(cache=True)
def hidden_nodes(q_lo, n_panels, gx, gw, d):
    """Composite Gauss-Legendre nodes on [0, Q_CAP] for the hidden speed.

    First panel [0, q_lo], then geometric panels up to Q_CAP.  Weights carry
    the Gaussian factor and the radial measure (2 pi q for two hidden
    components, 2 for one component folded onto q >= 0).
    """
    npg = gx.shape[0]
    nq = n_panels * npg
    q = np.empty(nq)
    w = np.empty(nq)
    ratio = (Q_CAP / q_lo) ** (1.0 / (n_panels - 1))
    lo = 0.0
    hi = q_lo
    idx = 0
    for p in range(n_panels):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        for i in range(npg):
            x = mid + half * gx[i]
            meas = 2.0 * math.pi * x if d == 1 else 2.0
            q[idx] = x
            w[idx] = half * gw[i] * meas * math.exp(-x * x)
            idx += 1
        lo = hi
        hi = hi * ratio
        if p == n_panels - 2:
            hi = Q_CAP
    return q, w


@njit(cache=True)
def lens_area(delta):
    if delta >= 2.0:
        return 0.0
    return 2.0 * math.acos(0.5 * delta) - 0.5 * delta * math.sqrt(4.0 - delta * delta)


@njit(cache=True)
def _overlap(d, delta):
    """Measure of face points whose shifted copy (by ``delta``) stays on the face."""
    if d == 2:
        return max(0.0, 2.0 - delta)
    return lens_area(delta)


@njit(cache=True)
def _lateral_weight(d, rho, w):
    # Gaussian weight and radial measure of the lateral speed rho >= 0
    if d == 2:
        return 2.0 * w * math.exp(-rho * rho)
    return 2.0 * math.pi * rho * w * math.exp(-rho * rho)


@njit(cache=True)
def _hidden_scale(t, eps, kinv):
    if kinv == 0.0 or t <= 0.0:
        return 1.0
    rate = t * kinv
    s = min(1.0, 1.0 / rate)
    if eps > 0.0:
        s = max(s, min(1.0, math.sqrt(eps / rate)))
    return s


@njit(cache=True)
def front_face(times, W, X, pmin, pmax, t, d, eps, kinv, glx, glw, n_xi1,
               rx, rw, n_qpanels, qgx, qgw, tol_rel, nmax, check, r_floor):
    """Recollision correction on the face x1 = X(t) + h/2 (incoming xi1 < W(t)).

    The face is skipped (returns 0) when the a-priori bound
    ``2 |face| width^3 / (3 sqrt(pi))`` is below ``r_floor``.
    Returns (r, n_nodes, n_dropped, n_capped, n_violations, max_chain,
    weight_total, weight_capped); the weights are sums of ``w (xi1 - W)^2``
    over all nodes and over nodes whose chain hit the length cap (their
    truncated sums are kept).  ``kinv = 1/kappa`` (0 for free-molecular flow).
    """
    wsum = 0.0
    wcap = 0.0
    stats_nodes = 0
    dropped = 0
    capped = 0
    viol = 0
    maxlen = 0
    if t <= times[0]:
        return 0.0, 0, 0, 0, 0, 0, 0.0, 0.0
    Wt = w_at(times, W, t)
    Xt = x_at(times, W, X, t)
    ka = cell_of(times, t)
    kc = ka if t > times[ka] else ka - 1

    # records of the running minimum of <W>_{s,t} scanned backward from s = t
    rec_k = np.empty(kc + 1, np.int64)
    rec_a = np.empty(kc + 1)
    rec_up = np.empty(kc + 1)
    nrec = 0
    runmin = Wt
    eps64 = 64.0 * 2.220446049250313e-16
    for k in range(kc, -1, -1):
        A = (Xt - X[k]) / (t - times[k])
        # rounding floor of the divided difference
        noise = eps64 * ((abs(Xt) + abs(X[k])) / (t - times[k]) + abs(runmin))
        if A < runmin - noise:
            rec_k[nrec] = k
            rec_a[nrec] = A
            rec_up[nrec] = runmin
            nrec += 1
            runmin = A
    if nrec == 0:
        return 0.0, 0, 0, 0, 0, 0, 0.0, 0.0
    width = Wt - runmin
    if not width > 0.0:
        return 0.0, 0, 0, 0, 0, 0, 0.0, 0.0
    if 2.0 * FACE[d - 1] * width ** 3 / (3.0 * SQRT_PI) < r_floor:
        return 0.0, 0, 0, 0, 0, 0, 0.0, 0.0
    tol = tol_rel * width

    # hidden-speed and lateral-speed nodes
    if kinv > 0.0 and d < 3:
        qs = _hidden_scale(t, eps, kinv)
        qn, qw = hidden_nodes(0.02 * qs, n_qpanels, qgx, qgw, d)
    else:
        qn = np.zeros(1)
        qw = np.ones(1)
    nq = qn.shape[0]
    nr = rx.shape[0]
    hidden_free = math.pi ** (0.5 * (3 - d))

    tau = np.empty(nmax + 1)
    upre = np.empty(nmax + 1)
    upost = np.empty(nmax + 1)
    wtau = np.empty(nmax + 1)
    jump = np.empty(nmax + 1)
    seg = np.empty(nmax + 1)
    acc = np.empty(nmax + 1)
    total = 0.0

    # pieces: maximal runs of consecutive record cells, short runs merged so
    # that noisy record sequences cannot fragment the window.  Records are
    # monotone in A, so the binary search below works across merged runs.
    min_len = width / n_xi1
    i0 = 0
    while i0 < nrec:
        i1 = i0
        while True:
            while i1 + 1 < nrec and rec_k[i1 + 1] == rec_k[i1] - 1:
                i1 += 1
            if i1 + 1 < nrec and rec_up[i0] - rec_a[i1] < min_len:
                i1 += 1
            else:
                break
        p_hi = rec_up[i0]
        p_lo = rec_a[i1]
        npts = int(math.ceil(n_xi1 * (p_hi - p_lo) / width))
        if npts < 4:
            npts = 4
        if npts > n_xi1:
            npts = n_xi1
        half = 0.5 * (p_hi - p_lo)
        mid = 0.5 * (p_hi + p_lo)
        for g in range(npts):
            v = mid + half * glx[npts - 1, g]
            wv = half * glw[npts - 1, g]
            stats_nodes += 1
            # record holding v: first (in scan order) with rec_a <= v
            lo_i = i0
            hi_i = i1
            while lo_i < hi_i:
                md = (lo_i + hi_i) // 2
                if rec_a[md] <= v:
                    hi_i = md
                else:
                    lo_i = md + 1
            k = rec_k[lo_i]
            h = times[k + 1] - times[k]
            mk = (W[k + 1] - W[k]) / h
            if k == kc:
                s1 = times[k] + (2.0 * v - Wt - W[k]) / mk if mk != 0.0 else times[k]
                s1 = min(max(s1, times[k]), t)
            else:
                c0 = Xt - X[k] - (t - times[k]) * v
                s1 = times[k] + _cell_root(c0, v - W[k], -0.5 * mk, h, 1.0)
            # chain
            n = 0
            a = t
            u = v
            s = s1
            status = 0
            while s >= 0.0:
                if n >= nmax:
                    status = 2
                    break
                Ws = w_at(times, W, s)
                if abs(u - Ws) <= tol:
                    status = 1
                    break
                tau[n] = s
                upre[n] = u
                wtau[n] = Ws
                upost[n] = 2.0 * Ws - u
                seg[n] = a - s
                n += 1
                a = s
                u = 2.0 * Ws - u
                s = prev_hit(times, W, X, pmin, pmax, a, u, 1.0, 0.0)
            dv = v - Wt
            wsum += wv * dv * dv
            if status == 1:
                dropped += 1
                continue
            if status == 2:
                capped += 1
                wcap += wv * dv * dv
            if n == 0:
                continue
            if n > maxlen:
                maxlen = n
            for i in range(n):
                jump[i] = math.exp(-upre[i] * upre[i]) * math.expm1(-4.0 * wtau[i] * (wtau[i] - upre[i]))
            fsum = 0.0
            if d == 1:
                if kinv == 0.0:
                    for i in range(n):
                        fsum += jump[i] * hidden_free
                else:
                    for j in range(nq):
                        q2 = qn[j] * qn[j]
                        cum = 0.0
                        pref = 0.0
                        first = 0.0
                        for i in range(n):
                            cum += nu(eps, math.sqrt(upre[i] * upre[i] + q2)) * seg[i]
                            e = math.exp(-cum * kinv)
                            if i == 0:
                                first = e
                            fsum += qw[j] * jump[i] * e
                            if check:
                                pref += jump[i] * e
                                if abs(pref) > first * (1.0 + 1e-12) + 1e-300:
                                    viol += 1
            elif kinv == 0.0:
                for i in range(n):
                    Tn = t - tau[i]
                    rmax = min(2.0 / Tn, RHO_CAP) if Tn > 0.0 else RHO_CAP
                    gsum = 0.0
                    for jr in range(nr):
                        rho = rmax * rx[jr]
                        gsum += _lateral_weight(d, rho, rmax * rw[jr]) * _overlap(d, Tn * rho)
                    fsum += jump[i] * gsum * hidden_free
            else:
                # events whose lateral cutoffs 2/T agree to BLOCK_TOL share one
                # grid; exponents are accumulated along the chain on that grid
                i = 0
                while i < n:
                    Ti = t - tau[i]
                    rmax = min(2.0 / Ti, RHO_CAP) if Ti > 0.0 else RHO_CAP
                    j = i
                    while j + 1 < n:
                        Tj = t - tau[j + 1]
                        cj = min(2.0 / Tj, RHO_CAP) if Tj > 0.0 else RHO_CAP
                        if cj < (1.0 - BLOCK_TOL) * rmax:
                            break
                        j += 1
                    for jr in range(nr):
                        rho = rmax * rx[jr]
                        w0 = _lateral_weight(d, rho, rmax * rw[jr])
                        r2 = rho * rho
                        for jq in range(nq):
                            s2 = r2 + qn[jq] * qn[jq]
                            cum = 0.0
                            pref = 0.0
                            first = 0.0
                            for ii in range(j + 1):
                                cum += nu(eps, math.sqrt(upre[ii] * upre[ii] + s2)) * seg[ii]
                                e = math.exp(-cum * kinv)
                                if ii == 0:
                                    first = e
                                if ii >= i:
                                    fsum += w0 * qw[jq] * _overlap(d, (t - tau[ii]) * rho) * jump[ii] * e
                                if check:
                                    pref += jump[ii] * e
                                    if abs(pref) > first * (1.0 + 1e-12) + 1e-300:
                                        viol += 1
                    i = j + 1
            total += wv * dv * dv * PI_M32 * fsum
        i0 = i1 + 1
    return 2.0 * total, stats_nodes, dropped, capped, viol, maxlen, wsum, wcap


@njit(cache=True, parallel=True)
def front_face_series(times, W, X, pmin, pmax, t_eval, d, eps, kinv, glx, glw, n_xi1,
                      rx, rw, n_qpanels, qgx, qgw, tol_rel, nmax, check, r_floor):
    m = t_eval.shape[0]
    r = np.zeros(m)
    stats = np.zeros((m, 5), np.int64)
    weights = np.zeros((m, 2))
    for i in prange(m):
        out = front_face(times, W, X, pmin, pmax, t_eval[i], d, eps, kinv, glx, glw, n_xi1,
                         rx, rw, n_qpanels, qgx, qgw, tol_rel, nmax, check, r_floor[i])
        r[i] = out[0]
        stats[i, 0] = out[1]
        stats[i, 1] = out[2]
        stats[i, 2] = out[3]
        stats[i, 3] = out[4]
        stats[i, 4] = out[5]
        weights[i, 0] = out[6]
        weights[i, 1] = out[7]
    return r, stats, weights


@njit(cache=True, parallel=True)
def window_widths(times, W, X, t_eval):
    """Widths of the front-face window ``[min_s <W>_{s,t}, W(t)]`` and of the
    rear-face window ``[W(t), max_s <W>_{s,t}]`` on the grid."""
    m = t_eval.shape[0]
    out = np.zeros((m, 2))
    for i in prange(m):
        t = t_eval[i]
        if t <= times[0]:
            continue
        Wt = w_at(times, W, t)
        Xt = x_at(times, W, X, t)
        ka = cell_of(times, t)
        kc = ka if t > times[ka] else ka - 1
        lo = Wt
        hi = Wt
        for k in range(kc + 1):
            A = (Xt - X[k]) / (t - times[k])
            lo = min(lo, A)
            hi = max(hi, A)
        out[i, 0] = Wt - lo
        out[i, 1] = hi - Wt
    return out


@njit(cache=True)
def mc_deviations(times, W, X, pmin, pmax, t, sgn, xi, xperp, dperp, h_body, eps, kinv,
                  tol, nmax):
    """``f_W - f_0`` for each sampled (face point, velocity) via the generic tracer.

    Returns (values, capped_mask); capped chains keep their truncated sums.
    """
    n = xi.shape[0]
    vals = np.zeros(n)
    capped = np.zeros(n, dtype=np.bool_)
    tau = np.empty(nmax + 2)
    upre = np.empty(nmax + 2)
    upost = np.empty(nmax + 2)
    lat = np.zeros(nmax + 2, dtype=np.bool_)
    for k in range(n):
        nev, status = trace_chain(times, W, X, pmin, pmax, t, sgn, xi[k, 0], xperp[k],
                                  xi[k, 1:1 + dperp], dperp, h_body, tol, nmax,
                                  tau, upre, upost, lat)
        if status == 1 or nev == 0:
            continue
        if status == 2:
            capped[k] = True
        trans2 = xi[k, 1] ** 2 + xi[k, 2] ** 2
        total = 0.0
        expo = 0.0
        prev = t
        for e in range(nev):
            if kinv > 0.0:
                expo += nu(eps, math.sqrt(upre[e] ** 2 + trans2)) * (prev - tau[e]) * kinv
            prev = tau[e]
            if lat[e]:
                continue
            total += (math.exp(-upost[e] ** 2) - math.exp(-upre[e] ** 2)) * math.exp(-expo)
        vals[k] = PI_M32 * math.exp(-trans2) * total
    return vals, capped

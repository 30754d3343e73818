"""Property suites behind ``lorentz-drag verify``.

Each check returns a :class:`Check` with a pass flag and the measured margin.
Suites are deterministic (fixed seeds) and sized to finish well inside the
20-minute budget for ``all`` on one core.
"""

from __future__ import annotations

import math
import time
from typing import Callable, NamedTuple

import numpy as np

from . import analysis, characteristics as ch, drag, model, solver
from .characteristics import VelocityHistory
from .drag import QuadratureConfig
from .model import ModelParams


class Check(NamedTuple):
    name: str
    ok: bool
    detail: str


SEED = 20240611


# ---------------------------------------------------------------- model

def _nu_bounds() -> Check:
    rng = np.random.default_rng(SEED)
    eps_grid = np.linspace(0.05, 1.0, 20)
    z_fit = np.geomspace(1e-4, 50.0, 400)
    worst = -math.inf
    fitted = {}
    for e in eps_grid:
        nu = model.nu_eps(e, z_fit) - e
        g = z_fit ** 2 / (e + z_fit)
        fitted[e] = max(1.0, float(np.max(g / nu)), float(np.max(nu / g)))
    # fresh samples, each checked with the C of the nearest fitted epsilon
    eps_s = rng.uniform(0.05, 1.0, 1000)
    z_s = np.exp(rng.uniform(math.log(1e-3), math.log(40.0), 1000))
    ok = True
    for e, z in zip(eps_s, z_s):
        C = fitted[eps_grid[np.argmin(np.abs(eps_grid - e))]] * 1.05
        nu = float(model.nu_eps(e, z))
        g = z * z / (e + z)
        lo, hi = e + g / C, e + C * g
        ok &= lo <= nu <= hi
        worst = max(worst, (lo - nu) / nu, (nu - hi) / nu)
    cmax = max(fitted.values())
    return Check("nu_eps two-sided bound (fitted C)", bool(ok), f"max C={cmax:.4f}, worst rel. excess={worst:.2e}")


def _nu_monotone() -> Check:
    z = np.linspace(0.01, 10.0, 2000)
    worst = min(float(np.min(np.diff(model.nu_eps(e, z)))) for e in (0.0, 0.05, 0.1, 0.5, 1.0, 5.0))
    return Check("nu_eps nondecreasing on [0.01, 10]", worst >= 0.0, f"min increment={worst:.2e}")


def _d0_shape() -> Check:
    rng = np.random.default_rng(SEED + 1)
    odd, incr, conv = 0.0, math.inf, math.inf
    for d in (1, 2, 3):
        U = rng.uniform(-5.0, 5.0, 1000)
        odd = max(odd, float(np.max(np.abs(model.d0(d, -U) + model.d0(d, U)))))
        g = np.unique(U)
        incr = min(incr, float(np.min(np.diff(model.d0(d, g)))))
        a = rng.uniform(0.0, 4.0, (1000, 2))
        gap = 0.5 * (model.d0(d, a[:, 0]) + model.d0(d, a[:, 1])) - model.d0(d, a.mean(axis=1))
        conv = min(conv, float(np.min(gap)))
    ok = odd <= 1e-12 and incr > 0 and conv >= -1e-14
    return Check("D0 odd, increasing, convex on [0,4]", ok,
                 f"odd err={odd:.1e}, min increment={incr:.1e}, min convexity gap={conv:.1e}")


def _d0_closed_form() -> Check:
    worst = 0.0
    for d in (1, 2, 3):
        for U in (-2.0, -0.3, 0.01, 0.3, 1.0, 3.0):
            ref = model.d0_quadrature(d, U)
            worst = max(worst, abs(model.d0(d, U) - ref) / abs(ref))
    return Check("D0 closed form vs quadrature", worst <= 1e-10, f"max rel err={worst:.2e}")


def _k_continuity() -> Check:
    worst = 0.0
    at_zero = 0.0
    for d in (1, 2, 3):
        C0 = model.drag_constants(d, 0.1).C0
        U = np.linspace(-0.1, 0.1, 201)
        U = U[U != 0]
        worst = max(worst, float(np.max(np.abs(model.k_coeff(d, U) - C0) / U ** 2)))
        at_zero = max(at_zero, abs(model.d0_law(d, 0.0).K - C0))
    return Check("K continuous at 0 with |K-C0| <= c U^2", math.isfinite(worst) and at_zero == 0.0,
                 f"fitted c={worst:.4f}")


def _i12() -> Check:
    worst = max(abs(model.i_d_sigma(1, 2, t) * (1 + t) - math.pi) for t in (0.0, 1.0, 3.0, 10.0, 100.0))
    return Check("I_{1,2}(t)(1+t) = pi", worst <= 1e-8, f"max err={worst:.2e}")


def _i11() -> Check:
    v = model.i_d_sigma(1, 1, 100.0)
    rel = abs(v / (2 * math.pi / 100.0 ** 2) - 1)
    return Check("I_{1,1}(100) ~ 2 pi / t^2", rel <= 0.05, f"rel dev={rel:.3e}")


def _j_profile(p: ModelParams, t: float) -> float:
    e, k = p.epsilon, p.kappa
    return (1 / math.sqrt(1 + t / (e * k)) + 1 / (1 + t / k)) ** (3 - p.d) * math.exp(-e * t / k)


def _j_bounds() -> Check:
    def grid(rng, n):
        for _ in range(n):
            yield (int(rng.integers(1, 3)), float(rng.choice([0.05, 0.1, 0.5, 1.0])),
                   float(rng.choice([1.0, 4.0, 10.0])), float(rng.uniform(0, 100)),
                   float(rng.uniform(0, 3)))

    def ratios(samples):
        out = []
        for d, e, k, t, a in samples:
            p = ModelParams(e, k, d, 0.1)
            xi = np.zeros(d)
            xi[0] = a
            out.append((model.j_integral(p, xi, t) / _j_profile(p, t), a * t / k))
        return np.array(out)

    fit = ratios(grid(np.random.default_rng(SEED + 2), 150))
    zero = fit[:, 1] == 0
    C = max(1.0, float(fit[:, 0].max()), float(np.max(1 / fit[zero, 0], initial=1.0)))
    s = ~zero
    Cp = max(1.0, float(np.max((-np.log(fit[s, 0]) - math.log(C)) / fit[s, 1])))
    # fresh samples with 20% headroom on the fitted constants
    chk = ratios(grid(np.random.default_rng(SEED + 3), 150))
    up = chk[:, 0] <= 1.2 * C
    low = chk[:, 0] >= np.exp(-1.2 * Cp * chk[:, 1]) / (1.2 * C)
    return Check("J within two-sided profile bounds (fitted C, C')", bool(up.all() and low.all()),
                 f"C={C:.3f}, C'={Cp:.3f}, failures={int((~up).sum() + (~low).sum())}")


def _envelope() -> Check:
    t = np.linspace(0, 50, 101)
    e1 = model.envelope_w(ModelParams(0.0, 2.0, 1, 0.1), t)
    r1 = float(np.max(np.abs(e1 / ((1 + t) ** -3 * (1 + t / 2.0) ** -2) - 1)))
    e2 = model.envelope_w(ModelParams(0.3, math.inf, 2, 0.1), t)
    r2 = float(np.max(np.abs(e2 / (2.0 * (1 + t) ** -4) - 1)))
    return Check("envelope_w eps=0 and kappa=inf conventions", max(r1, r2) <= 1e-14, f"max rel err={max(r1, r2):.1e}")


def _terminal() -> Check:
    worst = 0.0
    for d in (1, 2, 3):
        for E in (0.05, 0.5, 1.0, 3.0):
            v = model.terminal_velocity(d, E)
            worst = max(worst, abs(model.d0(d, v) - E))
    return Check("terminal_velocity solves D0(V)=E", worst <= 1e-10, f"max residual={worst:.1e}")


MODEL = [_nu_bounds, _nu_monotone, _d0_shape, _d0_closed_form, _k_continuity, _i12, _i11,
         _j_bounds, _envelope, _terminal]


# ---------------------------------------------------------------- characteristics

def _kshaped(gamma=0.3, t_end=20.0, dt=0.01, dip=0.0):
    """Positive decreasing history ``gamma e^{-C0 t}``, optionally with a negative tail."""
    C0 = model.drag_constants(1, gamma).C0
    f = lambda s: gamma * math.exp(-C0 * s) - dip * s * math.exp(-0.3 * s)
    return VelocityHistory.uniform(f, t_end, dt)


def _sample_chains(H: VelocityHistory, p: ModelParams, face: str, n: int, rng):
    out = []
    while len(out) < n:
        t = float(rng.uniform(0.2, H.t_end))
        lo, hi = drag.recollision_window(H, t, face)
        if not hi > lo:
            continue
        xi = np.concatenate([[rng.uniform(lo, hi)], rng.standard_normal(2) / math.sqrt(2)])
        Wt = H.w(t)
        if (face == "plus" and not xi[0] < Wt) or (face == "minus" and not xi[0] > Wt):
            continue
        xp = rng.uniform(-1, 1, p.d - 1) / math.sqrt(max(p.d - 1, 1))
        out.append(ch.trace_backward(H, t, face, xp, xi, p))
    return out


def _chain_ordering() -> Check:
    rng = np.random.default_rng(SEED + 4)
    H = _kshaped()
    bad = total = events = 0
    for d in (1, 2):
        p = ModelParams(0.1, 1.0, d, 0.3)
        # rear face under W, front face under the mirrored history
        for hist, face in ((H, "minus"), (H.mirrored(), "plus")):
            for c in _sample_chains(hist, p, face, 2500, rng):
                total += 1
                events += len(c)
                bad += not ch.ordering_holds(c, hist)
    return Check("chain ordering on traced chains", bad == 0 and total >= 10_000,
                 f"{total} chains, {events} events, {bad} violations")


def _chain_structure() -> Check:
    rng = np.random.default_rng(SEED + 5)
    H = _kshaped(dip=0.05)
    p = ModelParams(0.0, 1.0, 1, 0.3)
    worst_refl = worst_avg = worst_replay = 0.0
    order_ok = True
    for face in ("plus", "minus"):
        for c in _sample_chains(H, p, face, 500, rng):
            taus = c.taus
            order_ok &= bool(np.all(np.diff(taus) < 0)) and bool(np.all((taus > 0) & (taus < c.t)))
            prev = c.t
            for e in c.events:
                worst_refl = max(worst_refl, abs(e.xi1_post - (2 * H.w(e.tau) - e.xi1_pre)))
                worst_avg = max(worst_avg, abs(e.xi1_pre - ch.window_average(H, e.tau, prev)))
                prev = e.tau
            worst_replay = max(worst_replay, ch.forward_replay(c, H))
    ok = order_ok and worst_refl <= 1e-12 and worst_avg <= 1e-9 and worst_replay <= 1e-8
    return Check("chain times ordered, reflection law, window-average roots, forward replay", ok,
                 f"refl={worst_refl:.1e}, root={worst_avg:.1e}, replay={worst_replay:.1e}")


def _rear_sign() -> Check:
    rng = np.random.default_rng(SEED + 6)
    H = _kshaped()
    worst = -math.inf
    for d, eps, kap in ((1, 0.0, 1.0), (2, 0.1, 1.0), (1, 0.0, math.inf)):
        p = ModelParams(eps, kap, d, 0.3)
        for c in _sample_chains(H, p, "minus", 500, rng):
            if not (c.degenerate or c.capped):
                worst = max(worst, ch.f_deviation(c, p))
    return Check("rear-face deviation <= 0 under positive W", worst <= 0.0, f"max deviation={worst:.2e}")


def _pointwise_bound() -> Check:
    rng = np.random.default_rng(SEED + 7)
    H = _kshaped(dip=0.05)
    worst = 0.0
    n = 0
    for d, eps, kap in ((1, 0.1, 1.0), (2, 0.0, 1.0), (3, 0.5, 2.0)):
        p = ModelParams(eps, kap, d, 0.3)
        for face in ("plus", "minus"):
            for c in _sample_chains(H, p, face, 300, rng):
                if c.degenerate or c.capped:
                    continue
                n += 1
                b = ch.deviation_bound(c, p)
                worst = max(worst, abs(ch.f_deviation(c, p)) - b * (1 + 1e-12))
    # and on every node of the drag quadrature (kernel-side assertion)
    stats = drag.DragStats()
    for d, eps, kap in ((1, 0.1, 1.0), (2, 0.0, 1.0), (3, 0.5, 2.0)):
        drag.drag_series(H, np.linspace(0.5, H.t_end, 12), ModelParams(eps, kap, d, 0.3),
                         QuadratureConfig(), stats)
    ok = worst <= 0.0 and stats.bound_violations == 0 and stats.nodes > 0
    return Check("pointwise deviation bound (traced chains and all drag nodes)", ok,
                 f"{n} chains excess={worst:.1e}; {stats.nodes} nodes, {stats.bound_violations} violations")


def _single_recollision() -> Check:
    # rear-face points of the set S_t: one recollision, before s0, at late t
    rng = np.random.default_rng(SEED + 8)
    g = 0.05
    H = _kshaped(gamma=g, t_end=40.0, dt=0.02, dip=0.0005)
    counts, late = [], True
    for d in (1, 2):
        p = ModelParams(0.0, 1.0, d, g)
        for t in np.linspace(30.0, 40.0, 6):
            ts = H.times[(H.times > 0) & (H.times < t)]
            avg = np.array([ch.window_average(H, s, t) for s in ts])
            Ws = np.array([H.w(s) for s in ts])
            s0 = float(ts[np.argmax(Ws <= 0.5 * (g + avg))])
            lo = max(ch.window_average(H, s0, t), H.w(t))
            hi = ch.window_average(H, 0.0, t)
            for _ in range(40):
                xi = np.array([rng.uniform(lo, hi), rng.uniform(-1, 1) / (2 * t), rng.standard_normal()])
                xp = rng.uniform(-0.5, 0.5, d - 1)
                c = ch.trace_backward(H, float(t), "minus", xp, xi, p)
                counts.append(len(c))
                late &= len(c) == 1 and 0 < c.events[0].tau < s0
    ok = late and len(counts) > 0
    return Check("late-time rear chains from S_t recollide exactly once, before s0", ok,
                 f"{len(counts)} chains, events in [{min(counts)}, {max(counts)}]")


CHARACTERISTICS = [_chain_ordering, _chain_structure, _rear_sign, _pointwise_bound, _single_recollision]


# ---------------------------------------------------------------- drag

def _drag_sign_vanishing() -> Check:
    H = _kshaped(gamma=0.2, t_end=30.0, dt=0.02)
    t = np.linspace(0.05, 30.0, 60)
    worst_m = math.inf
    worst_p = 0.0
    for d, eps in ((1, 0.0), (2, 0.1), (3, 0.0)):
        p = ModelParams(eps, 1.0, d, 0.2)
        rp, rm = drag.drag_series(H, t, p)
        worst_m = min(worst_m, float(rm.min()))
        worst_p = max(worst_p, float(np.abs(rp).max()))
    ok = worst_m >= -1e-10 and worst_p == 0.0
    return Check("r_minus >= 0 and r_plus = 0 for decreasing positive W", ok,
                 f"min r_minus={worst_m:.2e}, max |r_plus|={worst_p:.1e}")


def _drag_decay() -> Check:
    H = _kshaped(gamma=0.2, t_end=400.0, dt=0.1)
    p = ModelParams(0.0, 1.0, 1, 0.2)
    t = np.geomspace(40.0, 400.0, 12)
    _, rm = drag.drag_series(H, t, p)
    slope = analysis.fit_rate((t, rm), "algebraic", (40.0, 400.0)).rate
    return Check("r_minus log-log slope ~ -5 (eps=0, kappa=1, d=1)", abs(slope + 5) <= 0.5, f"slope={slope:.3f}")


def _drag_convergence() -> Check:
    worst = 0.0
    H = _kshaped(gamma=0.2, t_end=30.0, dt=0.02, dip=0.02)
    for d, eps, kap in ((1, 0.0, 1.0), (2, 0.1, 1.0), (1, 0.1, math.inf), (3, 0.0, 1.0)):
        p = ModelParams(eps, kap, d, 0.2)
        for t in (2.0, 10.0, 30.0):
            a = np.array(drag.drag_series(H, [t], p, QuadratureConfig()))
            b = np.array(drag.drag_series(H, [t], p, QuadratureConfig().scaled(2.0)))
            for x, y in zip(a[:, 0], b[:, 0]):
                if y != 0:
                    worst = max(worst, abs(x - y) / abs(y))
    return Check("doubling node counts changes r_pm by < 1%", worst < 0.01, f"max rel change={worst:.2e}")


def _drag_oracle(n_samples: int = 200_000) -> Check:
    H = _kshaped(gamma=0.2, t_end=20.0, dt=0.02, dip=0.03)
    worst = 0.0
    cases = [(1, 0.0, 5.0, "minus"), (1, 0.1, 5.0, "minus"), (2, 0.0, 5.0, "minus"),
             (2, 0.1, 2.0, "minus"), (1, 0.0, 20.0, "plus"), (2, 0.1, 20.0, "plus")]
    n_ok = 0
    for k, (d, eps, t, face) in enumerate(cases):
        p = ModelParams(eps, 1.0, d, 0.2)
        q = drag.r_pm(H, t, face, p)
        q2 = drag.r_pm(H, t, face, p, QuadratureConfig().scaled(2.0))
        mc = drag.mc_oracle_r(H, t, face, p, n_samples=n_samples, seed=SEED + k)
        se = math.hypot(mc.std_error, abs(q - q2))
        z = abs(q - mc.estimate) / se if se > 0 else 0.0
        worst = max(worst, z)
        n_ok += z <= 3.0
    return Check("quadrature vs Monte Carlo oracle (3 combined SE)", n_ok == len(cases),
                 f"{n_ok}/{len(cases)} configs, max |z|={worst:.2f}")


DRAG = [_drag_sign_vanishing, _drag_decay, _drag_convergence, _drag_oracle]


# ---------------------------------------------------------------- solver

def _run(p, t_end, dt, mode="picard", E=0.0):
    cfg = solver.SolverConfig(t_end=t_end, dt=dt, mode=mode, external_force=E, picard_tol=1e-9)
    return solver.solve(p, None, cfg)


def _cross_solver() -> Check:
    p = ModelParams(0.0, 1.0, 1, 0.1)
    a = _run(p, 20.0, 0.05)
    b = _run(p, 20.0, 0.05, mode="time_march")
    dev = float(np.max(np.abs(a.V - b.V))) / p.gamma
    ok = a.converged and a.residual <= 1e-9 and dev <= 0.02
    return Check("Picard vs time marching (sup |dV| <= 2% gamma)", ok,
                 f"converged={a.converged} residual={a.residual:.1e}, sup dev={dev:.2e} gamma")


def _grid_refinement() -> Check:
    p = ModelParams(0.1, 1.0, 1, 0.1)
    a = _run(p, 20.0, 0.1)
    b = _run(p, 20.0, 0.05)
    dev = float(np.max(np.abs(a.V - b.V[::2]))) / p.gamma
    return Check("halving dt changes V by < 0.5% gamma", dev < 0.005, f"sup dev={dev:.2e} gamma")


def _thm2_bracket() -> Check:
    C0 = model.drag_constants(1, 0.1).C0
    p = ModelParams(1.1 * 2 * C0, 1.0, 1, 0.1)
    res = _run(p, 10.0, 0.01)
    rep = analysis.theorem_check(res, p, "thm2")
    c = rep["checks"]
    return Check("small-kappa bracket and global monotonicity", rep["pass"],
                 f"bracket margin={c['bracket']['margin']:.3f}, max increase={-c['monotone']['margin']:.1e}")


def _early_monotone() -> Check:
    worst = -math.inf
    ok = True
    for d, eps, kap, dt in ((1, 0.0, 1.0, 0.05), (1, 0.1, 1.0, 0.05), (1, 0.0, math.inf, 0.05),
                            (2, 0.0, 1.0, 0.1)):
        p = ModelParams(eps, kap, d, 0.1)
        res = _run(p, 10.0, dt)
        rep = analysis.theorem_check(res, p, "thm1")
        a = rep["checks"]["a_monotone_early"]
        rp_ok, rp_max = analysis.r_plus_vanishes_early(res, p)
        ok &= a["pass"] and rp_ok and rep["checks"]["b_upper_bound"]["pass"]
        worst = max(worst, -a["margin"], rp_max)
    return Check("V decreasing and r_plus = 0 before t_gamma; V <= gamma e^{-C0 t}", bool(ok),
                 f"max increase / |r_plus|={worst:.1e}")


def _terminal_velocity() -> Check:
    worst = 0.0
    for V_inf in (0.1, 0.3, 0.5):
        E = float(model.d0(1, V_inf))
        res = _run(ModelParams(0.0, 1.0, 1, 0.1), 30.0, 0.05, E=E)
        worst = max(worst, abs(res.V[-1] - V_inf))
    return Check("terminal velocity recovered under constant force", bool(worst <= 1e-3), f"max |V(T)-V_inf|={worst:.1e}")


SOLVER = [_cross_solver, _grid_refinement, _thm2_bracket, _early_monotone, _terminal_velocity]

SUITES: dict = {"model": MODEL, "characteristics": CHARACTERISTICS, "drag": DRAG, "solver": SOLVER}


def _emit(line: str) -> None:
    print(line, flush=True)


def run_suite(name: str, out: Callable[[str], None] = _emit) -> bool:
    """Run one suite (or ``all``); prints one line per property and returns overall success."""
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    ok = True
    t_start = time.perf_counter()
    for s in names:
        for fn in SUITES[s]:
            t0 = time.perf_counter()
            try:
                c = fn()
            except Exception as exc:  # a crashing property is a failing property
                c = Check(fn.__name__.strip("_"), False, f"{type(exc).__name__}: {exc}")
            ok &= c.ok
            out(f"{'PASS' if c.ok else 'FAIL'} [{s}] {c.name}: {c.detail} ({time.perf_counter() - t0:.1f}s)")
    out(f"{'PASS' if ok else 'FAIL'} suite {name} ({time.perf_counter() - t_start:.1f}s)")
    return ok

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lorentz_drag import solver
from lorentz_drag.model import ModelParams, d0, drag_constants
from lorentz_drag.solver import SolverConfig, SolverError, drag_indices, solve


@pytest.mark.parametrize("kw,key", [
    (dict(t_end=0.0), "t_end"),
    (dict(t_end=10.0, dt=0.5), "dt"),
    (dict(t_end=10.0, dt=-0.01), "dt"),
    (dict(t_end=10.0, picard_damping=0.0), "picard_damping"),
    (dict(t_end=10.0, picard_tol=1e-14), "picard_tol"),
    (dict(t_end=10.0, picard_max_iter=0), "picard_max_iter"),
    (dict(t_end=10.0, mode="euler"), "mode"),
    (dict(t_end=10.0, external_force=-1.0), "external_force"),
    (dict(t_end=10.0, drag_spacing=-0.1), "drag_spacing"),
])
def test_config_validation(kw, key):
    with pytest.raises(ValueError, match=key):
        SolverConfig(**kw)


def test_default_step_and_grid():
    c = SolverConfig(t_end=8.0)
    assert c.dt == pytest.approx(8.0 / 4000)
    g = c.grid()
    assert g[0] == 0.0 and g[-1] == pytest.approx(8.0) and g.size == 4001


def test_drag_indices():
    t = np.arange(2001) * 0.05
    assert np.array_equal(drag_indices(t, 0.0), np.arange(2001))
    idx = drag_indices(t, 0.01)
    assert idx[0] == 0 and idx[-1] == 2000
    assert np.all(np.diff(idx) >= 1)
    # spacing grows like 0.01 t once that exceeds one step
    assert idx[-2] - idx[-3] == int(0.01 * t[idx[-3]] / 0.05)


@given(st.floats(0.1, 5.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 1.0))
def test_linear_response_is_exact_for_linear_source(k, a, b, gamma):
    t = np.linspace(0.0, 3.0, 61)
    src = a + b * t
    V = solver._linear_response(t, np.full_like(t, k), src, gamma)
    # V' = -k V + a + b t
    exact = (a / k - b / k ** 2) + b * t / k + (gamma - a / k + b / k ** 2) * np.exp(-k * t)
    assert np.allclose(V, exact, rtol=0, atol=1e-12)


def test_zero_initial_velocity_stays_at_rest():
    for mode in ("picard", "time_march"):
        r = solve(ModelParams(0.1, 1.0, 2, 0.0), None, SolverConfig(t_end=5.0, dt=0.05, mode=mode))
        assert np.all(r.V == 0.0)
        t, V, D, rp, rm = r.columns()
        assert np.all(D == 0.0) and np.all(rp == 0.0) and np.all(rm == 0.0)


@pytest.fixture(scope="module")
def short_runs():
    p = ModelParams(0.0, 1.0, 1, 0.1)
    pic = solve(p, None, SolverConfig(t_end=5.0, dt=0.025, picard_tol=1e-10))
    tm = solve(p, None, SolverConfig(t_end=5.0, dt=0.025, mode="time_march"))
    return p, pic, tm


def test_picard_converges_and_reports(short_runs):
    p, pic, _ = short_runs
    assert pic.converged
    assert pic.residual <= 1e-10
    assert pic.residuals[-1] == pic.residual and len(pic.residuals) == pic.iterations
    assert pic.V[0] == p.gamma
    assert pic.stats.bound_violations == 0


def test_solvers_agree(short_runs):
    p, pic, tm = short_runs
    assert np.max(np.abs(pic.V - tm.V)) <= 2e-3 * p.gamma


def test_early_time_envelope(short_runs):
    p, pic, _ = short_runs
    dc = drag_constants(p.d, p.gamma)
    t, V = pic.times, pic.V
    early = t <= dc.t_gamma
    assert np.all(np.diff(V[early]) < 0)
    assert np.all(V <= p.gamma * np.exp(-dc.C0 * t) + 1e-4 * p.gamma)
    # the drag is D0 plus the corrections at every node
    _, _, D, rp, rm = pic.columns()
    assert np.allclose(D, d0(1, V) + rp + rm, rtol=0, atol=1e-15)


def test_picard_is_a_fixed_point(short_runs):
    p, pic, _ = short_runs
    cfg = SolverConfig(t_end=5.0, dt=0.025, picard_tol=1e-10)
    again = solver.picard_map(pic.history, p, None, cfg)
    assert np.max(np.abs(again.values - pic.V)) <= 1e-10 * p.gamma


def test_unconverged_run_is_flagged():
    p = ModelParams(0.0, 1.0, 1, 0.1)
    r = solve(p, None, SolverConfig(t_end=5.0, dt=0.05, picard_max_iter=2))
    assert not r.converged and r.iterations == 2 and r.residual > 1e-8


def test_time_march_rejects_non_lipschitz_step():
    with pytest.raises(SolverError, match="step rejected"):
        solve(ModelParams(0.0, 1.0, 1, 5.0), None, SolverConfig(t_end=2.0, dt=0.02, mode="time_march"))


def test_external_force_reaches_terminal_velocity():
    p = ModelParams(0.0, 1.0, 1, 0.1)
    E = d0(1, 0.3)
    r = solve(p, None, SolverConfig(t_end=20.0, dt=0.05, external_force=E, picard_tol=1e-10))
    assert r.converged
    assert r.V[-1] == pytest.approx(0.3, abs=1e-6)
    assert np.all(np.diff(r.V) >= -1e-12)


def test_free_molecular_decays_slower_than_exponential():
    p = ModelParams(0.0, math.inf, 1, 0.1)
    r = solve(p, None, SolverConfig(t_end=12.0, dt=0.05))
    C0 = drag_constants(1, 0.1).C0
    assert r.converged
    # V changes sign, then its size stays far above the linearised decay
    assert r.V.min() < 0
    assert abs(r.V[-1]) > 1e3 * 0.1 * math.exp(-C0 * 12.0)

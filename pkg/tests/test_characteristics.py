import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from lorentz_drag.characteristics import (
    VelocityHistory, deviation_bound, f_deviation, forward_replay, ordering_holds,
    trace_backward, window_average,
)
from lorentz_drag.drag import recollision_window
from lorentz_drag.model import ModelParams
from oracles import PLPath, chain_1d

P1 = ModelParams(0.0, math.inf, 1, 0.2)


def dipping(gamma=0.2, dip=0.02, t_end=12.0, dt=0.02):
    f = lambda s: gamma * math.exp(-2.2568 * s) - dip * s * math.exp(-0.3 * s)
    return VelocityHistory.uniform(f, t_end, dt)


# ---- VelocityHistory

@pytest.mark.parametrize("times,values", [
    ([0.0], [0.0]),
    ([0.1, 0.2], [0.0, 0.0]),
    ([0.0, 0.2, 0.1], [0.0, 0.0, 0.0]),
    ([0.0, 1.0], [0.0, float("nan")]),
    ([0.0, 1.0], [0.0]),
])
def test_history_validation(times, values):
    with pytest.raises(ValueError):
        VelocityHistory(times, values)


def test_history_is_immutable():
    H = VelocityHistory([0.0, 1.0], [1.0, 0.5])
    with pytest.raises(ValueError):
        H.values[0] = 3.0


def test_position_is_exact_integral():
    H = VelocityHistory([0.0, 1.0, 3.0], [1.0, -1.0, 3.0])
    assert H.x(1.0) == pytest.approx(0.0)
    assert H.x(3.0) == pytest.approx(2.0)
    # inside the first cell: integral of 1 - 2s
    assert H.x(0.5) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        H.x(3.5)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=40), st.floats(0, 1))
def test_prefix_matches_independent_integral(vals, frac):
    t = np.linspace(0.0, 0.1 * (len(vals) - 1), len(vals))
    H = VelocityHistory(t, vals)
    s = frac * t[-1]
    assert H.x(s) == pytest.approx(PLPath(t, vals).x(s), abs=1e-13)


def test_lipschitz_check():
    assert VelocityHistory([0.0, 1.0], [0.0, 1.0]).lipschitz_ok()
    assert not VelocityHistory([0.0, 1.0], [0.0, 1.1]).lipschitz_ok()


def test_mirrored():
    H = dipping()
    M = H.mirrored()
    assert np.array_equal(M.values, -H.values)
    assert M.x(5.0) == pytest.approx(-H.x(5.0))


def test_window_average():
    H = VelocityHistory([0.0, 1.0, 2.0], [0.0, 1.0, 1.0])
    assert window_average(H, 1.0, 2.0) == pytest.approx(1.0)
    assert window_average(H, 0.0, 2.0) == pytest.approx(0.75)
    assert window_average(H, 0.5, 0.5) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        window_average(H, 1.5, 1.0)


# ---- trace_backward

def test_constant_velocity_has_no_recollision():
    H = VelocityHistory.uniform(lambda s: 0.3, 5.0, 0.1)
    for face, u in (("plus", 0.1), ("minus", 0.5)):
        c = trace_backward(H, 5.0, face, [], [u, 0.0, 0.0], P1)
        assert len(c) == 0 and c.terminated_at_zero
        assert f_deviation(c, P1) == 0.0 and deviation_bound(c, P1) == 0.0


def test_face_direction_validation():
    H = dipping()
    with pytest.raises(ValueError, match="face"):
        trace_backward(H, 5.0, "top", [], [0.0, 0, 0], P1)
    with pytest.raises(ValueError, match="requires"):
        trace_backward(H, 5.0, "plus", [], [H.w(5.0) + 0.1, 0, 0], P1)
    with pytest.raises(ValueError, match="requires"):
        trace_backward(H, 5.0, "minus", [], [H.w(5.0) - 0.1, 0, 0], P1)
    with pytest.raises(ValueError, match="unit ball"):
        trace_backward(H, 5.0, "minus", [1.5], [H.w(5.0) + 0.1, 0, 0], ModelParams(0.0, 1.0, 2, 0.1))


def test_decreasing_history_front_face_never_recollides():
    H = VelocityHistory.uniform(lambda s: 0.2 * math.exp(-s), 6.0, 0.05)
    for u in np.linspace(-0.5, H.w(6.0) - 1e-6, 9):
        assert len(trace_backward(H, 6.0, "plus", [], [u, 0, 0], P1)) == 0


@pytest.mark.parametrize("face", ["plus", "minus"])
def test_chain_matches_root_scan_oracle(face):
    H = dipping()
    P = PLPath(H.times, H.values)
    rng = np.random.default_rng(1)
    t = 10.0
    Wt = H.w(t)
    lo, hi = recollision_window(H, t, face)
    us = rng.uniform(lo, hi, 12)
    nonempty = 0
    for u in us:
        c = trace_backward(H, t, face, [], [u, 0.0, 0.0], P1)
        ref = chain_1d(P, t, face, u)
        assert len(c) == len(ref)
        for e, (tau, pre, post) in zip(c.events, ref):
            assert e.tau == pytest.approx(tau, abs=1e-9)
            assert e.xi1_pre == pytest.approx(pre, abs=1e-9)
            assert e.xi1_post == pytest.approx(post, abs=1e-9)
        nonempty += len(c) > 0
    assert nonempty > 0


def test_reflection_law_and_window_root():
    H = dipping()
    c = trace_backward(H, 10.0, "plus", [], [H.w(10.0) - 0.001, 0.0, 0.0], P1)
    assert len(c) >= 2
    prev = c.t
    for e in c.events:
        assert e.xi1_post == pytest.approx(2 * H.w(e.tau) - e.xi1_pre, abs=1e-14)
        assert window_average(H, e.tau, prev) == pytest.approx(e.xi1_pre, abs=1e-10)
        prev = e.tau
    assert np.all(np.diff(c.taus) < 0)


@st.composite
def lipschitz_histories(draw):
    n = draw(st.integers(20, 120))
    dt = 0.05
    steps = draw(st.lists(st.floats(-1.0, 1.0), min_size=n, max_size=n))
    v0 = draw(st.floats(-0.3, 0.3))
    vals = v0 + dt * np.concatenate([[0.0], np.cumsum(steps)])
    return VelocityHistory(np.arange(n + 1) * dt, vals)


@given(lipschitz_histories(), st.sampled_from(["plus", "minus"]), st.floats(1e-4, 0.5), st.floats(0.3, 1.0))
@settings(max_examples=150, deadline=None)
def test_random_lipschitz_chain_invariants(H, face, off, frac):
    t = frac * H.t_end
    Wt = H.w(t)
    u = Wt - off if face == "plus" else Wt + off
    c = trace_backward(H, t, face, [], [u, 0.0, 0.0], P1)
    assume(not c.degenerate and not c.capped)
    assert ordering_holds(c, H)
    assert forward_replay(c, H) <= 1e-8
    assert np.all(np.diff(np.concatenate([[t], c.taus])) < 0)
    dev = f_deviation(c, P1)
    # W(tau_k) moves away from zero along the chain, so every jump has one sign
    if (face == "minus" and Wt >= 0) or (face == "plus" and Wt <= 0):
        assert dev <= 0.0
    assert abs(dev) <= deviation_bound(c, P1) + 1e-15


def test_rear_face_deviation_nonpositive_for_positive_decay():
    H = VelocityHistory.uniform(lambda s: 0.2 * math.exp(-2.2568 * s), 8.0, 0.02)
    for u in np.linspace(H.w(8.0) + 1e-4, 0.05, 15):
        c = trace_backward(H, 8.0, "minus", [], [u, 0.0, 0.0], P1)
        assert f_deviation(c, P1) <= 0.0


def test_relaxation_damps_deviation():
    H = VelocityHistory.uniform(lambda s: 0.2 * math.exp(-2.2568 * s), 8.0, 0.02)
    u = 0.005
    fm = f_deviation(trace_backward(H, 8.0, "minus", [], [u, 0, 0], P1), P1)
    p = ModelParams(0.5, 1.0, 1, 0.2)
    rel = f_deviation(trace_backward(H, 8.0, "minus", [], [u, 0, 0], p), p)
    assert fm < rel < 0.0


def test_face_hit_needs_lateral_overlap_in_d2():
    H = VelocityHistory.uniform(lambda s: 0.2 * math.exp(-2.2568 * s), 8.0, 0.02)
    p2 = ModelParams(0.0, math.inf, 2, 0.2)
    c1 = trace_backward(H, 8.0, "minus", [], [0.005, 0.0, 0.0], P1)
    assert len(c1) == 1
    # the same axial motion hits the face only while |x_perp| stays below 1
    slow = trace_backward(H, 8.0, "minus", [0.0], [0.005, 0.05, 0.0], p2)
    fast = trace_backward(H, 8.0, "minus", [0.0], [0.005, 0.2, 0.0], p2)
    assert 0.05 * (8.0 - c1.events[0].tau) < 1.0 < 0.2 * (8.0 - c1.events[0].tau)
    assert len(slow) == 1 and slow.events[0].tau == pytest.approx(c1.events[0].tau)
    assert len(fast) == 0 and f_deviation(fast, p2) == 0.0

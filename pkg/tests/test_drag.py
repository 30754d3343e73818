import math

import numpy as np
import pytest

from lorentz_drag import drag
from lorentz_drag.characteristics import VelocityHistory
from lorentz_drag.drag import DragError, DragStats, QuadratureConfig
from lorentz_drag.model import ModelParams, d0
from oracles import PLPath, r_free_molecular_1d

FM1 = ModelParams(0.0, math.inf, 1, 0.3)


def dipping(gamma=0.3, dip=0.05, t_end=8.0, dt=0.01):
    f = lambda s: gamma * math.exp(-2.2568 * s) - dip * s * math.exp(-0.3 * s)
    return VelocityHistory.uniform(f, t_end, dt)


def decaying(gamma=0.2, t_end=10.0, dt=0.02):
    return VelocityHistory.uniform(lambda s: gamma * math.exp(-2.2568 * s), t_end, dt)


@pytest.fixture(scope="module")
def dip_history():
    H = dipping()
    return H, PLPath(H.times, H.values)


def test_quadrature_config_validation():
    with pytest.raises(ValueError, match="n_xi1"):
        QuadratureConfig(n_xi1=4)
    with pytest.raises(ValueError, match="n_xihat"):
        QuadratureConfig(n_xihat=8.5)
    with pytest.raises(ValueError, match="window_padding"):
        QuadratureConfig(window_padding=0.9)
    q = QuadratureConfig().scaled(2)
    assert (q.n_xi1, q.n_xiperp, q.n_xihat) == (96, 48, 80)
    assert QuadratureConfig().scaled(1.0) == QuadratureConfig()


def test_constant_history_has_empty_window():
    H = VelocityHistory.uniform(lambda s: 0.1, 5.0, 0.05)
    for face in ("plus", "minus"):
        lo, hi = drag.recollision_window(H, 4.0, face)
        assert lo == pytest.approx(0.1, abs=1e-12) and hi == pytest.approx(0.1, abs=1e-12)
        assert drag.r_pm(H, 4.0, face, ModelParams(0.2, 1.0, 2, 0.1)) == 0.0
    assert drag.drag_total(H, 4.0, FM1).D == pytest.approx(d0(1, 0.1), rel=1e-14)


def test_window_for_decreasing_history():
    H = decaying()
    lo, hi = drag.recollision_window(H, 5.0, "minus")
    assert lo == pytest.approx(H.w(5.0))
    assert hi == pytest.approx(H.x(5.0) / 5.0, rel=1e-12)
    lo, hi = drag.recollision_window(H, 5.0, "plus")
    assert lo == hi


@pytest.mark.parametrize("d", [1, 2, 3])
def test_front_face_vanishes_for_decreasing_history(d):
    H = decaying()
    p = ModelParams(0.1, 1.0, d, 0.2)
    rp, rm = drag.drag_series(H, [1.0, 4.0, 9.0], p)
    assert np.all(rp == 0.0)
    assert np.all(rm > 0.0)


def test_total_is_sum_of_parts():
    H = dipping()
    p = ModelParams(0.1, 2.0, 2, 0.3)
    s = drag.drag_total(H, 6.0, p)
    assert s.D == pytest.approx(d0(2, H.w(6.0)) + s.r_plus + s.r_minus, rel=1e-14)
    rp, rm = drag.drag_series(H, [6.0], p)
    assert (rp[0], rm[0]) == (s.r_plus, s.r_minus)


def test_deterministic():
    H = dipping()
    p = ModelParams(0.3, 1.0, 2, 0.3)
    a = drag.drag_series(H, [2.0, 5.0], p)
    b = drag.drag_series(H, [2.0, 5.0], p)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_times_outside_history_rejected():
    with pytest.raises(ValueError):
        drag.drag_series(decaying(), [11.0], FM1)


@pytest.mark.parametrize("t,face,rel", [(1.0, "minus", 1e-2), (3.0, "minus", 2e-3), (6.0, "plus", 5e-3)])
def test_free_molecular_1d_against_oracle(dip_history, t, face, rel):
    H, P = dip_history
    ref = r_free_molecular_1d(P, t, face)
    assert ref != 0.0
    assert drag.r_pm(H, t, face, FM1) == pytest.approx(ref, rel=rel)


def test_relaxation_reduces_correction():
    H = decaying()
    fm = drag.r_pm(H, 6.0, "minus", ModelParams(0.0, math.inf, 1, 0.2))
    rel = drag.r_pm(H, 6.0, "minus", ModelParams(0.5, 1.0, 1, 0.2))
    assert 0.0 < rel < fm


@pytest.mark.parametrize("d,eps,kappa,face,t", [
    (2, 0.3, 1.0, "minus", 4.0),
    (3, 0.0, 1.0, "minus", 3.0),
    (1, 0.0, 1.0, "plus", 5.0),
])
def test_monte_carlo_agreement(d, eps, kappa, face, t):
    H = dipping() if face == "plus" else decaying()
    p = ModelParams(eps, kappa, d, 0.2)
    q = drag.r_pm(H, t, face, p)
    mc = drag.mc_oracle_r(H, t, face, p, n_samples=200_000, seed=7)
    assert q != 0.0
    assert abs(q - mc.estimate) <= 4.0 * mc.std_error + 0.01 * abs(q)


def test_mc_deterministic_and_validated():
    H = decaying()
    a = drag.mc_oracle_r(H, 3.0, "minus", FM1, n_samples=2000, seed=3)
    b = drag.mc_oracle_r(H, 3.0, "minus", FM1, n_samples=2000, seed=3)
    assert a == b
    with pytest.raises(ValueError):
        drag.mc_oracle_r(H, 3.0, "side", FM1)
    with pytest.raises(ValueError):
        drag.mc_oracle_r(H, 3.0, "minus", FM1, n_samples=0)


def test_stats_bookkeeping_and_cap():
    H = decaying()
    stats = DragStats()
    drag.drag_series(H, [2.0, 6.0], ModelParams(0.1, 1.0, 2, 0.2), stats=stats)
    d = stats.as_dict()
    assert d["nodes"] > 0 and d["bound_violations"] == 0 and d["max_chain"] >= 1
    stats.check()
    bad = DragStats(worst_capped_share=2 * drag.MAX_CAPPED_FRACTION)
    with pytest.raises(DragError, match="length cap"):
        bad.check()


def test_decay_of_rear_correction_free_molecular():
    # for W = gamma e^{-C0 t} the rear correction is small and positive at late times
    H = decaying(t_end=20.0, dt=0.05)
    t = np.array([5.0, 10.0, 20.0])
    _, rm = drag.drag_series(H, t, ModelParams(0.0, math.inf, 1, 0.2))
    assert np.all(rm > 0) and np.all(np.diff(rm) < 0)

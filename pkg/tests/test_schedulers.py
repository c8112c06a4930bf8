import math

import numpy as np
import pytest

from lrshift.core import UsageError
from lrshift.schedulers import (
    Alg1Schedule,
    ConstantSchedule,
    ConvexSchedule,
    InverseTimeSchedule,
    NonconvexSchedule,
    Observation,
    ScheduleParams,
    ScheduleState,
    alg1_step,
    convex_step,
    convex_thresholds,
    ema_gamma,
    emit_schedule,
    noshift_closed_form,
    nonconvex_step,
    optimal_zeta,
)


def obs(t, B=1, gamma=0.0, **kw):
    return Observation(t=t, batch_size=B, gamma=gamma, **kw)


def test_constant_schedule():
    s = ConstantSchedule(0.1)
    assert all(s(obs(t)) == 0.1 for t in range(1, 20))
    with pytest.raises(UsageError):
        ConstantSchedule(0.0)
    a, b = ConstantSchedule(0.1), ConstantSchedule(0.2)
    assert a(obs(1)) == 0.1 and b(obs(1)) == 0.2


def test_inverse_time_schedule():
    assert InverseTimeSchedule(0.3, 0.0)(obs(50)) == 0.3
    s = InverseTimeSchedule(1.0, 1.0)
    assert s(obs(1)) == 0.5 and s(obs(3)) == 0.25
    assert s(obs(10**7)) * 10**7 == pytest.approx(1.0, rel=1e-6)


def test_optimal_zeta():
    assert optimal_zeta(0.0, 10, 3, 1.0) == 0
    assert optimal_zeta(1e12, 10, 3, 1.0) == 1.0
    assert optimal_zeta(1.0, 10, 3, 1.0) == 1.0  # 10/7 capped
    assert optimal_zeta(0.01, 10, 3, 1.0) == pytest.approx(0.1 / 3.04)


def test_alg1_zero_state_is_absorbing():
    st = ScheduleState(ScheduleParams(epsilon=0.1, d=2, sigma=1.0), v=0.0)
    for _ in range(5):
        eta, st = alg1_step(st, 3, 0.0)
        assert eta == 0.0 and st.v == 0.0


def test_alg1_full_step_until_switch():
    # a = 0.1, b = 0.3: full rate while tau <= tau* ~= 0.8256, i.e. through step 8
    params = ScheduleParams(epsilon=0.1, kappa=1e-4, d=2, sigma=math.sqrt(4.5))
    st = ScheduleState(params, v=1.0)
    etas = []
    for _ in range(12):
        eta, st = alg1_step(st, 3, 0.0)
        etas.append(eta)
    assert all(e == 0.1 for e in etas[:8])
    assert all(e < 0.1 for e in etas[9:])


def test_alg1_bursty_resets_upward():
    rows = emit_schedule(Alg1Schedule(0.1, 2.0), np.tile(np.r_[1.0, np.zeros(39)], 3), 100, 100,
                         v0_hint=1.0)
    eta = np.array([r["eta"] for r in rows])
    for start in (0, 40, 80):
        assert eta[start] == 0.1
        assert np.all(np.diff(eta[start + 1:start + 40]) <= 1e-15)
        assert eta[start + 39] < 0.1
    assert np.all(eta <= 0.1)


def test_noshift_closed_form_constants():
    v, ts, C = noshift_closed_form(1.0, 0.1, 0.3, 0.0)
    assert v == 1.0
    assert ts == pytest.approx(math.log(0.9 * (1.9 / 0.3 - 1)) / 1.9, rel=1e-12)
    assert ts == pytest.approx(0.8256, abs=1e-4) and C == pytest.approx(0.1843, abs=1e-4)


def test_noshift_closed_form_limit():
    ratios = []
    for tau in (10.0, 100.0, 1e4):
        v, _, C = noshift_closed_form(1.0, 0.1, 0.3, tau)
        ratios.append(v * (tau + C) / 0.3)
    assert abs(ratios[-1] - 1) < 1e-3
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1) < abs(ratios[0] - 1)


def test_noshift_closed_form_continuous_at_switch():
    _, ts, _ = noshift_closed_form(1.0, 0.1, 0.3, 0.0)
    left = noshift_closed_form(1.0, 0.1, 0.3, ts)[0]
    right = noshift_closed_form(1.0, 0.1, 0.3, ts + 1e-9)[0]
    assert left == pytest.approx(right, rel=1e-6)


def test_convex_thresholds_examples():
    t1, t2 = convex_thresholds(0.0, 10, 1.0, 1.0, 1.0)
    assert t1 == 0.0
    t1, _ = convex_thresholds(0.1, 100, 5.0, 1.0, 1.0)
    assert t1 == pytest.approx(2 * (math.sqrt(0.2541) - 0.21), rel=1e-12)
    assert t1 == pytest.approx(0.58817, abs=1e-5)


def test_convex_thresholds_reject_zero_sigma():
    with pytest.raises(UsageError):
        convex_thresholds(0.1, 10, 0.0, 1.0, 1.0)


@pytest.mark.parametrize("prev,want", [(0.05, 0.1), (0.2, 0.2), (0.5, 0.3)])
def test_convex_step_cases(prev, want):
    assert convex_step(prev, 0.1, 0.3) == want


def test_nonconvex_step_examples():
    assert nonconvex_step(0.0, 0.0, 64, 1.0, 2.0) == 0.0
    assert nonconvex_step(0.5, 0.5, 64, 1.0, 2.0) == pytest.approx(32 * (math.sqrt(4.0625) - 2), rel=1e-12)
    assert nonconvex_step(0.5, 0.5, 64, 1.0, 2.0) == pytest.approx(0.49806, abs=1e-5)


def test_nonconvex_step_small_noise_limit():
    gaps = [0.5 - nonconvex_step(0.3, 0.2, 1, s, 2.0) for s in (1.0, 1e-2, 1e-4, 1e-6)]
    assert all(g >= 0 for g in gaps)
    assert gaps[-1] < 1e-9 and gaps == sorted(gaps, reverse=True)


def test_ema_gamma():
    assert ema_gamma(0.0, 1.0, 0.9) == pytest.approx(0.1)
    g = 0.0
    for _ in range(500):
        g = ema_gamma(g, 2.0, 0.9)
    assert g == pytest.approx(2.0, rel=1e-12)
    g = 3.0
    for _ in range(10):
        g = ema_gamma(g, 0.0, 0.9)
    assert g == pytest.approx(3.0 * 0.9**10)


def test_convex_schedule_starts_at_upper_threshold():
    s = ConvexSchedule(1.0, 1.0, 2.0)
    s.reset(2)
    eta = s(obs(1, B=4))
    assert eta == pytest.approx(convex_thresholds(0.0, 4, 1.0, 1.0, 2.0)[1])
    assert set(s.info) == {"tau1", "tau2"}


def test_convex_schedule_uses_sigma_estimate():
    s = ConvexSchedule(1.0, 1.0, 2.0, estimate_sigma=True)
    s.reset(2)
    s(obs(1, B=4))
    s(obs(2, B=4, gamma=0.5, sigma_hat=3.0))
    assert s.info["tau2"] == pytest.approx(convex_thresholds(0.5, 4, 3.0, 1.0, 2.0)[1])


def test_nonconvex_schedule_initial_loss():
    s = NonconvexSchedule(1.0, 2.0, loss_init=0.5)
    s.reset(2)
    assert s(obs(1, B=64, gamma=0.5)) == pytest.approx(nonconvex_step(0.5, 0.5, 64, 1.0, 2.0))
    assert s(obs(2, B=64, gamma=0.5, loss=-1.0)) == pytest.approx(nonconvex_step(0.5, 0.0, 64, 1.0, 2.0))


def test_alg1_schedule_v0_resolution():
    s = Alg1Schedule(0.1, 1.0)
    s.reset(2, v0_hint=4.0)
    assert s.state.v == 4.0
    s.reset(2)
    assert s.state.v == 1.0
    s = Alg1Schedule(0.1, 1.0, v0=0.25)
    s.reset(2, v0_hint=4.0)
    assert s.state.v == 0.25


def test_emit_schedule_rows():
    rows = emit_schedule(ConvexSchedule(1.0, 1.0, 1.0), [0.0, 0.2, 0.0], 10, 2)
    assert [r["t"] for r in rows] == [1, 2, 3]
    assert all({"eta", "gamma", "tau1", "tau2"} <= set(r) for r in rows)

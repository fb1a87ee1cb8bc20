import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lane_pareto.trajectory import (
    InfeasiblePlan,
    KinematicBounds,
    TrajectorySample,
    check_kinematic_limits,
    sample_trajectory,
    solve_quintic,
)


def _residuals(q, start, end, T, D0):
    """All twelve boundary residuals, evaluated directly from the coefficients."""
    def poly(c, tau, d):
        c = np.asarray(c)
        out = 0.0
        for i in range(d, 6):
            fac = np.prod(range(i - d + 1, i + 1)) if d else 1
            out += fac * c[i] * tau ** (i - d)
        return out

    res = []
    for d, (s, e) in enumerate(zip(start, (start[0] + end[0], end[1], end[2]))):
        res += [poly(q.lon, 0.0, d) - s, poly(q.lon, T, d) - e]
    for d, (s, e) in enumerate(((0.0, D0), (0.0, 0.0), (0.0, 0.0))):
        res += [poly(q.lat, 0.0, d) - s, poly(q.lat, T, d) - e]
    return np.abs(res)


def test_straight_line_identity():
    for T in (1.0, 3.7, 12.0):
        q = solve_quintic((0.0, 20.0, 0.0), (20.0 * T, 20.0, 0.0), T, 3.5)
        assert np.allclose(q.lon, (0, 20, 0, 0, 0, 0), atol=1e-9)


def test_paper_anchored_plan_matches_direct_solve():
    T, D0 = 6.0, 3.5
    start, end = (0.0, 20.5, 0.81), (140.0, 26.0, 0.0)
    q = solve_quintic(start, end, T, D0, t_start=300.6)
    rows = []
    for tau in (0.0, T):
        rows.append([tau**i for i in range(6)])
        rows.append([i * tau ** (i - 1) if i else 0.0 for i in range(6)])
        rows.append([i * (i - 1) * tau ** (i - 2) if i > 1 else 0.0 for i in range(6)])
    M = np.array(rows)
    lon = np.linalg.solve(M, [0.0, 20.5, 0.81, 140.0, 26.0, 0.0])
    assert np.allclose(q.lon, lon, atol=1e-9)
    assert np.max(_residuals(q, start, end, T, D0)) <= 1e-9
    samples = sample_trajectory(q, 0.1)
    assert len(samples) == 61
    vy = np.array([s.vy for s in samples])
    assert vy.max() == pytest.approx(1.1, abs=0.1)
    assert abs(samples[int(np.argmax(vy))].t - 303.6) <= 0.1


@settings(max_examples=300, deadline=None)
@given(
    v0=st.floats(5, 30),
    a0=st.floats(-3, 3),
    T=st.floats(1, 16),
    vbar=st.floats(5, 30),
    v1=st.floats(5, 30),
    a1=st.floats(-2, 2),
    t_start=st.floats(0, 1e4),
)
def test_boundary_residuals_and_midpoint(v0, a0, T, vbar, v1, a1, t_start):
    D0 = 3.5
    q = solve_quintic((100.0, v0, a0), (vbar * T, v1, a1), T, D0, t_start)
    assert np.max(_residuals(q, (100.0, v0, a0), (vbar * T, v1, a1), T, D0)) <= 1e-9 * max(1.0, vbar * T)
    mid = q.evaluate(np.array([t_start + T / 2]))
    assert mid["y"][0] == pytest.approx(D0 / 2, abs=1e-9)


def test_first_sample_is_start_state():
    q = solve_quintic((10.0, 22.0, 0.4), (100.0, 25.0, 0.0), 4.0, 3.5, t_start=50.0)
    s = sample_trajectory(q, 0.1)[0]
    assert (s.t, s.x, s.vx, s.ax, s.y, s.vy) == pytest.approx((50.0, 10.0, 22.0, 0.4, 0.0, 0.0), abs=1e-12)


def test_constant_speed_sampling_has_no_longitudinal_acceleration():
    q = solve_quintic((0.0, 20.0, 0.0), (100.0, 20.0, 0.0), 5.0, 3.5)
    for s in sample_trajectory(q, 0.1):
        assert abs(s.ax) <= 1e-9 and abs(s.jx) <= 1e-9


def test_derivatives_match_finite_differences():
    q = solve_quintic((0.0, 21.0, 0.5), (120.0, 26.0, -0.3), 5.0, 3.5)
    dt = 1e-3
    s = sample_trajectory(q, dt)
    x = np.array([p.x for p in s])
    y = np.array([p.y for p in s])
    vx = np.array([p.vx for p in s])
    vy = np.array([p.vy for p in s])
    assert np.max(np.abs((x[2:] - x[:-2]) / (2 * dt) - vx[1:-1])) <= 1e-4
    assert np.max(np.abs((y[2:] - y[:-2]) / (2 * dt) - vy[1:-1])) <= 1e-4


def _straight(speed, duration, dt=0.1):
    t = np.arange(0, duration + 1e-9, dt)
    return [TrajectorySample(tt, speed * tt, 0, speed, 0, 0, 0, 0, 0, 0) for tt in t]


def test_kinematic_limits_examples():
    b = KinematicBounds()
    assert check_kinematic_limits(_straight(20.0, 5.0), b) == 0.0
    assert check_kinematic_limits(_straight(31.0, 5.0), b) == pytest.approx((31 - 30) / 30)
    assert check_kinematic_limits(_straight(20.0, 0.5), b) == pytest.approx((1 - 0.5) / 1)


def test_reverse_lateral_motion_is_a_violation():
    s = _straight(20.0, 2.0)
    s[5] = TrajectorySample(s[5].t, s[5].x, 0.0, 20.0, -0.2, 0, 0, 0, 0, 0)
    assert check_kinematic_limits(s, KinematicBounds()) == pytest.approx(0.2)


def test_lateral_path_is_monotone():
    q = solve_quintic((0.0, 20.0, 0.0), (60.0, 20.0, 0.0), 3.0, 3.5)
    y = np.array([p.y for p in sample_trajectory(q, 0.01)])
    assert np.all(np.diff(y) >= -1e-12)


def test_invalid_plans():
    with pytest.raises(InfeasiblePlan):
        solve_quintic((0, 20, 0), (10, 20, 0), 0.0, 3.5)
    with pytest.raises(InfeasiblePlan):
        solve_quintic((0, 20, 0), (10, 20, 0), 2.0, 0.0)

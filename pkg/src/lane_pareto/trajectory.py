"""Quintic lane-change trajectories: planning, sampling and feasibility."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InfeasiblePlan(ValueError):
    pass


@dataclass(frozen=True)
class KinematicBounds:
    v_min: float = 5.0
    v_max: float = 30.0
    a_min: float = -8.0
    a_max: float = 8.0
    j_min: float = -8.0
    j_max: float = 8.0
    t_lc_min: float = 1.0
    t_lc_max: float = 16.0
    x_lc_min: float = 5.0
    x_lc_max: float = 480.0


@dataclass(frozen=True)
class QuinticPair:
    """Longitudinal and lateral quintics in shifted time ``tau = t - t_start``."""

    lon: tuple[float, ...]
    lat: tuple[float, ...]
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def evaluate(self, t) -> dict[str, np.ndarray]:
        tau = np.asarray(t, dtype=float) - self.t_start
        out = {}
        for axis, coeffs in (("x", self.lon), ("y", self.lat)):
            c = np.asarray(coeffs)
            out[axis] = np.polyval(c[::-1], tau)
            d1 = np.array([c[1], 2 * c[2], 3 * c[3], 4 * c[4], 5 * c[5]])
            d2 = np.array([2 * c[2], 6 * c[3], 12 * c[4], 20 * c[5]])
            d3 = np.array([6 * c[3], 24 * c[4], 60 * c[5]])
            out["v" + axis] = np.polyval(d1[::-1], tau)
            out["a" + axis] = np.polyval(d2[::-1], tau)
            out["j" + axis] = np.polyval(d3[::-1], tau)
        out["t"] = np.asarray(t, dtype=float)
        out["theta"] = np.arctan2(out["vy"], out["vx"])
        return out


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float
    jx: float
    jy: float
    theta: float


def _boundary_matrix(T: float) -> np.ndarray:
    return np.array(
        [
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 2, 0, 0, 0],
            [1, T, T**2, T**3, T**4, T**5],
            [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
            [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3],
        ],
        dtype=float,
    )


def solve_quintic(
    start: Sequence[float],
    end: Sequence[float],
    duration: float,
    lane_width: float,
    t_start: float = 0.0,
) -> QuinticPair:
    """Plan a lane change.

    ``start`` is ``(x, v, a)`` at ``t_start``; ``end`` is ``(x_disp, v_end, a_end)``
    with ``x_disp`` measured from the start position.  Laterally the vehicle
    moves from 0 to ``lane_width`` with zero speed and acceleration at both ends.
    """
    if not duration > 1e-9:
        raise InfeasiblePlan(f"duration must be positive, got {duration}")
    if not lane_width > 0:
        raise InfeasiblePlan(f"lane width must be positive, got {lane_width}")
    x0, v0, a0 = (float(s) for s in start)
    x_disp, v1, a1 = (float(e) for e in end)
    M = _boundary_matrix(float(duration))
    try:
        lon = np.linalg.solve(M, [x0, v0, a0, x0 + x_disp, v1, a1])
        lat = np.linalg.solve(M, [0.0, 0.0, 0.0, lane_width, 0.0, 0.0])
    except np.linalg.LinAlgError as exc:
        raise InfeasiblePlan(str(exc)) from exc
    return QuinticPair(tuple(lon.tolist()), tuple(lat.tolist()), float(t_start), float(t_start + duration))


def sample_times(t_start: float, t_end: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(math.floor((t_end - t_start) / dt + 1e-9))
    t = t_start + dt * np.arange(n + 1)
    if t_end - t[-1] > 1e-9:
        t = np.append(t, t_end)
    else:
        t[-1] = t_end
    return t


def sample_arrays(q: QuinticPair, dt: float) -> dict[str, np.ndarray]:
    return q.evaluate(sample_times(q.t_start, q.t_end, dt))


def sample_trajectory(q: QuinticPair, dt: float) -> list[TrajectorySample]:
    arr = sample_arrays(q, dt)
    keys = ("t", "x", "y", "vx", "vy", "ax", "ay", "jx", "jy", "theta")
    return [TrajectorySample(*(float(arr[k][i]) for k in keys)) for i in range(len(arr["t"]))]


def _as_arrays(samples) -> dict[str, np.ndarray]:
    if isinstance(samples, dict):
        return samples
    keys = ("t", "x", "y", "vx", "vy", "ax", "ay", "jx", "jy", "theta")
    return {k: np.array([getattr(s, k) for s in samples], dtype=float) for k in keys}


def _excess(values: np.ndarray, lo: float, hi: float) -> float:
    over = max(0.0, float(np.max(values)) - hi) / (abs(hi) or 1.0)
    under = max(0.0, lo - float(np.min(values))) / (abs(lo) or 1.0)
    return over + under


def check_kinematic_limits(samples, bounds: KinematicBounds) -> float:
    """Sum of normalized worst-case excesses over all limits; 0 when feasible.

    Speed is the planar magnitude; acceleration and jerk are checked per axis.
    A lateral path that moves backwards is penalized by its worst reverse speed.
    """
    arr = _as_arrays(samples)
    if len(arr["t"]) == 0:
        raise ValueError("no samples")
    b = bounds
    speed = np.hypot(arr["vx"], arr["vy"])
    total = _excess(speed, b.v_min, b.v_max)
    for key in ("ax", "ay"):
        total += _excess(arr[key], b.a_min, b.a_max)
    for key in ("jx", "jy"):
        total += _excess(arr[key], b.j_min, b.j_max)
    duration = float(arr["t"][-1] - arr["t"][0])
    total += _excess(np.array([duration]), b.t_lc_min, b.t_lc_max)
    disp = float(arr["x"][-1] - arr["x"][0])
    total += _excess(np.array([disp]), b.x_lc_min, b.x_lc_max)
    # endpoint lateral speeds are zero up to rounding
    reverse = -float(np.min(arr["vy"]))
    total += reverse if reverse > 1e-9 else 0.0
    return total

"""Elliptical collision boundaries and the distance between them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

_PROBES = 16
_SEED_GRID = 36
_OVERLAP_TOL = 1e-9


@dataclass(frozen=True)
class EllipseBoundary:
    cx: float
    cy: float
    heading: float
    a: float  # long radius, along the heading
    b: float  # short radius

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def points(self, angles) -> np.ndarray:
        """Boundary points for parameter angles, shape ``(n, 2)``."""
        angles = np.asarray(angles, dtype=float)
        c, s = math.cos(self.heading), math.sin(self.heading)
        u = self.a * np.cos(angles)
        w = self.b * np.sin(angles)
        return np.stack([self.cx + c * u - s * w, self.cy + s * u + c * w], axis=-1)

    def _key(self) -> tuple:
        return (self.cx, self.cy, self.heading % (2 * math.pi), self.a, self.b)


def footprint_corner_value(a: float, b: float, length: float, width: float) -> float:
    """Boundary value of a vehicle rectangle corner; > 1 means the corner sticks out."""
    return (length / 2) ** 2 / a**2 + (width / 2) ** 2 / b**2


def check_footprint(a: float, b: float, length: float, width: float) -> float:
    value = footprint_corner_value(a, b, length, width)
    if value > 1.0 + 1e-12:
        warnings.warn(
            f"collision ellipse {a}x{b} m does not contain the {length}x{width} m vehicle "
            f"rectangle (corner boundary value {value:.3g})",
            stacklevel=2,
        )
    return value


def boundary_value(e: EllipseBoundary, p: Sequence[float]) -> float:
    """``M^2/a^2 + N^2/b^2`` of point ``p`` in the ellipse body frame (<1 inside)."""
    dx = p[0] - e.cx
    dy = p[1] - e.cy
    c, s = math.cos(e.heading), math.sin(e.heading)
    m = dx * c + dy * s
    n = -dx * s + dy * c
    return m * m / (e.a * e.a) + n * n / (e.b * e.b)


def _boundary_values(e: EllipseBoundary, pts: np.ndarray) -> np.ndarray:
    dx = pts[..., 0] - e.cx
    dy = pts[..., 1] - e.cy
    c, s = math.cos(e.heading), math.sin(e.heading)
    m = dx * c + dy * s
    n = -dx * s + dy * c
    return m * m / (e.a * e.a) + n * n / (e.b * e.b)


def _min_value_on(e_in: EllipseBoundary, e_probe: EllipseBoundary) -> float:
    """Smallest boundary value of ``e_in`` over the boundary of ``e_probe``."""
    n = 64
    grid = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    vals = _boundary_values(e_in, e_probe.points(grid))
    k = int(np.argmin(vals))
    h = 2 * math.pi / n
    res = minimize_scalar(
        lambda t: float(_boundary_values(e_in, e_probe.points([t]))[0]),
        bounds=(grid[k] - h, grid[k] + h),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return min(float(res.fun), float(vals[k]))


def _quick_overlap(e1: EllipseBoundary, e2: EllipseBoundary) -> bool:
    inside = 1.0 - _OVERLAP_TOL
    if boundary_value(e1, e2.center) < inside or boundary_value(e2, e1.center) < inside:
        return True
    probe = np.linspace(0.0, 2 * math.pi, _PROBES, endpoint=False)
    if np.any(_boundary_values(e1, e2.points(probe)) < inside):
        return True
    return bool(np.any(_boundary_values(e2, e1.points(probe)) < inside))


def _closest_angles(e1: EllipseBoundary, e2: EllipseBoundary) -> tuple[float, float, float]:
    grid = np.linspace(0.0, 2 * math.pi, _SEED_GRID, endpoint=False)
    p = e1.points(grid)
    q = e2.points(grid)
    d2 = np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=-1)
    i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
    al, be = float(grid[i]), float(grid[j])

    c1, s1 = math.cos(e1.heading), math.sin(e1.heading)
    c2, s2 = math.cos(e2.heading), math.sin(e2.heading)

    def geometry(al, be):
        ca, sa, cb, sb = math.cos(al), math.sin(al), math.cos(be), math.sin(be)
        u1, w1 = e1.a * ca, e1.b * sa
        u2, w2 = e2.a * cb, e2.b * sb
        P = (e1.cx + c1 * u1 - s1 * w1, e1.cy + s1 * u1 + c1 * w1)
        Q = (e2.cx + c2 * u2 - s2 * w2, e2.cy + s2 * u2 + c2 * w2)
        # first derivatives wrt the parameter angle
        dP = (-c1 * e1.a * sa - s1 * e1.b * ca, -s1 * e1.a * sa + c1 * e1.b * ca)
        dQ = (-c2 * e2.a * sb - s2 * e2.b * cb, -s2 * e2.a * sb + c2 * e2.b * cb)
        # second derivatives are minus the offset from the centre
        ddP = (e1.cx - P[0], e1.cy - P[1])
        ddQ = (e2.cx - Q[0], e2.cy - Q[1])
        return P, Q, dP, dQ, ddP, ddQ

    def f(al, be):
        P, Q, *_ = geometry(al, be)
        return (P[0] - Q[0]) ** 2 + (P[1] - Q[1]) ** 2

    fval = f(al, be)
    lam = 1e-6
    for _ in range(100):
        P, Q, dP, dQ, ddP, ddQ = geometry(al, be)
        d = (P[0] - Q[0], P[1] - Q[1])
        g0 = 2 * (d[0] * dP[0] + d[1] * dP[1])
        g1 = -2 * (d[0] * dQ[0] + d[1] * dQ[1])
        h00 = 2 * (dP[0] ** 2 + dP[1] ** 2 + d[0] * ddP[0] + d[1] * ddP[1])
        h11 = 2 * (dQ[0] ** 2 + dQ[1] ** 2 - d[0] * ddQ[0] - d[1] * ddQ[1])
        h01 = -2 * (dP[0] * dQ[0] + dP[1] * dQ[1])
        improved = False
        for _ in range(30):
            a00, a11 = h00 + lam, h11 + lam
            det = a00 * a11 - h01 * h01
            if a00 > 0 and det > 0:
                st0 = -(a11 * g0 - h01 * g1) / det
                st1 = -(-h01 * g0 + a00 * g1) / det
                trial = f(al + st0, be + st1)
                if trial <= fval:
                    al, be, fval = al + st0, be + st1, trial
                    lam = max(lam * 0.1, 1e-12)
                    improved = True
                    break
            lam = lam * 10 + 1e-9
        if not improved or abs(st0) + abs(st1) < 1e-13:
            break
    return al, be, math.sqrt(max(fval, 0.0))


def _ordered(e1: EllipseBoundary, e2: EllipseBoundary):
    return (e1, e2) if e1._key() <= e2._key() else (e2, e1)


def min_separation(e1: EllipseBoundary, e2: EllipseBoundary) -> tuple[float, bool]:
    """Minimum distance between two elliptical boundaries.

    Returns ``(0.0, True)`` when the interiors intersect or one ellipse contains
    the other, and ``(distance, False)`` otherwise (tangency gives distance 0).
    """
    e1, e2 = _ordered(e1, e2)
    if _quick_overlap(e1, e2):
        return 0.0, True
    _, _, dist = _closest_angles(e1, e2)
    if dist < 1e-3:
        # Shallow intersections can slip between the probes.
        if (
            _min_value_on(e1, e2) < 1.0 - _OVERLAP_TOL
            or _min_value_on(e2, e1) < 1.0 - _OVERLAP_TOL
        ):
            return 0.0, True
    return dist, False


def clearance_violation(lc_pose: np.ndarray, neighbor_poses: np.ndarray, a: float, b: float) -> float:
    """Array form of :func:`clearance_over_horizon`.

    ``lc_pose`` is ``(K, 3)`` rows of ``(x, y, heading)``; ``neighbor_poses`` is
    ``(M, K, 3)``.
    """
    lc_pose = np.asarray(lc_pose, dtype=float)
    nb = np.asarray(neighbor_poses, dtype=float)
    if nb.ndim != 3 or nb.shape[1] != lc_pose.shape[0]:
        raise ValueError(
            f"neighbour traces of shape {nb.shape} are not aligned with {lc_pose.shape[0]} ticks"
        )
    ticks = lc_pose.shape[0]
    if ticks == 0 or nb.shape[0] == 0:
        return 0.0
    # bounding circles of radius a rule out most pairs cheaply
    dist = np.hypot(nb[:, :, 0] - lc_pose[None, :, 0], nb[:, :, 1] - lc_pose[None, :, 1])
    hits = 0.0
    for m, k in zip(*np.nonzero(dist <= 2.0 * max(a, b))):
        e_lc = EllipseBoundary(*lc_pose[k], a, b)
        e_nb = EllipseBoundary(*nb[m, k], a, b)
        d, overlapping = min_separation(e_lc, e_nb)
        if overlapping or d <= 0.0:
            hits += 1.0 + max(0.0, -d)
    return hits / ticks


def clearance_over_horizon(lc_samples, neighbor_traces, radii: tuple[float, float]) -> float:
    """Fraction of (tick, neighbour) pairs in contact, summed over neighbours; 0 if always clear."""
    lc_pose = np.array([[s.x, s.y, s.theta] for s in lc_samples], dtype=float).reshape(-1, 3)
    nb = np.array(
        [[[v.x, v.y, v.heading] for v in trace] for trace in neighbor_traces], dtype=float
    )
    if len(neighbor_traces) and any(len(tr) != len(lc_samples) for tr in neighbor_traces):
        raise ValueError("neighbour traces are not aligned with the lane-change samples")
    if nb.size == 0:
        return 0.0
    return clearance_violation(lc_pose, nb, *radii)

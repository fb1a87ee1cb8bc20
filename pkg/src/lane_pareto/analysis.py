"""Edie's generalized flow, speed and density over a space-time rectangle,
plus the gridded speed field used for heatmaps.

Motion between two ticks is taken as constant-velocity, so a vehicle's
entry into and exit from the rectangle are interpolated linearly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .scenario import Kind


@dataclass(frozen=True)
class EdieRegion:
    x_min: float
    x_max: float
    t_min: float
    t_max: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError(f"region needs x_max > x_min, got [{self.x_min}, {self.x_max}]")
        if not self.t_max > self.t_min:
            raise ValueError(f"region needs t_max > t_min, got [{self.t_min}, {self.t_max}]")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.t_max - self.t_min)


@dataclass(frozen=True)
class EdieMetrics:
    flow: float  # veh/h
    speed: float  # m/s
    density: float  # veh/km
    distance: float  # d(A), m
    time: float  # t(A), s
    area: float  # |A|, m*s

    def to_dict(self) -> dict:
        return asdict(self)


def edie_from_totals(distance: float, time: float, area: float) -> EdieMetrics:
    """Flow, space-mean speed and density from the rectangle totals."""
    if not area > 0:
        raise ValueError("region area must be positive")
    speed = distance / time if time > 0 else math.nan
    return EdieMetrics(
        flow=distance / area * 3600.0,
        speed=speed,
        density=time / area * 1000.0,
        distance=float(distance),
        time=float(time),
        area=float(area),
    )


def _counted_rows(trace) -> list[int]:
    # the incident vehicle sits in the other lane and does not belong to the stream
    return [i for i, kind in enumerate(trace.kinds) if kind != Kind.INCIDENT]


def _clip_segments(times: np.ndarray, x: np.ndarray, region: EdieRegion) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment (distance, time) inside ``region`` for one vehicle's path."""
    t0, t1 = times[:-1], times[1:]
    x0, x1 = x[:-1], x[1:]
    ok = np.isfinite(x0) & np.isfinite(x1)
    dt = t1 - t0
    dx = np.where(ok, x1 - x0, 0.0)
    x0 = np.where(ok, x0, 0.0)
    # segment parameter s in [0, 1]; intersect the time slab and the space slab
    lo = np.maximum(0.0, (region.t_min - t0) / dt)
    hi = np.minimum(1.0, (region.t_max - t0) / dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        sa = (region.x_min - x0) / dx
        sb = (region.x_max - x0) / dx
    moving = dx != 0
    lo = np.where(moving, np.maximum(lo, np.minimum(sa, sb)), lo)
    hi = np.where(moving, np.minimum(hi, np.maximum(sa, sb)), hi)
    inside = (x0 >= region.x_min) & (x0 <= region.x_max)
    frac = np.where(moving | inside, np.clip(hi - lo, 0.0, None), 0.0)
    frac = np.where(ok, frac, 0.0)
    return frac * np.abs(dx), frac * dt


def per_vehicle_region_table(trace, region: EdieRegion) -> list[tuple[int, float, float]]:
    """``(vehicle_id, distance_in_region, time_in_region)`` for every vehicle that enters."""
    _check_covers(trace, region)
    rows = []
    for i in _counted_rows(trace):
        d, t = _clip_segments(trace.times, trace.x[i], region)
        dist, tim = float(d.sum()), float(t.sum())
        if tim > 0 or dist > 0:
            rows.append((trace.ids[i], dist, tim))
    return rows


def edie_metrics(trace, region: EdieRegion) -> EdieMetrics:
    rows = per_vehicle_region_table(trace, region)
    return edie_from_totals(sum(r[1] for r in rows), sum(r[2] for r in rows), region.area)


def _check_covers(trace, region: EdieRegion) -> None:
    tol = 1e-9
    if region.t_min < trace.times[0] - tol or region.t_max > trace.times[-1] + tol:
        raise ValueError(
            f"region time window [{region.t_min}, {region.t_max}] lies outside the trace "
            f"[{trace.times[0]}, {trace.times[-1]}]"
        )


def default_region(trace, length: float, duration: float, x_start=None, t_start=None) -> EdieRegion:
    """Rectangle starting at the lane changer's decision point unless anchored explicitly.

    The default space window starts a fifth of its length behind the lane
    changer at ``t0`` so the upstream reaction is covered.
    """
    t_min = trace.t0 if t_start is None else float(t_start)
    if x_start is None:
        k0 = int(np.argmin(np.abs(trace.times - trace.t0)))
        lc = [i for i, kind in enumerate(trace.kinds) if kind == Kind.AV_LC][0]
        x_start = float(trace.x[lc, k0]) - 0.2 * length
    return EdieRegion(float(x_start), float(x_start) + length, t_min, t_min + duration)


def region_table_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vehicle_id", "distance_m", "time_s"])
    for vid, d, t in rows:
        w.writerow([vid, f"{d:.2f}", f"{t:.2f}"])
    w.writerow(["total", f"{sum(r[1] for r in rows):.2f}", f"{sum(r[2] for r in rows):.2f}"])
    return _emit(buf.getvalue(), path)


def edie_json(metrics: EdieMetrics, region: EdieRegion, path=None) -> str:
    doc = {"region": {**asdict(region), "area": region.area}, **metrics.to_dict()}
    return _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", path)


@dataclass
class HeatmapGrid:
    t_edges: np.ndarray
    x_edges: np.ndarray
    speed: np.ndarray  # (n_t, n_x) mean speed, nan where no sample fell

    @property
    def t_centers(self) -> np.ndarray:
        return 0.5 * (self.t_edges[:-1] + self.t_edges[1:])

    @property
    def x_centers(self) -> np.ndarray:
        return 0.5 * (self.x_edges[:-1] + self.x_edges[1:])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "speed"])
        tc, xc = self.t_centers, self.x_centers
        for a, b in zip(*np.nonzero(np.isfinite(self.speed))):
            w.writerow([f"{tc[a]:.3f}", f"{xc[b]:.3f}", f"{self.speed[a, b]:.6f}"])
        return _emit(buf.getvalue(), path)


def _edges(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(1, int(math.ceil((hi - lo) / step - 1e-9)))
    return lo + step * np.arange(n + 1)


def heatmap_grid(trace, cell: tuple[float, float], region: EdieRegion | None = None) -> HeatmapGrid:
    """Mean instantaneous speed per ``(dx, dt)`` cell over the region (default: trace extent)."""
    dx, dt = cell
    if not (dx > 0 and dt > 0):
        raise ValueError("heatmap cell sizes must be positive")
    rows = _counted_rows(trace)
    xs = trace.x[rows]
    if region is None:
        finite = xs[np.isfinite(xs)]
        if finite.size == 0:
            return HeatmapGrid(np.array([0.0, dt]), np.array([0.0, dx]), np.full((1, 1), np.nan))
        region = EdieRegion(float(finite.min()), float(finite.max()) + dx, float(trace.times[0]),
                            float(trace.times[-1]) + dt)
    t_edges = _edges(region.t_min, region.t_max, dt)
    x_edges = _edges(region.x_min, region.x_max, dx)
    tt = np.broadcast_to(trace.times, xs.shape)
    vv = trace.v[rows]
    keep = np.isfinite(xs) & np.isfinite(vv)
    tt, xx, vv = tt[keep], xs[keep], vv[keep]
    ti = np.searchsorted(t_edges, tt, side="right") - 1
    xi = np.searchsorted(x_edges, xx, side="right") - 1
    inside = (ti >= 0) & (ti < len(t_edges) - 1) & (xi >= 0) & (xi < len(x_edges) - 1)
    shape = (len(t_edges) - 1, len(x_edges) - 1)
    total = np.zeros(shape)
    count = np.zeros(shape)
    np.add.at(total, (ti[inside], xi[inside]), vv[inside])
    np.add.at(count, (ti[inside], xi[inside]), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        speed = np.where(count > 0, total / count, np.nan)
    return HeatmapGrid(t_edges, x_edges, speed)


def _emit(text: str, path) -> str:
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text

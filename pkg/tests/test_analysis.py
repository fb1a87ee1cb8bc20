from dataclasses import replace

import numpy as np
import pytest

from lane_pareto.analysis import (
    EdieRegion,
    default_region,
    edie_from_totals,
    edie_metrics,
    heatmap_grid,
    per_vehicle_region_table,
    region_table_csv,
)
from lane_pareto.engine import LcCandidate, SimulationTrace, run_final
from lane_pareto.scenario import Kind


def make_trace(x, v, dt=0.1, t0=0.0):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.broadcast_to(np.atleast_2d(np.asarray(v, dtype=float)), x.shape).copy()
    n = x.shape[0]
    zeros = np.zeros_like(x)
    return SimulationTrace(
        times=t0 + dt * np.arange(x.shape[1]),
        ids=list(range(1, n + 1)),
        kinds=[Kind.AV] * n,
        x=x,
        y=zeros + 3.5,
        v=v,
        a=zeros,
        jerk=zeros,
        heading=zeros,
        t0=t0,
        t_start=t0,
        t_end=t0,
        mode="ideal",
        lane_width=3.5,
    )


@pytest.mark.parametrize(
    "d, t, flow, speed",
    [(3061.68, 126.90, 1469.61, 24.13), (3073.93, 127.00, 1475.49, 24.20)],
)
def test_table_totals(d, t, flow, speed):
    m = edie_from_totals(d, t, 500 * 15)
    assert m.flow == pytest.approx(flow, abs=0.01)
    assert m.speed == pytest.approx(speed, abs=0.01)


def test_density_and_fundamental_relation():
    m = edie_from_totals(3061.68, 126.90, 7500.0)
    assert m.density == pytest.approx(16.92, abs=0.01)
    assert m.flow == pytest.approx(m.density * m.speed * 3.6, rel=1e-3)


def test_constant_speed_crossing():
    t = 0.1 * np.arange(401)
    tr = make_trace(-100 + 25 * t, 25.0)
    region = EdieRegion(0.0, 500.0, 0.0, 40.0)
    m = edie_metrics(tr, region)
    assert m.speed == pytest.approx(25.0, rel=1e-12)
    assert m.distance == pytest.approx(500.0) and m.time == pytest.approx(20.0)


def test_short_presence():
    t = 0.1 * np.arange(50)
    tr = make_trace(25 * t, 25.0)
    rows = per_vehicle_region_table(tr, EdieRegion(50.0, 57.5, 0.0, 4.0))
    assert rows[0][1] == pytest.approx(7.5) and rows[0][2] == pytest.approx(0.3)


def test_rows_sum_to_totals_and_outside_vehicles_are_dropped():
    t = 0.1 * np.arange(200)
    x = np.stack([20 * t, 10 + 24 * t + np.sin(t), 5000 + 0 * t])
    tr = make_trace(x, 20.0)
    region = EdieRegion(50.0, 300.0, 2.0, 15.0)
    rows = per_vehicle_region_table(tr, region)
    assert [r[0] for r in rows] == [1, 2]
    m = edie_metrics(tr, region)
    assert sum(r[1] for r in rows) == pytest.approx(m.distance, abs=1e-6)
    assert sum(r[2] for r in rows) == pytest.approx(m.time, abs=1e-6)
    assert m.flow == pytest.approx(m.density * m.speed * 3.6, rel=1e-3)
    assert region_table_csv(rows).splitlines()[-1].startswith("total,")


def test_sub_rectangle_speed_matches_vehicle_mean():
    t = 0.1 * np.arange(101)
    v = 22.0
    tr = make_trace(v * t, v)
    m = edie_metrics(tr, EdieRegion(30.0, 150.0, 1.0, 9.0))
    assert m.speed == pytest.approx(v, abs=1e-6)


def test_region_outside_trace_is_rejected():
    tr = make_trace(np.arange(10.0), 10.0)
    with pytest.raises(ValueError):
        edie_metrics(tr, EdieRegion(0.0, 5.0, 0.0, 50.0))
    with pytest.raises(ValueError):
        EdieRegion(1.0, 1.0, 0.0, 1.0)


def test_heatmap_uniform_and_empty():
    t = 0.1 * np.arange(100)
    tr = make_trace(np.stack([18 * t, 18 * t - 40]), 18.0)
    g = heatmap_grid(tr, (10.0, 0.5))
    occupied = g.speed[np.isfinite(g.speed)]
    assert occupied.size > 0 and np.all(occupied == 18.0)
    empty = make_trace(np.full((1, 5), np.nan), np.nan)
    assert np.all(np.isnan(heatmap_grid(empty, (10.0, 0.5)).speed))
    assert heatmap_grid(empty, (10.0, 0.5)).to_csv().splitlines() == ["t,x,speed"]
    with pytest.raises(ValueError):
        heatmap_grid(tr, (0.0, 0.5))


def test_heatmap_shows_the_upstream_slowdown(paper_warm):
    fr = run_final(LcCandidate(0.0, 3.3, 77.7, 25.6, 2.0), paper_warm)
    tr = fr.trace
    lc = tr.index_of(0)
    k = int(np.argmin(np.abs(tr.times - tr.t_start)))
    x_ins = tr.x[lc, k]
    # target-lane stream only: hide the lane changer's own samples
    tr = replace(tr, x=tr.x.copy())
    tr.x[lc] = np.nan
    g = heatmap_grid(tr, (10.0, 0.5))
    tc, xc = np.meshgrid(g.t_centers, g.x_centers, indexing="ij")
    behind = xc < x_ins - 20.0
    before = g.speed[behind & (tc < tr.t_start) & (tc > tr.t_start - 5)]
    after = g.speed[behind & (tc > tr.t_start + 1) & (tc < tr.t_start + 6)]
    assert np.nanmean(after) < np.nanmean(before)


def test_default_region_anchors_behind_the_lane_changer(paper_warm):
    fr = run_final(LcCandidate(0.0, 3.3, 77.7, 25.6, 2.0), paper_warm)
    region = default_region(fr.trace, 500.0, 15.0)
    lc = fr.trace.index_of(0)
    k0 = int(np.argmin(np.abs(fr.trace.times - fr.trace.t0)))
    assert region.x_min == pytest.approx(fr.trace.x[lc, k0] - 100.0)
    assert region.area == pytest.approx(7500.0)
    m = edie_metrics(fr.trace, region)
    assert m.flow == pytest.approx(m.density * m.speed * 3.6, rel=1e-3)

"""Two-stage lane-change simulation: candidate evaluation and final replays.

Tick ``k`` is time ``t0 + k dt``.  Stage 1 runs from tick 0 to ``k_start``
with the lane changer under IDM behind its stage-1 leader (by default the
leader of the target gap, alternatively the incident vehicle); stage 2 runs to
``k_end`` along the quintic plan (or the MPC closed loop in tracked mode).
Afterwards the lane changer follows its new leader under IDM.

The vehicles ahead of the gap never see the lane changer, so their motion is
computed once per scenario.  Only the followers are re-simulated for each
candidate.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .cf_models import (
    CollisionError,
    idm_accel_raw,
    idm_jerk_raw,
    lcm_accel_raw,
    lcm_jerk_raw,
)
from .collision import check_footprint, clearance_violation
from .cost import CostBreakdown, aggregate_jlc, aggregate_jtf, follower_weights, safety_cost
from .nsga2 import GRID_STEP, GridSpace, Individual, ParetoFront
from .scenario import (
    Kind,
    ScenarioConfig,
    ballistic,
    lane_of,
    place_lane_changer,
    roll_platoon,
    spawn_platoon,
    warm_up,
)
from .tracking import TrackingError, track_trajectory
from .trajectory import InfeasiblePlan, check_kinematic_limits, solve_quintic

# Violation charged for a crash inside the car-following update; the
# remaining-horizon term ranks earlier crashes as worse and the penetration
# depth (m) separates crashes at the same tick.
CRASH_PENALTY = 1e3
CRASH_OBJECTIVE = 1e9


@dataclass(frozen=True)
class LcCandidate:
    t_wait: float  # t_start - t0
    t_dur: float  # t_end - t_start
    x_disp: float  # x_end - x_start
    v_end: float
    a_end: float

    FIELDS = ("t_wait", "t_dur", "x_disp", "v_end", "a_end")

    @classmethod
    def from_vector(cls, x) -> "LcCandidate":
        return cls(*(round(float(v), 10) for v in x))

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in self.FIELDS])

    def as_dict(self) -> dict[str, float]:
        return {f: getattr(self, f) for f in self.FIELDS}


def decision_space(cfg: ScenarioConfig) -> GridSpace:
    lower, upper = cfg.bounds.box()
    return GridSpace(lower, upper, GRID_STEP)


# ------------------------------------------------------------- warm state


@dataclass(frozen=True)
class WarmState:
    """Frozen scenario at the decision time, shared by every evaluation."""

    cfg: ScenarioConfig
    t0: float
    platoon_kinds: tuple[Kind, ...]
    lc_x: float
    lc_v: float
    lc_a: float
    obstacle_x: float
    n_hist: int  # ticks of history kept before t0
    horizon: int  # ticks simulated after t0 for the vehicles ahead of the gap
    # (n_lead, n_hist + horizon + 1), column n_hist is t0
    lead_x: np.ndarray
    lead_v: np.ndarray
    lead_a: np.ndarray
    # (n_follow, n_hist + 1)
    follow_x: np.ndarray
    follow_v: np.ndarray
    follow_a: np.ndarray
    omega: np.ndarray

    @property
    def n_lead(self) -> int:
        return self.cfg.insertion_index

    @property
    def follower_ids(self) -> list[int]:
        return list(range(self.n_lead + 1, self.cfg.platoon_size + 1))

    @property
    def obstacle_id(self) -> int:
        return self.cfg.platoon_size + 1

    def region_end_tick(self) -> int:
        e = self.cfg.edie_region
        t_start = e.t_start if e.t_start is not None else self.t0
        return int(math.ceil((t_start + e.duration - self.t0) / self.cfg.sim_step - 1e-9))


def prepare(cfg: ScenarioConfig) -> WarmState:
    """Spawn, warm up and place the lane changer and the incident vehicle."""
    check_footprint(cfg.vehicle.ellipse_a, cfg.vehicle.ellipse_b, cfg.vehicle.length, cfg.vehicle.width)
    dt = cfg.sim_step
    n_hist = max(cfg.delay_ticks, int(round(cfg.lead_in / dt)))
    platoon = spawn_platoon(cfg)
    warm = warm_up(platoon, cfg, history=n_hist)
    lc, obstacle = place_lane_changer(warm.states, cfg)

    b = cfg.bounds
    e = cfg.edie_region
    region_end = (e.t_start - cfg.warmup_duration if e.t_start is not None else 0.0) + e.duration
    horizon = int(math.ceil((b.t_wait_max + b.kinematic.t_lc_max + max(cfg.tail, region_end)) / dt)) + 2

    n_lead = cfg.insertion_index
    is_hv = np.array([k == Kind.HV for k in (p.kind for p in platoon)])
    if n_lead:
        xs = list(warm.x_hist[:, :n_lead])
        vs = list(warm.v_hist[:, :n_lead])
        as_ = list(warm.a_hist[:, :n_lead])
        roll_platoon(xs, vs, as_, is_hv[:n_lead], horizon, cfg)
        lead_x, lead_v, lead_a = (np.array(arr).T.copy() for arr in (xs, vs, as_))
    else:
        shape = (0, n_hist + horizon + 1)
        lead_x, lead_v, lead_a = np.zeros(shape), np.zeros(shape), np.zeros(shape)

    fs = slice(n_lead, cfg.platoon_size)
    follow_x = warm.x_hist[:, fs].T.copy()
    follow_v = warm.v_hist[:, fs].T.copy()
    follow_a = warm.a_hist[:, fs].T.copy()
    omega = follower_weights(
        [(float(follow_v[i, -1] - lc.v), float(lc.x - follow_x[i, -1])) for i in range(follow_x.shape[0])]
    )
    return WarmState(
        cfg=cfg,
        t0=warm.t0,
        platoon_kinds=tuple(p.kind for p in platoon),
        lc_x=lc.x,
        lc_v=lc.v,
        lc_a=lc.a,
        obstacle_x=obstacle.x,
        n_hist=n_hist,
        horizon=horizon,
        lead_x=lead_x,
        lead_v=lead_v,
        lead_a=lead_a,
        follow_x=follow_x,
        follow_v=follow_v,
        follow_a=follow_a,
        omega=omega,
    )


# ----------------------------------------------------------------- rollout


@dataclass
class Rollout:
    """Raw arrays of one simulated candidate; column ``n_hist`` is t0 for followers."""

    k_start: int
    k_end: int
    k_switch: int
    n_ticks: int  # last simulated tick
    lc_x: np.ndarray
    lc_y: np.ndarray
    lc_vx: np.ndarray  # longitudinal speed seen by the followers
    lc_speed: np.ndarray  # planar speed
    lc_ax: np.ndarray
    lc_jerk: np.ndarray  # comfort jerk
    lc_heading: np.ndarray
    follow_x: np.ndarray
    follow_v: np.ndarray
    follow_a: np.ndarray
    follow_j: np.ndarray
    kinematic_violation: float = 0.0
    plan: object = None
    tracking: object = None
    crash_tick: int | None = None
    crash_message: str = ""
    crash_depth: float = 0.0


class _Lc:
    """Lane-changer arrays indexed by tick 0..n."""

    def __init__(self, n: int):
        self.x = np.zeros(n + 1)
        self.y = np.zeros(n + 1)
        self.vx = np.zeros(n + 1)
        self.speed = np.zeros(n + 1)
        self.ax = np.zeros(n + 1)
        self.jerk = np.zeros(n + 1)
        self.heading = np.zeros(n + 1)


def stage1_leader(warm: WarmState, k: int):
    """``(x, v, a)`` of the vehicle the lane changer follows before steering, or None."""
    cfg = warm.cfg
    if cfg.stage1_leader == "incident":
        return warm.obstacle_x + cfg.incident_speed * cfg.sim_step * k, cfg.incident_speed, 0.0
    if warm.n_lead:
        j = warm.n_hist + k
        return warm.lead_x[-1, j], warm.lead_v[-1, j], warm.lead_a[-1, j]
    return None


def _ballistic1(x: float, v: float, a: float, dt: float) -> tuple[float, float]:
    v1 = v + a * dt
    if v1 >= 0.0:
        return x + v * dt + 0.5 * a * dt * dt, v1
    t_stop = -v / a
    return x + v * t_stop + 0.5 * a * t_stop * t_stop, 0.0


def _schedule(cand: LcCandidate, dt: float) -> tuple[int, int]:
    k_start = int(round(cand.t_wait / dt))
    n_dur = max(int(round(cand.t_dur / dt)), 1)
    return k_start, k_start + n_dur


def simulate(
    warm: WarmState,
    cand: LcCandidate,
    mode: str = "ideal",
    until: int | None = None,
) -> Rollout:
    """Simulate ticks ``0..max(k_end, until)``.  Car-following crashes are recorded, not raised."""
    cfg = warm.cfg
    dt = cfg.sim_step
    D0 = cfg.lane_width
    L = cfg.vehicle.length
    ip = cfg.idm
    k_start, k_end = _schedule(cand, dt)
    n = k_end if until is None else max(k_end, until)
    n = min(n, warm.horizon)
    if k_end > warm.horizon:
        raise ValueError("candidate extends beyond the precomputed horizon")
    lc = _Lc(n)
    h = warm.n_hist
    n_lead = warm.n_lead
    crash_tick = None
    crash_msg = ""
    crash_depth = 0.0

    # stage 1: IDM behind the stage-1 leader
    lc.x[0], lc.vx[0], lc.ax[0] = warm.lc_x, warm.lc_v, warm.lc_a
    try:
        for k in range(k_start + 1):
            ld = stage1_leader(warm, k)
            if ld is None:
                lc.ax[k] = ip.max_accel * (1.0 - (lc.vx[k] / ip.desired_speed) ** ip.delta)
                ratio = lc.vx[k] / ip.desired_speed
                lc.jerk[k] = abs(ip.max_accel * ip.delta * ratio ** (ip.delta - 1) * lc.ax[k] / ip.desired_speed)
            else:
                lx, lv, la = ld
                lc.ax[k] = idm_accel_raw(lc.vx[k], lv, lx - lc.x[k], L, ip)
                lc.jerk[k] = abs(idm_jerk_raw(lc.vx[k], lc.ax[k], lv, la, lx - lc.x[k], L, ip))
            if k < k_start:
                lc.x[k + 1], lc.vx[k + 1] = _ballistic1(lc.x[k], lc.vx[k], lc.ax[k], dt)
    except CollisionError as exc:
        crash_tick, crash_msg, crash_depth = k, f"lane changer hit its stage-1 leader: {exc}", exc.depth
    lc.speed[: k_start + 1] = lc.vx[: k_start + 1]

    # stage 2: quintic plan
    kin_violation = 0.0
    plan = None
    tracking = None
    if crash_tick is None:
        t_start = warm.t0 + k_start * dt
        try:
            plan = solve_quintic(
                (lc.x[k_start], lc.vx[k_start], lc.ax[k_start]),
                (cand.x_disp, cand.v_end, cand.a_end),
                (k_end - k_start) * dt,
                D0,
                t_start,
            )
        except InfeasiblePlan as exc:
            crash_tick, crash_msg = k_start, f"no plan: {exc}"
    if plan is not None:
        ticks = np.arange(k_start, k_end + 1)
        arr = plan.evaluate(warm.t0 + ticks * dt)
        arr["t"][-1] = plan.t_end
        kin_violation = check_kinematic_limits(arr, cfg.bounds.kinematic)
        s = slice(k_start, k_end + 1)
        if mode == "ideal":
            lc.x[s], lc.y[s] = arr["x"], arr["y"]
            lc.vx[s], lc.ax[s] = arr["vx"], arr["ax"]
            lc.speed[s] = np.hypot(arr["vx"], arr["vy"])
            lc.jerk[s] = np.hypot(arr["jx"], arr["jy"])
            lc.heading[s] = arr["theta"]
        elif mode == "tracked":
            tracking = track_trajectory(plan, cfg.mpc, dt, cfg.vehicle.wheelbase)
            st = tracking.states
            phi = np.array([q.phi for q in st])
            speed = np.array([q.v for q in st])
            vx, vy = speed * np.cos(phi), speed * np.sin(phi)
            lc.x[s] = [q.x for q in st]
            lc.y[s] = [q.y for q in st]
            lc.heading[s] = phi
            lc.vx[s], lc.speed[s] = vx, speed
            ax = np.gradient(vx, dt) if len(st) > 1 else np.zeros(1)
            ay = np.gradient(vy, dt) if len(st) > 1 else np.zeros(1)
            lc.ax[s] = ax
            lc.jerk[s] = np.hypot(np.gradient(ax, dt), np.gradient(ay, dt)) if len(st) > 1 else 0.0
            lc.ax[k_start] = arr["ax"][0]
            realized = {
                "t": arr["t"], "x": lc.x[s], "y": lc.y[s], "vx": vx, "vy": vy,
                "ax": ax, "ay": ay, "jx": np.gradient(ax, dt), "jy": np.gradient(ay, dt),
            }
            kin_violation = check_kinematic_limits(realized, cfg.bounds.kinematic)
        else:
            raise ValueError(f"unknown mode {mode!r}")

    # after the manoeuvre: IDM behind the new leader on the target lane
    if crash_tick is None and n > k_end:
        lead = n_lead - 1
        try:
            for k in range(k_end + 1, n + 1):
                lc.x[k], lc.vx[k] = _ballistic1(lc.x[k - 1], lc.vx[k - 1], lc.ax[k - 1], dt)
                lc.speed[k], lc.y[k] = lc.vx[k], lc.y[k_end]
                if n_lead:
                    j = h + k
                    gap = warm.lead_x[lead, j] - lc.x[k]
                    lv, la = warm.lead_v[lead, j], warm.lead_a[lead, j]
                    lc.ax[k] = idm_accel_raw(lc.vx[k], lv, gap, L, ip)
                    jerk = idm_jerk_raw(lc.vx[k], lc.ax[k], lv, la, gap, L, ip)
                else:
                    lc.ax[k] = ip.max_accel * (1.0 - (lc.vx[k] / ip.desired_speed) ** ip.delta)
                    jerk = 0.0
                # the hand-over from the plan is a mode switch: difference it
                lc.jerk[k] = abs((lc.ax[k] - lc.ax[k - 1]) / dt if k == k_end + 1 else jerk)
        except CollisionError as exc:
            crash_tick, crash_msg, crash_depth = k, f"lane changer hit its new leader: {exc}", exc.depth

    if cfg.retarget_trigger == "crossing" and crash_tick is None:
        crossed = np.flatnonzero(lc.y[k_start : k_end + 1] >= D0 / 2.0)
        k_switch = k_start + int(crossed[0]) if crossed.size else k_end
    else:
        k_switch = k_start

    fx, fv, fa, fj, f_crash = _simulate_followers(warm, lc, k_switch, n, crash_tick)
    if f_crash is not None:
        crash_tick, crash_msg, crash_depth = f_crash
    return Rollout(
        k_start=k_start,
        k_end=k_end,
        k_switch=k_switch,
        n_ticks=n,
        lc_x=lc.x,
        lc_y=lc.y,
        lc_vx=lc.vx,
        lc_speed=lc.speed,
        lc_ax=lc.ax,
        lc_jerk=lc.jerk,
        lc_heading=lc.heading,
        follow_x=fx,
        follow_v=fv,
        follow_a=fa,
        follow_j=fj,
        kinematic_violation=kin_violation,
        plan=plan,
        tracking=tracking,
        crash_tick=crash_tick,
        crash_message=crash_msg,
        crash_depth=crash_depth,
    )


def _simulate_followers(warm: WarmState, lc: _Lc, k_switch: int, n: int, lc_crash: int | None):
    cfg = warm.cfg
    dt = cfg.sim_step
    L = cfg.vehicle.length
    d = cfg.delay_ticks
    h = warm.n_hist
    m = warm.follow_x.shape[0]
    kinds = warm.platoon_kinds[warm.n_lead :]
    width = h + n + 1
    fx = np.full((m, width), np.nan)
    fv = np.full((m, width), np.nan)
    fa = np.full((m, width), np.nan)
    fj = np.zeros((m, width))
    fx[:, : h + 1] = warm.follow_x
    fv[:, : h + 1] = warm.follow_v
    fa[:, : h + 1] = warm.follow_a
    has_lead = warm.n_lead > 0
    # with a lane-changer crash the insertion never happens
    switch = k_switch if lc_crash is None else n + d + 1

    def leader(f: int, k: int):
        """``(x, v, a, tag)`` of follower ``f``'s leader at tick ``k`` (may be negative)."""
        if f > 0:
            j = h + k
            return fx[f - 1, j], fv[f - 1, j], fa[f - 1, j], f - 1
        if k >= switch:
            return lc.x[k], lc.vx[k], lc.ax[k], "lc"
        if has_lead:
            j = h + k
            return warm.lead_x[-1, j], warm.lead_v[-1, j], warm.lead_a[-1, j], "lead"
        return None

    tags = [[None, None] for _ in range(m)]  # leader tag used at the previous and current tick
    try:
        for k in range(n + 1):
            for f in range(m):
                hv = kinds[f] == Kind.HV
                kk = k - d if hv else k
                j = h + kk
                ld = leader(f, kk)
                v, a_self = fv[f, j], fa[f, j]
                if ld is None:
                    p = cfg.lcm if hv else cfg.idm
                    if hv:
                        acc = p.max_accel * (1.0 - v / p.desired_speed)
                        jerk = -p.max_accel * a_self / p.desired_speed
                    else:
                        acc = p.max_accel * (1.0 - (v / p.desired_speed) ** p.delta)
                        jerk = -p.max_accel * p.delta * (v / p.desired_speed) ** (p.delta - 1) * acc / p.desired_speed
                    tag = None
                else:
                    lx, lv, la, tag = ld
                    spacing = lx - fx[f, j]
                    if hv:
                        acc = lcm_accel_raw(v, lv, spacing, L, cfg.lcm)
                        jerk = lcm_jerk_raw(v, a_self, lv, la, spacing, L, cfg.lcm)
                    else:
                        acc = idm_accel_raw(v, lv, spacing, L, cfg.idm)
                        jerk = idm_jerk_raw(v, acc, lv, la, spacing, L, cfg.idm)
                fa[f, h + k] = acc
                prev_tag = tags[f][1]
                tags[f] = [prev_tag, tag]
                if k > 0 and prev_tag != tag:
                    jerk = (acc - fa[f, h + k - 1]) / dt
                fj[f, h + k] = jerk
            if k < n:
                x1, v1 = ballistic(fx[:, h + k], fv[:, h + k], fa[:, h + k], dt)
                fx[:, h + k + 1], fv[:, h + k + 1] = x1, v1
    except CollisionError as exc:
        vid = warm.follower_ids[f]
        return fx, fv, fa, fj, (k, f"vehicle {vid} collided with its leader at tick {k}: {exc}", exc.depth)
    return fx, fv, fa, fj, None


# ------------------------------------------------------------------ costs


def _lc_safety(warm: WarmState, r: Rollout, k: int) -> float:
    cfg = warm.cfg
    vs = cfg.cost.v_small
    L = cfg.vehicle.length if cfg.cost.net_gap else 0.0
    x, v = r.lc_x[k], r.lc_vx[k]
    pairs = []
    ld = stage1_leader(warm, k)
    if ld is not None:
        pairs.append((v - ld[1], ld[0] - x))
    if k >= r.k_start:
        h = warm.n_hist
        if warm.n_lead:
            pairs.append((v - warm.lead_v[-1, h + k], warm.lead_x[-1, h + k] - x))
        if r.follow_x.shape[0]:
            pairs.append((r.follow_v[0, h + k] - v, x - r.follow_x[0, h + k]))
    costs = [safety_cost(dv, s - L, vs) for dv, s in pairs if s - L > 0]
    return max(costs) if costs else 0.0


def cost_breakdown(warm: WarmState, r: Rollout, violation: float) -> CostBreakdown:
    cfg = warm.cfg
    K = r.k_end
    h = warm.n_hist
    idm_v0 = cfg.idm.desired_speed
    lc_series = np.zeros((K + 1, 3))
    lc_series[:, 0] = np.abs(r.lc_jerk[: K + 1])
    lc_series[:, 1] = np.abs(r.lc_speed[: K + 1] - idm_v0)
    lc_series[:, 2] = [_lc_safety(warm, r, k) for k in range(K + 1)]

    m = r.follow_x.shape[0]
    kinds = warm.platoon_kinds[warm.n_lead :]
    L = cfg.vehicle.length if cfg.cost.net_gap else 0.0
    fs = np.zeros((m, K + 1, 3))
    for f in range(m):
        v0 = cfg.lcm.desired_speed if kinds[f] == Kind.HV else idm_v0
        cols = slice(h, h + K + 1)
        fs[f, :, 0] = np.abs(r.follow_j[f, cols])
        fs[f, :, 1] = np.abs(r.follow_v[f, cols] - v0)
        if f > 0:
            lx, lv = r.follow_x[f - 1, cols], r.follow_v[f - 1, cols]
        else:
            ks = np.arange(K + 1)
            to_lc = ks >= r.k_switch
            if warm.n_lead:
                lx = np.where(to_lc, r.lc_x[: K + 1], warm.lead_x[-1, cols])
                lv = np.where(to_lc, r.lc_vx[: K + 1], warm.lead_v[-1, cols])
            else:
                lx = np.where(to_lc, r.lc_x[: K + 1], np.inf)
                lv = np.where(to_lc, r.lc_vx[: K + 1], 0.0)
        dv = r.follow_v[f, cols] - lv
        s = lx - r.follow_x[f, cols] - L
        with np.errstate(invalid="ignore", over="ignore"):
            closing = np.where(dv >= 0, dv * dv, 0.0)
            fs[f, :, 2] = np.where(np.isfinite(s), closing + 1.0 / (s * s + cfg.cost.v_small), 0.0)
    j_lc = aggregate_jlc(lc_series, cfg.cost)
    j_tf = aggregate_jtf(fs, warm.omega, cfg.cost) if m else 0.0
    times = warm.t0 + cfg.sim_step * np.arange(K + 1)
    return CostBreakdown(lc_series, fs, warm.follower_ids, warm.omega, j_lc, j_tf, violation, times)


# ------------------------------------------------------------ constraints


def _box_violation(cand: LcCandidate, cfg: ScenarioConfig) -> float:
    lower, upper = cfg.bounds.box()
    total = 0.0
    for value, lo, hi in zip(cand.to_vector(), lower, upper):
        total += max(0.0, lo - value) / (abs(lo) or 1.0) + max(0.0, value - hi) / (abs(hi) or 1.0)
    return total


def _neighbour_poses(warm: WarmState, r: Rollout, k0: int, k1: int) -> np.ndarray:
    cfg = warm.cfg
    h = warm.n_hist
    cols = slice(h + k0, h + k1 + 1)
    ticks = k1 - k0 + 1
    xs = [warm.lead_x[i, cols] for i in range(warm.n_lead)]
    xs += [r.follow_x[i, cols] for i in range(r.follow_x.shape[0])]
    poses = np.zeros((len(xs) + 1, ticks, 3))
    for i, x in enumerate(xs):
        poses[i, :, 0] = x
        poses[i, :, 1] = cfg.lane_width
    poses[-1, :, 0] = warm.obstacle_x + cfg.incident_speed * cfg.sim_step * np.arange(k0, k1 + 1)
    return poses


def collision_violation(warm: WarmState, r: Rollout) -> float:
    """Contact count over the longest admissible maneuver rather than this candidate's own.

    Dividing by the candidate's tick count would reward stretching a colliding
    plan, which traps the search among slow, long plans.
    """
    cfg = warm.cfg
    g = cfg.vehicle
    s = slice(0, r.k_end + 1)
    lc_pose = np.stack([r.lc_x[s], r.lc_y[s], r.lc_heading[s]], axis=1)
    per_tick = clearance_violation(lc_pose, _neighbour_poses(warm, r, 0, r.k_end), g.ellipse_a, g.ellipse_b)
    b = cfg.bounds
    n_ref = max(int(round((b.t_wait_max + b.kinematic.t_lc_max) / cfg.sim_step)) + 1, r.k_end + 1)
    return per_tick * (r.k_end + 1) / n_ref


def total_violation(warm: WarmState, cand: LcCandidate, r: Rollout) -> float:
    if r.crash_tick is not None:
        remaining = (r.k_end - min(r.crash_tick, r.k_end)) / max(r.k_end, 1)
        return CRASH_PENALTY * (1.0 + remaining) + r.crash_depth
    return r.kinematic_violation + collision_violation(warm, r) + _box_violation(cand, warm.cfg)


# ------------------------------------------------------------- evaluation


def evaluate_candidate(cand: LcCandidate, warm: WarmState) -> tuple[tuple[float, float], float]:
    """``((J_LC, J_TF), violation)`` of one candidate in ideal mode."""
    r = simulate(warm, cand, "ideal")
    viol = total_violation(warm, cand, r)
    if r.crash_tick is not None:
        return (CRASH_OBJECTIVE, CRASH_OBJECTIVE), viol
    costs = cost_breakdown(warm, r, viol)
    return (costs.j_lc, costs.j_tf), viol


class Evaluator:
    """Picklable ``candidate -> (objectives, violation)`` callable."""

    def __init__(self, warm: WarmState):
        self.warm = warm

    def __call__(self, cand: LcCandidate):
        return evaluate_candidate(cand, self.warm)


# ------------------------------------------------------------------ traces


@dataclass
class SimulationTrace:
    """Per-tick states of every vehicle; ``nan`` marks ticks where a vehicle is absent."""

    times: np.ndarray
    ids: list[int]
    kinds: list[Kind]
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    jerk: np.ndarray
    heading: np.ndarray
    t0: float
    t_start: float
    t_end: float
    mode: str
    lane_width: float
    length: float = 5.0
    width: float = 2.0
    markers: dict = field(default_factory=dict)

    def index_of(self, vehicle_id: int) -> int:
        return self.ids.index(vehicle_id)

    def lane(self, i: int, k: int) -> str:
        if self.kinds[i] == Kind.AV_LC:
            return lane_of(self.y[i, k], self.lane_width).value
        return "original" if self.kinds[i] == Kind.INCIDENT else "target"

    def states_at(self, k: int):
        from .scenario import VehicleState, Lane

        out = []
        for i, vid in enumerate(self.ids):
            if np.isnan(self.x[i, k]):
                continue
            out.append(
                VehicleState(
                    vid, self.kinds[i], float(self.x[i, k]), float(self.y[i, k]), float(self.v[i, k]),
                    float(self.a[i, k]), float(self.jerk[i, k]), float(self.heading[i, k]),
                    Lane(self.lane(i, k)), self.length, self.width,
                )
            )
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "vehicle_id", "kind", "lane", "x", "y", "v", "a", "jerk"])
        for k, t in enumerate(self.times):
            for i, vid in enumerate(self.ids):
                if np.isnan(self.x[i, k]):
                    continue
                w.writerow(
                    [
                        f"{t:.1f}" if abs(t * 10 - round(t * 10)) < 1e-6 else f"{t:.6f}",
                        vid,
                        self.kinds[i].value,
                        self.lane(i, k),
                        *(f"{arr[i, k]:.6f}" for arr in (self.x, self.y, self.v, self.a, self.jerk)),
                    ]
                )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def build_trace(warm: WarmState, r: Rollout, mode: str) -> SimulationTrace:
    cfg = warm.cfg
    dt = cfg.sim_step
    h = warm.n_hist
    lead_in = int(round(cfg.lead_in / dt))
    ks = np.arange(-lead_in, r.n_ticks + 1)
    times = warm.t0 + ks * dt
    T = len(ks)
    n_veh = cfg.platoon_size + 2
    X = np.full((n_veh, T), np.nan)
    Y, V, A, J, H = (np.full((n_veh, T), np.nan) for _ in range(5))
    kinds = [Kind.AV_LC, *warm.platoon_kinds, Kind.INCIDENT]
    ids = list(range(n_veh))

    # lane changer: cruising before t0
    pre = slice(0, lead_in)
    X[0, pre] = warm.lc_x + warm.lc_v * ks[:lead_in] * dt
    Y[0, pre], V[0, pre], A[0, pre], J[0, pre], H[0, pre] = 0.0, warm.lc_v, 0.0, 0.0, 0.0
    post = slice(lead_in, T)
    X[0, post], Y[0, post] = r.lc_x, r.lc_y
    V[0, post], A[0, post] = r.lc_speed, r.lc_ax
    J[0, post], H[0, post] = r.lc_jerk, r.lc_heading

    cols = slice(h - lead_in, h + r.n_ticks + 1)
    for i in range(warm.n_lead):
        X[1 + i], V[1 + i], A[1 + i] = warm.lead_x[i, cols], warm.lead_v[i, cols], warm.lead_a[i, cols]
        J[1 + i] = np.concatenate([[0.0], np.diff(A[1 + i]) / dt])
    for f in range(r.follow_x.shape[0]):
        row = 1 + warm.n_lead + f
        X[row], V[row], A[row], J[row] = (arr[f, cols] for arr in (r.follow_x, r.follow_v, r.follow_a, r.follow_j))
    Y[1 : cfg.platoon_size + 1] = cfg.lane_width
    H[1 : cfg.platoon_size + 1] = 0.0

    ob = cfg.platoon_size + 1
    X[ob, post] = warm.obstacle_x + cfg.incident_speed * dt * np.arange(r.n_ticks + 1)
    Y[ob, post], V[ob, post], A[ob, post], J[ob, post], H[ob, post] = 0.0, cfg.incident_speed, 0.0, 0.0, 0.0

    return SimulationTrace(
        times=times,
        ids=ids,
        kinds=kinds,
        x=X,
        y=Y,
        v=V,
        a=A,
        jerk=J,
        heading=H,
        t0=warm.t0,
        t_start=warm.t0 + r.k_start * dt,
        t_end=warm.t0 + r.k_end * dt,
        mode=mode,
        lane_width=cfg.lane_width,
        length=cfg.vehicle.length,
        width=cfg.vehicle.width,
    )


@dataclass
class FinalRun:
    trace: SimulationTrace
    costs: CostBreakdown
    rollout: Rollout


def run_final(cand: LcCandidate, warm: WarmState, mode: str = "ideal") -> FinalRun:
    """Full replay with lead-in and tail windows.

    Raises :class:`TrackingError` in tracked mode when the controller diverges.
    """
    cfg = warm.cfg
    dt = cfg.sim_step
    k_start, k_end = _schedule(cand, dt)
    until = max(k_end + int(round(cfg.tail / dt)), warm.region_end_tick())
    r = simulate(warm, cand, mode, until=until)
    viol = total_violation(warm, cand, r)
    costs = cost_breakdown(warm, r, viol)
    return FinalRun(build_trace(warm, r, mode), costs, r)


def existing_algorithm_baseline(front: ParetoFront) -> Individual:
    """Leftmost front point (least lane-changer cost); ties go to lower J_TF."""
    if not front.members:
        raise ValueError("empty Pareto front")
    return min(front.members, key=lambda m: (m.objectives[0], m.objectives[1]))


__all__ = [
    "CRASH_PENALTY",
    "Evaluator",
    "FinalRun",
    "LcCandidate",
    "Rollout",
    "SimulationTrace",
    "TrackingError",
    "WarmState",
    "build_trace",
    "cost_breakdown",
    "decision_space",
    "evaluate_candidate",
    "existing_algorithm_baseline",
    "prepare",
    "run_final",
    "simulate",
]

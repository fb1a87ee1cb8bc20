"""Kinematic bicycle model and receding-horizon tracking of a planned path.

The controller works on the error dynamics of the bicycle model linearized
about the reference (first-order discretization).  The quadratic objective
over the prediction horizon is condensed onto the stacked input increments
and solved with a clamp-and-resolve loop for the box bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .trajectory import QuinticPair, TrajectorySample


class TrackingError(RuntimeError):
    def __init__(self, message: str, tick: int | None = None):
        super().__init__(message)
        self.tick = tick


@dataclass(frozen=True)
class KinematicState:
    x: float
    y: float
    phi: float
    v: float  # rear-axle speed
    delta: float  # front steering angle
    wheelbase: float = 2.7


@dataclass(frozen=True)
class ErrorModel:
    A: np.ndarray
    B: np.ndarray
    reference: tuple[float, float, float, float, float]
    T: float


@dataclass(frozen=True)
class MpcConfig:
    horizon_p: int = 20
    horizon_c: int = 5
    q: tuple[float, float, float] = (10.0, 10.0, 1.0)
    r: tuple[float, float] = (0.1, 0.1)
    rho: float = 100.0
    du_min: tuple[float, float] = (-0.8, -0.05)
    du_max: tuple[float, float] = (0.8, 0.05)
    u_min: tuple[float, float] = (0.0, -0.5)
    u_max: tuple[float, float] = (40.0, 0.5)
    max_iter: int = 20
    divergence: float = 5.0

    def validate(self) -> None:
        if self.horizon_p < 1 or self.horizon_c < 1 or self.horizon_c > self.horizon_p:
            raise ValueError("mpc horizons must satisfy 1 <= horizon_c <= horizon_p")
        if min(self.q) < 0 or min(self.r) < 0 or self.rho < 0:
            raise ValueError("mpc weights must be non-negative")
        for lo, hi in (*zip(self.du_min, self.du_max), *zip(self.u_min, self.u_max)):
            if lo > hi:
                raise ValueError("mpc bound pair with min > max")


def _rhs(phi: float, v: float, delta: float, wheelbase: float) -> tuple[float, float, float]:
    return v * math.cos(phi), v * math.sin(phi), v * math.tan(delta) / wheelbase


def step_kinematics(s: KinematicState, dt: float) -> KinematicState:
    """Classic RK4 step with the inputs held constant over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if abs(s.delta) >= math.pi / 2:
        raise ValueError(f"steering angle {s.delta} is outside (-pi/2, pi/2)")
    L = s.wheelbase
    k1 = _rhs(s.phi, s.v, s.delta, L)
    k2 = _rhs(s.phi + 0.5 * dt * k1[2], s.v, s.delta, L)
    k3 = _rhs(s.phi + 0.5 * dt * k2[2], s.v, s.delta, L)
    k4 = _rhs(s.phi + dt * k3[2], s.v, s.delta, L)
    inc = [dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(3)]
    return replace(s, x=s.x + inc[0], y=s.y + inc[1], phi=s.phi + inc[2])


def linearize_error_model(reference, wheelbase: float, T: float) -> ErrorModel:
    """Error model ``e(k+1) = A e(k) + B u~(k)`` about ``(x_r, y_r, phi_r, v_r, delta_r)``."""
    if T < 0:
        raise ValueError("sampling time must be >= 0")
    _, _, phi, v, delta = reference
    if abs(delta) >= math.pi / 2:
        raise ValueError(f"reference steering {delta} is outside (-pi/2, pi/2)")
    A = np.array(
        [
            [1.0, 0.0, -v * math.sin(phi) * T],
            [0.0, 1.0, v * math.cos(phi) * T],
            [0.0, 0.0, 1.0],
        ]
    )
    B = np.array(
        [
            [math.cos(phi) * T, 0.0],
            [math.sin(phi) * T, 0.0],
            [math.tan(delta) * T / wheelbase, v * T / (wheelbase * math.cos(delta) ** 2)],
        ]
    )
    return ErrorModel(A, B, tuple(float(r) for r in reference), float(T))


def reference_from_sample(s: TrajectorySample, wheelbase: float) -> tuple[float, float, float, float, float]:
    speed = math.hypot(s.vx, s.vy)
    if speed > 1e-9:
        curvature = (s.vx * s.ay - s.vy * s.ax) / speed**3
    else:
        curvature = 0.0
    return (s.x, s.y, math.atan2(s.vy, s.vx), speed, math.atan(wheelbase * curvature))


@dataclass
class CondensedProblem:
    """``min ||Psi e0 + Gam u_prev + Theta dU||_Q^2 + ||dU||_R^2`` pieces."""

    H: np.ndarray
    g: np.ndarray
    Theta: np.ndarray
    free_response: np.ndarray
    Qbar: np.ndarray
    Rbar: np.ndarray


def condense(error0: np.ndarray, u_prev: np.ndarray, refs: list, cfg: MpcConfig, wheelbase: float, T: float):
    Np, Nc = cfg.horizon_p, cfg.horizon_c
    models = [linearize_error_model(r, wheelbase, T) for r in refs[:Np]]
    # propagate the free response and the sensitivity to each increment
    Theta = np.zeros((3 * Np, 2 * Nc))
    free = np.zeros(3 * Np)
    e = np.asarray(error0, dtype=float)
    sens = np.zeros((3, 2 * Nc))
    for j, m in enumerate(models):
        e = m.A @ e + m.B @ u_prev
        step_in = np.zeros((2, 2 * Nc))
        for i in range(min(j, Nc - 1) + 1):
            step_in[:, 2 * i : 2 * i + 2] = np.eye(2)
        sens = m.A @ sens + m.B @ step_in
        free[3 * j : 3 * j + 3] = e
        Theta[3 * j : 3 * j + 3] = sens
    Qbar = np.kron(np.eye(Np), np.diag(cfg.q))
    Rbar = np.kron(np.eye(Nc), np.diag(cfg.r))
    H = Theta.T @ Qbar @ Theta + Rbar
    g = Theta.T @ Qbar @ free
    return CondensedProblem(H, g, Theta, free, Qbar, Rbar)


def _clamp_resolve(H: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray, max_iter: int) -> np.ndarray:
    n = len(g)
    fixed = np.zeros(n, dtype=bool)
    x = np.zeros(n)
    for _ in range(max_iter):
        free = ~fixed
        x_free = np.zeros(n)
        x_free[fixed] = x[fixed]
        if free.any():
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ x[fixed])
            x_free[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        x = x_free
        below, above = (x < lo) & free, (x > hi) & free
        if not (below.any() or above.any()):
            break
        x[below], x[above] = lo[below], hi[above]
        fixed |= below | above
    return np.clip(x, lo, hi)


def mpc_step(
    current: KinematicState,
    reference_window: list[TrajectorySample],
    cfg: MpcConfig,
    dt: float | None = None,
) -> tuple[np.ndarray, float]:
    """First optimal input increment ``(dv, ddelta)`` and the input-limit relaxation.

    The relaxation is the smallest widening of the absolute input limits that
    the chosen increment sequence needs; it is zero whenever the limits hold.
    """
    if len(reference_window) < cfg.horizon_p + 1:
        raise ValueError(
            f"reference window has {len(reference_window)} samples, need {cfg.horizon_p + 1}"
        )
    T = dt if dt is not None else reference_window[1].t - reference_window[0].t
    L = current.wheelbase
    refs = [reference_from_sample(s, L) for s in reference_window]
    r0 = refs[0]
    error0 = np.array([current.x - r0[0], current.y - r0[1], _wrap(current.phi - r0[2])])
    u_prev = np.array([current.v - r0[3], current.delta - r0[4]])
    prob = condense(error0, u_prev, refs, cfg, L, T)
    Nc = cfg.horizon_c
    lo = np.tile(cfg.du_min, Nc)
    hi = np.tile(cfg.du_max, Nc)
    dU = _clamp_resolve(prob.H, prob.g, lo, hi, cfg.max_iter)
    # absolute inputs along the control horizon
    u_abs = np.array(
        [u_prev + dU.reshape(Nc, 2)[: i + 1].sum(axis=0) + np.array(refs[i][3:]) for i in range(Nc)]
    )
    span = np.maximum(np.array(cfg.u_max) - np.array(cfg.u_min), 1e-9)
    excess = np.maximum(u_abs - np.array(cfg.u_max), 0.0) + np.maximum(np.array(cfg.u_min) - u_abs, 0.0)
    eps = float(np.max(excess / span)) if excess.size else 0.0
    return dU[:2].copy(), eps


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


@dataclass
class TrackingResult:
    states: list[KinematicState]
    times: np.ndarray
    position_error: np.ndarray
    lateral_error: np.ndarray
    relaxation: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.position_error**2)))

    @property
    def lateral_rms(self) -> float:
        return float(np.sqrt(np.mean(self.lateral_error**2)))


def _extended_reference(plan: QuinticPair, dt: float, n_ticks: int, horizon: int) -> list[TrajectorySample]:
    """Plan samples, continued past ``t_end`` at the final speed in a straight line."""
    times = plan.t_start + dt * np.arange(n_ticks + horizon + 1)
    inside = np.minimum(times, plan.t_end)
    arr = plan.evaluate(inside)
    beyond = times - plan.t_end
    mask = beyond > 0
    arr["x"] = np.where(mask, arr["x"] + arr["vx"] * beyond, arr["x"])
    arr["y"] = np.where(mask, arr["y"] + arr["vy"] * beyond, arr["y"])
    for k in ("ax", "ay", "jx", "jy"):
        arr[k] = np.where(mask, 0.0, arr[k])
    arr["t"] = times
    keys = ("t", "x", "y", "vx", "vy", "ax", "ay", "jx", "jy", "theta")
    return [TrajectorySample(*(float(arr[k][i]) for k in keys)) for i in range(len(times))]


def track_trajectory(
    plan: QuinticPair, cfg: MpcConfig, dt: float, wheelbase: float = 2.7
) -> TrackingResult:
    """Closed-loop rollout from the plan's start state to its end time."""
    cfg.validate()
    n_ticks = int(round(plan.duration / dt))
    ref = _extended_reference(plan, dt, n_ticks, cfg.horizon_p)
    x0, y0, phi0, v0, d0 = reference_from_sample(ref[0], wheelbase)
    state = KinematicState(x0, y0, phi0, v0, d0, wheelbase)
    states = [state]
    pos_err = [0.0]
    lat_err = [0.0]
    relax = []
    for k in range(n_ticks):
        window = ref[k : k + cfg.horizon_p + 1]
        du, eps = mpc_step(state, window, cfg, dt)
        r = reference_from_sample(ref[k], wheelbase)
        # increments act on the deviation from the reference input
        u_dev = np.array([state.v - r[3], state.delta - r[4]]) + du
        u = np.clip(np.array(r[3:]) + u_dev, cfg.u_min, cfg.u_max)
        state = step_kinematics(replace(state, v=float(u[0]), delta=float(u[1])), dt)
        nxt = ref[k + 1]
        err = math.hypot(state.x - nxt.x, state.y - nxt.y)
        states.append(state)
        pos_err.append(err)
        lat_err.append(state.y - nxt.y)
        relax.append(eps)
        if err > cfg.divergence:
            raise TrackingError(f"tracking diverged: position error {err:.2f} m at tick {k + 1}", k + 1)
    return TrackingResult(
        states=states,
        times=np.array([s.t for s in ref[: n_ticks + 1]]),
        position_error=np.array(pos_err),
        lateral_error=np.array(lat_err),
        relaxation=np.array(relax),
    )


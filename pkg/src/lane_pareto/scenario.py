"""Experiment configuration, mixed platoon generation and warm-up.

The target lane carries ``platoon_size`` vehicles ordered front to rear
(ids ``1..N``).  The lane changer (id 0) starts on the original lane
``lc_initial_gap`` metres ahead of vehicle ``insertion_index + 1``, the
immediate follower of the gap it will enter.  The stopped incident vehicle
(id ``N + 1``) sits ``incident_distance`` ahead of it on the original lane.

Lateral coordinates: the original lane centre is ``y = 0`` and the target
lane centre is ``y = lane_width``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .cf_models import (
    CollisionError,
    IdmParams,
    LcmParams,
    idm_accel_raw,
    idm_equilibrium_spacing,
    lcm_equilibrium_spacing,
)
from .cost import CostWeights
from .nsga2 import NsgaParams
from .tracking import MpcConfig
from .trajectory import KinematicBounds


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class WarmupError(RuntimeError):
    def __init__(self, residual: float, message: str):
        super().__init__(message)
        self.residual = residual


class Kind(str, enum.Enum):
    HV = "HV"
    AV = "AV"
    AV_LC = "AV_LC"
    INCIDENT = "INCIDENT"


class Lane(str, enum.Enum):
    ORIGINAL = "original"
    TARGET = "target"
    TRANSITION = "transition"


@dataclass(frozen=True)
class VehicleState:
    id: int
    kind: Kind
    x: float
    y: float
    v: float
    a: float = 0.0
    jerk: float = 0.0
    heading: float = 0.0
    lane: Lane = Lane.TARGET
    length: float = 5.0
    width: float = 2.0


def lane_of(y: float, lane_width: float, tol: float = 1e-9) -> Lane:
    if y <= tol:
        return Lane.ORIGINAL
    if y >= lane_width - tol:
        return Lane.TARGET
    return Lane.TRANSITION


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class VehicleGeometry:
    length: float = 5.0
    width: float = 2.0
    ellipse_a: float = 2.5
    ellipse_b: float = 1.0
    wheelbase: float = 2.7


@dataclass(frozen=True)
class DecisionBounds:
    """Kinematic limits plus the box of the five decision variables."""

    kinematic: KinematicBounds = field(default_factory=KinematicBounds)
    t_wait_max: float = 10.0
    a_end_min: float = -2.0
    a_end_max: float = 2.0

    def box(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        k = self.kinematic
        lower = (0.0, k.t_lc_min, k.x_lc_min, k.v_min, self.a_end_min)
        upper = (self.t_wait_max, k.t_lc_max, k.x_lc_max, k.v_max, self.a_end_max)
        return lower, upper


@dataclass(frozen=True)
class EdieRegionConfig:
    length: float = 500.0
    duration: float = 15.0
    x_start: float | None = None  # default: 0.2 * length behind the lane changer at t0
    t_start: float | None = None  # default: t0


@dataclass(frozen=True)
class ScenarioConfig:
    platoon_size: int
    penetration_ratio: float
    lc_initial_speed: float
    lc_initial_gap: float
    sim_step: float = 0.1
    warmup_duration: float = 300.0
    platoon_speed: float = 25.0
    insertion_index: int = 10
    av_pattern: str = "alternating"
    seed: int = 0
    lane_width: float = 3.5
    incident_distance: float = 100.0
    incident_speed: float = 0.0
    initial_spacing: float | None = None
    retarget_trigger: str = "start"
    stage1_leader: str = "target"
    lead_in: float = 2.0
    tail: float = 10.0
    vehicle: VehicleGeometry = field(default_factory=VehicleGeometry)
    cost: CostWeights = field(default_factory=CostWeights)
    bounds: DecisionBounds = field(default_factory=DecisionBounds)
    lcm: LcmParams = field(default_factory=LcmParams)
    idm: IdmParams = field(default_factory=IdmParams)
    nsga: NsgaParams = field(default_factory=NsgaParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    edie_region: EdieRegionConfig = field(default_factory=EdieRegionConfig)

    @property
    def delay_ticks(self) -> int:
        return int(round(self.lcm.reaction_time / self.sim_step))

    def with_overrides(self, **changes) -> "ScenarioConfig":
        raw = config_to_dict(self)
        for key, value in changes.items():
            raw[key] = value
        return build_scenario(raw)


REQUIRED = ("platoon_size", "penetration_ratio", "lc_initial_speed", "lc_initial_gap")

_NESTED = {
    "vehicle": VehicleGeometry,
    "lcm": LcmParams,
    "idm": IdmParams,
    "mpc": MpcConfig,
    "edie_region": EdieRegionConfig,
}


def _build_plain(cls, raw: Mapping[str, Any] | None, prefix: str):
    raw = dict(raw or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown key")
    kwargs = {}
    for name, value in raw.items():
        if value is None:
            kwargs[name] = None
            continue
        default = names[name].default
        try:
            if isinstance(default, tuple):
                kwargs[name] = tuple(float(v) for v in value)
                if len(kwargs[name]) != len(default):
                    raise ConfigError(f"{prefix}.{name}", f"expected {len(default)} values")
            elif isinstance(default, bool):
                kwargs[name] = bool(value)
            elif isinstance(default, int) and not isinstance(default, bool):
                if float(value) != int(value):
                    raise ConfigError(f"{prefix}.{name}", f"expected an integer, got {value!r}")
                kwargs[name] = int(value)
            else:
                kwargs[name] = float(value)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{prefix}.{name}", f"bad value {value!r}") from exc
    return cls(**kwargs)


def _build_cost(raw: Mapping[str, Any] | None) -> CostWeights:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - {"weights", "normalizers", "v_small", "net_gap"})
    if unknown:
        raise ConfigError(f"cost.{unknown[0]}", "unknown key")
    kwargs: dict[str, Any] = {}
    weights = raw.get("weights") or {}
    for key in weights:
        if key not in ("comfort", "efficiency", "safety"):
            raise ConfigError(f"cost.weights.{key}", "unknown key")
        kwargs[key] = float(weights[key])
    for key, value in (raw.get("normalizers") or {}).items():
        if key not in ("comfort", "efficiency", "safety"):
            raise ConfigError(f"cost.normalizers.{key}", "unknown key")
        kwargs[f"n_{key}"] = float(value)
    if "v_small" in raw:
        kwargs["v_small"] = float(raw["v_small"])
    if "net_gap" in raw:
        kwargs["net_gap"] = bool(raw["net_gap"])
    out = CostWeights(**kwargs)
    for name in ("n_comfort", "n_efficiency", "n_safety"):
        if not getattr(out, name) > 0:
            raise ConfigError(f"cost.normalizers.{name[2:]}", "must be > 0")
    if not out.v_small > 0:
        raise ConfigError("cost.v_small", "must be > 0")
    ws = (out.comfort, out.efficiency, out.safety)
    if min(ws) < 0 or sum(ws) <= 0:
        raise ConfigError("cost.weights", "weights must be >= 0 with a positive sum")
    return out


_BOUND_PAIRS = (
    ("v_min", "v_max"),
    ("a_min", "a_max"),
    ("j_min", "j_max"),
    ("t_lc_min", "t_lc_max"),
    ("x_lc_min", "x_lc_max"),
)


def _build_bounds(raw: Mapping[str, Any] | None) -> DecisionBounds:
    raw = dict(raw or {})
    extra = {k: raw.pop(k) for k in ("t_wait_max", "a_end_min", "a_end_max") if k in raw}
    kin = _build_plain(KinematicBounds, raw, "bounds")
    out = _build_plain(DecisionBounds, extra, "bounds")
    out = dataclasses.replace(out, kinematic=kin)
    for lo, hi in _BOUND_PAIRS:
        if getattr(kin, lo) > getattr(kin, hi):
            raise ConfigError(f"bounds.{lo}/{hi}", f"{lo}={getattr(kin, lo)} > {hi}={getattr(kin, hi)}")
    if out.a_end_min > out.a_end_max:
        raise ConfigError("bounds.a_end_min/a_end_max", "min > max")
    if out.t_wait_max < 0:
        raise ConfigError("bounds.t_wait_max", "must be >= 0")
    if kin.t_lc_min <= 0:
        raise ConfigError("bounds.t_lc_min", "must be > 0")
    return out


def build_scenario(raw_config: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a parsed config document and fill in defaults."""
    if not isinstance(raw_config, Mapping):
        raise ConfigError("<root>", "config document must be a mapping")
    raw = dict(raw_config)
    for key in REQUIRED:
        if raw.get(key) is None:
            raise ConfigError(key, "required key is missing")
    top = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(raw) - set(top))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    nested: dict[str, Any] = {}
    try:
        for key, cls in _NESTED.items():
            nested[key] = _build_plain(cls, raw.pop(key, None), key)
        nested["cost"] = _build_cost(raw.pop("cost", None))
        nested["bounds"] = _build_bounds(raw.pop("bounds", None))
        nsga_raw = dict(raw.pop("nsga", None) or {})
        if "seed" in nsga_raw:
            raise ConfigError("nsga.seed", "use the top-level seed")
        nested["nsga"] = _build_plain(NsgaParams, nsga_raw, "nsga")
    except TypeError as exc:
        raise ConfigError("<nested>", str(exc)) from exc

    scalars: dict[str, Any] = {}
    for key, value in raw.items():
        if key in ("av_pattern", "retarget_trigger", "stage1_leader"):
            scalars[key] = str(value)
        elif key in ("platoon_size", "insertion_index", "seed"):
            try:
                if float(value) != int(value):
                    raise ValueError
                scalars[key] = int(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"expected an integer, got {value!r}") from exc
        elif value is None:
            scalars[key] = None
        else:
            try:
                scalars[key] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"expected a number, got {value!r}") from exc

    cfg = ScenarioConfig(**scalars, **nested)
    cfg = dataclasses.replace(cfg, nsga=dataclasses.replace(cfg.nsga, seed=cfg.seed))
    _validate(cfg)
    return cfg


def _positive(cfg, name):
    if not getattr(cfg, name) > 0:
        raise ConfigError(name, f"must be > 0, got {getattr(cfg, name)}")


def _validate(cfg: ScenarioConfig) -> None:
    for name in ("sim_step", "lane_width", "incident_distance", "platoon_speed", "lc_initial_gap"):
        _positive(cfg, name)
    for name in ("warmup_duration", "lead_in", "tail", "lc_initial_speed", "incident_speed"):
        if getattr(cfg, name) < 0:
            raise ConfigError(name, "must be >= 0")
    if not 0.0 <= cfg.penetration_ratio <= 1.0:
        raise ConfigError("penetration_ratio", f"must lie in [0, 1], got {cfg.penetration_ratio}")
    if cfg.platoon_size < 1:
        raise ConfigError("platoon_size", "must be >= 1")
    if not 0 <= cfg.insertion_index < cfg.platoon_size:
        raise ConfigError("insertion_index", f"must lie in [0, {cfg.platoon_size - 1}]")
    if cfg.av_pattern not in ("alternating", "random"):
        raise ConfigError("av_pattern", "must be 'alternating' or 'random'")
    if cfg.retarget_trigger not in ("start", "crossing"):
        raise ConfigError("retarget_trigger", "must be 'start' or 'crossing'")
    if cfg.stage1_leader not in ("target", "incident"):
        raise ConfigError("stage1_leader", "must be 'target' or 'incident'")
    if cfg.initial_spacing is not None and not cfg.initial_spacing > cfg.vehicle.length:
        raise ConfigError("initial_spacing", "must exceed the vehicle length")
    g = cfg.vehicle
    for name in ("length", "width", "ellipse_a", "ellipse_b", "wheelbase"):
        if not getattr(g, name) > 0:
            raise ConfigError(f"vehicle.{name}", "must be > 0")
    for prefix, params in (("lcm", cfg.lcm), ("idm", cfg.idm), ("nsga", cfg.nsga), ("mpc", cfg.mpc)):
        try:
            params.validate()
        except ValueError as exc:
            raise ConfigError(prefix, str(exc)) from exc
    e = cfg.edie_region
    if not (e.length > 0 and e.duration > 0):
        raise ConfigError("edie_region", "length and duration must be > 0")
    for model, params in (("lcm", cfg.lcm), ("idm", cfg.idm)):
        if cfg.platoon_speed >= params.desired_speed:
            raise ConfigError(
                f"{model}.desired_speed",
                f"platoon_speed {cfg.platoon_speed} has no car-following equilibrium "
                f"below desired speed {params.desired_speed}",
            )


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--scenario", str(exc)) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("--scenario", f"document does not parse: {exc}") from exc
    return build_scenario(raw or {})


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    """Inverse of :func:`build_scenario` (round-trips exactly)."""
    out: dict[str, Any] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "cost":
            out["cost"] = {
                "weights": {"comfort": value.comfort, "efficiency": value.efficiency, "safety": value.safety},
                "normalizers": {
                    "comfort": value.n_comfort,
                    "efficiency": value.n_efficiency,
                    "safety": value.n_safety,
                },
                "v_small": value.v_small,
                "net_gap": value.net_gap,
            }
        elif f.name == "bounds":
            out["bounds"] = {
                **dataclasses.asdict(value.kinematic),
                "t_wait_max": value.t_wait_max,
                "a_end_min": value.a_end_min,
                "a_end_max": value.a_end_max,
            }
        elif f.name == "nsga":
            d = dataclasses.asdict(value)
            d.pop("seed")
            out["nsga"] = d
        elif dataclasses.is_dataclass(value):
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(value).items()}
        else:
            out[f.name] = value
    return out


# --------------------------------------------------------------- platoon


def assign_kinds(cfg: ScenarioConfig) -> list[Kind]:
    """Vehicle kinds front to rear.

    ``alternating`` spreads the AVs as evenly as possible: vehicle ``i``
    (1-based) is an AV when ``ceil(i r)`` steps up, which gives AV, HV, AV, ...
    at ``r = 0.5``.  ``random`` draws ``round(r n)`` AV positions from the seed.
    """
    n, r = cfg.platoon_size, cfg.penetration_ratio
    if cfg.av_pattern == "random":
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
        av = set(rng.choice(n, size=int(round(r * n)), replace=False).tolist())
        return [Kind.AV if i in av else Kind.HV for i in range(n)]
    eps = 1e-12
    return [
        Kind.AV if math.ceil(i * r - eps) > math.ceil((i - 1) * r - eps) else Kind.HV
        for i in range(1, n + 1)
    ]


def equilibrium_spacing(kind: Kind, v: float, cfg: ScenarioConfig) -> float:
    if kind == Kind.HV:
        return lcm_equilibrium_spacing(v, cfg.lcm, cfg.vehicle.length)
    return idm_equilibrium_spacing(v, cfg.idm, cfg.vehicle.length)


def spawn_platoon(cfg: ScenarioConfig) -> list[VehicleState]:
    """Target-lane platoon front to rear, the head at ``x = 0``."""
    kinds = assign_kinds(cfg)
    g = cfg.vehicle
    out = []
    x = 0.0
    for i, kind in enumerate(kinds):
        if i > 0:
            gap = cfg.initial_spacing or equilibrium_spacing(kind, cfg.platoon_speed, cfg)
            x -= gap
        out.append(
            VehicleState(
                id=i + 1,
                kind=kind,
                x=x,
                y=cfg.lane_width,
                v=cfg.platoon_speed,
                lane=Lane.TARGET,
                length=g.length,
                width=g.width,
            )
        )
    return out


def place_lane_changer(platoon: list[VehicleState], cfg: ScenarioConfig) -> tuple[VehicleState, VehicleState]:
    """Lane changer and the stopped incident vehicle at t0."""
    g = cfg.vehicle
    follower = platoon[cfg.insertion_index]
    x_lc = follower.x + cfg.lc_initial_gap
    x_obs = x_lc + cfg.incident_distance
    v = cfg.lc_initial_speed
    if cfg.stage1_leader == "incident":
        a0 = idm_accel_raw(v, cfg.incident_speed, cfg.incident_distance, g.length, cfg.idm)
    elif cfg.insertion_index > 0:
        leader = platoon[cfg.insertion_index - 1]
        a0 = idm_accel_raw(v, leader.v, leader.x - x_lc, g.length, cfg.idm)
    else:
        a0 = cfg.idm.max_accel * (1.0 - (v / cfg.idm.desired_speed) ** cfg.idm.delta)
    lc = VehicleState(0, Kind.AV_LC, x_lc, 0.0, cfg.lc_initial_speed, a0, 0.0, 0.0, Lane.ORIGINAL, g.length, g.width)
    obstacle = VehicleState(
        cfg.platoon_size + 1, Kind.INCIDENT, x_obs, 0.0, cfg.incident_speed, 0.0, 0.0, 0.0, Lane.ORIGINAL,
        g.length, g.width,
    )
    return lc, obstacle


# ---------------------------------------------------------------- warm-up


def ballistic(x: np.ndarray, v: np.ndarray, a: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-acceleration update that stops a vehicle instead of reversing it."""
    v_new = v + a * dt
    x_new = x + v * dt + 0.5 * a * dt * dt
    stop = v_new < 0.0
    if np.any(stop):
        t_stop = np.where(stop, -v / np.where(a < 0, a, -1.0), dt)
        x_new = np.where(stop, x + v * t_stop + 0.5 * a * t_stop * t_stop, x_new)
        v_new = np.where(stop, 0.0, v_new)
    return x_new, v_new


def platoon_accel(x: np.ndarray, v: np.ndarray, is_hv: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Car-following accelerations of vehicles ``1..N-1`` behind their predecessors (vectorized)."""
    L = cfg.vehicle.length
    spacing = x[:-1] - x[1:]
    if np.any(spacing <= L):
        raise CollisionError("platoon vehicles overlap")
    vf, vl = v[1:], v[:-1]
    ip = cfg.idm
    s_star = ip.jam_gap + vf * ip.headway + vf * (vf - vl) / (2.0 * math.sqrt(ip.max_accel * ip.comfort_decel))
    if ip.s1:
        s_star = s_star + ip.s1 * np.sqrt(np.maximum(vf, 0.0) / ip.desired_speed)
    s_star = np.maximum(s_star, 0.0)
    a_idm = ip.max_accel * (1.0 - (vf / ip.desired_speed) ** ip.delta - (s_star / (spacing - L)) ** 2)
    lp = cfg.lcm
    s_lcm = vf * vf / (2 * lp.decel_self) - vl * vl / (2 * lp.decel_leader) + vf * lp.reaction_time + L
    s_lcm = np.maximum(s_lcm, 1e-6)
    a_lcm = lp.max_accel * (1.0 - vf / lp.desired_speed - np.exp(1.0 - spacing / s_lcm))
    return np.where(is_hv[1:], a_lcm, a_idm)


def roll_platoon(xs: list, vs: list, as_: list, is_hv: np.ndarray, n_ticks: int, cfg: ScenarioConfig) -> None:
    """Advance a platoon ``n_ticks`` in place; the head keeps its speed.

    ``xs``, ``vs``, ``as_`` are per-tick arrays, oldest first; the last entry
    is the current state, whose acceleration is (re)computed here.  HVs react
    to the state ``delay_ticks`` earlier, the oldest entry standing in for
    anything before it.
    """
    dt, d = cfg.sim_step, cfg.delay_ticks
    n = len(is_hv)

    def accel():
        k = len(xs) - 1
        out = np.zeros(n)
        if n > 1:
            a_now = platoon_accel(xs[k], vs[k], is_hv, cfg)
            if d and is_hv[1:].any():
                j = max(k - d, 0)
                out[1:] = np.where(is_hv[1:], platoon_accel(xs[j], vs[j], is_hv, cfg), a_now)
            else:
                out[1:] = a_now
        return out

    as_[-1] = accel()
    for _ in range(n_ticks):
        x, v = ballistic(xs[-1], vs[-1], as_[-1], dt)
        xs.append(x)
        vs.append(v)
        as_.append(None)
        as_[-1] = accel()


@dataclass(frozen=True)
class WarmupResult:
    states: list[VehicleState]
    t0: float
    # per-tick history of the last ticks, shape (H + 1, N), oldest first
    x_hist: np.ndarray
    v_hist: np.ndarray
    a_hist: np.ndarray


def warm_up(platoon: list[VehicleState], cfg: ScenarioConfig, history: int | None = None) -> WarmupResult:
    """Run the platoon with its head at constant speed for ``warmup_duration``."""
    dt = cfg.sim_step
    n_ticks = int(round(cfg.warmup_duration / dt))
    d = cfg.delay_ticks
    keep = max(history if history is not None else 0, d, int(round(cfg.lead_in / dt))) + 1
    is_hv = np.array([p.kind == Kind.HV for p in platoon])
    x = np.array([p.x for p in platoon], dtype=float)
    v = np.array([p.v for p in platoon], dtype=float)
    a = np.array([p.a for p in platoon], dtype=float)
    n = len(platoon)
    xs, vs, as_ = [x.copy()], [v.copy()], [a.copy()]
    roll_platoon(xs, vs, as_, is_hv, n_ticks, cfg)
    x_h = np.array(xs[-keep:])
    v_h = np.array(vs[-keep:])
    a_h = np.array(as_[-keep:])
    if x_h.shape[0] < keep:
        pad = keep - x_h.shape[0]
        # before the warm-up started the platoon is assumed to cruise unchanged
        back = (np.arange(pad, 0, -1) * dt)[:, None]
        x_h = np.vstack([x_h[:1] - back * v_h[:1], x_h])
        v_h = np.vstack([np.repeat(v_h[:1], pad, 0), v_h])
        a_h = np.vstack([np.zeros((pad, n)), a_h])
    jerk = (a_h[-1] - a_h[-2]) / dt
    states = [
        dataclasses.replace(p, x=float(x_h[-1, i]), v=float(v_h[-1, i]), a=float(a_h[-1, i]), jerk=float(jerk[i]))
        for i, p in enumerate(platoon)
    ]
    t0 = cfg.warmup_duration
    res = WarmupResult(states, t0, x_h, v_h, a_h)
    _check_converged(res, cfg)
    return res


def _check_converged(res: WarmupResult, cfg: ScenarioConfig) -> None:
    states = res.states
    if len(states) < 2:
        return
    v_head = states[0].v
    worst_a = max(abs(s.a) for s in states[1:])
    worst_v = max(abs(s.v - v_head) for s in states[1:])
    if worst_a > 1e-3 or worst_v > 1e-2:
        raise WarmupError(
            max(worst_a, worst_v),
            f"warm-up did not converge within {cfg.warmup_duration} s: "
            f"worst |a| = {worst_a:.3g} m/s^2, worst speed offset = {worst_v:.3g} m/s",
        )


def run_warmup(platoon: list[VehicleState], cfg: ScenarioConfig) -> list[VehicleState]:
    """Converged platoon state at the decision time t0."""
    return warm_up(platoon, cfg).states

"""Longitudinal car-following models.

Human-driven vehicles use the field-theory Longitudinal Control Model (LCM),
automated vehicles use the Intelligent Driver Model (IDM).  Spacing ``s`` is
always the gross (front-to-front) distance to the leader; the IDM subtracts
the leader length internally.

The scalar ``*_raw`` functions are the hot path used by the simulation engine;
the ``VehicleState`` wrappers are the public surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Floor for the desired spacing.  Both models reach their free-flow limit as
# the desired spacing tends to zero, so clipping there keeps them well defined
# when the leader is much faster than the follower.
_S_STAR_FLOOR = 1e-6


class CollisionError(RuntimeError):
    """Raised when a follower reaches or overlaps its leader.

    ``depth`` is how far (m) the gap has gone below zero.
    """

    def __init__(self, message: str, depth: float = 0.0):
        super().__init__(message)
        self.depth = depth


@dataclass(frozen=True)
class LcmParams:
    max_accel: float = 1.2  # A
    decel_self: float = 4.0  # b, follower's confident emergency deceleration
    decel_leader: float = 4.0  # B, estimate of the leader's emergency deceleration
    reaction_time: float = 1.0  # tau
    desired_speed: float = 33.33

    def validate(self) -> None:
        for name in ("max_accel", "decel_self", "decel_leader", "reaction_time", "desired_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"lcm.{name} must be > 0")


@dataclass(frozen=True)
class IdmParams:
    max_accel: float = 1.0  # A
    comfort_decel: float = 1.5
    delta: float = 4.0
    headway: float = 1.6  # T
    jam_gap: float = 2.0
    s1: float = 0.0
    desired_speed: float = 33.33

    def validate(self) -> None:
        for name in ("max_accel", "comfort_decel", "headway", "jam_gap", "desired_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"idm.{name} must be > 0")
        if self.s1 < 0:
            raise ValueError("idm.s1 must be >= 0")
        if self.delta < 1:
            raise ValueError("idm.delta must be >= 1")


# --------------------------------------------------------------------- LCM


def lcm_desired_spacing(v: float, v_lead: float, lead_length: float, p: LcmParams) -> float:
    return (
        v * v / (2.0 * p.decel_self)
        - v_lead * v_lead / (2.0 * p.decel_leader)
        + v * p.reaction_time
        + lead_length
    )


def lcm_accel_raw(v: float, v_lead: float, spacing: float, lead_length: float, p: LcmParams) -> float:
    if spacing <= 0.0:
        raise CollisionError(f"non-positive spacing {spacing:.6g} m", -spacing)
    s_star = max(lcm_desired_spacing(v, v_lead, lead_length, p), _S_STAR_FLOOR)
    return p.max_accel * (1.0 - v / p.desired_speed - math.exp(1.0 - spacing / s_star))


def lcm_jerk_raw(
    v: float, a: float, v_lead: float, a_lead: float, spacing: float, lead_length: float, p: LcmParams
) -> float:
    """Exact time derivative of :func:`lcm_accel_raw` along a trajectory."""
    s_star = lcm_desired_spacing(v, v_lead, lead_length, p)
    if s_star <= _S_STAR_FLOOR:
        return -p.max_accel * a / p.desired_speed
    s_star_dot = v * a / p.decel_self - v_lead * a_lead / p.decel_leader + a * p.reaction_time
    spacing_dot = v_lead - v
    e = math.exp(1.0 - spacing / s_star)
    return p.max_accel * (
        -a / p.desired_speed + e * (spacing_dot / s_star - spacing * s_star_dot / (s_star * s_star))
    )


def lcm_equilibrium_spacing(v: float, p: LcmParams, leader_length: float) -> float:
    """Gross spacing at which a follower at speed ``v`` behind a leader at ``v`` has zero acceleration."""
    if not 0.0 <= v < p.desired_speed:
        raise ValueError(f"no finite LCM equilibrium at v={v} (desired speed {p.desired_speed})")
    s_star = lcm_desired_spacing(v, v, leader_length, p)
    return s_star * (1.0 - math.log(1.0 - v / p.desired_speed))


# --------------------------------------------------------------------- IDM


def _idm_sqrt_ab(p: IdmParams) -> float:
    return 2.0 * math.sqrt(p.max_accel * p.comfort_decel)


def idm_desired_gap(v: float, dv: float, p: IdmParams) -> float:
    """Desired net gap; ``dv`` is follower minus leader speed (closing positive)."""
    s = p.jam_gap + v * p.headway + v * dv / _idm_sqrt_ab(p)
    if p.s1:
        s += p.s1 * math.sqrt(max(v, 0.0) / p.desired_speed)
    return max(s, 0.0)


def idm_accel_raw(v: float, v_lead: float, spacing: float, lead_length: float, p: IdmParams) -> float:
    gap = spacing - lead_length
    if gap <= 0.0:
        raise CollisionError(f"non-positive net gap {gap:.6g} m", -gap)
    s_star = idm_desired_gap(v, v - v_lead, p)
    ratio = s_star / gap
    return p.max_accel * (1.0 - (v / p.desired_speed) ** p.delta - ratio * ratio)


def idm_jerk_raw(
    v: float, a: float, v_lead: float, a_lead: float, spacing: float, lead_length: float, p: IdmParams
) -> float:
    """Exact time derivative of :func:`idm_accel_raw` along a trajectory."""
    gap = spacing - lead_length
    dv = v - v_lead
    free = -p.delta * (v / p.desired_speed) ** (p.delta - 1.0) * a / p.desired_speed
    s_star = idm_desired_gap(v, dv, p)
    if s_star <= 0.0:
        return p.max_accel * free
    s_star_dot = a * p.headway + (a * dv + v * (a - a_lead)) / _idm_sqrt_ab(p)
    if p.s1 and v > 0.0:
        s_star_dot += p.s1 * a / (2.0 * math.sqrt(v * p.desired_speed))
    gap_dot = v_lead - v
    interaction = 2.0 * s_star * (s_star_dot * gap - s_star * gap_dot) / gap**3
    return p.max_accel * (free - interaction)


def idm_equilibrium_spacing(v: float, p: IdmParams, leader_length: float) -> float:
    """Gross spacing of the IDM steady state at speed ``v``."""
    if not 0.0 <= v < p.desired_speed:
        raise ValueError(f"no finite IDM equilibrium at v={v} (desired speed {p.desired_speed})")
    ratio = v / p.desired_speed
    numer = p.jam_gap + p.s1 * math.sqrt(ratio) + v * p.headway
    return leader_length + numer / math.sqrt(1.0 - ratio**p.delta)


# ------------------------------------------------------- VehicleState wrappers


def _spacing(follower, leader) -> float:
    return leader.x - follower.x


def lcm_accel(follower, leader, params: LcmParams) -> float:
    """LCM acceleration of ``follower``.  The engine applies it ``reaction_time`` later."""
    return lcm_accel_raw(follower.v, leader.v, _spacing(follower, leader), leader.length, params)


def lcm_jerk(follower, leader, params: LcmParams) -> float:
    return lcm_jerk_raw(
        follower.v, follower.a, leader.v, leader.a, _spacing(follower, leader), leader.length, params
    )


def idm_accel(follower, leader, params: IdmParams) -> float:
    return idm_accel_raw(follower.v, leader.v, _spacing(follower, leader), leader.length, params)


def idm_jerk(follower, leader, params: IdmParams) -> float:
    return idm_jerk_raw(
        follower.v, follower.a, leader.v, leader.a, _spacing(follower, leader), leader.length, params
    )

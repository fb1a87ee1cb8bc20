"""Comfort, efficiency and safety costs and the two aggregate objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class CostWeights:
    comfort: float = 1 / 3
    efficiency: float = 1 / 3
    safety: float = 1 / 3
    n_comfort: float = 8.0  # m/s^3
    n_efficiency: float = 25.0  # m/s
    n_safety: float = 0.5  # 1/s
    v_small: float = 1e-6
    net_gap: bool = False  # measure the safety gap net of the leader length

    def validate(self) -> None:
        for name in ("n_comfort", "n_efficiency", "n_safety", "v_small"):
            if not getattr(self, name) > 0:
                raise ValueError(f"cost.{name} must be > 0")
        ws = (self.comfort, self.efficiency, self.safety)
        if min(ws) < 0 or sum(ws) <= 0:
            raise ValueError("cost.weights must be >= 0 with a positive sum")

    @property
    def category_scale(self) -> np.ndarray:
        return np.array(
            [
                self.comfort / self.n_comfort,
                self.efficiency / self.n_efficiency,
                self.safety / self.n_safety,
            ]
        )


def safety_cost(dv: float, spacing: float, v_small: float) -> float:
    """``dv`` is follower minus leader speed; the squared term only counts when closing."""
    closing = dv * dv if dv >= 0.0 else 0.0
    return closing + 1.0 / (spacing * spacing + v_small)


def step_cost(
    jerk: float,
    v: float,
    v0: float,
    dv: float | None,
    spacing: float | None,
    weights: CostWeights,
) -> tuple[float, float, float]:
    """Per-tick ``(comfort, efficiency, safety)``; no leader means zero safety cost."""
    comfort = abs(jerk)
    efficiency = abs(v - v0)
    if spacing is None or dv is None:
        safety = 0.0
    else:
        if spacing <= 0:
            raise ValueError(f"safety cost needs a positive spacing, got {spacing}")
        safety = safety_cost(dv, spacing, weights.v_small)
    return comfort, efficiency, safety


def follower_weights(followers: Sequence[tuple[float, float]]) -> np.ndarray:
    """Impact weights from ``(speed difference, distance)`` to the lane changer at t0.

    Falls back to uniform weights when every follower is speed-matched.
    """
    if not followers:
        return np.zeros(0)
    sigma = []
    for dv, dx in followers:
        if not dx > 0:
            raise ValueError(f"follower distance must be positive, got {dx}")
        sigma.append(abs(dv) / math.sqrt(dx))
    sigma = np.asarray(sigma)
    total = sigma.sum()
    if total <= 0:
        return np.full(len(sigma), 1.0 / len(sigma))
    return sigma / total


def aggregate_jlc(series, weights: CostWeights) -> float:
    """Weighted, normalized tick sums of one vehicle's ``(K, 3)`` cost series."""
    arr = np.asarray(series, dtype=float).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise ValueError("empty cost series")
    return float(arr.sum(axis=0) @ weights.category_scale)


def aggregate_jtf(series, omega, weights: CostWeights) -> float:
    """``series`` is ``(m, K, 3)``; each follower's tick sums are scaled by its weight."""
    arr = np.asarray(series, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (m, K, 3) follower series, got {arr.shape}")
    if omega.shape != (arr.shape[0],):
        raise ValueError(f"{omega.shape[0]} weights for {arr.shape[0]} followers")
    per_category = np.einsum("i,ikc->c", omega, arr)
    return float(per_category @ weights.category_scale)


@dataclass
class CostBreakdown:
    lc_series: np.ndarray  # (K, 3)
    follower_series: np.ndarray  # (m, K, 3)
    follower_ids: list[int]
    omega: np.ndarray
    j_lc: float
    j_tf: float
    violation: float
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def per_vehicle_totals(self, weights: CostWeights) -> dict[int, float]:
        """Unweighted-by-omega total cost of each follower."""
        scale = weights.category_scale
        return {
            vid: float(self.follower_series[i].sum(axis=0) @ scale)
            for i, vid in enumerate(self.follower_ids)
        }

    def per_vehicle_peaks(self, weights: CostWeights) -> dict[int, float]:
        """Largest single-tick total (normalized, category-weighted) cost of each follower."""
        scale = weights.category_scale
        return {
            vid: float((self.follower_series[i] @ scale).max(initial=0.0))
            for i, vid in enumerate(self.follower_ids)
        }

    def to_dict(self, lc_id: int = 0) -> dict:
        names = ("comfort", "efficiency", "safety")

        def series(arr):
            return {n: [round(float(x), 9) for x in arr[:, c]] for c, n in enumerate(names)}

        return {
            "t": [round(float(t), 6) for t in self.times],
            "J_LC": self.j_lc,
            "J_TF": self.j_tf,
            "constraint_violation": self.violation,
            "lane_changer": {"vehicle_id": lc_id, **series(self.lc_series)},
            "followers": [
                {"vehicle_id": vid, "weight": float(self.omega[i]), **series(self.follower_series[i])}
                for i, vid in enumerate(self.follower_ids)
            ],
        }

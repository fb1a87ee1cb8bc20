import numpy as np
import pytest

from lane_pareto.cost import (
    CostBreakdown,
    CostWeights,
    aggregate_jlc,
    aggregate_jtf,
    follower_weights,
    safety_cost,
    step_cost,
)

W = CostWeights()
UNIT = CostWeights(comfort=1.0, efficiency=1.0, safety=1.0)


def test_step_cost_examples():
    assert step_cost(0.0, 25.0, 25.0, -1.0, 10.0, W) == pytest.approx((0.0, 0.0, 0.01), abs=1e-9)
    assert step_cost(0.0, 25.0, 25.0, 2.0, 10.0, W)[2] == pytest.approx(4 + 1 / (100 + 1e-6), rel=1e-12)
    assert step_cost(0.0, 25.0, 25.0, 0.0, 1e9, W) == pytest.approx((0, 0, 0), abs=1e-12)
    assert step_cost(-3.0, 20.0, 25.0, None, None, W) == (3.0, 5.0, 0.0)


def test_step_cost_rejects_non_positive_spacing():
    with pytest.raises(ValueError):
        step_cost(0.0, 20.0, 25.0, 1.0, 0.0, W)


def test_safety_is_continuous_at_zero_speed_difference():
    vals = [safety_cost(dv, 10.0, 1e-6) for dv in (-1e-9, 0.0, 1e-9)]
    assert max(vals) - min(vals) <= 1e-15


def test_follower_weights_examples():
    assert follower_weights([(3.0, 9.0)]) == pytest.approx([1.0])
    assert follower_weights([(2.0, 4.0), (6.0, 4.0)]) == pytest.approx([0.25, 0.75])
    assert follower_weights([(1.0, 1.0), (2.0, 4.0), (3.0, 9.0)]) == pytest.approx([1 / 3] * 3)
    assert follower_weights([(0.0, 5.0), (0.0, 30.0)]) == pytest.approx([0.5, 0.5])
    assert follower_weights([]).size == 0


def test_follower_weights_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = follower_weights(list(zip(rng.uniform(-5, 5, 7), rng.uniform(1, 200, 7))))
        assert abs(w.sum() - 1.0) <= 1e-12


def test_follower_weights_reject_bad_distance():
    with pytest.raises(ValueError):
        follower_weights([(1.0, 0.0)])


def test_aggregate_jlc_examples():
    assert aggregate_jlc(np.zeros((4, 3)), W) == 0.0
    assert aggregate_jlc([[8.0, 25.0, 0.5]], UNIT) == pytest.approx(3.0)
    scaled = CostWeights(comfort=2.0, efficiency=2.0, safety=2.0)
    assert aggregate_jlc([[8.0, 25.0, 0.5]], scaled) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        aggregate_jlc(np.zeros((0, 3)), W)


def test_aggregate_jtf_reductions():
    rng = np.random.default_rng(1)
    s = rng.uniform(0, 3, (5, 3))
    assert aggregate_jtf(s[None], [1.0], W) == pytest.approx(aggregate_jlc(s, W))
    assert aggregate_jtf(np.stack([s, s]), [0.5, 0.5], W) == pytest.approx(aggregate_jlc(s, W))


def test_aggregate_jtf_three_follower_hand_case():
    series = np.array(
        [
            [[1.0, 2.0, 0.1], [0.0, 1.0, 0.2]],
            [[2.0, 0.0, 0.0], [4.0, 5.0, 0.3]],
            [[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]],
        ]
    )
    omega = [0.2, 0.3, 0.5]
    # column sums per follower, weighted, then normalized per category
    comfort = 0.2 * 1.0 + 0.3 * 6.0 + 0.5 * 1.0
    efficiency = 0.2 * 3.0 + 0.3 * 5.0 + 0.5 * 1.0
    safety = 0.2 * 0.3 + 0.3 * 0.3 + 0.5 * 1.0
    expected = comfort / 8 + efficiency / 25 + safety / 0.5
    assert aggregate_jtf(series, omega, UNIT) == pytest.approx(expected, rel=1e-12)


def test_aggregate_jtf_is_monotone_in_entries():
    rng = np.random.default_rng(2)
    s = rng.uniform(0, 2, (3, 6, 3))
    omega = follower_weights([(1, 4), (2, 9), (0.5, 1)])
    base = aggregate_jtf(s, omega, W)
    for idx in [(0, 0, 0), (1, 5, 2), (2, 3, 1)]:
        bumped = s.copy()
        bumped[idx] += 0.7
        assert aggregate_jtf(bumped, omega, W) >= base


def test_aggregate_jtf_shape_checks():
    with pytest.raises(ValueError):
        aggregate_jtf(np.zeros((2, 3)), [1.0], W)
    with pytest.raises(ValueError):
        aggregate_jtf(np.zeros((2, 4, 3)), [1.0], W)


def test_breakdown_totals_and_peaks():
    fs = np.zeros((2, 3, 3))
    fs[0, 1] = (8.0, 0.0, 0.0)
    fs[1, :, 2] = 0.5
    b = CostBreakdown(np.zeros((3, 3)), fs, [11, 12], np.array([0.5, 0.5]), 0.0, 0.0, 0.0)
    assert b.per_vehicle_totals(UNIT) == pytest.approx({11: 1.0, 12: 3.0})
    assert b.per_vehicle_peaks(UNIT) == pytest.approx({11: 1.0, 12: 1.0})
    doc = b.to_dict()
    assert [f["vehicle_id"] for f in doc["followers"]] == [11, 12]
    assert doc["followers"][1]["safety"] == [0.5, 0.5, 0.5]


def test_weight_validation():
    with pytest.raises(ValueError):
        CostWeights(n_safety=0.0).validate()
    with pytest.raises(ValueError):
        CostWeights(comfort=-1.0).validate()

"""Tests for flows module"""

import numpy as np
import pytest

from vicount.descriptors import assignment_from_identities
from vicount.exceptions import ParameterError, StateError
from vicount.flows import (
    assignment_accuracy,
    decode_assignment,
    hungarian_baseline,
    soft_inflow_count,
    soft_outflow_count,
)
from vicount.models import FlowDecomposition, PlanScale, TransportPlan
from vicount.solver import SolverConfig, build_augmented_score, solve


def _plan(matrix, scale=PlanScale.COUNT):
    return TransportPlan(matrix=np.asarray(matrix, dtype=np.float64), iterations_run=0,
                         marginal_violation=0.0, scale=scale)


class TestSoftCounts:
    """Tests for soft_inflow_count and soft_outflow_count"""

    def test_reads_dust_row_and_column(self):
        plan = _plan([[0.9, 0.0, 0.1], [0.0, 0.3, 0.7], [0.1, 0.7, 0.8]])
        assert soft_inflow_count(plan) == pytest.approx(0.8)
        assert soft_outflow_count(plan) == pytest.approx(0.8)

    def test_corner_is_not_counted(self):
        plan = _plan([[0.0, 1.0], [1.0, 5.0]])
        assert soft_inflow_count(plan) == pytest.approx(1.0)
        assert soft_outflow_count(plan) == pytest.approx(1.0)

    def test_normalized_plan_rejected(self):
        plan = _plan(np.eye(2), scale=PlanScale.NORMALIZED)
        with pytest.raises(StateError):
            soft_inflow_count(plan)
        with pytest.raises(StateError):
            soft_outflow_count(plan)


class TestDecodeAssignment:
    """Tests for decode_assignment"""

    def test_mutual_argmax(self):
        plan = _plan([[0.9, 0.0, 0.1], [0.0, 0.3, 0.7], [0.1, 0.7, 0.8]])
        result = decode_assignment(plan)
        assert result.matched == [(0, 0)]
        assert result.outflow == [1]
        assert result.inflow == [1]

    def test_one_sided_argmax_is_not_a_match(self):
        # row 0 prefers column 0, but column 0 prefers row 1
        plan = _plan([[0.6, 0.1, 0.3], [0.8, 0.0, 0.2], [0.0, 0.9, 0.0]])
        result = decode_assignment(plan)
        assert result.matched == [(1, 0)]
        assert result.outflow == [0]
        assert result.inflow == [1]

    def test_ties_take_lower_index(self):
        plan = _plan([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]])
        assert decode_assignment(plan).matched == [(0, 0)]

    def test_empty_frames(self):
        assert decode_assignment(_plan([[1.0, 1.0, 0.0]])).inflow == [0, 1]
        assert decode_assignment(_plan([[1.0], [1.0], [0.0]])).outflow == [0, 1]

    def test_to_dict(self):
        payload = decode_assignment(_plan([[0.9, 0.1], [0.1, 0.9]])).to_dict()
        assert payload["matched"] == [[0, 0]]
        assert payload["inflow"] == [] and payload["outflow"] == []

    def test_normalized_plan_rejected(self):
        with pytest.raises(StateError):
            decode_assignment(_plan(np.eye(2), scale=PlanScale.NORMALIZED))


class TestHungarianBaseline:
    """Tests for hungarian_baseline"""

    def test_threshold_dissolves_weak_pairs(self):
        result = hungarian_baseline(np.array([[0.9, 0.1], [0.2, -0.5]]), threshold=0.0)
        assert result.matched == [(0, 0)]
        assert result.outflow == [1]
        assert result.inflow == [1]

    def test_rectangular(self):
        C = np.array([[0.1, 0.8, 0.3]])
        result = hungarian_baseline(C)
        assert result.matched == [(0, 1)]
        assert result.inflow == [0, 2]
        assert result.outflow == []

    def test_empty(self):
        result = hungarian_baseline(np.zeros((0, 3)))
        assert result.matched == [] and result.inflow == [0, 1, 2]

    def test_non_finite_rejected(self):
        with pytest.raises(ParameterError):
            hungarian_baseline(np.array([[np.inf]]))

    def test_not_a_matrix(self):
        with pytest.raises(ParameterError):
            hungarian_baseline(np.ones(3))


class TestAssignmentAccuracy:
    """Tests for assignment_accuracy"""

    def test_perfect(self):
        gt = assignment_from_identities([1, 2], [2, 3])
        decomposition = FlowDecomposition(matched=[(1, 0)], inflow=[1], outflow=[0])
        assert assignment_accuracy(decomposition, gt) == pytest.approx(1.0)

    def test_partial(self):
        gt = assignment_from_identities([1, 2], [2, 3])
        decomposition = FlowDecomposition(matched=[(0, 0)], inflow=[1], outflow=[1])
        # only column 1 agrees
        assert assignment_accuracy(decomposition, gt) == pytest.approx(0.25)

    def test_empty(self):
        gt = assignment_from_identities([], [])
        assert assignment_accuracy(FlowDecomposition(), gt) == 1.0


def test_decode_conserves_instances_on_random_plans():
    rng = np.random.default_rng(30)
    for _ in range(1000):
        m, n = (int(v) for v in rng.integers(0, 8, size=2))
        result = decode_assignment(_plan(rng.uniform(0, 1, size=(m + 1, n + 1))))
        assert len(result.matched) + len(result.outflow) == m
        assert len(result.matched) + len(result.inflow) == n
        assert len({j for _, j in result.matched}) == len(result.matched)


def _planted_instance(rng, m, n):
    """Planted pairs score at least 0.25 above c, every other pair at least 0.25 below"""
    c = float(rng.uniform(-0.25, 0.25))
    C = rng.uniform(c - 0.5, c - 0.25, size=(m, n))
    k = int(rng.integers(0, min(m, n) + 1))
    rows = rng.permutation(m)[:k]
    cols = rng.permutation(n)[:k]
    C[rows, cols] = rng.uniform(c + 0.25, c + 0.5, size=k)
    return C, c, sorted((int(i), int(j)) for i, j in zip(rows, cols))


@pytest.mark.slow
def test_transport_and_hungarian_agree_on_planted_pairs():
    rng = np.random.default_rng(31)
    cfg = SolverConfig(sigma=0.01, iterations=500, log_domain=True)
    checked = 0
    while checked < 200:
        m, n = (int(v) for v in rng.integers(0, 6, size=2))
        if m + n == 0:
            continue
        C, c, planted = _planted_instance(rng, m, n)
        decoded = decode_assignment(solve(build_augmented_score(C, c), cfg))
        baseline = hungarian_baseline(C, threshold=c)
        assert sorted(decoded.matched) == planted
        assert sorted(baseline.matched) == planted
        assert decoded.inflow == baseline.inflow
        assert decoded.outflow == baseline.outflow
        checked += 1

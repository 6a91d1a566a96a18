import numpy as np
import pytest

from vicount.flows import decode_assignment, soft_inflow_count, soft_outflow_count
from vicount.solver import build_augmented_score, build_marginals, lp_oracle, rescale_plan, sinkhorn, transport_objective

GRID = np.array([-0.5, -0.25, 0.0, 0.25, 0.5])


def _sizes(rng, limit):
    while True:
        m, n = (int(v) for v in rng.integers(0, limit + 1, size=2))
        if m + n > 0:
            return m, n


@pytest.mark.slow
def test_sinkhorn_feasibility_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        m, n = _sizes(rng, 50)
        score = build_augmented_score(rng.uniform(-1, 1, size=(m, n)), float(rng.uniform(-1, 1)))
        marg = build_marginals(m, n)
        plan = rescale_plan(sinkhorn(score, marg, sigma=1.0, iters=100, log_domain=True))
        assert plan.marginal_violation < 1e-6
        assert plan.matrix.sum() == pytest.approx(m + n, abs=1e-6)


@pytest.mark.slow
def test_flow_identities_on_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        m, n = _sizes(rng, 12)
        score = build_augmented_score(rng.uniform(-1, 1, size=(m, n)), float(rng.uniform(-1, 1)))
        plan = rescale_plan(sinkhorn(score, build_marginals(m, n), sigma=1.0, iters=100))
        matched_mass = plan.matrix[:m, :n].sum()
        assert soft_inflow_count(plan) - soft_outflow_count(plan) == pytest.approx(n - m, abs=1e-6)
        assert plan.matrix[m, n] == pytest.approx(matched_mass, abs=1e-5)


@pytest.mark.slow
def test_sinkhorn_objective_matches_lp_oracle():
    rng = np.random.default_rng(13)
    for _ in range(200):
        m, n = _sizes(rng, 10)
        while m + n > 10:
            m, n = _sizes(rng, 10)
        C = rng.choice(GRID, size=(m, n))
        score = build_augmented_score(C, float(rng.choice([0.0, 0.25])))
        marg = build_marginals(m, n)
        exact = transport_objective(lp_oracle(score, marg), score)
        entropic = transport_objective(rescale_plan(sinkhorn(score, marg, sigma=0.01, iters=4000)), score)
        assert entropic == pytest.approx(exact, abs=1e-3)


def _separable_instance(rng, m, n):
    """Matched similarities at least 0.25 above c, all others at least 0.25 below"""
    c = float(rng.uniform(-0.25, 0.25))
    C = rng.uniform(c - 0.5, c - 0.25, size=(m, n))
    k = int(rng.integers(0, min(m, n) + 1))
    rows = rng.permutation(m)[:k]
    cols = rng.permutation(n)[:k]
    C[rows, cols] = rng.uniform(c + 0.25, c + 0.5, size=k)
    return build_augmented_score(C, c)


@pytest.mark.slow
def test_decoded_assignment_matches_lp_oracle_on_separable_instances():
    rng = np.random.default_rng(14)
    for _ in range(200):
        m, n = _sizes(rng, 5)
        score = _separable_instance(rng, m, n)
        marg = build_marginals(m, n)
        exact = decode_assignment(lp_oracle(score, marg))
        entropic = decode_assignment(rescale_plan(sinkhorn(score, marg, sigma=0.01, iters=500)))
        assert sorted(entropic.matched) == sorted(exact.matched)
        assert entropic.inflow == exact.inflow
        assert entropic.outflow == exact.outflow


def test_dual_trace_monotone_across_instances():
    rng = np.random.default_rng(15)
    for _ in range(50):
        m, n = _sizes(rng, 8)
        score = build_augmented_score(rng.uniform(-1, 1, size=(m, n)), float(rng.uniform(-1, 1)))
        plan = sinkhorn(score, build_marginals(m, n), sigma=float(rng.uniform(0.1, 1.0)), iters=40)
        assert np.all(np.diff(plan.dual_trace) >= -1e-9)

"""
Inflow and outflow readout from transport plans
"""

import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ParameterError, StateError
from .models import FlowDecomposition, GroundTruthAssignment, PlanScale, TransportPlan

logger = logging.getLogger(__name__)


def _require_count_scale(plan: TransportPlan, operation: str) -> None:
    if plan.scale is not PlanScale.COUNT:
        raise StateError(f"{operation} reads counts from the plan; call rescale_plan first.")


def soft_inflow_count(plan: TransportPlan) -> float:
    """Mass of the dust-bin row over the real columns"""
    _require_count_scale(plan, "soft_inflow_count")
    return float(plan.matrix[plan.m, :plan.n].sum())


def soft_outflow_count(plan: TransportPlan) -> float:
    """Mass of the dust-bin column over the real rows"""
    _require_count_scale(plan, "soft_outflow_count")
    return float(plan.matrix[:plan.m, plan.n].sum())


def decode_assignment(plan: TransportPlan) -> FlowDecomposition:
    """
    Mutual-argmax decode of a count-scale plan.

    Row i and column j match when each is the other's argmax over the full
    augmented row/column. Every other real row is outflow and every other
    real column is inflow. Ties go to the lower index.
    """
    _require_count_scale(plan, "decode_assignment")
    m, n = plan.m, plan.n
    matrix = plan.matrix
    row_best = np.argmax(matrix[:m, :], axis=1) if m else np.zeros(0, dtype=int)
    col_best = np.argmax(matrix[:, :n], axis=0) if n else np.zeros(0, dtype=int)

    result = FlowDecomposition()
    matched_cols = set()
    for i in range(m):
        j = int(row_best[i])
        if j < n and int(col_best[j]) == i:
            result.matched.append((i, j))
            matched_cols.add(j)
        else:
            result.outflow.append(i)
    result.inflow = [j for j in range(n) if j not in matched_cols]
    return result


def hungarian_baseline(C: np.ndarray, threshold: float = 0.0) -> FlowDecomposition:
    """
    One-to-one assignment maximizing total similarity, with pairs below
    ``threshold`` dissolved into inflow and outflow.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ParameterError(f"similarity matrix must be 2-D, got shape {C.shape}.")
    if not np.all(np.isfinite(C)):
        raise ParameterError("similarity matrix must be finite.")
    m, n = C.shape

    result = FlowDecomposition()
    if m and n:
        rows, cols = linear_sum_assignment(C, maximize=True)
        result.matched = [(int(i), int(j)) for i, j in zip(rows, cols) if C[i, j] >= threshold]
    matched_rows = {i for i, _ in result.matched}
    matched_cols = {j for _, j in result.matched}
    result.outflow = [i for i in range(m) if i not in matched_rows]
    result.inflow = [j for j in range(n) if j not in matched_cols]
    return result


def assignment_accuracy(decomposition: FlowDecomposition, gt: GroundTruthAssignment) -> float:
    """Fraction of real instances (rows and columns) whose decision agrees with the ground truth"""
    m, n = gt.m, gt.n
    if m + n == 0:
        return 1.0
    matched = set(decomposition.matched)
    row_of_col = {j: i for i, j in decomposition.matched}
    col_of_row = {i: j for i, j in decomposition.matched}

    correct = 0
    for i in range(m):
        j = int(np.argmax(gt.matrix[i]))
        correct += (i, j) in matched if j < n else i not in col_of_row
    for j in range(n):
        i = int(np.argmax(gt.matrix[:, j]))
        correct += (i, j) in matched if i < m else j not in row_of_col
    return correct / (m + n)


"""
Entropic optimal transport with dust bins

The score matrix holds similarities (larger is better), so the plan maximizes
sum(P * C) and the Gibbs kernel is exp(+C / sigma). The last row of the
augmented problem collects inflow, the last column collects outflow.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
from scipy.optimize import linprog

from .exceptions import NumericalError, OracleSizeError, ParameterError, StateError
from .models import AugmentedScore, Marginals, PlanScale, TransportPlan

logger = logging.getLogger(__name__)

DTYPE = torch.float64
ORACLE_SIZE_LIMIT = 12


@dataclass
class SolverConfig:
    """Sinkhorn settings (sigma, fixed iteration count, log or naive domain)"""
    sigma: float = 1.0
    iterations: int = 100
    log_domain: bool = True

    def validate(self) -> None:
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}.")
        if self.iterations < 1:
            raise ParameterError(
                f"iterations must be at least 1, got {self.iterations}. "
                f"The unrolled solver needs a finite, non-zero iteration count.")


def build_augmented_score(C: np.ndarray, c: float) -> AugmentedScore:
    """Border the M x N similarity block with the dust-bin score c"""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ParameterError(f"similarity matrix must be 2-D, got shape {C.shape}.")
    if not np.all(np.isfinite(C)) or not np.isfinite(c):
        raise ParameterError("similarity matrix and dust-bin score must be finite.")
    m, n = C.shape
    matrix = np.full((m + 1, n + 1), float(c), dtype=np.float64)
    matrix[:m, :n] = C
    return AugmentedScore(matrix=matrix)


def augment_scores(C: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Differentiable counterpart of build_augmented_score"""
    m, n = C.shape
    bins0 = c.expand(m, 1)
    bins1 = c.expand(1, n)
    corner = c.reshape(1, 1)
    return torch.cat([torch.cat([C, bins0], -1), torch.cat([bins1, corner], -1)], 0)


def build_marginals(m: int, n: int) -> Marginals:
    """Histograms [1_M, N] and [1_N, M]"""
    if m < 0 or n < 0:
        raise ParameterError(f"instance counts must be non-negative, got M={m}, N={n}.")
    if m == 0 and n == 0:
        raise ParameterError("at least one of the two frames must contain instances (M = N = 0).")
    a_bar = np.ones(m + 1, dtype=np.float64)
    a_bar[m] = n
    b_bar = np.ones(n + 1, dtype=np.float64)
    b_bar[n] = m
    return Marginals(a_bar=a_bar, b_bar=b_bar, m=m, n=n)


def _raise_non_finite(name: str, iteration: int) -> None:
    raise NumericalError(
        f"non-finite {name} at Sinkhorn iteration {iteration}. "
        f"Increase sigma or switch to the log-domain solver.", iteration=iteration)


def _finite_torch(*tensors: torch.Tensor) -> bool:
    # -inf log-scalings are legal (empty dust bins); NaN or +inf are not
    with torch.no_grad():
        total = float(sum(t.sum() for t in tensors))
    return total == total and total != float("inf")


def _finite_np(*arrays: np.ndarray) -> bool:
    total = float(sum(x.sum() for x in arrays))
    return total == total and total != float("inf")


def sinkhorn_iterations(scores: torch.Tensor, a: torch.Tensor, b: torch.Tensor,
                        sigma: float, iterations: int, log_domain: bool = True) -> torch.Tensor:
    """
    Alternate u = a / (K v), v = b / (K^T u) starting from v = 1.

    Works on torch tensors so that gradients flow through every iteration.
    Returns the plan in the scale of (a, b).

    Raises:
        NumericalError: a non-finite value appeared (names the iteration)
    """
    if log_domain:
        z = scores / sigma
        log_a = torch.log(a)
        log_b = torch.log(b)
        log_v = torch.zeros_like(b)
        log_u = torch.zeros_like(a)
        for k in range(iterations):
            log_u = log_a - torch.logsumexp(z + log_v[None, :], dim=1)
            log_v = log_b - torch.logsumexp(z + log_u[:, None], dim=0)
            if not _finite_torch(log_u, log_v):
                _raise_non_finite("log-scaling", k)
        return torch.exp(z + log_u[:, None] + log_v[None, :])

    kernel = torch.exp(scores / sigma)
    if not _finite_torch(kernel):
        _raise_non_finite("kernel", 0)
    v = torch.ones_like(b)
    u = torch.ones_like(a)
    for k in range(iterations):
        u = a / (kernel @ v)
        v = b / (kernel.t() @ u)
        if not _finite_torch(u, v):
            _raise_non_finite("scaling", k)
    return u[:, None] * kernel * v[None, :]


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    top = x.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.log(np.exp(x - top).sum(axis=axis)) + np.squeeze(top, axis=axis)


def _dual_value(scores: np.ndarray, log_u: np.ndarray, log_v: np.ndarray,
                a: np.ndarray, b: np.ndarray, sigma: float) -> float:
    """Negated entropic dual; Sinkhorn block updates never decrease it"""
    plan = np.exp(scores / sigma + log_u[:, None] + log_v[None, :])
    lin_a = np.where(a > 0, a * log_u, 0.0).sum()
    lin_b = np.where(b > 0, b * log_v, 0.0).sum()
    return float(sigma * (lin_a + lin_b - plan.sum()))


def _scaling_iterations(scores: np.ndarray, a: np.ndarray, b: np.ndarray, sigma: float,
                        iterations: int, log_domain: bool) -> Tuple[np.ndarray, List[float]]:
    """No-grad Sinkhorn loop used for inference; also records the dual after each iteration."""
    dual: List[float] = []
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if log_domain:
            z = scores / sigma
            log_a = np.log(a)
            log_b = np.log(b)
            log_v = np.zeros_like(b)
            log_u = np.zeros_like(a)
            for k in range(iterations):
                log_u = log_a - _logsumexp(z + log_v[None, :], axis=1)
                log_v = log_b - _logsumexp(z + log_u[:, None], axis=0)
                if not _finite_np(log_u, log_v):
                    _raise_non_finite("log-scaling", k)
                dual.append(_dual_value(scores, log_u, log_v, a, b, sigma))
            return np.exp(z + log_u[:, None] + log_v[None, :]), dual

        kernel = np.exp(scores / sigma)
        if not _finite_np(kernel):
            _raise_non_finite("kernel", 0)
        v = np.ones_like(b)
        u = np.ones_like(a)
        for k in range(iterations):
            u = a / (kernel @ v)
            v = b / (kernel.T @ u)
            if not _finite_np(u, v):
                _raise_non_finite("scaling", k)
            dual.append(_dual_value(scores, np.log(u), np.log(v), a, b, sigma))
        return u[:, None] * kernel * v[None, :], dual


def marginal_violation(count_matrix: np.ndarray, marg: Marginals) -> float:
    """L1 distance of count-scale row/column sums from the histograms"""
    return float(np.abs(count_matrix.sum(axis=1) - marg.a_bar).sum()
                 + np.abs(count_matrix.sum(axis=0) - marg.b_bar).sum())


def sinkhorn(score: AugmentedScore, marg: Marginals, sigma: float = 1.0,
             iters: int = 100, log_domain: bool = True) -> TransportPlan:
    """
    Solve the entropic transport problem on normalized marginals.

    The naive-domain solver falls back to the log domain when its kernel or
    scalings overflow; the returned plan then has ``fallback=True``.
    """
    SolverConfig(sigma=sigma, iterations=iters, log_domain=log_domain).validate()
    if score.matrix.shape != (marg.m + 1, marg.n + 1):
        raise ParameterError(
            f"score shape {score.matrix.shape} does not match marginals for M={marg.m}, N={marg.n}.")

    fallback = False
    try:
        matrix, dual = _scaling_iterations(score.matrix, marg.a, marg.b, sigma, iters, log_domain)
    except NumericalError as e:
        if log_domain:
            raise
        logger.warning("naive-domain Sinkhorn overflowed, retrying in log domain",
                       extra={"iteration": e.iteration, "sigma": sigma})
        fallback = True
        log_domain = True
        matrix, dual = _scaling_iterations(score.matrix, marg.a, marg.b, sigma, iters, True)

    violation = marginal_violation(matrix * marg.normalizer, marg)
    logger.debug("sinkhorn solved", extra={
        "m": marg.m, "n": marg.n, "sigma": sigma, "iterations": iters,
        "violation": violation, "fallback": fallback})
    return TransportPlan(matrix=matrix, iterations_run=iters, marginal_violation=violation,
                         scale=PlanScale.NORMALIZED, sigma=float(sigma), log_domain=log_domain,
                         fallback=fallback, dual_trace=dual)


def rescale_plan(plan: TransportPlan) -> TransportPlan:
    """Multiply a normalized plan by max(M,1)*max(N,1) to read assignment counts"""
    if plan.scale is PlanScale.COUNT:
        raise StateError(
            "plan is already in count scale; rescale_plan must be applied exactly once.")
    factor = float(max(plan.m, 1) * max(plan.n, 1))
    return TransportPlan(matrix=plan.matrix * factor, iterations_run=plan.iterations_run,
                         marginal_violation=plan.marginal_violation, scale=PlanScale.COUNT,
                         sigma=plan.sigma, log_domain=plan.log_domain, fallback=plan.fallback,
                         dual_trace=list(plan.dual_trace))


def solve(score: AugmentedScore, config: Optional[SolverConfig] = None) -> TransportPlan:
    """Build marginals, run Sinkhorn and return the count-scale plan"""
    config = config or SolverConfig()
    marg = build_marginals(score.m, score.n)
    return rescale_plan(sinkhorn(score, marg, config.sigma, config.iterations, config.log_domain))


def transport_objective(plan: TransportPlan, score: AugmentedScore) -> float:
    """sum(P * C) of a count-scale plan"""
    if plan.scale is not PlanScale.COUNT:
        raise StateError("transport_objective reads count-scale plans; call rescale_plan first.")
    return float((plan.matrix * score.matrix).sum())


def lp_oracle(score: AugmentedScore, marg: Marginals) -> TransportPlan:
    """
    Exact maximizer of sum(P * C) under the count-scale marginal constraints.

    Solved with the HiGHS dual simplex, which returns a vertex of the
    transport polytope. Only desk-sized instances (M + N <= 12) are accepted.
    """
    m, n = marg.m, marg.n
    if m + n > ORACLE_SIZE_LIMIT:
        raise OracleSizeError(
            f"LP oracle accepts instances with M + N <= {ORACLE_SIZE_LIMIT}, got M={m}, N={n}.",
            limit=ORACLE_SIZE_LIMIT)
    rows, cols = m + 1, n + 1

    a_eq = np.zeros((rows + cols, rows * cols))
    for i in range(rows):
        a_eq[i, i * cols:(i + 1) * cols] = 1.0
    for j in range(cols):
        a_eq[rows + j, j::cols] = 1.0
    b_eq = np.concatenate([marg.a_bar, marg.b_bar])

    res = linprog(-score.matrix.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise NumericalError(f"LP oracle failed: {res.message}")

    matrix = np.clip(res.x.reshape(rows, cols), 0.0, None)
    return TransportPlan(matrix=matrix, iterations_run=int(getattr(res, "nit", 0)),
                         marginal_violation=marginal_violation(matrix, marg),
                         scale=PlanScale.COUNT, sigma=0.0, log_domain=False)

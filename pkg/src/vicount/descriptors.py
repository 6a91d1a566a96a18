"""
Head descriptors, matching losses and encoder training

Raw appearance features are mapped to unit-norm descriptors by a small
encoder. The matching loss is differentiated through the unrolled Sinkhorn
iterations with torch autograd, in float64.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.spatial import cKDTree

from .exceptions import NumericalError, ParameterError, StateError, TrainingDivergedError
from .models import (
    DescriptorSet,
    EncoderParams,
    FrameObservation,
    GroundTruthAssignment,
    HeadPoint,
    LossTraceRow,
    PlanScale,
    PointSet,
    TrainingExample,
    TrainingResult,
    TransportPlan,
)
from .solver import DTYPE, SolverConfig, augment_scores, build_marginals, sinkhorn_iterations

logger = logging.getLogger(__name__)

EPS = 1e-12
MATCH_RADIUS = 4.0


def _semi_orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    gauss = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_encoder(d_in: int, d_out: int, depth: int = 1, hidden_dim: Optional[int] = None,
                 c_init: float = 0.0, seed: int = 0) -> EncoderParams:
    """
    Semi-orthogonal encoder initialization.

    With depth 1 and d_out >= d_in the map preserves dot products, so the
    untrained encoder already reproduces raw-feature similarities.
    """
    if d_in < 1 or d_out < 1 or depth < 1:
        raise ParameterError(f"encoder dimensions and depth must be positive, got {d_in}, {d_out}, {depth}.")
    rng = np.random.default_rng(seed)
    hidden_dim = hidden_dim or d_out
    hidden_weights, hidden_biases = [], []
    width = d_in
    for _ in range(depth - 1):
        hidden_weights.append(_semi_orthogonal(rng, hidden_dim, width))
        hidden_biases.append(np.zeros(hidden_dim))
        width = hidden_dim
    return EncoderParams(weight=_semi_orthogonal(rng, d_out, width), bias=np.zeros(d_out),
                         dust_score=float(c_init), hidden_weights=hidden_weights,
                         hidden_biases=hidden_biases)


def _param_tensors(params: EncoderParams, requires_grad: bool = False) -> Dict[str, List[torch.Tensor]]:
    def t(x):
        return torch.tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE, requires_grad=requires_grad)
    return {
        "hidden_weights": [t(w) for w in params.hidden_weights],
        "hidden_biases": [t(b) for b in params.hidden_biases],
        "weight": [t(params.weight)],
        "bias": [t(params.bias)],
        "dust_score": [t(params.dust_score)],
    }


def _params_from_tensors(tensors: Dict[str, List[torch.Tensor]]) -> EncoderParams:
    def n(x):
        return x.detach().numpy().copy()
    return EncoderParams(
        weight=n(tensors["weight"][0]),
        bias=n(tensors["bias"][0]),
        dust_score=tensors["dust_score"][0].detach().item(),
        hidden_weights=[n(w) for w in tensors["hidden_weights"]],
        hidden_biases=[n(b) for b in tensors["hidden_biases"]],
    )


def _encode_t(raw: torch.Tensor, tensors: Dict[str, List[torch.Tensor]]) -> torch.Tensor:
    h = raw
    for w, b in zip(tensors["hidden_weights"], tensors["hidden_biases"]):
        h = torch.tanh(h @ w.t() + b)
    y = h @ tensors["weight"][0].t() + tensors["bias"][0]
    return y / y.norm(dim=-1, keepdim=True).clamp_min(EPS)


def encode(raw: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Affine map (after optional tanh layers) followed by L2 normalization"""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.shape[0] != params.d_in:
        raise ParameterError(
            f"raw feature has shape {raw.shape}, the encoder expects a vector of length {params.d_in}.")
    return encode_set(raw[None, :], params).vectors[0]


def encode_set(raw: np.ndarray, params: EncoderParams) -> DescriptorSet:
    """Encode an (n, d_in) matrix of raw features"""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, params.d_in) if np.size(raw) else np.zeros((0, params.d_in))
    if raw.shape[1] != params.d_in:
        raise ParameterError(f"raw features have {raw.shape[1]} columns, the encoder expects {params.d_in}.")
    with torch.no_grad():
        vectors = _encode_t(torch.as_tensor(raw, dtype=DTYPE), _param_tensors(params)).numpy().copy()
    return DescriptorSet(vectors=vectors)


def normalize_features(raw: np.ndarray) -> DescriptorSet:
    """Raw features used directly as descriptors (ground-truth descriptor mode)"""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw.reshape(1, -1) if raw.size else raw.reshape(0, 0)
    if raw.ndim != 2:
        raise ParameterError(f"raw features must be a vector or an (n, d) matrix, got shape {raw.shape}.")
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return DescriptorSet(vectors=raw / np.maximum(norms, EPS))


def similarity_matrix(X: DescriptorSet, Y: DescriptorSet) -> np.ndarray:
    """C[i, j] = <x_i, y_j>"""
    if len(X) == 0 or len(Y) == 0:
        return np.zeros((len(X), len(Y)), dtype=np.float64)
    return X.vectors @ Y.vectors.T


def assignment_from_identities(ids_x: Sequence[Optional[int]],
                               ids_y: Sequence[Optional[int]]) -> GroundTruthAssignment:
    """
    Ground-truth assignment from identity labels.

    Shared identities become match cells; everything else, including
    unlabelled instances, goes to the dust bins.
    """
    m, n = len(ids_x), len(ids_y)
    matrix = np.zeros((m + 1, n + 1), dtype=np.int8)
    col_of = {identity: j for j, identity in enumerate(ids_y) if identity is not None}
    matched_cols = set()
    for i, identity in enumerate(ids_x):
        j = col_of.get(identity) if identity is not None else None
        if j is None:
            matrix[i, n] = 1
        else:
            matrix[i, j] = 1
            matched_cols.add(j)
    for j in range(n):
        if j not in matched_cols:
            matrix[m, j] = 1
    return GroundTruthAssignment(matrix=matrix)


def hard_negative_targets(plan: TransportPlan, gt: GroundTruthAssignment) -> np.ndarray:
    """
    Mark the most probable wrong real cell of every real row and column.

    Ties go to the lower index; a cell chosen by both its row and its column
    is marked once.
    """
    if plan.matrix.shape != gt.matrix.shape:
        raise ParameterError(f"plan shape {plan.matrix.shape} does not match ground truth {gt.matrix.shape}.")
    return _hard_negatives(plan.matrix, gt.matrix)


def _hard_negatives(plan: np.ndarray, gt: np.ndarray) -> np.ndarray:
    m, n = gt.shape[0] - 1, gt.shape[1] - 1
    marks = np.zeros_like(gt, dtype=np.int8)
    if m == 0 or n == 0:
        return marks
    real = np.where(gt[:m, :n] == 0, plan[:m, :n], -np.inf)
    for i in range(m):
        if np.isfinite(real[i]).any():
            marks[i, int(np.argmax(real[i]))] = 1
    for j in range(n):
        if np.isfinite(real[:, j]).any():
            marks[int(np.argmax(real[:, j])), j] = 1
    return marks


def _loss_terms_t(plan: torch.Tensor, gt: torch.Tensor, negatives: torch.Tensor):
    p = plan.clamp(EPS, 1.0 - EPS)
    l_p = -(torch.log(p) * gt).sum()
    l_h = -(torch.log1p(-p) * negatives).sum()
    return l_p + l_h, l_p, l_h


def matching_loss_terms(plan: TransportPlan, gt: GroundTruthAssignment,
                        use_hard_negatives: bool = True) -> Tuple[float, float, float]:
    """(L_p + L_h, L_p, L_h) of a count-scale plan"""
    if plan.scale is not PlanScale.COUNT:
        raise StateError("matching_loss needs a count-scale plan; call rescale_plan first.")
    if plan.matrix.shape != gt.matrix.shape:
        raise ParameterError(f"plan shape {plan.matrix.shape} does not match ground truth {gt.matrix.shape}.")
    negatives = _hard_negatives(plan.matrix, gt.matrix) if use_hard_negatives else np.zeros_like(gt.matrix)
    total, l_p, l_h = _loss_terms_t(torch.as_tensor(plan.matrix, dtype=DTYPE),
                                    torch.as_tensor(gt.matrix, dtype=DTYPE),
                                    torch.as_tensor(negatives, dtype=DTYPE))
    return float(total), float(l_p), float(l_h)


def matching_loss(plan: TransportPlan, gt: GroundTruthAssignment) -> float:
    """L_p + L_h with probabilities clamped to [1e-12, 1 - 1e-12]"""
    return matching_loss_terms(plan, gt)[0]


def _forward_loss(x_raw: torch.Tensor, y_raw: torch.Tensor, tensors: Dict[str, List[torch.Tensor]],
                  gt: np.ndarray, solver_cfg: SolverConfig, use_hard_negatives: bool = True):
    m, n = x_raw.shape[0], y_raw.shape[0]
    marg = build_marginals(m, n)
    X = _encode_t(x_raw, tensors)
    Y = _encode_t(y_raw, tensors)
    scores = augment_scores(X @ Y.t(), tensors["dust_score"][0])
    plan = sinkhorn_iterations(scores, torch.as_tensor(marg.a, dtype=DTYPE),
                               torch.as_tensor(marg.b, dtype=DTYPE), solver_cfg.sigma,
                               solver_cfg.iterations, log_domain=solver_cfg.log_domain)
    plan = plan * marg.normalizer
    if use_hard_negatives:
        negatives = _hard_negatives(plan.detach().numpy(), gt)
    else:
        negatives = np.zeros_like(gt)
    return _loss_terms_t(plan, torch.as_tensor(gt, dtype=DTYPE), torch.as_tensor(negatives, dtype=DTYPE))


@dataclass
class LossGradient:
    """Matching loss and its gradient with respect to every encoder parameter"""
    loss: float
    l_p: float
    l_h: float
    grads: EncoderParams
    grad_x: Optional[np.ndarray] = None
    grad_y: Optional[np.ndarray] = None


def _as_features(raw: np.ndarray, d_in: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        return np.zeros((0, d_in))
    if raw.ndim != 2 or raw.shape[1] != d_in:
        raise ParameterError(f"raw features have shape {raw.shape}, the encoder expects (n, {d_in}).")
    return raw


def loss_gradient(x_raw: np.ndarray, y_raw: np.ndarray, params: EncoderParams,
                  gt: GroundTruthAssignment, solver_cfg: SolverConfig,
                  wrt_inputs: bool = False, use_hard_negatives: bool = True) -> LossGradient:
    """
    Reverse-mode gradient of the matching loss through encode, similarity,
    augmentation, the unrolled Sinkhorn iterations and the count rescale.

    Raises:
        ParameterError: zero iterations or mismatched shapes
        NumericalError: a non-finite value appeared (names the iteration)
    """
    solver_cfg.validate()
    x_np = _as_features(x_raw, params.d_in)
    y_np = _as_features(y_raw, params.d_in)
    if gt.matrix.shape != (x_np.shape[0] + 1, y_np.shape[0] + 1):
        raise ParameterError(
            f"ground truth shape {gt.matrix.shape} does not match M={x_np.shape[0]}, N={y_np.shape[0]}.")

    tensors = _param_tensors(params, requires_grad=True)
    x_t = torch.tensor(x_np, dtype=DTYPE, requires_grad=wrt_inputs)
    y_t = torch.tensor(y_np, dtype=DTYPE, requires_grad=wrt_inputs)
    total, l_p, l_h = _forward_loss(x_t, y_t, tensors, gt.matrix, solver_cfg, use_hard_negatives)
    if not torch.isfinite(total):
        raise NumericalError(f"matching loss is not finite ({total.detach().item()}).",
                             iteration=solver_cfg.iterations - 1)

    flat = [p for group in tensors.values() for p in group]
    inputs = flat + ([x_t, y_t] if wrt_inputs else [])
    grads = torch.autograd.grad(total, inputs, allow_unused=True)

    def g(tensor, grad):
        return np.zeros(tuple(tensor.shape)) if grad is None else grad.detach().numpy().copy()

    values = [g(t, gr) for t, gr in zip(inputs, grads)]
    k = len(tensors["hidden_weights"])
    grad_params = EncoderParams(
        hidden_weights=values[0:k],
        hidden_biases=values[k:2 * k],
        weight=values[2 * k],
        bias=values[2 * k + 1],
        dust_score=float(values[2 * k + 2]),
    )
    result = LossGradient(loss=total.detach().item(), l_p=l_p.detach().item(), l_h=l_h.detach().item(),
                          grads=grad_params)
    if wrt_inputs:
        result.grad_x, result.grad_y = values[-2], values[-1]
    return result


@dataclass
class TrainingConfig:
    """Optimizer settings: Adam at 5e-5, c at 1e-2, 0.95 decay per epoch"""
    optimizer: str = "adam"
    learning_rate: float = 5e-5
    c_learning_rate: float = 1e-2
    momentum: float = 0.0
    epochs: int = 1
    lr_decay: float = 0.95
    use_hard_negatives: bool = True
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(sigma=0.05, log_domain=False))
    seed: int = 0

    def validate(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"optimizer must be 'adam' or 'sgd', got '{self.optimizer}'.")
        if self.learning_rate < 0 or self.c_learning_rate < 0 or self.momentum < 0:
            raise ParameterError("learning rates and momentum must be non-negative.")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be at least 1, got {self.epochs}.")
        self.solver.validate()


def _make_optimizer(cfg: TrainingConfig, tensors: Dict[str, List[torch.Tensor]]) -> torch.optim.Optimizer:
    encoder = tensors["hidden_weights"] + tensors["hidden_biases"] + tensors["weight"] + tensors["bias"]
    groups = [
        {"params": encoder, "lr": cfg.learning_rate},
        {"params": tensors["dust_score"], "lr": cfg.c_learning_rate},
    ]
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(groups, lr=cfg.learning_rate, momentum=cfg.momentum)
    return torch.optim.Adam(groups, lr=cfg.learning_rate)


def train_encoder(dataset: Iterable[TrainingExample], params: EncoderParams,
                  optimizer_cfg: Optional[TrainingConfig] = None) -> TrainingResult:
    """
    Fit the encoder and the dust-bin score c on frame pairs.

    One optimizer step per example, examples shuffled per epoch with the
    configured seed, learning rates decayed by ``lr_decay`` after each epoch.

    Raises:
        ParameterError: empty dataset or invalid optimizer settings
        TrainingDivergedError: the loss became non-finite (carries the trace)
    """
    cfg = optimizer_cfg or TrainingConfig()
    cfg.validate()
    examples = [ex for ex in dataset if ex.gt.m + ex.gt.n > 0]
    if not examples:
        raise ParameterError("train_encoder needs at least one frame pair with instances.")

    tensors = _param_tensors(params, requires_grad=True)
    optimizer = _make_optimizer(cfg, tensors)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=1, gamma=cfg.lr_decay)
    rng = np.random.default_rng(cfg.seed)
    trace: List[LossTraceRow] = []

    step = 0
    for epoch in range(cfg.epochs):
        for index in rng.permutation(len(examples)):
            ex = examples[index]
            optimizer.zero_grad()
            try:
                total, l_p, l_h = _forward_loss(
                    torch.as_tensor(_as_features(ex.x_raw, params.d_in), dtype=DTYPE),
                    torch.as_tensor(_as_features(ex.y_raw, params.d_in), dtype=DTYPE),
                    tensors, ex.gt.matrix, cfg.solver, cfg.use_hard_negatives)
            except NumericalError as e:
                raise TrainingDivergedError(
                    f"training diverged at step {step}: {e}", trace=trace, iteration=e.iteration) from e
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"training diverged at step {step}: loss is {total.detach().item()}. "
                    f"Lower the learning rates or raise sigma.", trace=trace)
            total.backward()
            optimizer.step()
            trace.append(LossTraceRow(step=step, loss=total.detach().item(), l_p=l_p.detach().item(),
                                      l_h=l_h.detach().item(), c=tensors["dust_score"][0].detach().item()))
            step += 1
        scheduler.step()
        logger.info("epoch finished", extra={
            "epoch": epoch, "steps": step, "loss": trace[-1].loss, "c": trace[-1].c})

    return TrainingResult(params=_params_from_tensors(tensors), trace=trace)


def attach_proposal_features(frame: FrameObservation, proposals: PointSet,
                             radius: float = MATCH_RADIUS,
                             rng: Optional[np.random.Generator] = None) -> Tuple[PointSet, np.ndarray]:
    """
    Give every proposal an identity and a raw feature.

    Proposal/ground-truth pairs are claimed in order of distance; each ground
    truth point is claimed at most once and only within ``radius``. Claimed
    proposals take the identity and feature of their ground-truth point, the
    rest get no identity and a random background feature.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    gt_coords = frame.points.coords()
    dim = frame.raw_features.shape[1] if frame.raw_features is not None and frame.raw_features.ndim == 2 else 0
    prop_coords = proposals.coords()
    owner = [-1] * len(prop_coords)

    if len(gt_coords) and len(prop_coords):
        tree = cKDTree(gt_coords)
        pairs = tree.query_ball_point(prop_coords, r=radius)
        candidates = []
        for p, near in enumerate(pairs):
            for g in near:
                candidates.append((float(np.hypot(*(prop_coords[p] - gt_coords[g]))), p, g))
        claimed = set()
        for _, p, g in sorted(candidates):
            if owner[p] == -1 and g not in claimed:
                owner[p] = g
                claimed.add(g)

    points, features = [], []
    for p, point in enumerate(proposals.points):
        g = owner[p]
        identity = frame.points.points[g].identity if g >= 0 else None
        points.append(HeadPoint(row=point.row, col=point.col, identity=identity))
        if g >= 0 and dim:
            features.append(frame.raw_features[g])
        else:
            features.append(_background_feature(rng, dim))
    labelled = PointSet(frame_index=frame.frame_index, points=points,
                        frame_height=proposals.frame_height, frame_width=proposals.frame_width)
    return labelled, (np.array(features, dtype=np.float64) if features else np.zeros((0, dim)))


def _background_feature(rng: np.random.Generator, dim: int) -> np.ndarray:
    vec = rng.standard_normal(dim)
    return vec / max(np.linalg.norm(vec), EPS)


def merge_proposals(frame: FrameObservation, proposals: PointSet, radius: float = MATCH_RADIUS,
                    rng: Optional[np.random.Generator] = None) -> Tuple[PointSet, np.ndarray]:
    """
    Union of ground-truth points and predicted proposals.

    Proposals within ``radius`` of a ground-truth point duplicate it and are
    dropped; the others are appended unlabelled with background features.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    gt_coords = frame.points.coords()
    features = frame.raw_features if frame.raw_features is not None else np.zeros((len(gt_coords), 0))
    extra_points, extra_features = [], []
    if len(proposals):
        if len(gt_coords):
            distances, _ = cKDTree(gt_coords).query(proposals.coords())
        else:
            distances = np.full(len(proposals), np.inf)
        for point, distance in zip(proposals.points, np.atleast_1d(distances)):
            if distance > radius:
                extra_points.append(HeadPoint(row=point.row, col=point.col))
                extra_features.append(_background_feature(rng, features.shape[1]))
    merged = PointSet(frame_index=frame.frame_index, points=list(frame.points.points) + extra_points,
                      frame_height=frame.points.frame_height, frame_width=frame.points.frame_width)
    if extra_features:
        features = np.vstack([features, np.array(extra_features)])
    return merged, features


def build_training_example(a: FrameObservation, b: FrameObservation, proposal_source: str = "gt",
                           proposals_a: Optional[PointSet] = None, proposals_b: Optional[PointSet] = None,
                           radius: float = MATCH_RADIUS,
                           rng: Optional[np.random.Generator] = None) -> TrainingExample:
    """
    Training pair from two labelled frames.

    ``proposal_source="gt"`` trains on ground-truth points only;
    ``"gt+pred"`` merges in the predicted proposals of each frame, whose
    unmatched members are labelled as dust-bin instances.
    """
    if a.raw_features is None or b.raw_features is None:
        raise ParameterError("training frames need raw features.")
    if proposal_source == "gt":
        pts_a, feat_a = a.points, a.raw_features
        pts_b, feat_b = b.points, b.raw_features
    elif proposal_source == "gt+pred":
        if proposals_a is None or proposals_b is None:
            raise ParameterError("proposal_source 'gt+pred' needs proposals for both frames.")
        rng = rng if rng is not None else np.random.default_rng(0)
        pts_a, feat_a = merge_proposals(a, proposals_a, radius, rng)
        pts_b, feat_b = merge_proposals(b, proposals_b, radius, rng)
    else:
        raise ParameterError(f"proposal_source must be 'gt' or 'gt+pred', got '{proposal_source}'.")
    gt = assignment_from_identities(pts_a.identities(), pts_b.identities())
    return TrainingExample(x_raw=np.asarray(feat_a, dtype=np.float64),
                           y_raw=np.asarray(feat_b, dtype=np.float64), gt=gt)


@dataclass
class GradientCheckReport:
    max_relative_error: float
    per_instance: List[float] = field(default_factory=list)


def _flatten(tensors: Dict[str, List[torch.Tensor]]) -> List[torch.Tensor]:
    return [p for group in tensors.values() for p in group]


def _central_differences(x_raw: np.ndarray, y_raw: np.ndarray, params: EncoderParams, gt: np.ndarray,
                         solver_cfg: SolverConfig, h: float) -> np.ndarray:
    tensors = _param_tensors(params)
    x_t = torch.as_tensor(x_raw, dtype=DTYPE)
    y_t = torch.as_tensor(y_raw, dtype=DTYPE)
    estimates = []
    with torch.no_grad():
        for tensor in _flatten(tensors):
            flat = tensor.view(-1)
            for k in range(flat.numel()):
                original = float(flat[k])
                flat[k] = original + h
                plus = float(_forward_loss(x_t, y_t, tensors, gt, solver_cfg)[0])
                flat[k] = original - h
                minus = float(_forward_loss(x_t, y_t, tensors, gt, solver_cfg)[0])
                flat[k] = original
                estimates.append((plus - minus) / (2 * h))
    return np.array(estimates)


def _flat_grads(grads: EncoderParams) -> np.ndarray:
    parts = [*grads.hidden_weights, *grads.hidden_biases, grads.weight, grads.bias, np.array([grads.dust_score])]
    return np.concatenate([np.ravel(p) for p in parts])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Largest componentwise |a - n| / max(|a|, |n|, 1e-3 * scale), where scale is
    max(1, |n|_inf); components far below the gradient's scale are compared
    against that floor instead of their own magnitude.
    """
    floor = 1e-3 * max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 1.0)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(instances: int = 50, seed: int = 7, m: int = 3, n: int = 4, d_in: int = 5,
                   d_out: int = 4, h: float = 1e-5,
                   solver_cfg: Optional[SolverConfig] = None) -> GradientCheckReport:
    """
    Compare autograd gradients with central differences on random instances.

    Every instance draws raw features, a random partial matching and random
    encoder parameters (including c).
    """
    solver_cfg = solver_cfg or SolverConfig(sigma=1.0, iterations=100, log_domain=True)
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(instances):
        x_raw = rng.standard_normal((m, d_in))
        y_raw = rng.standard_normal((n, d_in))
        ids_x = list(range(m))
        ids_y = [int(v) for v in rng.permutation(m + n)[:n]]
        gt = assignment_from_identities(ids_x, ids_y)
        params = EncoderParams(weight=rng.standard_normal((d_out, d_in)), bias=0.1 * rng.standard_normal(d_out),
                               dust_score=float(rng.uniform(-0.5, 0.5)))
        analytic = _flat_grads(loss_gradient(x_raw, y_raw, params, gt, solver_cfg).grads)
        numeric = _central_differences(x_raw, y_raw, params, gt.matrix, solver_cfg, h)
        errors.append(relative_error(analytic, numeric))
    worst = max(errors) if errors else 0.0
    logger.info("gradient check finished", extra={"instances": instances, "max_relative_error": worst})
    return GradientCheckReport(max_relative_error=worst, per_instance=errors)

"""
Video counting by decomposition

The count of a video is the count of its first frame plus the inflow of
every sampled frame pair. Inflows are soft sums read from the transport
plan, accumulated in pair order without rounding.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import spearmanr

from .config import RunConfig
from .density import augment_proposals, extract_head_proposals, render_density
from .descriptors import (
    TrainingConfig,
    attach_proposal_features,
    build_training_example,
    encode_set,
    init_encoder,
    normalize_features,
    similarity_matrix,
    train_encoder,
)
from .exceptions import ParameterError, VicountError
from .flows import decode_assignment, hungarian_baseline, soft_inflow_count, soft_outflow_count
from .metrics import evaluate, video_errors
from .models import (
    DensityMap,
    DescriptorSet,
    EncoderParams,
    FrameObservation,
    MetricsReport,
    PairResult,
    PointSet,
    SceneSequence,
    SweepRow,
    TrainingExample,
    TrainingResult,
    VideoCountResult,
)
from .simulator import distinct_identities, ground_truth_flows, pair_indices, sample_training_pairs, sampled_frames
from .solver import SolverConfig, build_augmented_score, solve

logger = logging.getLogger(__name__)

Sequences = Union[SceneSequence, Sequence[SceneSequence]]


def solver_config(config: RunConfig) -> SolverConfig:
    return SolverConfig(sigma=config.sigma, iterations=config.sinkhorn_iters, log_domain=config.log_domain)


def _density(frame: FrameObservation, config: RunConfig) -> DensityMap:
    return render_density(frame.points, config.density_sigma, config.density_window)


def _proposals(density: DensityMap, frame_index: int, config: RunConfig) -> PointSet:
    peak = float(density.values.max()) if density.values.size else 0.0
    return extract_head_proposals(density, min_peak=config.min_peak_ratio * peak,
                                  nms_radius=config.nms_radius, frame_index=frame_index)


def initial_count(frame: Union[FrameObservation, DensityMap, PointSet], mode: str = "identities",
                  config: Optional[RunConfig] = None) -> float:
    """
    Count of the first frame.

    A DensityMap counts as its mass and a PointSet as its length. A frame is
    counted by its identities (``"identities"``), by the mass of its rendered
    density (``"density"``) or by the proposals extracted from that density
    (``"proposals"``).
    """
    if isinstance(frame, DensityMap):
        return frame.total()
    if isinstance(frame, PointSet):
        return float(len(frame))
    if mode == "identities":
        if frame.points.has_identities():
            return float(len(frame.identity_set()))
        return float(len(frame.points))
    config = config or RunConfig()
    if mode == "density":
        return _density(frame, config).total()
    if mode == "proposals":
        return float(len(_proposals(_density(frame, config), frame.frame_index, config)))
    raise ParameterError(f"mode must be 'identities', 'density' or 'proposals', got '{mode}'.")


@dataclass
class _FrameView:
    points: PointSet
    descriptors: Optional[DescriptorSet]


def _prepare_view(frame: FrameObservation, encoder: Optional[EncoderParams], config: RunConfig) -> _FrameView:
    if config.point_mode == "proposals":
        proposals = _proposals(_density(frame, config), frame.frame_index, config)
        rng = np.random.default_rng([config.seed, frame.frame_index])
        points, raw = attach_proposal_features(frame, proposals, config.match_radius, rng)
    else:
        points, raw = frame.points, frame.raw_features

    if config.flow_source == "oracle":
        return _FrameView(points=points, descriptors=None)
    if raw is None:
        raise ParameterError(
            f"frame {frame.frame_index} has no appearance features; attach a feature sidecar "
            f"or use flow_source 'oracle'.")
    if config.descriptor_mode == "trained-encoder":
        return _FrameView(points=points, descriptors=encode_set(raw, encoder))
    return _FrameView(points=points, descriptors=normalize_features(raw))


def _count_pair(t0: int, t1: int, views: Dict[int, _FrameView], seq: SceneSequence,
                dust_score: float, config: RunConfig, solver_cfg: SolverConfig) -> PairResult:
    a, b = seq.frames[t0], seq.frames[t1]
    gt_in = gt_out = None
    if a.points.has_identities() and b.points.has_identities():
        gt_in, gt_out, _ = ground_truth_flows(a, b)

    if config.flow_source == "oracle":
        if gt_in is None:
            raise ParameterError("flow_source 'oracle' needs identity labels on every point.")
        shared = len(a.identity_set() & b.identity_set())
        return PairResult(t0=t0, t1=t1, inflow=float(gt_in), outflow=float(gt_out), matched=shared,
                          decoded_inflow=gt_in, decoded_outflow=gt_out, gt_inflow=gt_in, gt_outflow=gt_out)

    X, Y = views[t0].descriptors, views[t1].descriptors
    C = similarity_matrix(X, Y)
    if config.flow_source == "hungarian":
        decoded = hungarian_baseline(C, config.hungarian_threshold)
        return PairResult(t0=t0, t1=t1, inflow=float(len(decoded.inflow)), outflow=float(len(decoded.outflow)),
                          matched=len(decoded.matched), decoded_inflow=len(decoded.inflow),
                          decoded_outflow=len(decoded.outflow), gt_inflow=gt_in, gt_outflow=gt_out,
                          decomposition=decoded)

    if C.shape == (0, 0):
        return PairResult(t0=t0, t1=t1, inflow=0.0, outflow=0.0, gt_inflow=gt_in, gt_outflow=gt_out)
    plan = solve(build_augmented_score(C, dust_score), solver_cfg)
    decoded = decode_assignment(plan)
    result = PairResult(t0=t0, t1=t1, inflow=soft_inflow_count(plan), outflow=soft_outflow_count(plan),
                        violation=plan.marginal_violation, matched=len(decoded.matched),
                        decoded_inflow=len(decoded.inflow), decoded_outflow=len(decoded.outflow),
                        gt_inflow=gt_in, gt_outflow=gt_out, decomposition=decoded)
    logger.debug("pair counted", extra={
        "t0": t0, "t1": t1, "inflow": result.inflow, "outflow": result.outflow,
        "violation": result.violation, "fallback": plan.fallback})
    return result


def count_video(seq: SceneSequence, tau: int, encoder: Optional[EncoderParams] = None,
                solver_cfg: Optional[SolverConfig] = None,
                config: Optional[RunConfig] = None) -> VideoCountResult:
    """
    Count a video as N(0) plus the inflow of every sampled pair.

    Pairs may be solved on a thread pool (``config.max_workers``); results
    are reduced in pair order. When a pair fails the result is returned
    partial, holding the pairs before it and the index of the failing pair.
    """
    config = config or RunConfig()
    solver_cfg = solver_cfg or solver_config(config)
    if seq.duration < 1:
        raise ParameterError("cannot count an empty sequence.")
    if config.descriptor_mode == "trained-encoder" and encoder is None and config.flow_source != "oracle":
        raise ParameterError("descriptor_mode 'trained-encoder' needs encoder parameters.")

    mode = "density" if config.point_mode == "proposals" else "identities"
    n0 = initial_count(seq.frames[0], mode, config)
    if seq.duration == 1:
        return VideoCountResult(video_id=seq.video_id, initial_count=n0, pairs=[], total=n0, tau=int(tau))

    pairs = pair_indices(seq.duration, tau)
    views = {t: _prepare_view(seq.frames[t], encoder, config) for t in sampled_frames(seq.duration, tau)}
    dust_score = encoder.dust_score if config.descriptor_mode == "trained-encoder" and encoder else config.dust_score

    def run(pair):
        try:
            return _count_pair(pair[0], pair[1], views, seq, dust_score, config, solver_cfg)
        except VicountError as e:
            return e

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            outcomes = list(pool.map(run, pairs))
    else:
        outcomes = [run(pair) for pair in pairs]

    done: List[PairResult] = []
    failed = None
    for k, outcome in enumerate(outcomes):
        if isinstance(outcome, Exception):
            failed = k
            logger.warning("pair failed, returning a partial count", extra={
                "video_id": seq.video_id, "pair": k, "t0": pairs[k][0], "t1": pairs[k][1],
                "error": str(outcome)})
            break
        done.append(outcome)

    total = n0
    for pair in done:
        total += pair.inflow
    logger.info("video counted", extra={
        "video_id": seq.video_id, "tau": int(tau), "pairs": len(done), "n0": n0, "total": total})
    return VideoCountResult(video_id=seq.video_id, initial_count=n0, pairs=done, total=total, tau=int(tau),
                            partial=failed is not None, failed_pair=failed)


def _as_list(seqs: Sequences) -> List[SceneSequence]:
    return [seqs] if isinstance(seqs, SceneSequence) else list(seqs)


def interval_sweep(seqs: Sequences, taus: Sequence[int], encoder: Optional[EncoderParams] = None,
                   solver_cfg: Optional[SolverConfig] = None,
                   config: Optional[RunConfig] = None) -> List[SweepRow]:
    """
    Count every sequence at each tau and score the totals against all
    distinct identities of the sequence, so identities living entirely
    between two samples show up as error.
    """
    sequences = _as_list(seqs)
    if not taus:
        raise ParameterError("interval_sweep needs at least one tau.")
    gts = [distinct_identities(seq) for seq in sequences]
    lengths = [seq.duration for seq in sequences]
    rows = []
    for tau in taus:
        preds = [count_video(seq, int(tau), encoder, solver_cfg, config).total for seq in sequences]
        errors = video_errors(preds, gts, lengths)
        rows.append(SweepRow(tau=int(tau), mae=errors.mae, mse=errors.mse, wrae=errors.wrae))
        logger.info("sweep row", extra=rows[-1].to_dict())
    return rows


def sweep_trend(rows: Sequence[SweepRow], min_tau: int = 0) -> float:
    """Spearman correlation of MAE against tau over rows with tau >= min_tau"""
    selected = [row for row in rows if row.tau >= min_tau]
    if len(selected) < 2:
        raise ParameterError("a trend needs at least two sweep rows.")
    rho, _ = spearmanr([row.tau for row in selected], [row.mae for row in selected])
    return float(rho)


def evaluate_counts(results: Sequence[VideoCountResult], seqs: Sequences) -> MetricsReport:
    """
    Score counting results against the distinct identities of the sampled
    frames, with per-pair ground-truth flows for MIAE/MOAE.
    """
    sequences = _as_list(seqs)
    if len(results) != len(sequences):
        raise ParameterError(f"{len(results)} results for {len(sequences)} sequences.")
    gts = [distinct_identities(seq, sampled_frames(seq.duration, res.tau)) if seq.duration > 1
           else distinct_identities(seq, [0]) for res, seq in zip(results, sequences)]
    pred_flows, gt_flows = [], []
    for res in results:
        if any(p.gt_inflow is None for p in res.pairs):
            pred_flows = gt_flows = None
            break
        pred_flows.append([(p.inflow, p.outflow) for p in res.pairs])
        gt_flows.append([(p.gt_inflow, p.gt_outflow) for p in res.pairs])
    if pred_flows is not None and not any(pred_flows):
        pred_flows = gt_flows = None
    return evaluate([r.total for r in results], gts, [seq.duration for seq in sequences],
                    pred_flows=pred_flows, gt_flows=gt_flows, video_ids=[r.video_id for r in results])


def compare_association(seqs: Sequences, tau: int, encoder: Optional[EncoderParams] = None,
                        config: Optional[RunConfig] = None,
                        solver_cfg: Optional[SolverConfig] = None) -> List[Dict[str, Any]]:
    """Transport counting against Hungarian-threshold counting on the same videos"""
    config = config or RunConfig()
    sequences = _as_list(seqs)
    rows = []
    for method in ("transport", "hungarian"):
        method_cfg = config.replace(flow_source=method)
        results = [count_video(seq, tau, encoder, solver_cfg, method_cfg) for seq in sequences]
        report = evaluate_counts(results, sequences)
        rows.append({"method": method, "mae": report.mae, "mse": report.mse, "wrae": report.wrae_percent,
                     "miae": report.miae, "moae": report.moae})
    return rows


def training_config(config: RunConfig) -> TrainingConfig:
    """Optimizer settings of a run; training unrolls the naive-domain solver"""
    return TrainingConfig(
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        c_learning_rate=config.c_learning_rate,
        momentum=config.momentum,
        epochs=config.epochs,
        lr_decay=config.lr_decay,
        use_hard_negatives=config.use_hard_negatives,
        solver=SolverConfig(sigma=config.sigma, iterations=config.sinkhorn_iters, log_domain=False),
        seed=config.seed,
    )


def build_training_set(seqs: Sequences, pairs_per_video: int,
                       config: Optional[RunConfig] = None) -> List[TrainingExample]:
    """
    Frame pairs at random 2s-8s intervals (by default), optionally merged with
    noisy proposals extracted from the rendered density of each frame.
    """
    config = config or RunConfig()
    examples = []
    for v, seq in enumerate(_as_list(seqs)):
        seed = config.seed + v
        rng = np.random.default_rng([seed, 1])
        for a, b in sample_training_pairs(seq, config.train_interval_range_frames, pairs_per_video, seed):
            proposals = [None, None]
            if config.proposal_source == "gt+pred":
                for k, frame in enumerate((a, b)):
                    extracted = _proposals(_density(frame, config), frame.frame_index, config)
                    noise_seed = int(rng.integers(2 ** 31))
                    proposals[k] = augment_proposals(extracted, config.noise_level, noise_seed)
            examples.append(build_training_example(a, b, config.proposal_source, proposals[0], proposals[1],
                                                   config.match_radius, rng))
    return examples


def train(seqs: Sequences, pairs_per_video: int, config: Optional[RunConfig] = None,
          encoder: Optional[EncoderParams] = None) -> TrainingResult:
    """Train an encoder (fresh unless given) on frame pairs drawn from the sequences"""
    config = config or RunConfig()
    sequences = _as_list(seqs)
    examples = build_training_set(sequences, pairs_per_video, config)
    if encoder is None:
        features = sequences[0].frames[0].raw_features
        if features is None:
            raise ParameterError("training needs sequences with appearance features.")
        d_in = features.shape[1]
        encoder = init_encoder(d_in, config.descriptor_dim, c_init=config.c_init, seed=config.seed)
    return train_encoder(examples, encoder, training_config(config))

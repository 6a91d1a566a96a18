"""
Video-level and pair-level counting errors

mse is the root of the mean squared error, following crowd-counting usage.
wrae weights each video's relative error by its share of frames and is
reported in percent; report headers also carry it under the alias mrae.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError, ParameterError
from .models import FlowErrors, MetricsReport, VideoErrors

DENSITY_EDGES = (50, 100, 150, 200)

Flow = Tuple[float, float]


def video_errors(preds: Sequence[float], gts: Sequence[float],
                 lengths: Optional[Sequence[float]] = None) -> VideoErrors:
    """
    MAE, MSE and WRAE over videos.

    Videos whose ground truth is 0 have no relative error; they are left out
    of wrae (weights renormalized over the rest) and listed in ``excluded``.
    When every video is excluded wrae is NaN.
    """
    preds_a = np.asarray(preds, dtype=np.float64)
    gts_a = np.asarray(gts, dtype=np.float64)
    if preds_a.ndim != 1 or preds_a.size == 0 or preds_a.shape != gts_a.shape:
        raise ParameterError(
            f"preds and gts must be non-empty lists of equal length, got {preds_a.size} and {gts_a.size}.")
    lengths_a = np.ones_like(gts_a) if lengths is None else np.asarray(lengths, dtype=np.float64)
    if lengths_a.shape != gts_a.shape:
        raise ParameterError(f"lengths must have one entry per video, got {lengths_a.size} for {gts_a.size}.")

    diff = preds_a - gts_a
    mae = float(np.mean(np.abs(diff)))
    mse = float(np.sqrt(np.mean(diff ** 2)))

    valid = gts_a != 0
    excluded = [int(i) for i in np.flatnonzero(~valid)]
    if valid.any():
        weights = lengths_a[valid] / lengths_a[valid].sum()
        wrae = float(np.sum(weights * np.abs(diff[valid]) / np.abs(gts_a[valid])) * 100.0)
    else:
        wrae = float("nan")
    return VideoErrors(mae=mae, mse=mse, wrae=wrae, excluded=excluded)


def _is_pair(item: Any) -> bool:
    return isinstance(item, (tuple, list)) and len(item) == 2 and all(np.isscalar(v) for v in item)


def _per_video(flows: Sequence[Any]) -> List[Sequence[Flow]]:
    # a flat list of (in, out) pairs is one video
    if flows and all(_is_pair(item) for item in flows):
        return [flows]
    return list(flows)


def flow_errors(pred_flows: Sequence[Any], gt_flows: Sequence[Any]) -> FlowErrors:
    """
    Mean absolute inflow and outflow errors pooled over every sampled pair of
    every video.

    Both arguments are either one list of (inflow, outflow) pairs or a list
    of such lists, one per video.
    """
    pred_videos = _per_video(pred_flows)
    gt_videos = _per_video(gt_flows)
    if len(pred_videos) != len(gt_videos):
        raise DataError(f"predicted flows cover {len(pred_videos)} videos, ground truth {len(gt_videos)}.")

    in_err, out_err = [], []
    for v, (pred, gt) in enumerate(zip(pred_videos, gt_videos)):
        if len(pred) != len(gt):
            raise DataError(
                f"video {v}: {len(pred)} predicted pairs but {len(gt)} ground-truth pairs.")
        for (p_in, p_out), (g_in, g_out) in zip(pred, gt):
            in_err.append(abs(float(p_in) - float(g_in)))
            out_err.append(abs(float(p_out) - float(g_out)))
    if not in_err:
        raise ParameterError("flow_errors needs at least one frame pair.")
    return FlowErrors(miae=float(np.mean(in_err)), moae=float(np.mean(out_err)), pairs=len(in_err))


def density_breakdown(preds: Sequence[float], gts: Sequence[float],
                      edges: Sequence[float] = DENSITY_EDGES) -> List[Dict[str, Any]]:
    """MAE per ground-truth count bucket D0..Dk split at ``edges``"""
    preds_a = np.asarray(preds, dtype=np.float64)
    gts_a = np.asarray(gts, dtype=np.float64)
    if preds_a.shape != gts_a.shape:
        raise ParameterError("preds and gts must have equal length.")
    if list(edges) != sorted(edges):
        raise ParameterError(f"bucket edges must be increasing, got {list(edges)}.")
    buckets = np.digitize(gts_a, edges, right=False)
    bounds = [-np.inf, *edges, np.inf]
    rows = []
    for k in range(len(edges) + 1):
        members = buckets == k
        rows.append({
            "bucket": f"D{k}",
            "low": None if k == 0 else float(bounds[k]),
            "high": None if k == len(edges) else float(bounds[k + 1]),
            "videos": int(members.sum()),
            "mae": float(np.mean(np.abs(preds_a[members] - gts_a[members]))) if members.any() else None,
        })
    return rows


def evaluate(preds: Sequence[float], gts: Sequence[float], lengths: Optional[Sequence[float]] = None,
             pred_flows: Optional[Sequence[Any]] = None, gt_flows: Optional[Sequence[Any]] = None,
             video_ids: Optional[Sequence[str]] = None,
             edges: Sequence[float] = DENSITY_EDGES) -> MetricsReport:
    """Full report: video errors, pooled flow errors, per-video rows and density buckets"""
    errors = video_errors(preds, gts, lengths)
    flows = flow_errors(pred_flows, gt_flows) if pred_flows is not None and gt_flows is not None else None

    ids = list(video_ids) if video_ids is not None else [str(i) for i in range(len(preds))]
    per_video = []
    for k, (pred, gt) in enumerate(zip(preds, gts)):
        per_video.append({
            "video_id": ids[k],
            "pred": float(pred),
            "gt": float(gt),
            "abs_error": abs(float(pred) - float(gt)),
            "length": None if lengths is None else float(lengths[k]),
        })
    return MetricsReport(
        mae=errors.mae,
        mse=errors.mse,
        wrae_percent=errors.wrae,
        miae=flows.miae if flows else None,
        moae=flows.moae if flows else None,
        per_video=per_video,
        density_buckets=density_breakdown(preds, gts, edges),
        excluded=errors.excluded,
    )

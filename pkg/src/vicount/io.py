"""
Reading and writing annotations, features, encoders, plans and run outputs

Annotation files are CSV rows ``frame,id,x,y`` (header optional) with x the
column and y the row of the head center. Appearance features live in a
binary sidecar: magic ``VICF``, u32 count, u32 dim, then count x dim
little-endian float64 values in annotation row order.
"""

import json
import logging
import math
import os
import re
import struct
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import RunConfig
from .exceptions import DataError
from .models import (
    AnnotationRecord,
    DensityMap,
    EncoderParams,
    FrameObservation,
    HeadPoint,
    IdentityRecord,
    LossTraceRow,
    PlanScale,
    PointSet,
    SceneConfig,
    SceneSequence,
    SweepRow,
    TransportPlan,
    VideoCountResult,
)
from .sinks import ResultSink
from .version import get_package_info

logger = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ["frame", "id", "x", "y"]
FEATURE_MAGIC = b"VICF"
ENCODER_FORMAT = "vicount-encoder"
PLAN_HEADER = ["m", "n", "scale", "sigma", "iterations", "violation"]


def _read_rows(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Annotation file not found: {path}.")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=False, index_col=False,
                            names=ANNOTATION_COLUMNS, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=ANNOTATION_COLUMNS, dtype=str)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise DataError(f"{path}: malformed annotation row ({e}).",
                        line=int(match.group(1)) if match else None) from e
    frame.index = np.arange(1, len(frame) + 1)
    frame = frame.dropna(how="all")
    if len(frame) and [str(v).strip().lower() for v in frame.iloc[0]] == ANNOTATION_COLUMNS:
        frame = frame.iloc[1:]
    return frame


def read_annotation_records(path: str) -> List[AnnotationRecord]:
    """
    Parse and validate an annotation file.

    Raises:
        DataError: malformed row or duplicate (frame, id), with its line number
    """
    rows = _read_rows(path)
    numeric = rows.apply(pd.to_numeric, errors="coerce")
    records = []
    seen: Dict[Tuple[int, int], int] = {}
    for line, values in zip(rows.index, numeric.itertuples(index=False)):
        frame_id, person_id, x, y = (float(v) for v in values)
        if not all(math.isfinite(v) for v in (frame_id, person_id, x, y)):
            raise DataError(f"{path}:{line}: expected numeric 'frame,id,x,y', got "
                            f"'{','.join(str(v) for v in rows.loc[line])}'.", line=int(line))
        if frame_id < 0 or person_id < 0 or not frame_id.is_integer() or not person_id.is_integer():
            raise DataError(f"{path}:{line}: frame and id must be non-negative integers.", line=int(line))
        key = (int(frame_id), int(person_id))
        if key in seen:
            raise DataError(f"{path}:{line}: duplicate (frame, id) = {key}, first seen on line {seen[key]}.",
                            line=int(line))
        seen[key] = int(line)
        records.append(AnnotationRecord(frame_id=key[0], person_id=key[1], x=x, y=y))
    return records


def _registry(frames: List[FrameObservation]) -> Dict[int, IdentityRecord]:
    registry: Dict[int, IdentityRecord] = {}
    previous: set = set()
    for frame in frames:
        current = {p.identity for p in frame.points.points}
        for identity in sorted(current - previous):
            record = registry.setdefault(identity, IdentityRecord(identity=identity, spans=[]))
            record.spans.append((frame.frame_index, -1))
        for identity in previous - current:
            start, _ = registry[identity].spans[-1]
            registry[identity].spans[-1] = (start, frame.frame_index)
        previous = current
    for identity in previous:
        start, _ = registry[identity].spans[-1]
        registry[identity].spans[-1] = (start, len(frames))
    return registry


def load_annotations(path: str, frame_height: Optional[int] = None, frame_width: Optional[int] = None,
                     fps: float = 10.0, video_id: Optional[str] = None,
                     features_path: Optional[str] = None, duration: Optional[int] = None) -> SceneSequence:
    """
    Build a sequence with frames indexed densely from 0; frames without rows
    are empty, as are trailing frames up to ``duration``. The frame size
    defaults to the smallest one holding every point.

    Raises:
        DataError: malformed rows, duplicates, or points outside the given frame
    """
    records = read_annotation_records(path)
    if frame_height is None:
        frame_height = max(2, int(math.ceil(max((r.y for r in records), default=0.0))) + 1)
    if frame_width is None:
        frame_width = max(2, int(math.ceil(max((r.x for r in records), default=0.0))) + 1)
    duration = max(max((r.frame_id for r in records), default=0) + 1, duration or 0)

    per_frame: List[List[HeadPoint]] = [[] for _ in range(duration)]
    for record in records:
        per_frame[record.frame_id].append(HeadPoint(row=record.y, col=record.x, identity=record.person_id))
    frames = []
    for index, points in enumerate(per_frame):
        point_set = PointSet(frame_index=index, points=points, frame_height=frame_height, frame_width=frame_width)
        try:
            point_set.validate()
        except DataError as e:
            raise DataError(f"{path}: {e}") from e
        frames.append(FrameObservation(frame_index=index, points=point_set))

    config = SceneConfig(frame_height=frame_height, frame_width=frame_width, duration=duration, fps=fps,
                         initial_count=len(frames[0].points), entry_rate=0.0)
    seq = SceneSequence(config=config, frames=frames, identity_registry=_registry(frames),
                        video_id=video_id or os.path.splitext(os.path.basename(path))[0])
    if features_path is not None:
        attach_features(seq, load_features(features_path))
    logger.info("annotations loaded", extra={"path": path, "frames": duration, "rows": len(records)})
    return seq


def save_annotations(seq: SceneSequence, path: str) -> None:
    rows = [(frame.frame_index, p.identity, p.col, p.row) for frame in seq.frames for p in frame.points.points]
    table = pd.DataFrame(rows, columns=ANNOTATION_COLUMNS)
    table.to_csv(path, index=False, lineterminator="\n")


def save_features(seq: SceneSequence, path: str) -> None:
    """Write the per-point features of every frame, in annotation row order"""
    blocks = [frame.raw_features for frame in seq.frames if len(frame.points)]
    if any(block is None for block in blocks):
        raise DataError("every non-empty frame needs raw features to write a feature sidecar.")
    dim = seq.config.appearance_dim if not blocks else int(blocks[0].shape[1])
    data = np.vstack(blocks) if blocks else np.zeros((0, dim))
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", data.shape[0], dim))
        f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_features(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path} is not a feature sidecar (magic {blob[:4]!r}).")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated header.")
    count, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + 8 * count * dim
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {count}x{dim} features, found {len(blob)}.")
    return np.frombuffer(blob[12:], dtype="<f8").astype(np.float64).reshape(count, dim)


def attach_features(seq: SceneSequence, features: np.ndarray) -> SceneSequence:
    """Split a sidecar matrix over the frames of a sequence, in place"""
    total = sum(len(frame.points) for frame in seq.frames)
    if features.shape[0] != total:
        raise DataError(f"feature sidecar holds {features.shape[0]} rows, the annotations {total} points.")
    offset = 0
    for frame in seq.frames:
        size = len(frame.points)
        frame.raw_features = features[offset:offset + size]
        offset += size
    return seq


def _tensor(array: np.ndarray) -> Dict[str, Any]:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "data": array.ravel().tolist()}


def _array(entry: Dict[str, Any], name: str) -> np.ndarray:
    data = np.asarray(entry["data"], dtype=np.float64)
    shape = tuple(int(s) for s in entry["shape"])
    if data.size != int(np.prod(shape)):
        raise DataError(f"encoder tensor '{name}' declares shape {shape} but holds {data.size} values.")
    return data.reshape(shape)


def save_encoder(params: EncoderParams, path: str) -> None:
    weights = [*params.hidden_weights, params.weight]
    biases = [*params.hidden_biases, params.bias]
    payload = {
        "format": ENCODER_FORMAT,
        "version": 1,
        "dust_score": float(params.dust_score),
        "layers": [{"weight": _tensor(w), "bias": _tensor(b)} for w, b in zip(weights, biases)],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_encoder(path: str) -> EncoderParams:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != ENCODER_FORMAT or not payload.get("layers"):
        raise DataError(f"{path} is not a vicount encoder file.")
    layers = [(_array(layer["weight"], f"layers[{k}].weight"), _array(layer["bias"], f"layers[{k}].bias"))
              for k, layer in enumerate(payload["layers"])]
    params = EncoderParams(weight=layers[-1][0], bias=layers[-1][1], dust_score=float(payload["dust_score"]),
                           hidden_weights=[w for w, _ in layers[:-1]], hidden_biases=[b for _, b in layers[:-1]])
    params.validate()
    return params


def save_plan_csv(plan: TransportPlan, path: str) -> None:
    """Dense plan rows after a two-line header naming m, n, scale, sigma, iterations and violation"""
    header = pd.DataFrame([[plan.m, plan.n, plan.scale.value, plan.sigma, plan.iterations_run,
                            plan.marginal_violation]], columns=PLAN_HEADER)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header.to_csv(index=False, lineterminator="\n"))
        f.write(pd.DataFrame(plan.matrix).to_csv(index=False, header=False, lineterminator="\n"))


def load_plan_csv(path: str) -> TransportPlan:
    header = pd.read_csv(path, nrows=1)
    if list(header.columns) != PLAN_HEADER:
        raise DataError(f"{path}: plan header must be {','.join(PLAN_HEADER)}.", line=1)
    meta = header.iloc[0]
    matrix = pd.read_csv(path, skiprows=2, header=None).to_numpy(dtype=np.float64)
    if matrix.shape != (int(meta["m"]) + 1, int(meta["n"]) + 1):
        raise DataError(f"{path}: plan body has shape {matrix.shape}, header says M={meta['m']}, N={meta['n']}.")
    return TransportPlan(matrix=matrix, iterations_run=int(meta["iterations"]),
                         marginal_violation=float(meta["violation"]), scale=PlanScale(meta["scale"]),
                         sigma=float(meta["sigma"]))


def save_density_csv(density: DensityMap, path: str) -> None:
    """Row-major grid, one image row per line"""
    pd.DataFrame(density.values).to_csv(path, index=False, header=False, lineterminator="\n")


def result_payload(results: Sequence[VideoCountResult]) -> Any:
    documents = [r.to_dict() for r in results]
    return documents[0] if len(documents) == 1 else documents


def flows_payload(results: Sequence[VideoCountResult]) -> List[Dict[str, Any]]:
    """Per-pair decoded decompositions of every video"""
    return [{"video_id": r.video_id,
             "pairs": [{"t0": p.t0, "t1": p.t1, **p.decomposition.to_dict()}
                       for p in r.pairs if p.decomposition is not None]}
            for r in results]


def sweep_table(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=["tau", "mae", "mse", "wrae"])


def loss_trace_table(trace: Sequence[LossTraceRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in trace], columns=["step", "loss", "l_p", "l_h", "c"])


def load_count_table(path: str, column: str = "count") -> pd.DataFrame:
    """
    Counts per video from CSV. A table with a ``pred`` and a ``gt`` column
    is returned as is; otherwise the ``column`` (or the only) column is used.
    """
    table = pd.read_csv(path)
    if {"pred", "gt"} <= set(table.columns):
        return table
    if column not in table.columns:
        if table.shape[1] != 1:
            raise DataError(f"{path}: expected a '{column}' column, found {', '.join(table.columns)}.")
        table = table.rename(columns={table.columns[0]: column})
    return table


def write_manifest(sink: ResultSink, command: str, config: RunConfig,
                   outputs: Sequence[str], seeds: Optional[Dict[str, int]] = None,
                   name: str = "manifest.json") -> Dict[str, Any]:
    """Config echo, library versions and seeds of a run; no timestamps so reruns diff clean"""
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "versions": get_package_info(),
        "seeds": seeds or {"seed": config.seed},
        "outputs": list(outputs),
    }
    sink.write_json(name, manifest)
    return manifest

"""
Data models for point sets, transport plans, scenes and counting results
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .exceptions import DataError, OutOfBoundsError, ParameterError


class PlanScale(Enum):
    """Scale a transport plan is expressed in"""
    NORMALIZED = "normalized"
    COUNT = "count"


@dataclass(frozen=True)
class HeadPoint:
    """A head center in pixel coordinates, optionally labelled with an identity"""
    row: float
    col: float
    identity: Optional[int] = None


@dataclass
class PointSet:
    """Head points of one frame"""
    frame_index: int
    points: List[HeadPoint]
    frame_height: int
    frame_width: int

    def __len__(self) -> int:
        return len(self.points)

    def coords(self) -> np.ndarray:
        """(n, 2) array of (row, col)"""
        if not self.points:
            return np.zeros((0, 2), dtype=np.float64)
        return np.array([(p.row, p.col) for p in self.points], dtype=np.float64)

    def identities(self) -> List[Optional[int]]:
        return [p.identity for p in self.points]

    def has_identities(self) -> bool:
        return all(p.identity is not None for p in self.points)

    def validate(self) -> None:
        """Check bounds and identity uniqueness"""
        seen = set()
        for index, point in enumerate(self.points):
            if not (np.isfinite(point.row) and np.isfinite(point.col)):
                raise OutOfBoundsError(
                    f"Point {index} of frame {self.frame_index} has non-finite coordinates "
                    f"({point.row}, {point.col}).", index=index)
            if not (0.0 <= point.row <= self.frame_height - 1
                    and 0.0 <= point.col <= self.frame_width - 1):
                raise OutOfBoundsError(
                    f"Point {index} of frame {self.frame_index} at ({point.row:.3f}, {point.col:.3f}) "
                    f"lies outside the {self.frame_height}x{self.frame_width} frame. "
                    f"Clamp or drop it before rendering.", index=index)
            if point.identity is not None:
                if point.identity in seen:
                    raise DataError(
                        f"Identity {point.identity} appears twice in frame {self.frame_index}.")
                seen.add(point.identity)


@dataclass
class DensityMap:
    """Person-mass per pixel"""
    values: np.ndarray
    kernel_sigma: float
    window: int

    def total(self) -> float:
        return float(self.values.sum())


@dataclass
class DescriptorSet:
    """Unit-norm descriptors aligned index-for-index with a PointSet"""
    vectors: np.ndarray

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1]) if self.vectors.ndim == 2 else 0


@dataclass
class EncoderParams:
    """Affine descriptor encoder with optional tanh hidden layers and the dust-bin score c"""
    weight: np.ndarray
    bias: np.ndarray
    dust_score: float = 0.0
    hidden_weights: List[np.ndarray] = field(default_factory=list)
    hidden_biases: List[np.ndarray] = field(default_factory=list)

    @property
    def d_in(self) -> int:
        if self.hidden_weights:
            return int(self.hidden_weights[0].shape[1])
        return int(self.weight.shape[1])

    @property
    def d_out(self) -> int:
        return int(self.weight.shape[0])

    @property
    def depth(self) -> int:
        return len(self.hidden_weights) + 1

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            weight=self.weight.copy(),
            bias=self.bias.copy(),
            dust_score=float(self.dust_score),
            hidden_weights=[w.copy() for w in self.hidden_weights],
            hidden_biases=[b.copy() for b in self.hidden_biases],
        )

    def validate(self) -> None:
        arrays = [self.weight, self.bias, *self.hidden_weights, *self.hidden_biases]
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.isfinite(self.dust_score):
            raise ParameterError("Encoder parameters contain non-finite entries.")
        if self.bias.shape != (self.weight.shape[0],):
            raise ParameterError(
                f"Encoder bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}.")


@dataclass
class GroundTruthAssignment:
    """(M+1)x(N+1) binary assignment; last row/column are the inflow/outflow dust bins"""
    matrix: np.ndarray

    @property
    def m(self) -> int:
        return int(self.matrix.shape[0]) - 1

    @property
    def n(self) -> int:
        return int(self.matrix.shape[1]) - 1

    def validate(self) -> None:
        m, n = self.m, self.n
        if self.matrix[m, n] != 0:
            raise DataError("Ground-truth assignment corner cell must be 0.")
        if m and not np.all(self.matrix[:m, :].sum(axis=1) == 1):
            raise DataError("Every real row of a ground-truth assignment needs exactly one 1.")
        if n and not np.all(self.matrix[:, :n].sum(axis=0) == 1):
            raise DataError("Every real column of a ground-truth assignment needs exactly one 1.")


@dataclass
class AugmentedScore:
    """Similarity block bordered by the dust-bin score c"""
    matrix: np.ndarray

    @property
    def m(self) -> int:
        return int(self.matrix.shape[0]) - 1

    @property
    def n(self) -> int:
        return int(self.matrix.shape[1]) - 1

    @property
    def c(self) -> float:
        return float(self.matrix[-1, -1])


@dataclass
class Marginals:
    """Histogram vectors of the augmented problem"""
    a_bar: np.ndarray
    b_bar: np.ndarray
    m: int
    n: int

    @property
    def normalizer(self) -> float:
        return float(max(self.m, 1) * max(self.n, 1))

    @property
    def a(self) -> np.ndarray:
        return self.a_bar / self.normalizer

    @property
    def b(self) -> np.ndarray:
        return self.b_bar / self.normalizer


@dataclass
class TransportPlan:
    """Augmented transport plan with convergence diagnostics"""
    matrix: np.ndarray
    iterations_run: int
    marginal_violation: float
    scale: PlanScale
    sigma: float = 0.0
    log_domain: bool = True
    fallback: bool = False
    dual_trace: List[float] = field(default_factory=list)

    @property
    def m(self) -> int:
        return int(self.matrix.shape[0]) - 1

    @property
    def n(self) -> int:
        return int(self.matrix.shape[1]) - 1


@dataclass
class FlowDecomposition:
    """Matched pairs, inflow columns and outflow rows of one frame pair"""
    matched: List[Tuple[int, int]] = field(default_factory=list)
    inflow: List[int] = field(default_factory=list)
    outflow: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "matched": [[int(i), int(j)] for i, j in self.matched],
            "inflow": [int(j) for j in self.inflow],
            "outflow": [int(i) for i in self.outflow],
        }


@dataclass
class SceneConfig:
    """Parameters of a synthetic crowd scene"""
    frame_height: int = 480
    frame_width: int = 640
    duration: int = 600
    fps: float = 10.0
    initial_count: int = 20
    entry_rate: float = 0.2
    exit_rate: float = 0.0
    speed_range: Tuple[float, float] = (0.5, 2.0)
    jitter_std: float = 0.3
    appearance_dim: int = 128
    separability: float = 0.9
    appearance_noise_std: float = 0.02
    feature_memory: int = 100
    allow_reentry: bool = False
    reentry_prob: float = 0.0
    reentry_gap: Tuple[int, int] = (10, 60)
    rng_seed: int = 0

    def validate(self) -> None:
        if self.entry_rate < 0 or self.exit_rate < 0:
            raise ParameterError(
                f"entry_rate and exit_rate must be non-negative, got {self.entry_rate} and {self.exit_rate}.")
        if self.duration < 1:
            raise ParameterError(f"duration must be at least 1 frame, got {self.duration}.")
        if not 0.0 <= self.separability <= 1.0:
            raise ParameterError(f"separability must lie in [0, 1], got {self.separability}.")
        if self.frame_height < 2 or self.frame_width < 2:
            raise ParameterError("frame_height and frame_width must be at least 2 pixels.")
        if self.initial_count < 0:
            raise ParameterError(f"initial_count must be non-negative, got {self.initial_count}.")
        if self.speed_range[0] < 0 or self.speed_range[1] < self.speed_range[0]:
            raise ParameterError(f"speed_range must be an increasing pair of non-negative speeds, got {self.speed_range}.")
        if self.appearance_dim < 1:
            raise ParameterError(f"appearance_dim must be positive, got {self.appearance_dim}.")
        if self.appearance_noise_std < 0 or self.jitter_std < 0:
            raise ParameterError("appearance_noise_std and jitter_std must be non-negative.")
        if not 0.0 <= self.reentry_prob <= 1.0:
            raise ParameterError(f"reentry_prob must lie in [0, 1], got {self.reentry_prob}.")
        if self.exit_rate > 1.0:
            raise ParameterError(
                f"exit_rate is a per-identity, per-frame exit probability and must not exceed 1, got {self.exit_rate}.")
        if self.reentry_gap[0] < 1 or self.reentry_gap[1] < self.reentry_gap[0]:
            raise ParameterError(f"reentry_gap must be an increasing pair of positive frame counts, got {self.reentry_gap}.")

    @property
    def closed(self) -> bool:
        """No entries and no exits: identities bounce off the frame edges instead of leaving"""
        return self.entry_rate == 0 and self.exit_rate == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_height": self.frame_height,
            "frame_width": self.frame_width,
            "duration": self.duration,
            "fps": self.fps,
            "initial_count": self.initial_count,
            "entry_rate": self.entry_rate,
            "exit_rate": self.exit_rate,
            "speed_range": list(self.speed_range),
            "jitter_std": self.jitter_std,
            "appearance_dim": self.appearance_dim,
            "separability": self.separability,
            "appearance_noise_std": self.appearance_noise_std,
            "feature_memory": self.feature_memory,
            "allow_reentry": self.allow_reentry,
            "reentry_prob": self.reentry_prob,
            "reentry_gap": list(self.reentry_gap),
            "rng_seed": self.rng_seed,
        }


@dataclass
class IdentityRecord:
    """Lifetime spans [birth, death) and base appearance of one identity"""
    identity: int
    spans: List[Tuple[int, int]]
    base_feature: Optional[np.ndarray] = None

    @property
    def birth_frame(self) -> int:
        return self.spans[0][0]

    @property
    def death_frame(self) -> int:
        return self.spans[-1][1]

    def present(self, frame_index: int) -> bool:
        return any(start <= frame_index < end for start, end in self.spans)


@dataclass
class FrameObservation:
    """Points of one frame with their raw appearance features"""
    frame_index: int
    points: PointSet
    raw_features: Optional[np.ndarray] = None

    def identity_set(self) -> set:
        if not self.points.has_identities():
            raise DataError(
                f"Frame {self.frame_index} has points without identities; "
                f"ground-truth flows need every point labelled.")
        return set(self.points.identities())


@dataclass
class SceneSequence:
    """A simulated or ingested video"""
    config: SceneConfig
    frames: List[FrameObservation]
    identity_registry: Dict[int, IdentityRecord] = field(default_factory=dict)
    video_id: str = "video"

    @property
    def duration(self) -> int:
        return len(self.frames)

    def has_features(self) -> bool:
        return all(f.raw_features is not None for f in self.frames)


@dataclass
class TrainingExample:
    """Raw features of a frame pair with their ground-truth assignment"""
    x_raw: np.ndarray
    y_raw: np.ndarray
    gt: GroundTruthAssignment


@dataclass
class LossTraceRow:
    """One optimizer step"""
    step: int
    loss: float
    l_p: float
    l_h: float
    c: float

    def to_dict(self) -> Dict[str, Any]:
        return {"step": self.step, "loss": self.loss, "l_p": self.l_p, "l_h": self.l_h, "c": self.c}


@dataclass
class TrainingResult:
    params: EncoderParams
    trace: List[LossTraceRow] = field(default_factory=list)


@dataclass
class PairResult:
    """Counting outcome of one sampled frame pair"""
    t0: int
    t1: int
    inflow: float
    outflow: float
    violation: float = 0.0
    matched: int = 0
    decoded_inflow: int = 0
    decoded_outflow: int = 0
    gt_inflow: Optional[int] = None
    gt_outflow: Optional[int] = None
    decomposition: Optional[FlowDecomposition] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t0": self.t0,
            "t1": self.t1,
            "inflow": self.inflow,
            "outflow": self.outflow,
            "violation": self.violation,
        }


@dataclass
class VideoCountResult:
    """Decomposed count of one video"""
    video_id: str
    initial_count: float
    pairs: List[PairResult]
    total: float
    tau: int
    partial: bool = False
    failed_pair: Optional[int] = None

    @property
    def inflows(self) -> List[float]:
        return [p.inflow for p in self.pairs]

    def to_dict(self) -> Dict[str, Any]:
        result = {
            "video_id": self.video_id,
            "n0": self.initial_count,
            "pairs": [p.to_dict() for p in self.pairs],
            "total": self.total,
        }
        if self.partial:
            result["partial"] = True
            result["failed_pair"] = self.failed_pair
        return result


@dataclass
class VideoErrors:
    mae: float
    mse: float
    wrae: float
    excluded: List[int] = field(default_factory=list)


@dataclass
class FlowErrors:
    miae: float
    moae: float
    pairs: int


@dataclass
class MetricsReport:
    """Video-level and pair-level errors"""
    mae: float
    mse: float
    wrae_percent: float
    miae: Optional[float] = None
    moae: Optional[float] = None
    per_video: List[Dict[str, Any]] = field(default_factory=list)
    density_buckets: List[Dict[str, Any]] = field(default_factory=list)
    excluded: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "wrae": self.wrae_percent,
            "mrae": self.wrae_percent,
            "miae": self.miae,
            "moae": self.moae,
            "per_video": self.per_video,
            "density_buckets": self.density_buckets,
            "excluded": self.excluded,
        }


@dataclass(frozen=True)
class AnnotationRecord:
    """One row of the frame,id,x,y annotation format"""
    frame_id: int
    person_id: int
    x: float
    y: float


@dataclass
class SweepRow:
    tau: int
    mae: float
    mse: float
    wrae: float

    def to_dict(self) -> Dict[str, Any]:
        return {"tau": self.tau, "mae": self.mae, "mse": self.mse, "wrae": self.wrae}

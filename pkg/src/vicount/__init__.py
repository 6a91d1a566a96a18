"""
vicount - video individual counting by first-frame count plus transport-based inflow
"""

from .config import RunConfig, load_config
from .density import augment_proposals, extract_head_proposals, render_density
from .descriptors import (
    encode,
    gradient_check,
    hard_negative_targets,
    init_encoder,
    loss_gradient,
    matching_loss,
    similarity_matrix,
    train_encoder,
)
from .exceptions import VicountError
from .flows import decode_assignment, hungarian_baseline, soft_inflow_count, soft_outflow_count
from .logconfig import setup_logging
from .metrics import evaluate, flow_errors, video_errors
from .models import HeadPoint, PointSet, SceneConfig, SceneSequence, TransportPlan
from .pipeline import count_video, initial_count, interval_sweep
from .simulator import ground_truth_flows, sample_pairs, simulate
from .solver import SolverConfig, build_augmented_score, build_marginals, lp_oracle, rescale_plan, sinkhorn, solve
from .version import get_version

__version__ = get_version()
__all__ = [
    "RunConfig",
    "load_config",
    "render_density",
    "extract_head_proposals",
    "augment_proposals",
    "encode",
    "similarity_matrix",
    "matching_loss",
    "hard_negative_targets",
    "loss_gradient",
    "train_encoder",
    "init_encoder",
    "gradient_check",
    "VicountError",
    "soft_inflow_count",
    "soft_outflow_count",
    "decode_assignment",
    "hungarian_baseline",
    "setup_logging",
    "video_errors",
    "flow_errors",
    "evaluate",
    "HeadPoint",
    "PointSet",
    "SceneConfig",
    "SceneSequence",
    "TransportPlan",
    "initial_count",
    "count_video",
    "interval_sweep",
    "simulate",
    "sample_pairs",
    "ground_truth_flows",
    "SolverConfig",
    "build_augmented_score",
    "build_marginals",
    "sinkhorn",
    "lp_oracle",
    "rescale_plan",
    "solve",
]

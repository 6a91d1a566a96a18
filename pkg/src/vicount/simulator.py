"""
Seeded synthetic crowd scenes

Identities walk straight lines with Gaussian jitter, enter through the frame
edges (Poisson arrivals) and leave by crossing an edge or through a per-frame
exit hazard. Each identity owns a unit-norm base appearance; every frame
observes it with additive Gaussian noise.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .descriptors import assignment_from_identities
from .exceptions import ParameterError
from .models import (
    FrameObservation,
    GroundTruthAssignment,
    HeadPoint,
    IdentityRecord,
    PointSet,
    SceneConfig,
    SceneSequence,
)

logger = logging.getLogger(__name__)

FramePair = Tuple[FrameObservation, FrameObservation]

# largest deviation of an entering walker's heading from the inward normal
_ENTRY_SPREAD = np.pi / 3


@dataclass
class _Walker:
    identity: int
    position: np.ndarray
    velocity: np.ndarray


def _base_feature(rng: np.random.Generator, dim: int, separability: float,
                  recent: List[np.ndarray]) -> np.ndarray:
    """
    Mix a random direction with its component orthogonal to the recently
    seen identities; separability 1 gives exactly orthogonal appearances.
    """
    r = rng.standard_normal(dim)
    r /= np.linalg.norm(r)
    perp = r
    if recent and len(recent) < dim:
        q, _ = np.linalg.qr(np.stack(recent, axis=1))
        residual = r - q @ (q.T @ r)
        norm = np.linalg.norm(residual)
        if norm > 1e-9:
            perp = residual / norm
    feature = separability * perp + (1.0 - separability) * r
    return feature / np.linalg.norm(feature)


class _Scene:
    """Mutable state of one simulation run"""

    def __init__(self, config: SceneConfig):
        self.config = config
        self.rng = np.random.default_rng(config.rng_seed)
        self.bounds = np.array([config.frame_height - 1, config.frame_width - 1], dtype=np.float64)
        self.walkers: List[_Walker] = []
        self.registry: Dict[int, IdentityRecord] = {}
        self.open_spans: Dict[int, int] = {}
        self.last_seen: Dict[int, int] = {}
        self.pending: List[Tuple[int, int]] = []
        self.next_id = 0

    def _speed(self) -> float:
        low, high = self.config.speed_range
        return float(self.rng.uniform(low, high))

    def _recent_features(self, frame: int) -> List[np.ndarray]:
        horizon = frame - self.config.feature_memory
        return [self.registry[i].base_feature for i, seen in self.last_seen.items() if seen >= horizon]

    def _new_identity(self, frame: int) -> int:
        identity = self.next_id
        self.next_id += 1
        base = _base_feature(self.rng, self.config.appearance_dim, self.config.separability,
                             self._recent_features(frame))
        self.registry[identity] = IdentityRecord(identity=identity, spans=[], base_feature=base)
        return identity

    def _start(self, identity: int, frame: int, position: np.ndarray, velocity: np.ndarray) -> None:
        self.walkers.append(_Walker(identity, position, velocity))
        self.open_spans[identity] = frame
        self.last_seen[identity] = frame

    def _end(self, walker: _Walker, frame: int) -> None:
        identity = walker.identity
        self.registry[identity].spans.append((self.open_spans.pop(identity), frame))
        cfg = self.config
        if cfg.allow_reentry and self.rng.random() < cfg.reentry_prob:
            gap = int(self.rng.integers(cfg.reentry_gap[0], cfg.reentry_gap[1] + 1))
            self.pending.append((frame + gap, identity))

    def spawn_inside(self, frame: int) -> None:
        identity = self._new_identity(frame)
        position = self.rng.uniform(0.0, 1.0, size=2) * self.bounds
        angle = self.rng.uniform(0.0, 2 * np.pi)
        velocity = self._speed() * np.array([np.sin(angle), np.cos(angle)])
        self._start(identity, frame, position, velocity)

    def spawn_at_edge(self, frame: int, identity: Optional[int] = None) -> None:
        if identity is None:
            identity = self._new_identity(frame)
        side = int(self.rng.integers(4))
        along = self.rng.uniform(0.0, 1.0)
        # top, bottom, left, right
        if side == 0:
            position, normal = np.array([0.0, along * self.bounds[1]]), 0.0
        elif side == 1:
            position, normal = np.array([self.bounds[0], along * self.bounds[1]]), np.pi
        elif side == 2:
            position, normal = np.array([along * self.bounds[0], 0.0]), np.pi / 2
        else:
            position, normal = np.array([along * self.bounds[0], self.bounds[1]]), -np.pi / 2
        angle = normal + self.rng.uniform(-_ENTRY_SPREAD, _ENTRY_SPREAD)
        velocity = self._speed() * np.array([np.cos(angle), np.sin(angle)])
        self._start(identity, frame, position, velocity)

    def step(self, frame: int) -> None:
        cfg = self.config
        survivors = []
        for walker in self.walkers:
            walker.position = walker.position + walker.velocity + self.rng.normal(0.0, cfg.jitter_std, size=2)
            outside = np.any(walker.position < 0.0) or np.any(walker.position > self.bounds)
            if outside and cfg.closed:
                self._reflect(walker)
                outside = False
            if outside or (cfg.exit_rate > 0 and self.rng.random() < cfg.exit_rate):
                self._end(walker, frame)
            else:
                survivors.append(walker)
        self.walkers = survivors

        for _ in range(int(self.rng.poisson(cfg.entry_rate))):
            self.spawn_at_edge(frame)
        due = sorted(identity for when, identity in self.pending if when == frame)
        self.pending = [(when, identity) for when, identity in self.pending if when != frame]
        for identity in due:
            self.spawn_at_edge(frame, identity)

    def _reflect(self, walker: _Walker) -> None:
        for axis in range(2):
            if walker.position[axis] < 0.0:
                walker.position[axis] = -walker.position[axis]
                walker.velocity[axis] = abs(walker.velocity[axis])
            elif walker.position[axis] > self.bounds[axis]:
                walker.position[axis] = 2 * self.bounds[axis] - walker.position[axis]
                walker.velocity[axis] = -abs(walker.velocity[axis])
        walker.position = np.clip(walker.position, 0.0, self.bounds)

    def observe(self, frame: int) -> FrameObservation:
        cfg = self.config
        walkers = sorted(self.walkers, key=lambda w: w.identity)
        points = []
        features = np.zeros((len(walkers), cfg.appearance_dim), dtype=np.float64)
        for k, walker in enumerate(walkers):
            self.last_seen[walker.identity] = frame
            points.append(HeadPoint(row=float(walker.position[0]), col=float(walker.position[1]),
                                    identity=walker.identity))
            features[k] = self.registry[walker.identity].base_feature
        if cfg.appearance_noise_std > 0 and len(walkers):
            features += self.rng.normal(0.0, cfg.appearance_noise_std, size=features.shape)
        point_set = PointSet(frame_index=frame, points=points,
                             frame_height=cfg.frame_height, frame_width=cfg.frame_width)
        return FrameObservation(frame_index=frame, points=point_set, raw_features=features)

    def close(self, duration: int) -> None:
        for identity, start in sorted(self.open_spans.items()):
            self.registry[identity].spans.append((start, duration))
        self.open_spans = {}
        # identities scheduled to come back after the last frame are never seen again
        self.pending = []


def simulate(config: SceneConfig, video_id: str = "video") -> SceneSequence:
    """
    Generate a scene; the same config (seed included) always yields the same sequence.

    Identities are never reused unless ``allow_reentry`` is set, in which case
    an exiting identity comes back with probability ``reentry_prob`` after a
    gap drawn from ``reentry_gap``, keeping its base appearance.
    """
    config.validate()
    scene = _Scene(config)
    frames = []
    for _ in range(config.initial_count):
        scene.spawn_inside(0)
    for frame in range(config.duration):
        if frame > 0:
            scene.step(frame)
        frames.append(scene.observe(frame))
    scene.close(config.duration)

    logger.info("simulated scene", extra={
        "video_id": video_id, "duration": config.duration, "identities": len(scene.registry),
        "seed": config.rng_seed})
    return SceneSequence(config=config, frames=frames, identity_registry=scene.registry, video_id=video_id)


def pair_indices(duration: int, tau: int) -> List[Tuple[int, int]]:
    """
    Frame index pairs (k*tau - tau, k*tau) for k = 1..floor((duration-1)/tau),
    followed by a shorter tail pair ending at the last frame when it is not
    already covered.
    """
    if not 1 <= tau < duration:
        raise ParameterError(
            f"tau must satisfy 1 <= tau < duration, got tau={tau} for a {duration}-frame video.")
    pairs = [((k - 1) * tau, k * tau) for k in range(1, (duration - 1) // tau + 1)]
    if pairs[-1][1] != duration - 1:
        pairs.append((pairs[-1][1], duration - 1))
    return pairs


def sampled_frames(duration: int, tau: int) -> List[int]:
    """Frames visited by the sampled pairs (the first frame included)"""
    if duration == 1:
        return [0]
    return sorted({t for pair in pair_indices(duration, tau) for t in pair})


def sample_pairs(seq: SceneSequence, tau: int) -> List[FramePair]:
    """Consecutive sampled frame pairs of a sequence"""
    return [(seq.frames[t0], seq.frames[t1]) for t0, t1 in pair_indices(seq.duration, tau)]


def sample_training_pairs(seq: SceneSequence, interval_range_frames: Tuple[int, int], count: int,
                          rng_seed: int = 0) -> List[FramePair]:
    """
    Random frame pairs whose interval is drawn uniformly from
    ``interval_range_frames`` (clipped to the sequence length).
    """
    if seq.duration < 2:
        raise ParameterError("training pairs need a sequence of at least 2 frames.")
    low, high = interval_range_frames
    if low < 1 or high < low:
        raise ParameterError(f"interval range must satisfy 1 <= low <= high, got {interval_range_frames}.")
    high = min(high, seq.duration - 1)
    low = min(low, high)
    rng = np.random.default_rng(rng_seed)
    pairs = []
    for _ in range(count):
        gap = int(rng.integers(low, high + 1))
        t0 = int(rng.integers(0, seq.duration - gap))
        pairs.append((seq.frames[t0], seq.frames[t0 + gap]))
    return pairs


def ground_truth_flows(a: FrameObservation, b: FrameObservation) -> Tuple[int, int, GroundTruthAssignment]:
    """
    (inflow, outflow, P_g) from identity labels: identities only in b flow in,
    identities only in a flow out.

    Raises:
        DataError: a point of either frame has no identity
    """
    ids_a, ids_b = a.identity_set(), b.identity_set()
    gt = assignment_from_identities(a.points.identities(), b.points.identities())
    return len(ids_b - ids_a), len(ids_a - ids_b), gt


def distinct_identities(seq: SceneSequence, frames: Optional[Iterable[int]] = None) -> int:
    """Number of identities present in at least one of ``frames`` (default: every frame)"""
    indices: Sequence[int] = range(seq.duration) if frames is None else list(frames)
    seen = set()
    for index in indices:
        seen.update(p.identity for p in seq.frames[index].points.points if p.identity is not None)
    return len(seen)

"""
Density rendering and head-center proposals

Points are rendered as truncated Gaussians renormalized to unit mass, so the
map of a point set always sums to the number of points. Proposals are the
local maxima of a map.
"""

import logging
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter

from .exceptions import ParameterError
from .models import DensityMap, HeadPoint, PointSet

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 4.0
DEFAULT_WINDOW = 15
DEFAULT_NMS_RADIUS = 4
DEFAULT_MIN_PEAK_RATIO = 0.1

# 8-neighbourhood without the center pixel
_RING = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=bool)


def _check_kernel(sigma: float, window: int) -> None:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}.")
    if window < 3 or window % 2 == 0:
        raise ParameterError(
            f"window must be odd and at least 3, got {window}. "
            f"The usual setting is 15.")


def render_density(points: PointSet, sigma: float = DEFAULT_SIGMA,
                   window: int = DEFAULT_WINDOW) -> DensityMap:
    """
    Render a point set as a density map.

    Each point adds a Gaussian evaluated on the pixel grid around its
    (sub-pixel) position, truncated to the window and the frame, then
    renormalized to total mass 1.

    Raises:
        ParameterError: non-positive sigma or invalid window
        OutOfBoundsError: a point lies outside the frame (carries its index)
    """
    _check_kernel(sigma, window)
    points.validate()

    height, width = points.frame_height, points.frame_width
    values = np.zeros((height, width), dtype=np.float64)
    half = window // 2

    for point in points.points:
        r0 = int(round(point.row))
        c0 = int(round(point.col))
        r_lo, r_hi = max(0, r0 - half), min(height, r0 + half + 1)
        c_lo, c_hi = max(0, c0 - half), min(width, c0 + half + 1)
        rows = np.arange(r_lo, r_hi, dtype=np.float64) - point.row
        cols = np.arange(c_lo, c_hi, dtype=np.float64) - point.col
        kernel = np.outer(np.exp(-rows ** 2 / (2 * sigma ** 2)), np.exp(-cols ** 2 / (2 * sigma ** 2)))
        values[r_lo:r_hi, c_lo:c_hi] += kernel / kernel.sum()

    return DensityMap(values=values, kernel_sigma=float(sigma), window=int(window))


def extract_head_proposals(density: DensityMap, min_peak: Optional[float] = None,
                           nms_radius: int = DEFAULT_NMS_RADIUS,
                           frame_index: int = 0) -> PointSet:
    """
    Recover head-center proposals as local maxima of a density map.

    A pixel is a candidate when it is at least as large as its 8 neighbours
    and above ``min_peak`` (default: 10% of the map maximum). Candidates are
    visited from the highest value down and dropped when a kept proposal lies
    within ``nms_radius``; plateaus therefore yield a single proposal. The
    kept positions are refined to the intensity centroid of their 3x3 patch.
    """
    if nms_radius < 1:
        raise ParameterError(f"nms_radius must be at least 1, got {nms_radius}.")

    values = density.values
    height, width = values.shape
    empty = PointSet(frame_index=frame_index, points=[], frame_height=height, frame_width=width)
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0.0:
        return empty

    threshold = DEFAULT_MIN_PEAK_RATIO * peak if min_peak is None else float(min_peak)
    neighbour_max = maximum_filter(values, footprint=_RING, mode="constant", cval=-np.inf)
    candidates = np.argwhere((values >= neighbour_max) & (values > threshold))
    if candidates.size == 0:
        return empty

    order = np.lexsort((candidates[:, 1], candidates[:, 0], -values[candidates[:, 0], candidates[:, 1]]))
    kept = []
    for r, c in candidates[order]:
        if all((r - kr) ** 2 + (c - kc) ** 2 > nms_radius ** 2 for kr, kc in kept):
            kept.append((int(r), int(c)))

    proposals = [HeadPoint(*_refine(values, r, c)) for r, c in kept]
    logger.debug("extracted proposals", extra={"candidates": int(len(candidates)), "kept": len(kept)})
    return PointSet(frame_index=frame_index, points=proposals, frame_height=height, frame_width=width)


def _refine(values: np.ndarray, r: int, c: int):
    r_lo, r_hi = max(0, r - 1), min(values.shape[0], r + 2)
    c_lo, c_hi = max(0, c - 1), min(values.shape[1], c + 2)
    patch = values[r_lo:r_hi, c_lo:c_hi]
    mass = patch.sum()
    if mass <= 0:
        return float(r), float(c)
    rows, cols = np.mgrid[r_lo:r_hi, c_lo:c_hi]
    return float((patch * rows).sum() / mass), float((patch * cols).sum() / mass)


def augment_proposals(points: PointSet, noise_level: float, rng_seed: int) -> PointSet:
    """
    Perturb every coordinate with N(0, noise_level^2) and clamp to the frame.

    Identities and point order are preserved.
    """
    if noise_level < 0:
        raise ParameterError(f"noise_level must be non-negative, got {noise_level}.")

    rng = np.random.default_rng(rng_seed)
    coords = points.coords()
    if noise_level > 0 and len(coords):
        coords = coords + rng.normal(0.0, noise_level, size=coords.shape)
        coords[:, 0] = np.clip(coords[:, 0], 0.0, points.frame_height - 1)
        coords[:, 1] = np.clip(coords[:, 1], 0.0, points.frame_width - 1)

    moved = [
        HeadPoint(row=float(rc[0]), col=float(rc[1]), identity=p.identity)
        for p, rc in zip(points.points, coords)
    ]
    return PointSet(frame_index=points.frame_index, points=moved,
                    frame_height=points.frame_height, frame_width=points.frame_width)

"""Egocentric priors and their composition into pseudo ground-truth maps.

A frame's detections are turned into a per-pixel cooperation map

    raw = sum_j V(B_j, size(B_j) * pose(B_j))  [* loc]
    pseudo_gt = raw / max(raw)

where V paints a constant into a box, ``size`` rewards tall (near) boxes,
``pose`` rewards players facing the camera wearer and ``loc`` is the current
confidence mask times the dataset-mean confidence mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidInput
from .grid import BBox, GridDims, accumulate, elementwise_mul, normalize_max, rasterize_box, zeros

NUM_PARTS = 18

PART_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)

# (right part, left part)
DEFAULT_PAIRS = ((14, 15), (16, 17), (2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13))


class Keypoint(NamedTuple):
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class PersonDetection:
    """One detected player; ``keypoints[i]`` is part ``i`` (absent parts have score 0)."""

    bbox: BBox
    keypoints: tuple

    def __post_init__(self):
        kps = tuple(Keypoint(*map(float, k)) for k in self.keypoints)
        if len(kps) != NUM_PARTS:
            raise InvalidInput(f"expected {NUM_PARTS} keypoints, got {len(kps)}")
        for i, k in enumerate(kps):
            if not (math.isfinite(k.x) and math.isfinite(k.y)):
                raise InvalidInput(f"keypoint {i} has non-finite coordinates")
            if not 0.0 <= k.score <= 1.0:
                raise InvalidInput(f"keypoint {i} score {k.score} outside [0, 1]")
        object.__setattr__(self, "keypoints", kps)

    @classmethod
    def without_pose(cls, bbox):
        return cls(bbox, tuple(Keypoint(0.0, 0.0, 0.0) for _ in range(NUM_PARTS)))


@dataclass(frozen=True)
class Frame:
    image_id: str
    dims: GridDims
    detections: tuple = ()
    image_ref: Optional[str] = None
    # rendered grayscale image (uint8, shape dims.shape); carried in memory only
    image: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class PriorConfig:
    sigma: float = 10.0
    visibility_threshold: float = 0.1
    pairs: tuple = DEFAULT_PAIRS
    use_loc: bool = True
    use_size: bool = True
    use_pose: bool = True
    pose_fallback: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInput(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.visibility_threshold <= 1.0:
            raise InvalidInput("visibility_threshold must lie in [0, 1]")
        if not 0.0 <= self.pose_fallback <= 1.0:
            raise InvalidInput("pose_fallback must lie in [0, 1]")
        pairs = tuple(tuple(int(i) for i in p) for p in self.pairs)
        if not pairs:
            raise InvalidInput("at least one paired part is required")
        for r, l in pairs:
            if r == l or not (0 <= r < NUM_PARTS and 0 <= l < NUM_PARTS):
                raise InvalidInput(f"bad part pair ({r}, {l})")
        object.__setattr__(self, "pairs", pairs)


ABLATIONS = ("full", "no_loc", "no_size", "no_pose")


def ablated(cfg: PriorConfig, variant: str) -> PriorConfig:
    """Config for one row of the ablation grid."""
    if variant == "full":
        return replace(cfg, use_loc=True, use_size=True, use_pose=True)
    if variant in ("no_loc", "no_size", "no_pose"):
        return replace(cfg, **{"use_" + variant[3:]: False})
    raise InvalidInput(f"unknown ablation variant {variant!r}; expected one of {ABLATIONS}")


@dataclass(frozen=True)
class LocationPriorArtifact:
    dims: GridDims
    mean_mask: np.ndarray
    image_count: int

    def __post_init__(self):
        m = np.asarray(self.mean_mask, dtype=np.float64)
        if m.shape != self.dims.shape:
            raise InvalidInput(f"mean mask shape {m.shape} does not match {self.dims.shape}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise InvalidInput("mean mask must be finite and non-negative")
        if self.image_count < 1:
            raise InvalidInput("image_count must be >= 1")
        object.__setattr__(self, "mean_mask", m)

    def __eq__(self, other):
        if not isinstance(other, LocationPriorArtifact):
            return NotImplemented
        return (self.dims == other.dims and self.image_count == other.image_count
                and np.array_equal(self.mean_mask, other.mean_mask))


def phi_size(box: BBox, sigma: float) -> float:
    if not box.h > 0 or not sigma > 0:
        raise InvalidInput(f"phi_size needs h > 0 and sigma > 0 (h={box.h}, sigma={sigma})")
    return math.exp(-sigma / box.h)


def pose_counts(person: PersonDetection, cfg: PriorConfig):
    """``(facing, visible)`` pair counts behind :func:`phi_pose`."""
    kps = person.keypoints
    thr = cfg.visibility_threshold
    facing = visible = 0
    for r, l in cfg.pairs:
        if kps[r].score > thr and kps[l].score > thr:
            visible += 1
            if kps[r].x < kps[l].x:
                facing += 1
    return facing, visible


def phi_pose(person: PersonDetection, cfg: PriorConfig) -> float:
    facing, visible = pose_counts(person, cfg)
    if visible == 0:
        return cfg.pose_fallback
    return facing / visible


def confidence_mask(frame: Frame) -> np.ndarray:
    return accumulate((rasterize_box(d.bbox, d.bbox.c, frame.dims) for d in frame.detections),
                      frame.dims)


def build_location_prior(frames, dims: GridDims) -> LocationPriorArtifact:
    frames = list(frames)
    if not frames:
        raise InvalidInput("location prior needs at least one frame")
    total = zeros(dims)
    for f in frames:
        if f.dims != dims:
            raise InvalidInput(f"frame {f.image_id!r} has dims {f.dims}, expected {dims}")
        total += confidence_mask(f)
    return LocationPriorArtifact(dims, total / len(frames), len(frames))


def phi_loc(frame: Frame, prior: LocationPriorArtifact) -> np.ndarray:
    if frame.dims != prior.dims:
        raise InvalidInput(f"frame {frame.image_id!r} dims {frame.dims} != prior dims {prior.dims}")
    return elementwise_mul(confidence_mask(frame), prior.mean_mask)


def box_values(frame: Frame, cfg: PriorConfig):
    """Per-detection scalar painted into each box before the location product."""
    vals = []
    for d in frame.detections:
        s = phi_size(d.bbox, cfg.sigma) if cfg.use_size else 1.0
        p = phi_pose(d, cfg) if cfg.use_pose else 1.0
        vals.append(s * p)
    return vals


def pseudo_gt(frame: Frame, prior: LocationPriorArtifact, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    if frame.dims != prior.dims:
        raise InvalidInput(f"frame {frame.image_id!r} dims {frame.dims} != prior dims {prior.dims}")
    raw = accumulate((rasterize_box(d.bbox, v, frame.dims)
                      for d, v in zip(frame.detections, box_values(frame, cfg))), frame.dims)
    if cfg.use_loc:
        raw = elementwise_mul(raw, phi_loc(frame, prior))
    return normalize_max(raw)

"""Seeded synthetic first-person scenes with a known cooperator.

Each frame holds a row of non-overlapping players.  One of them is the
designated cooperator; each cue (size, facing, hot-spot location) is planted
on the cooperator with its own probability, otherwise the cooperator's
attribute is drawn exactly like a distractor's.  With every cue strength at
0 the cooperator is therefore exchangeable with the other players.

A grayscale rendering accompanies every frame.  With probability
``appearance_cue`` the cooperator's head is drawn as a bright blob; the
geometry-only pseudo labels never see it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DatasetFile
from .errors import InvalidInput
from .evaluation import GTAnnotation
from .grid import BBox, GridDims, box_slices
from .transformer import NUM_PARTS, Frame, Keypoint, PersonDetection

ASPECT = 0.4  # box width / height
MIN_HEIGHT_FRAC = 0.07
MAX_HEIGHT_FRAC = 0.4
BAND = (0.5, 0.7)  # hot-spot rows as fractions of frame height
JITTER = 0.02  # keypoint noise, fraction of box height
FACING_CONE = 30.0  # |yaw| below this counts as facing the wearer
PROFILE_SPREAD = 10.0  # players not facing the wearer are seen side-on, yaw 90 +- this
DISTRACTOR_HEIGHT = (0.065, 0.085)  # fractions of frame height
OFF_BAND = (0.15, 0.4)  # off-band box center distance from band center, fraction of H
SIZE_MARGIN = 2.0  # planted cooperator height >= margin * tallest distractor

# (u, v) in box units for a player facing the wearer; right parts at small u
TEMPLATE = {
    0: (0.50, 0.10),
    2: (0.25, 0.22), 5: (0.75, 0.22),
    3: (0.15, 0.38), 6: (0.85, 0.38),
    4: (0.12, 0.52), 7: (0.88, 0.52),
    8: (0.35, 0.55), 11: (0.65, 0.55),
    9: (0.33, 0.75), 12: (0.67, 0.75),
    10: (0.32, 0.95), 13: (0.68, 0.95),
}

BACKGROUND, BODY, HEAD, BLOB = 40, 95, 125, 250


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    frame_count: int = 200
    players_per_frame: tuple = (3, 6)
    size_cue: float = 0.9
    pose_cue: float = 0.9
    loc_cue: float = 0.9
    appearance_cue: float = 0.95
    distractor_facing: float = 0.1
    distractor_hotspot: float = 0.3
    width: int = 160
    height: int = 120
    id_prefix: str = ""

    def __post_init__(self):
        probs = (self.size_cue, self.pose_cue, self.loc_cue, self.appearance_cue,
                 self.distractor_facing, self.distractor_hotspot)
        if not all(0.0 <= p <= 1.0 for p in probs):
            raise InvalidInput("cue strengths and rates must lie in [0, 1]")
        if self.frame_count < 1:
            raise InvalidInput("frame_count must be >= 1")
        lo, hi = self.players_per_frame
        if not 2 <= lo <= hi <= 10:
            raise InvalidInput(f"players_per_frame must satisfy 2 <= lo <= hi <= 10, got {(lo, hi)}")
        if self.height_cap(hi) < 3.0 * MIN_HEIGHT_FRAC * self.height:
            raise InvalidInput(f"{hi} players do not fit side by side in a {self.width}px wide frame")
        GridDims(self.width, self.height)

    @property
    def dims(self):
        return GridDims(self.width, self.height)

    def height_cap(self, n):
        return min(MAX_HEIGHT_FRAC * self.height, 0.9 * (self.width / n) / ASPECT)

    def prefix(self):
        return self.id_prefix or f"s{self.seed}"


def _yaw(rng, facing):
    """Body yaw in degrees; 0 faces the wearer, 180 faces away."""
    if facing:
        return rng.uniform(-FACING_CONE, FACING_CONE)
    return rng.uniform(90.0 - PROFILE_SPREAD, 90.0 + PROFILE_SPREAD) * rng.choice((-1.0, 1.0))


def _keypoints(rng, box, yaw):
    kps = [Keypoint(0.0, 0.0, 0.0)] * NUM_PARTS
    squash = np.cos(np.radians(yaw))
    for part, (u, v) in TEMPLATE.items():
        u = 0.5 + (u - 0.5) * squash
        x = box.x + u * box.w + rng.normal(0.0, JITTER * box.h)
        y = box.y + v * box.h + rng.normal(0.0, JITTER * box.h)
        kps[part] = Keypoint(float(x), float(y), float(rng.uniform(0.6, 1.0)))
    return tuple(kps)


def _vertical_position(rng, h, in_band, H):
    lo, hi = BAND[0] * H, BAND[1] * H
    if in_band:
        cy = (lo + hi) / 2.0 + rng.uniform(-0.02, 0.02) * H
        return cy - h / 2.0
    offset = rng.uniform(*OFF_BAND) * H
    cy = (lo + hi) / 2.0 + (offset if rng.uniform() < 0.5 else -offset)
    cy = min(max(cy, h / 2.0), H - h / 2.0)
    return cy - h / 2.0


def _horizontal_layout(rng, widths, W, gap=1.0, tries=50):
    """Left edges for non-overlapping boxes, uniform over the frame where
    possible; falls back to equal slots when rejection sampling stalls."""
    for _ in range(tries):
        placed = []
        for w in widths:
            for _ in range(tries):
                x = rng.uniform(0.0, W - w)
                if all(x + w + gap <= a or b + gap <= x for a, b in placed):
                    placed.append((x, x + w))
                    break
            else:
                break
        if len(placed) == len(widths):
            return [a for a, _ in placed]
    slot = W / len(widths)
    return [j * slot + (slot - w) * rng.uniform(0.1, 0.9) for j, w in enumerate(widths)]


def _render(rng, dims, boxes, blob_index):
    img = rng.normal(BACKGROUND, 6.0, size=dims.shape)
    for j, b in enumerate(boxes):
        img[box_slices(b, dims)] = BODY
        head = BBox(b.x + 0.25 * b.w, b.y + 0.02 * b.h, 0.5 * b.w, 0.5 * b.w)
        img[box_slices(head, dims)] = BLOB if j == blob_index else HEAD
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_frame(cfg: SynthConfig, index: int):
    """One frame plus its annotation and a record of which cues were planted."""
    rng = np.random.default_rng([cfg.seed, index])
    dims = cfg.dims
    W, H = cfg.width, cfg.height
    lo, hi = cfg.players_per_frame
    n = int(rng.integers(lo, hi + 1))
    k = int(rng.integers(n))
    cap = cfg.height_cap(n)
    h_min = MIN_HEIGHT_FRAC * H
    planted = {"size": rng.uniform() < cfg.size_cue,
               "pose": rng.uniform() < cfg.pose_cue,
               "loc": rng.uniform() < cfg.loc_cue}

    heights = rng.uniform(DISTRACTOR_HEIGHT[0] * H, DISTRACTOR_HEIGHT[1] * H, size=n)
    if planted["size"]:
        tallest = max(heights[j] for j in range(n) if j != k)
        heights[k] = rng.uniform(min(SIZE_MARGIN * tallest, cap), cap)
    facing = rng.uniform(size=n) < cfg.distractor_facing
    if planted["pose"]:
        facing[k] = True
    hot = rng.uniform(size=n) < cfg.distractor_hotspot
    if planted["loc"]:
        hot[k] = True

    widths = ASPECT * heights
    xs = _horizontal_layout(rng, widths, W)
    dets, boxes, yaws = [], [], []
    for j in range(n):
        h = float(heights[j])
        w = float(widths[j])
        x = float(xs[j])
        y = _vertical_position(rng, h, bool(hot[j]), H)
        box = BBox(float(x), float(y), float(w), h, float(rng.uniform(0.95, 1.0)))
        boxes.append(box)
        yaws.append(float(_yaw(rng, bool(facing[j]))))
        dets.append(PersonDetection(box, _keypoints(rng, box, yaws[-1])))

    blob = k if rng.uniform() < cfg.appearance_cue else -1
    image_id = f"{cfg.prefix()}-{index:05d}"
    frame = Frame(image_id, dims, tuple(dets), f"images/{image_id}.pgm",
                  _render(rng, dims, boxes, blob))
    b = boxes[k]
    ann = GTAnnotation(image_id, BBox(b.x, b.y, b.w, b.h, 1.0))
    info = dict(planted, cooperator=k, facing=facing.tolist(), hot=hot.tolist(), yaw=yaws, blob=blob >= 0)
    return frame, ann, info


def generate_synthetic(cfg: SynthConfig, with_info=False):
    frames, anns, infos = [], [], []
    for i in range(cfg.frame_count):
        f, a, info = generate_frame(cfg, i)
        frames.append(f)
        anns.append(a)
        infos.append(info)
    ds = DatasetFile(cfg.dims, tuple(frames), tuple(anns))
    return (ds, infos) if with_info else ds

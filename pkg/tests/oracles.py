"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the optimized code paths.  Boxes and frames are built
with the package's plain data types only.
"""
import math

import numpy as np

from egosup.grid import BBox, GridDims
from egosup.transformer import DEFAULT_PAIRS, NUM_PARTS, Frame, Keypoint, PersonDetection


def inside(box, row, col):
    cx, cy = col + 0.5, row + 0.5
    return box.x <= cx < box.x + box.w and box.y <= cy < box.y + box.h


def naive_confidence(frame, row, col):
    return sum(d.bbox.c for d in frame.detections if inside(d.bbox, row, col))


def naive_phi_pose(person, thr=0.1, pairs=DEFAULT_PAIRS, fallback=0.5):
    hits = seen = 0
    for r, l in pairs:
        kr, kl = person.keypoints[r], person.keypoints[l]
        if kr.score > thr and kl.score > thr:
            seen += 1
            hits += 1 if kr.x < kl.x else 0
    return hits / seen if seen else fallback


def naive_pseudo_gt(frame, mean_mask, sigma=10.0, use_loc=True, use_size=True, use_pose=True):
    H, W = frame.dims.height, frame.dims.width
    raw = [[0.0] * W for _ in range(H)]
    for row in range(H):
        for col in range(W):
            total = 0.0
            for d in frame.detections:
                if inside(d.bbox, row, col):
                    s = math.exp(-sigma / d.bbox.h) if use_size else 1.0
                    p = naive_phi_pose(d) if use_pose else 1.0
                    total += s * p
            if use_loc:
                total *= naive_confidence(frame, row, col) * mean_mask[row][col]
            raw[row][col] = total
    peak = max(max(r) for r in raw)
    if peak > 0:
        raw = [[v / peak for v in r] for r in raw]
    return np.array(raw)


def naive_mean_mask(frames, dims):
    out = [[0.0] * dims.width for _ in range(dims.height)]
    for f in frames:
        for row in range(dims.height):
            for col in range(dims.width):
                out[row][col] += naive_confidence(f, row, col)
    return np.array(out) / len(frames)


def random_person(rng, dims, allow_outside=True):
    pad = 0.2 if allow_outside else 0.0
    w = rng.uniform(2.0, 0.4 * dims.width)
    h = rng.uniform(2.0, 0.6 * dims.height)
    x = rng.uniform(-pad * dims.width, dims.width - (1 - pad) * w)
    y = rng.uniform(-pad * dims.height, dims.height - (1 - pad) * h)
    box = BBox(x, y, w, h, float(rng.uniform(0.0, 1.0)))
    kps = []
    for _ in range(NUM_PARTS):
        score = 0.0 if rng.uniform() < 0.2 else float(rng.uniform(0.0, 1.0))
        kps.append(Keypoint(float(x + rng.uniform(0, w)), float(y + rng.uniform(0, h)), score))
    return PersonDetection(box, tuple(kps))


def random_frame(rng, dims=GridDims(160, 120), n=(2, 8), image_id="f"):
    k = int(rng.integers(n[0], n[1] + 1))
    return Frame(image_id, dims, tuple(random_person(rng, dims) for _ in range(k)))


def pixelwise_pseudo_gt(frame, mean_mask, sigma=10.0, use_loc=True, use_size=True, use_pose=True):
    """Same per-pixel formula as :func:`naive_pseudo_gt`, evaluated with
    broadcasting over the grid of pixel centers instead of Python loops."""
    H, W = frame.dims.height, frame.dims.width
    cy, cx = np.mgrid[0:H, 0:W] + 0.5
    raw = np.zeros((H, W))
    conf = np.zeros((H, W))
    for d in frame.detections:
        b = d.bbox
        member = (cx >= b.x) & (cx < b.x + b.w) & (cy >= b.y) & (cy < b.y + b.h)
        s = math.exp(-sigma / b.h) if use_size else 1.0
        p = naive_phi_pose(d) if use_pose else 1.0
        raw += np.where(member, s * p, 0.0)
        conf += np.where(member, b.c, 0.0)
    if use_loc:
        raw = raw * (conf * np.asarray(mean_mask))
    peak = raw.max()
    return raw / peak if peak > 0 else raw

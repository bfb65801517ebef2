"""Ground-truth rendering, argmax-player accuracy and the ablation runner."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteInput, InvalidInput, NoCandidates
from .grid import BBox, GridDims, box_slices, zeros
from .transformer import ABLATIONS, PriorConfig, ablated, pseudo_gt

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class GTAnnotation:
    image_id: str
    cooperator_box: BBox


@dataclass
class EvalReport:
    per_image: list  # (image_id, predicted detection index, correct)
    accuracy: float
    config_label: str = "full"

    @property
    def n_correct(self):
        return sum(1 for _, _, ok in self.per_image if ok)

    def table(self) -> str:
        lines = ["image_id\tpredicted\tcorrect"]
        lines += [f"{i}\t{k}\t{int(ok)}" for i, k, ok in self.per_image]
        lines.append(f"# {self.config_label}\taccuracy\t{self.accuracy:.6f}\t"
                     f"{self.n_correct}/{len(self.per_image)}")
        return "\n".join(lines) + "\n"

    def records(self):
        return [{"image_id": i, "predicted": k, "correct": bool(ok)} for i, k, ok in self.per_image]


def render_gaussian_gt(ann: GTAnnotation, dims: GridDims) -> np.ndarray:
    """Peak-1 Gaussian at the box center with sigma = extent / 4, zero outside the box."""
    box = ann.cooperator_box
    out = zeros(dims)
    rs, cs = box_slices(box, dims)
    cx, cy = box.center
    sx, sy = box.w / 4.0, box.h / 4.0
    dx = (np.arange(cs.start, cs.stop) + 0.5 - cx) / sx
    dy = (np.arange(rs.start, rs.stop) + 0.5 - cy) / sy
    out[rs, cs] = np.exp(-0.5 * dy[:, None] ** 2) * np.exp(-0.5 * dx[None, :] ** 2)
    return out


def player_score(pred, box: BBox) -> float:
    pred = np.asarray(pred)
    h, w = pred.shape
    region = pred[box_slices(box, GridDims(w, h))]
    return float(region.max()) if region.size else 0.0


def predict_cooperator(pred, frame) -> int:
    if not frame.detections:
        raise NoCandidates(f"frame {frame.image_id!r} has no detections")
    scores = [player_score(pred, d.bbox) for d in frame.detections]
    return int(np.argmax(scores))  # first maximum wins ties


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def match(predicted, ann: GTAnnotation) -> bool:
    return iou(predicted.bbox, ann.cooperator_box) >= IOU_THRESHOLD


def evaluate(preds, frames, anns, config_label="full") -> EvalReport:
    """Accuracy of argmax-player predictions over the annotated images.

    ``preds`` maps image_id to a heat map on the frame's grid; ``frames`` is
    an iterable of frames or a mapping keyed by image_id.
    """
    by_id = frames if isinstance(frames, dict) else {f.image_id: f for f in frames}
    anns = list(anns)
    if not anns:
        raise InvalidInput("no annotations to evaluate")
    missing = [a.image_id for a in anns if a.image_id not in preds or a.image_id not in by_id]
    if missing:
        raise IncompleteInput(f"missing predictions or frames for {len(missing)} image(s): "
                              f"{', '.join(missing[:10])}", missing)
    rows = []
    for a in anns:
        frame = by_id[a.image_id]
        k = predict_cooperator(preds[a.image_id], frame)
        rows.append((a.image_id, k, match(frame.detections[k], a)))
    return EvalReport(rows, sum(r[2] for r in rows) / len(rows), config_label)


def pseudo_gt_predictions(frames, prior, cfg: PriorConfig):
    return {f.image_id: pseudo_gt(f, prior, cfg) for f in frames}


@dataclass
class AblationRow:
    variant: str
    pseudo_gt: EvalReport
    trained: EvalReport = None
    extra: dict = field(default_factory=dict)


def run_ablations(frames, anns, prior, base_cfg: PriorConfig = PriorConfig(), train_fn=None,
                  variants=ABLATIONS):
    """Pseudo-GT accuracy for each ablation variant.

    When ``train_fn(cfg) -> {image_id: heat map}`` is given, a learner is also
    trained per variant and its predictions evaluated.
    """
    frames = list(frames)
    anns = list(anns)
    rows = []
    for v in variants:
        cfg = ablated(base_cfg, v)
        row = AblationRow(v, evaluate(pseudo_gt_predictions(frames, prior, cfg), frames, anns, v))
        if train_fn is not None:
            row.trained = evaluate(train_fn(cfg), frames, anns, v)
        rows.append(row)
    return rows


def ablation_table(rows) -> str:
    trained = any(r.trained is not None for r in rows)
    head = "variant\tpseudo_gt" + ("\ttrained" if trained else "")
    lines = [head]
    for r in rows:
        line = f"{r.variant}\t{r.pseudo_gt.accuracy:.6f}"
        if trained:
            line += "\t" + (f"{r.trained.accuracy:.6f}" if r.trained is not None else "nan")
        lines.append(line)
    return "\n".join(lines) + "\n"


def binomial_interval(k, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    p = k / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return center - half, center + half

"""Compact fully-convolutional per-pixel scorer trained on pseudo labels.

Architecture: 5x5 conv -> ReLU -> 3x3 conv -> ReLU -> 1x1 conv -> sigmoid,
all with "same" zero padding.  Gradients are written out by hand (reverse
mode through the three layers) and checked against finite differences in the
test suite.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import Diverged, InvalidInput
from .grid import GridDims, area_resize, rasterize_box, upsample_nearest, zeros
from .transformer import PriorConfig, confidence_mask, phi_pose, pseudo_gt

log = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
EPS = 1e-12
LEARNER_DIMS = GridDims(80, 60)
FEATURE_CHANNELS = ("gray", "confidence", "facing", "height")


@dataclass(eq=False)
class LearnerParams:
    w1: np.ndarray  # (hidden, channels, 5, 5)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, hidden, 3, 3)
    b2: np.ndarray
    w3: np.ndarray  # (1, hidden, 1, 1)
    b3: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        hidden, channels = self.w1.shape[:2]
        expected = {
            "w1": (hidden, channels, 5, 5), "b1": (hidden,),
            "w2": (hidden, hidden, 3, 3), "b2": (hidden,),
            "w3": (1, hidden, 1, 1), "b3": (1,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise InvalidInput(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInput(f"{name} contains non-finite values")

    @classmethod
    def _raw(cls, *arrays):
        """Build without validation (gradients may legitimately be non-finite)."""
        obj = cls.__new__(cls)
        for name, a in zip(PARAM_NAMES, arrays):
            setattr(obj, name, a)
        return obj

    @property
    def channels(self):
        return self.w1.shape[1]

    @property
    def hidden(self):
        return self.w1.shape[0]

    def arrays(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self):
        return LearnerParams(*(a.copy() for a in self.arrays()))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, like, vec):
        out, i = [], 0
        for a in like.arrays():
            out.append(np.asarray(vec[i:i + a.size], dtype=np.float64).reshape(a.shape))
            i += a.size
        return cls(*out)

    def __eq__(self, other):
        if not isinstance(other, LearnerParams):
            return NotImplemented
        return all(a.shape == b.shape and np.array_equal(a, b)
                   for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True)
class TrainConfig:
    # the loss is summed over pixels, so the step is far smaller than a
    # per-pixel-mean loss would need; 1e-3 can already kill every ReLU at 80x60
    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 15
    iterations: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInput("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInput("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise InvalidInput("weight_decay must be >= 0")
        if self.batch_size < 1 or self.iterations < 1:
            raise InvalidInput("batch_size and iterations must be >= 1")


def init_params(channels: int, seed: int, hidden: int = 8) -> LearnerParams:
    """Uniform weights with variance 1/fan_in (bound sqrt(3/fan_in)), zero biases."""
    if channels < 1 or hidden < 1:
        raise InvalidInput("channels and hidden must be >= 1")
    rng = np.random.default_rng(seed)

    def draw(shape):
        fan_in = shape[1] * shape[2] * shape[3]
        bound = math.sqrt(3.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return LearnerParams(
        draw((hidden, channels, 5, 5)), np.zeros(hidden),
        draw((hidden, hidden, 3, 3)), np.zeros(hidden),
        draw((1, hidden, 1, 1)), np.zeros(1),
    )


# -- layer primitives -------------------------------------------------------

# Internally activations are channel-major, (C, B, H, W), so each layer is a
# single matrix product against im2col columns with no transposes in between.

def _im2col(x, k):
    """(C, B, H, W) -> (C*k*k, B*H*W) columns of same-padded k x k neighbourhoods."""
    C, B, H, W = x.shape
    if k == 1:
        return x.reshape(C, -1)
    p = k // 2
    xp = np.zeros((C, B, H + 2 * p, W + 2 * p))
    xp[:, :, p:p + H, p:p + W] = x
    cols = np.empty((C, k, k, B, H, W))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + H, j:j + W]
    return cols.reshape(C * k * k, -1)


def _col2im(cols, shape, k):
    C, B, H, W = shape
    if k == 1:
        return cols.reshape(shape)
    p = k // 2
    cols = cols.reshape(C, k, k, B, H, W)
    xp = np.zeros((C, B, H + 2 * p, W + 2 * p))
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + H, j:j + W] += cols[:, i, j]
    return xp[:, :, p:p + H, p:p + W]


def _conv(x, w, b, cols=None):
    """Same-padded cross-correlation of a channel-major stack."""
    if cols is None:
        cols = _im2col(x, w.shape[-1])
    out = w.reshape(w.shape[0], -1) @ cols
    out += b[:, None]
    return out.reshape((w.shape[0],) + x.shape[1:])


def _conv_backward(dout, x, w, cols=None, need_dx=True):
    k = w.shape[-1]
    if cols is None:
        cols = _im2col(x, k)
    g = dout.reshape(dout.shape[0], -1)
    db = g.sum(axis=1)
    dw = (g @ cols.T).reshape(w.shape)
    dx = _col2im(w.reshape(w.shape[0], -1).T @ g, x.shape, k) if need_dx else None
    return dx, dw, db


def sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _bce_from_logits(z, t):
    return math.fsum((t * _softplus(-z) + (1.0 - t) * _softplus(z)).ravel())


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != params.channels:
        raise InvalidInput(f"input of shape {x.shape[-3:] if x.ndim >= 3 else x.shape} "
                           f"does not match {params.channels} input channels")
    return x, single


def _forward_cache(params, x):
    """Forward pass on a batch; returns channel-major activations and im2col columns."""
    x = x.transpose(1, 0, 2, 3)
    c1 = _im2col(x, params.w1.shape[-1])
    z1 = _conv(x, params.w1, params.b1, c1)
    a1 = np.maximum(z1, 0.0)
    c2 = _im2col(a1, params.w2.shape[-1])
    z2 = _conv(a1, params.w2, params.b2, c2)
    a2 = np.maximum(z2, 0.0)
    c3 = _im2col(a2, params.w3.shape[-1])
    z3 = _conv(a2, params.w3, params.b3, c3)[0]
    return (x, z1, a1, z2, a2, z3), (c1, c2, c3)


def logits(params: LearnerParams, x) -> np.ndarray:
    x, single = _as_batch(params, x)
    z3 = _forward_cache(params, x)[0][-1]
    return z3[0] if single else z3


def forward(params: LearnerParams, x) -> np.ndarray:
    """Per-pixel cooperation probability for a ``(C, H, W)`` stack (or a batch)."""
    return sigmoid(logits(params, x))


def cross_entropy(pred, target, return_clamped=False):
    """Summed per-pixel sigmoid cross-entropy.

    Predictions are clamped to ``[EPS, 1 - EPS]`` first; the number of clamped
    pixels is logged and optionally returned.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidInput(f"shape mismatch: {pred.shape} vs {target.shape}")
    clipped = np.clip(pred, EPS, 1.0 - EPS)
    n_clamped = int(np.count_nonzero(clipped != pred))
    if n_clamped:
        log.debug("cross_entropy clamped %d predictions", n_clamped)
    terms = target * np.log(clipped) + (1.0 - target) * np.log1p(-clipped)
    # fsum is correctly rounded, so the loss does not depend on pixel order
    value = -math.fsum(terms.ravel())
    return (value, n_clamped) if return_clamped else value


def loss_and_gradient(params: LearnerParams, x, target):
    """Loss (summed over pixels, averaged over the batch) and its gradient.

    Computed from the logits, so no clamping is needed; at the output the
    gradient w.r.t. each logit is ``(g - target) / batch``.
    """
    x, single = _as_batch(params, x)
    t = np.asarray(target, dtype=np.float64)
    if single:
        t = t[None]
    if t.shape != (x.shape[0],) + x.shape[2:]:
        raise InvalidInput(f"target shape {t.shape} does not match input {x.shape}")
    n = x.shape[0]
    (xc, z1, a1, z2, a2, z3), (c1, c2, c3) = _forward_cache(params, x)
    value = _bce_from_logits(z3, t) / n

    dz3 = ((sigmoid(z3) - t) / n)[None]
    da2, dw3, db3 = _conv_backward(dz3, a2, params.w3, c3)
    dz2 = da2 * (z2 > 0)
    da1, dw2, db2 = _conv_backward(dz2, a1, params.w2, c2)
    dz1 = da1 * (z1 > 0)
    _, dw1, db1 = _conv_backward(dz1, xc, params.w1, c1, need_dx=False)
    return value, LearnerParams._raw(dw1, db1, dw2, db2, dw3, db3)


def batch_loss(params: LearnerParams, x, target) -> float:
    x, single = _as_batch(params, x)
    t = np.asarray(target, dtype=np.float64)
    if single:
        t = t[None]
    z3 = _forward_cache(params, x)[0][-1]
    return _bce_from_logits(z3, t) / x.shape[0]


# -- optimisation -----------------------------------------------------------

def sgd_step(params: LearnerParams, grad: LearnerParams, velocity, cfg: TrainConfig):
    """In-place momentum SGD; weight decay applies to weights only."""
    for name, p, g, v in zip(PARAM_NAMES, params.arrays(), grad.arrays(), velocity):
        step = g + cfg.weight_decay * p if name.startswith("w") else g
        v *= cfg.momentum
        v += step
        p -= cfg.learning_rate * v


def train(dataset, cfg: TrainConfig, init: LearnerParams = None, loss_log=None,
          progress=None) -> LearnerParams:
    """Mini-batch SGD over ``(features, target)`` pairs.

    Batches come from a seeded reshuffle at every epoch; a short trailing
    batch is used as-is.  Per-iteration batch losses are appended to
    ``loss_log`` when given.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidInput("training set is empty")
    X = np.stack([np.asarray(f, dtype=np.float64) for f, _ in dataset])
    Y = np.stack([np.asarray(t, dtype=np.float64) for _, t in dataset])
    if X.ndim != 4 or Y.shape != (X.shape[0],) + X.shape[2:]:
        raise InvalidInput(f"inconsistent training shapes {X.shape} / {Y.shape}")
    rng = np.random.default_rng(cfg.seed)
    params = init.copy() if init is not None else init_params(X.shape[1], cfg.seed)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    order, pos = rng.permutation(len(X)), 0
    for it in range(cfg.iterations):
        if pos >= len(X):
            order, pos = rng.permutation(len(X)), 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        with np.errstate(over="ignore", invalid="ignore"):
            value, grad = loss_and_gradient(params, X[idx], Y[idx])
        if not math.isfinite(value) or not np.all(np.isfinite(grad.flat())):
            raise Diverged(it, value)
        sgd_step(params, grad, velocity, cfg)
        if loss_log is not None:
            loss_log.append(value)
        if progress is not None:
            progress(it, value)
    return params


# -- frame-level glue -------------------------------------------------------

def frame_features(frame, pose_cfg: PriorConfig = PriorConfig(), dims: GridDims = LEARNER_DIMS):
    """4-channel input stack: grayscale image, confidence, facing score, box height."""
    fd = frame.dims
    gray = zeros(fd) if frame.image is None else np.asarray(frame.image, dtype=np.float64) / 255.0
    facing, height = zeros(fd), zeros(fd)
    for d in frame.detections:
        facing += rasterize_box(d.bbox, phi_pose(d, pose_cfg), fd)
        height += rasterize_box(d.bbox, d.bbox.h / fd.height, fd)
    stack = np.stack([gray, confidence_mask(frame), facing, height])
    return area_resize(stack, dims)


def frame_target(frame, prior, cfg: PriorConfig = PriorConfig(), dims: GridDims = LEARNER_DIMS):
    return area_resize(pseudo_gt(frame, prior, cfg), dims)


def training_pairs(frames, prior, cfg: PriorConfig = PriorConfig(), dims: GridDims = LEARNER_DIMS):
    return [(frame_features(f, cfg, dims), frame_target(f, prior, cfg, dims)) for f in frames]


def predict_frame(params: LearnerParams, frame, cfg: PriorConfig = PriorConfig(),
                  dims: GridDims = LEARNER_DIMS) -> np.ndarray:
    """Learner prediction resampled back to the frame's native grid."""
    return upsample_nearest(forward(params, frame_features(frame, cfg, dims)), frame.dims)

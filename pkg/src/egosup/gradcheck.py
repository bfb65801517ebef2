"""Central finite-difference check of the learner's analytic gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .learner import LearnerParams, _forward_cache, batch_loss, init_params, loss_and_gradient

KINK_MARGIN = 1e-4


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def numeric_gradient(params: LearnerParams, x, target, step=1e-5):
    base = params.flat()
    out = np.empty_like(base)
    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += step
        minus[i] -= step
        out[i] = (batch_loss(LearnerParams.from_flat(params, plus), x, target)
                  - batch_loss(LearnerParams.from_flat(params, minus), x, target)) / (2 * step)
    return out


def random_instance(seed, channels=4, width=40, height=30, margin=KINK_MARGIN):
    """Random (params, input, target), redrawn until every ReLU input is at
    least ``margin`` away from zero so the finite-difference segment never
    straddles a kink."""
    rng = np.random.default_rng(seed)
    while True:
        params = init_params(channels, int(rng.integers(2**63)))
        params.b1[:] = rng.normal(0.0, 0.1, params.b1.shape)
        params.b2[:] = rng.normal(0.0, 0.1, params.b2.shape)
        params.b3[:] = rng.normal(0.0, 0.1, params.b3.shape)
        x = rng.normal(size=(channels, height, width))
        target = rng.uniform(size=(height, width))
        _, z1, _, z2, _, _ = _forward_cache(params, x[None])[0]
        if min(np.abs(z1).min(), np.abs(z2).min()) >= margin:
            return params, x, target


@dataclass
class GradCheckResult:
    seed: int
    n_coords: int
    max_rel_error: float
    n_failed: int


def check_instance(seed, tol=1e-4, step=1e-5, **kw) -> GradCheckResult:
    params, x, target = random_instance(seed, **kw)
    _, grad = loss_and_gradient(params, x, target)
    err = relative_error(grad.flat(), numeric_gradient(params, x, target, step))
    return GradCheckResult(seed, err.size, float(err.max()), int(np.count_nonzero(err >= tol)))


def run_suite(n=20, seed=0, tol=1e-4, step=1e-5, **kw):
    return [check_instance(seed + i, tol, step, **kw) for i in range(n)]

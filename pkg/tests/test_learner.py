import math

import numpy as np
import pytest

from egosup.errors import Diverged, InvalidInput
from egosup.grid import BBox, GridDims
from egosup.learner import (EPS, LearnerParams, TrainConfig, batch_loss, cross_entropy, forward,
                            frame_features, frame_target, init_params, logits, loss_and_gradient,
                            sgd_step, train)
from egosup.transformer import Frame, LocationPriorArtifact, PersonDetection


def zero_params(channels=4, hidden=8):
    return LearnerParams(np.zeros((hidden, channels, 5, 5)), np.zeros(hidden),
                         np.zeros((hidden, hidden, 3, 3)), np.zeros(hidden),
                         np.zeros((1, hidden, 1, 1)), np.zeros(1))


def random_params(rng, channels=3, hidden=8):
    return LearnerParams(rng.normal(0, 0.3, (hidden, channels, 5, 5)), rng.normal(0, 0.1, hidden),
                         rng.normal(0, 0.3, (hidden, hidden, 3, 3)), rng.normal(0, 0.1, hidden),
                         rng.normal(0, 0.3, (1, hidden, 1, 1)), rng.normal(0, 0.1, 1))


def loop_conv(x, w, b):
    """Same-padded 2-D cross-correlation, one output value at a time."""
    C, H, W = x.shape
    O, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((O, H, W))
    for o in range(O):
        for r in range(H):
            for c in range(W):
                acc = b[o]
                for ch in range(C):
                    for i in range(k):
                        for j in range(k):
                            rr, cc = r + i - p, c + j - p
                            if 0 <= rr < H and 0 <= cc < W:
                                acc += w[o, ch, i, j] * x[ch, rr, cc]
                out[o, r, c] = acc
    return out


def loop_forward(params, x):
    a1 = np.maximum(loop_conv(x, params.w1, params.b1), 0)
    a2 = np.maximum(loop_conv(a1, params.w2, params.b2), 0)
    z = loop_conv(a2, params.w3, params.b3)[0]
    return 1.0 / (1.0 + np.exp(-z))


def test_zero_network_outputs_half():
    out = forward(zero_params(), np.random.default_rng(0).normal(size=(4, 6, 5)))
    assert out.shape == (6, 5) and np.all(out == 0.5)


def test_output_bias_saturates():
    p = zero_params()
    p.b3[:] = 20.0
    out = forward(p, np.ones((4, 3, 3)))
    assert np.all(np.abs(out - 1.0) <= 1e-8)


def test_forward_matches_nested_loop_oracle():
    rng = np.random.default_rng(12)
    params = random_params(rng)
    x = rng.normal(size=(3, 7, 9))  # 9 wide, 7 tall
    out = forward(params, x)
    assert np.max(np.abs(out - loop_forward(params, x))) <= 1e-10
    assert np.all((out > 0) & (out < 1))
    batch = forward(params, np.stack([x, 2 * x]))
    assert np.array_equal(batch[0], out)


def test_forward_rejects_wrong_channels():
    with pytest.raises(InvalidInput):
        forward(zero_params(channels=4), np.zeros((3, 5, 5)))


def test_loss_closed_forms():
    n = 7 * 5
    assert cross_entropy(np.full((5, 7), 0.5), np.ones((5, 7))) == pytest.approx(n * math.log(2), rel=1e-14)
    target = (np.arange(12).reshape(3, 4) % 2).astype(float)
    value, clamped = cross_entropy(target, target, return_clamped=True)
    assert clamped == 12
    assert 0 <= value <= 12 * -math.log1p(-EPS) + 1e-18
    sweep = np.linspace(0.05, 0.95, 91)
    losses = [cross_entropy(np.full((2, 2), g), np.full((2, 2), 0.3)) for g in sweep]
    assert sweep[int(np.argmin(losses))] == pytest.approx(0.3)
    with pytest.raises(InvalidInput):
        cross_entropy(np.zeros((2, 2)), np.zeros((2, 3)))


def test_loss_is_exactly_permutation_invariant():
    rng = np.random.default_rng(3)
    pred, target = rng.uniform(size=(30, 40)), rng.uniform(size=(30, 40))
    base = cross_entropy(pred, target)
    for _ in range(5):
        perm = rng.permutation(pred.size)
        shuffled = cross_entropy(pred.ravel()[perm].reshape(40, 30), target.ravel()[perm].reshape(40, 30))
        assert shuffled == base


def test_gradient_loss_agrees_with_clamped_loss():
    rng = np.random.default_rng(4)
    params = random_params(rng, channels=4)
    x, t = rng.normal(size=(4, 6, 8)), rng.uniform(size=(6, 8))
    value, _ = loss_and_gradient(params, x, t)
    assert value == pytest.approx(cross_entropy(forward(params, x), t), rel=1e-12)
    assert value == pytest.approx(batch_loss(params, x, t), rel=0, abs=0)


def test_scalar_chain_rule_on_one_pixel():
    rng = np.random.default_rng(21)
    p = random_params(rng, channels=1, hidden=3)
    p.b1[:] = [0.4, -5.0, 0.7]  # unit 1 stays off
    p.b2[:] = [0.6, 0.2, 5.0]
    x, t = 0.8, 0.25
    value, g = loss_and_gradient(p, np.array([[[x]]]), np.array([[t]]))

    # only the kernel centers touch a 1x1 image
    w1, w2, w3 = p.w1[:, 0, 2, 2], p.w2[:, :, 1, 1], p.w3[0, :, 0, 0]
    z1 = w1 * x + p.b1
    a1 = np.maximum(z1, 0)
    z2 = w2 @ a1 + p.b2
    a2 = np.maximum(z2, 0)
    z3 = w3 @ a2 + p.b3[0]
    out = 1 / (1 + math.exp(-z3))
    assert value == pytest.approx(-(t * math.log(out) + (1 - t) * math.log(1 - out)), rel=1e-12)

    d3 = out - t
    d2 = d3 * w3 * (z2 > 0)
    d1 = (w2.T @ d2) * (z1 > 0)
    assert g.b3[0] == pytest.approx(d3, rel=1e-12)
    assert np.allclose(g.w3[0, :, 0, 0], d3 * a2, rtol=1e-12, atol=0)
    assert np.allclose(g.b2, d2, rtol=1e-12, atol=1e-15)
    assert np.allclose(g.w2[:, :, 1, 1], np.outer(d2, a1), rtol=1e-12, atol=1e-15)
    assert np.allclose(g.b1, d1, rtol=1e-12, atol=1e-15)
    assert np.allclose(g.w1[:, 0, 2, 2], d1 * x, rtol=1e-12, atol=1e-15)
    assert d1[1] == 0.0
    # off-center taps never see the pixel
    mask = np.ones((5, 5), bool)
    mask[2, 2] = False
    assert not g.w1[:, :, mask].any()
    mask3 = np.ones((3, 3), bool)
    mask3[1, 1] = False
    assert not g.w2[:, :, mask3].any()


def test_gradient_vanishes_at_saturated_fit():
    rng = np.random.default_rng(6)
    p = random_params(rng, channels=4)
    p.w3[:] = 0.0
    p.b3[:] = 40.0
    _, g = loss_and_gradient(p, rng.normal(size=(4, 5, 6)), np.ones((5, 6)))
    assert np.max(np.abs(g.flat())) < 1e-6


def test_init_params():
    a, b = init_params(4, 7), init_params(4, 7)
    assert a == b
    assert a != init_params(4, 8)
    for w, fan_in in [(a.w1, 4 * 25), (a.w2, 8 * 9), (a.w3, 8)]:
        assert np.max(np.abs(w)) <= math.sqrt(3 / fan_in)
    assert not a.b1.any() and not a.b2.any() and not a.b3.any()
    with pytest.raises(InvalidInput):
        init_params(0, 1)


def test_param_shape_validation():
    p = zero_params()
    with pytest.raises(InvalidInput):
        LearnerParams(p.w1, p.b1, p.w2[:, :4], p.b2, p.w3, p.b3)
    assert LearnerParams.from_flat(p, np.arange(p.flat().size)).flat().tolist() == list(range(p.flat().size))


def test_first_momentum_step_is_plain_sgd():
    rng = np.random.default_rng(1)
    p = random_params(rng, channels=4)
    grad = random_params(rng, channels=4)
    cfg = TrainConfig(learning_rate=0.05, momentum=0.9, weight_decay=0.01)
    before = p.copy()
    velocity = [np.zeros_like(a) for a in p.arrays()]
    sgd_step(p, grad, velocity, cfg)
    for name, new, old, g in zip(("w1", "b1", "w2", "b2", "w3", "b3"), p.arrays(), before.arrays(),
                                 grad.arrays()):
        decay = cfg.weight_decay * old if name.startswith("w") else 0.0
        assert np.array_equal(new, old - cfg.learning_rate * (g + decay))
    # second step carries momentum
    sgd_step(p, grad, velocity, cfg)
    v1 = grad.w1 + cfg.weight_decay * before.w1
    w1 = before.w1 - cfg.learning_rate * v1
    v2 = cfg.momentum * v1 + (grad.w1 + cfg.weight_decay * w1)
    assert np.allclose(p.w1, w1 - cfg.learning_rate * v2, rtol=0, atol=1e-15)


def test_weight_decay_on_zero_gradient_data():
    rng = np.random.default_rng(2)
    init = random_params(rng, channels=4)
    init.w3[:] = 0.0
    init.b3[:] = 0.0  # output is exactly 0.5 everywhere
    data = [(rng.normal(size=(4, 6, 6)), np.full((6, 6), 0.5))]
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.01, iterations=1)
    out = train(data, cfg, init=init)
    factor = 1 - cfg.learning_rate * cfg.weight_decay
    assert np.allclose(out.w1, init.w1 * factor, rtol=1e-15, atol=0)
    assert np.allclose(out.w2, init.w2 * factor, rtol=1e-15, atol=0)
    assert np.array_equal(out.b1, init.b1) and np.array_equal(out.b2, init.b2)


def test_single_sample_descends():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(4, 12, 16))
    t = (x[0] > 0.5).astype(float)
    log = []
    train([(x, t)], TrainConfig(learning_rate=0.001, iterations=200, seed=3), loss_log=log)
    assert len(log) == 200 and log[-1] < log[0]


def test_training_is_deterministic():
    rng = np.random.default_rng(5)
    data = [(rng.uniform(size=(4, 8, 8)), rng.uniform(size=(8, 8))) for _ in range(7)]
    cfg = TrainConfig(learning_rate=0.001, batch_size=3, iterations=10, seed=9)
    a, b = train(data, cfg), train(data, cfg)
    assert a == b and a.flat().tobytes() == b.flat().tobytes()
    assert a != train(data, TrainConfig(learning_rate=0.001, batch_size=3, iterations=10, seed=10))


def test_divergence_is_reported():
    rng = np.random.default_rng(5)
    data = [(100 * rng.normal(size=(4, 8, 8)), rng.uniform(size=(8, 8)))]
    with pytest.raises(Diverged) as info:
        train(data, TrainConfig(learning_rate=1e30, momentum=0.99, iterations=100))
    assert info.value.iteration >= 0


def test_train_input_validation():
    with pytest.raises(InvalidInput):
        train([], TrainConfig())
    with pytest.raises(InvalidInput):
        train([(np.zeros((4, 5, 5)), np.zeros((5, 4)))], TrainConfig(iterations=1))
    for kw in [dict(learning_rate=0), dict(momentum=1.0), dict(weight_decay=-1), dict(batch_size=0)]:
        with pytest.raises(InvalidInput):
            TrainConfig(**kw)


def test_frame_features_and_target():
    dims = GridDims(16, 12)
    img = np.full(dims.shape, 255, np.uint8)
    box = BBox(4, 2, 4, 8, 0.5)
    frame = Frame("f", dims, (PersonDetection.without_pose(box),), image=img)
    feats = frame_features(frame, dims=GridDims(8, 6))
    assert feats.shape == (4, 6, 8)
    assert np.allclose(feats[0], 1.0)
    assert feats[1].max() == pytest.approx(0.5)  # confidence
    assert feats[2].max() == pytest.approx(0.5)  # no visible pairs -> fallback
    assert feats[3].max() == pytest.approx(8 / 12)  # box height share
    prior = LocationPriorArtifact(dims, np.ones(dims.shape), 1)
    target = frame_target(frame, prior, dims=GridDims(8, 6))
    assert target.shape == (6, 8) and target.max() == pytest.approx(1.0)
    assert np.array_equal(logits(zero_params(), feats), np.zeros((6, 8)))

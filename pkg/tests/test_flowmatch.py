"""Tests for the contrastive flow-matching objective and its gradients."""

import math
from fractions import Fraction

import numpy as np
import pytest

from contraflow.augment import AugmentConfig, augment
from contraflow.errors import BatchTooSmallError, ShapeError
from contraflow.flowmatch import (
    LossWeights,
    combine_losses,
    objective_terms,
    sample_path,
    step_loss_only,
    training_step,
    velocity,
)
from contraflow.latent import LatentSequence
from contraflow.rng import SeededRng
from contraflow.vectorfield import (
    ModelConfig,
    adam_step,
    forward_batch,
    init_adam,
    init_params,
)


def _seq(data, rate=20.0):
    return LatentSequence(np.asarray(data, dtype=np.float32), rate)


def _tiny_cfg(**overrides) -> ModelConfig:
    base = dict(
        vocab_size=4, channels=2, embed_dim=3, hidden_dim=6, num_layers=2,
        context_window=3, time_embed_dim=4, pos_embed_dim=4, uncond_prob=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _batch(rng, n_items=3, channels=2, frames=12, vocab=4, n_tokens=3):
    out = []
    for i in range(n_items):
        sub = rng.substream(("data", i))
        x = _seq(sub.normal((channels, frames)))
        cond = [sub.integers(0, vocab - 1) for _ in range(n_tokens)]
        out.append((x, cond))
    return out


def _silence(channels=2, frames=200):
    return _seq(np.zeros((channels, frames)))


# -- path construction ---------------------------------------------------


def test_sample_path_endpoints():
    x = _seq(SeededRng(0).substream("x").normal((3, 7)))
    at0 = sample_path(x, SeededRng(1).substream("p"), t=0.0)
    np.testing.assert_array_equal(at0.x_t.data, at0.eps.data.astype(np.float32))
    at1 = sample_path(x, SeededRng(1).substream("p"), t=1.0)
    np.testing.assert_array_equal(at1.x_t.data, x.data)


def test_sample_path_interpolates_linearly():
    x = _seq(SeededRng(0).substream("x").normal((2, 5)))
    fs = sample_path(x, SeededRng(2).substream("p"))
    assert 0.0 <= fs.t < 1.0
    # replay the draws so the interpolation arithmetic matches bitwise
    ref = SeededRng(2).substream("p")
    eps = ref.normal((2, 5))
    t = ref.uniform(0.0, 1.0)
    assert fs.t == t
    expect = ((1.0 - t) * eps + t * x.data).astype(np.float32)
    np.testing.assert_array_equal(fs.x_t.data, expect)


def test_sample_path_draw_order_is_normal_then_uniform():
    # oracle replay depends on the documented draw order
    x = _seq(np.zeros((2, 4)))
    fs = sample_path(x, SeededRng(7).substream("p"))
    ref = SeededRng(7).substream("p")
    np.testing.assert_array_equal(fs.eps.data, ref.normal((2, 4)).astype(np.float32))
    assert fs.t == ref.uniform(0.0, 1.0)


def test_velocity_is_data_minus_noise():
    x = _seq([[1.0, 2.0], [3.0, 4.0]])
    eps = _seq([[0.5, 0.5], [1.0, 1.0]])
    v = velocity(x, eps)
    np.testing.assert_array_equal(v.data, np.array([[0.5, 1.5], [2.0, 3.0]], dtype=np.float32))
    with pytest.raises(ShapeError):
        velocity(x, _seq(np.zeros((2, 3))))


# -- objective identity --------------------------------------------------


def test_combine_losses_matches_reference_expression():
    rng = SeededRng(11).substream("triples")
    for _ in range(1000):
        pos, rand, aug = (rng.uniform(0.0, 2.0) for _ in range(3))
        lr, la = (rng.uniform(0.0, 0.5) for _ in range(2))
        got = combine_losses(pos, rand, aug, LossWeights(lr, la)).total
        ref = pos - lr * rand - la * aug
        assert abs(got - ref) <= np.spacing(max(abs(ref), 1e-300))
        # exact-arithmetic bound: a wrong formula would miss by far more
        exact = Fraction(pos) - Fraction(lr) * Fraction(rand) - Fraction(la) * Fraction(aug)
        slack = 4 * np.spacing(max(abs(pos), abs(lr * rand), abs(la * aug), 1e-300))
        assert abs(got - float(exact)) <= slack


def test_variant_reductions_are_exact():
    pos, rand, aug = 0.8125, 0.5, 0.25  # dyadic, so products are exact
    no_aug = combine_losses(pos, rand, aug, LossWeights(0.25, 0.0))
    assert no_aug.total == pos - 0.25 * rand
    plain = combine_losses(pos, rand, aug, LossWeights(0.0, 0.0))
    assert plain.total == pos


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.0)
    with pytest.raises(ValueError):
        LossWeights(0.2, math.nan)


def test_identical_negatives_collapse_to_scaled_positive():
    # when both negatives equal the positive target the objective is
    # (1 - lr - la) * pos and the gradient shrinks by the same factor
    rng = SeededRng(5).substream("collapse")
    u = rng.normal((2, 3, 8), dtype=np.float64)
    v = rng.normal((2, 3, 8), dtype=np.float64)
    w = LossWeights(0.2, 0.2)
    breakdown, grad = objective_terms(u, v, v, v, w)
    assert breakdown.pos == breakdown.rand == breakdown.aug
    np.testing.assert_allclose(breakdown.total, 0.6 * breakdown.pos, rtol=1e-14)
    plain_grad = 2.0 / u.size * (u - v)
    np.testing.assert_allclose(grad, 0.6 * plain_grad, rtol=1e-13, atol=0)


def test_perfect_prediction_zeroes_plain_objective():
    rng = SeededRng(6).substream("perfect")
    v_pos = rng.normal((2, 2, 6))
    breakdown, grad = objective_terms(v_pos.copy(), v_pos, None, None, LossWeights(0.0, 0.0))
    assert breakdown.pos == 0.0
    assert breakdown.total == 0.0
    assert not grad.any()


def test_objective_terms_gradient_formula():
    rng = SeededRng(9).substream("grad")
    u = rng.normal((2, 2, 5), dtype=np.float64)
    v_pos = rng.normal((2, 2, 5), dtype=np.float64)
    v_rand = rng.normal((2, 2, 5), dtype=np.float64)
    v_aug = rng.normal((2, 2, 5), dtype=np.float64)
    w = LossWeights(0.3, 0.1)
    _, grad = objective_terms(u, v_pos, v_rand, v_aug, w)
    ref = (2.0 / u.size) * ((u - v_pos) - 0.3 * (u - v_rand) - 0.1 * (u - v_aug))
    np.testing.assert_allclose(grad, ref, rtol=1e-12, atol=1e-18)


# -- training step structure ---------------------------------------------


def test_training_step_shares_one_noise_draw_across_targets():
    # all three velocity targets subtract the same eps array bitwise, so
    # the negatives differ from the positive only through their endpoints
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init"))
    batch = _batch(SeededRng(1))
    _, _, details = training_step(
        batch, params, _silence(), LossWeights(0.2, 0.2),
        SeededRng(2).substream(("step", 0)), want_details=True,
    )
    clean = np.stack([item[0].data for item in batch])
    rolled = np.stack([batch[(i + 1) % len(batch)][0].data for i in range(len(batch))])
    np.testing.assert_array_equal(details.v_pos, clean - details.eps)
    np.testing.assert_array_equal(details.v_rand, rolled - details.eps)
    augmented = np.stack([o.latent.data for o in details.aug_outcomes])
    np.testing.assert_array_equal(details.v_aug, augmented - details.eps)


def test_training_step_details_replay_from_substreams():
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init"))
    batch = _batch(SeededRng(3), frames=16)
    step_rng = SeededRng(4).substream(("step", 7))
    _, _, details = training_step(
        batch, params, _silence(), LossWeights(0.2, 0.2), step_rng, want_details=True,
    )
    aug_cfg = AugmentConfig(frame_rate=20.0)
    for i, (x, _) in enumerate(batch):
        fs = sample_path(x, step_rng.substream(("flow", i)))
        np.testing.assert_array_equal(details.eps[i], fs.eps.data)
        assert details.t[i] == fs.t
        np.testing.assert_array_equal(details.x_t[i], fs.x_t.data)
        np.testing.assert_array_equal(details.v_pos[i], x.data - fs.eps.data)
        replay = augment(x, _silence(), step_rng.substream(("aug", i)), aug_cfg)
        np.testing.assert_array_equal(
            details.v_aug[i], replay.latent.data - fs.eps.data
        )


def test_training_step_loss_matches_plain_fm_reference():
    # independent reference: plain flow matching computed longhand
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init"))
    batch = _batch(SeededRng(5), frames=12)
    step_rng = SeededRng(6).substream(("step", 0))
    breakdown, _ = training_step(
        batch, params, _silence(), LossWeights(0.0, 0.0), step_rng,
    )

    B = len(batch)
    C, T = batch[0][0].data.shape
    eps = np.empty((B, C, T), dtype=np.float32)
    x_t = np.empty((B, C, T), dtype=np.float32)
    t = np.empty(B)
    for i, (x, _) in enumerate(batch):
        sub = step_rng.substream(("flow", i))
        eps[i] = sub.normal((C, T))
        tv = sub.uniform(0.0, 1.0)  # plain float keeps the math in f32
        t[i] = tv
        x_t[i] = ((1.0 - tv) * eps[i] + tv * x.data).astype(np.float32)
    clean = np.stack([x.data for x, _ in batch])
    u, _ = forward_batch(params, x_t, t, [c for _, c in batch])
    diff = (u - (clean - eps)).astype(np.float64)  # residual forms in f32
    ref_loss = float(np.mean(diff * diff))

    assert breakdown.total == breakdown.pos
    np.testing.assert_allclose(breakdown.pos, ref_loss, rtol=1e-12)


def test_training_step_determinism():
    cfg = _tiny_cfg(uncond_prob=0.1)
    params = init_params(cfg, SeededRng(0).substream("init"))
    batch = _batch(SeededRng(7))
    runs = []
    for _ in range(2):
        b, g = training_step(
            batch, params, _silence(), LossWeights(0.2, 0.2),
            SeededRng(8).substream(("step", 3)),
        )
        runs.append((b, g))
    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][name], runs[1][1][name])


def test_training_step_batch_and_shape_errors():
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init"))
    sil = _silence()
    with pytest.raises(BatchTooSmallError):
        training_step([], params, sil, LossWeights(0.0, 0.0), SeededRng(0))
    solo = _batch(SeededRng(1), n_items=1)
    with pytest.raises(BatchTooSmallError):
        training_step(solo, params, sil, LossWeights(0.2, 0.0), SeededRng(0))
    # without the random-negative term a batch of one is fine
    breakdown, _ = training_step(solo, params, sil, LossWeights(0.0, 0.2), SeededRng(0))
    assert breakdown.rand == 0.0
    mixed = _batch(SeededRng(2), n_items=2) + _batch(SeededRng(3), n_items=1, frames=9)
    with pytest.raises(ShapeError):
        training_step(mixed, params, sil, LossWeights(0.0, 0.0), SeededRng(0))


def test_training_step_gradients_match_finite_differences():
    # probe a handful of weights through the full contrastive objective
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init")).astype(np.float64)
    batch = _batch(SeededRng(9), frames=10)
    sil = _silence()
    weights = LossWeights(0.2, 0.2)

    def loss_at(p):
        return step_loss_only(
            batch, p, sil, weights, SeededRng(10).substream(("step", 0))
        ).total

    _, grads = training_step(
        batch, params, sil, weights, SeededRng(10).substream(("step", 0))
    )
    probe_rng = SeededRng(11).substream("probes")
    names = [name for name, _ in params.named_arrays()]
    h = 1e-5
    for _ in range(12):
        name = names[probe_rng.integers(0, len(names) - 1)]
        arr = dict(params.named_arrays())[name]
        flat = probe_rng.integers(0, arr.size - 1)
        idx = np.unravel_index(flat, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss_at(params)
        arr[idx] = orig - h
        down = loss_at(params)
        arr[idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[name][idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-4, (name, idx)


def test_zero_weights_skip_negative_gradient_but_report_losses():
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init"))
    batch = _batch(SeededRng(12))
    sil = _silence()
    plain, plain_grads = training_step(
        batch, params, sil, LossWeights(0.0, 0.0), SeededRng(13).substream("s"),
    )
    # negative terms are still measured for the logs, just not applied
    assert plain.rand > 0.0
    assert plain.aug > 0.0
    assert plain.total == plain.pos
    contrast, contrast_grads = training_step(
        batch, params, sil, LossWeights(0.2, 0.2), SeededRng(13).substream("s"),
    )
    assert contrast.pos == plain.pos
    assert contrast.rand == plain.rand
    assert any(
        not np.array_equal(plain_grads[n], contrast_grads[n]) for n in plain_grads
    )


def test_adam_applies_training_step_gradients():
    # one optimizer step on the real objective moves every parameter
    cfg = _tiny_cfg()
    params = init_params(cfg, SeededRng(0).substream("init"))
    adam = init_adam(params, lr=1e-3)
    before = {n: a.copy() for n, a in params.named_arrays()}
    _, grads = training_step(
        _batch(SeededRng(14)), params, _silence(), LossWeights(0.2, 0.2),
        SeededRng(15).substream("s"),
    )
    adam_step(params, grads, adam)
    for name, arr in params.named_arrays():
        if grads[name].any():
            assert not np.array_equal(arr, before[name]), name
        else:
            np.testing.assert_array_equal(arr, before[name])

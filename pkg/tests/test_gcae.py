import numpy as np
import pytest

from fedbalance.gcae import (
    ArchSpec,
    ConvStage,
    ModelState,
    _conv1d_fwd,
    _maxpool_fwd,
    _upsample_fwd,
    decode,
    encode,
    evaluate_loss,
    forward,
    grad_check,
    init_model,
    loss,
    train_step,
)
from oracles import conv1d_ref, maxpool_ref, upsample_ref


def small_arch(input_len=12, **kw):
    kw.setdefault("stages", (ConvStage(4, 3, 2),))
    kw.setdefault("latent_dim", 5)
    kw.setdefault("mlp_hidden", (6,))
    return ArchSpec(input_len=input_len, num_classes=3, **kw)


def randomize_biases(model, rng):
    """Shift biases off zero so no ReLU pre-activation sits exactly at the
    kink, where a finite difference straddles two subgradients."""
    for name, p in model.params.items():
        if name.endswith(".b"):
            model.params[name] = rng.uniform(-0.1, 0.1, p.shape).astype(p.dtype)
    return model


# --- architecture bookkeeping ---


def test_arch_derived_lengths_even_and_odd():
    a = ArchSpec(input_len=24, num_classes=6)
    assert a.stage_input_lengths == (24, 12)
    assert a.pooled_lengths == (12, 6)
    assert a.flat_dim == 16 * 6
    b = ArchSpec(input_len=25, num_classes=6)  # ceil-mode pooling
    assert b.stage_input_lengths == (25, 13)
    assert b.pooled_lengths == (13, 7)


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchSpec(input_len=0, num_classes=3)
    with pytest.raises(ValueError):
        ArchSpec(input_len=8, num_classes=1)
    with pytest.raises(ValueError):
        ArchSpec(input_len=8, num_classes=3, stages=())
    with pytest.raises(ValueError, match="weights"):
        ArchSpec(input_len=8, num_classes=3, recon_weight=0.0, pred_weight=0.0)
    with pytest.raises(ValueError, match="weights"):
        ArchSpec(input_len=8, num_classes=3, recon_weight=-1.0)


def test_init_model_bounds_and_determinism():
    arch = small_arch()
    m1 = init_model(arch, np.random.default_rng(3))
    m2 = init_model(arch, np.random.default_rng(3))
    for name, p in m1.params.items():
        assert np.array_equal(p, m2.params[name])
        assert p.dtype == np.float32
        if name.endswith(".b"):
            assert not p.any()
    w = m1.params["enc.conv0.w"]
    assert np.abs(w).max() <= np.sqrt(3.0 / (1 * 3))


# --- layer primitives against naive references ---


def test_conv1d_matches_reference():
    rng = np.random.default_rng(0)
    for k in (1, 2, 3, 5):
        x = rng.normal(size=(2, 3, 9))
        w = rng.normal(size=(4, 3, k))
        b = rng.normal(size=4)
        got, _ = _conv1d_fwd(x, w, b)
        assert np.allclose(got, conv1d_ref(x, w, b), atol=1e-12)


def test_maxpool_matches_reference_including_ragged_tail():
    rng = np.random.default_rng(1)
    for L, p in ((8, 2), (9, 2), (10, 3), (7, 4)):
        x = rng.normal(size=(2, 3, L))
        got, _ = _maxpool_fwd(x, p)
        assert np.allclose(got, maxpool_ref(x, p))


def test_upsample_matches_reference():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 5))
    for out_len in (9, 10):
        got, _ = _upsample_fwd(x, 2, out_len)
        assert np.allclose(got, upsample_ref(x, 2, out_len))


# --- forward pass ---


def test_forward_shapes_and_input_checks():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(7, 12)).astype(np.float32)
    recon, scores, latent = forward(m, x)
    assert recon.shape == (7, 12)
    assert scores.shape == (7, 3)
    assert latent.shape == (7, 5)
    with pytest.raises(ValueError):
        forward(m, x[:, :11])


def test_zero_model_gives_zero_recon_and_uniform_scores():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(0))
    for name in m.params:
        m.params[name] = np.zeros_like(m.params[name])
    recon, scores, latent = forward(m, np.ones((3, 12), dtype=np.float32))
    assert not recon.any() and not scores.any() and not latent.any()


def test_encode_decode_compose_to_forward():
    arch = small_arch(input_len=25)
    m = init_model(arch, np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(4, 25)).astype(np.float32)
    recon, scores, latent = forward(m, x)
    z = encode(m, x)
    assert np.array_equal(z, latent)
    assert np.array_equal(decode(m, z), recon)
    with pytest.raises(ValueError):
        decode(m, z[:, :3])


def test_multichannel_input_width():
    arch = small_arch(input_len=6, input_channels=2)
    assert arch.input_width == 12
    m = init_model(arch, np.random.default_rng(0))
    recon, _, _ = forward(m, np.random.default_rng(1).normal(size=(3, 12)).astype(np.float32))
    assert recon.shape == (3, 12)
    assert m.params["enc.conv0.w"].shape == (4, 2, 3)
    assert m.params["dec.conv0.b"].shape == (2,)


# --- loss ---


def test_loss_value_matches_manual_computation():
    rng = np.random.default_rng(9)
    recon = rng.normal(size=(4, 6))
    x = rng.normal(size=(4, 6))
    scores = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 1])
    total, drecon, dscores = loss(recon, x, scores, labels, alpha=0.7, beta=1.3)

    mse = np.mean((recon - x) ** 2)
    log_probs = scores - np.log(np.exp(scores).sum(axis=1, keepdims=True))
    ce = -np.mean(log_probs[np.arange(4), labels])
    assert total == pytest.approx(0.7 * mse + 1.3 * ce, rel=1e-12)
    assert np.allclose(drecon, 0.7 * 2.0 / recon.size * (recon - x))
    # each cross-entropy gradient row is (softmax - onehot)/n and sums to 0
    assert np.allclose(dscores.sum(axis=1), 0.0, atol=1e-12)
    softmax = np.exp(log_probs)
    onehot = np.eye(3)[labels]
    assert np.allclose(dscores, 1.3 * (softmax - onehot) / 4)


def test_loss_is_stable_under_huge_scores():
    scores = np.array([[1000.0, -1000.0], [-1000.0, 1000.0]])
    total, _, _ = loss(np.zeros((2, 2)), np.zeros((2, 2)), scores, np.array([0, 1]), 1.0, 1.0)
    assert np.isfinite(total) and total == pytest.approx(0.0, abs=1e-9)


def test_evaluate_loss_uses_arch_weights_by_default():
    arch = small_arch(recon_weight=2.0, pred_weight=0.5)
    m = init_model(arch, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 12)).astype(np.float32)
    y = np.array([0, 1, 2, 0, 1])
    total, mse, ce = evaluate_loss(m, x, y)
    assert total == pytest.approx(2.0 * mse + 0.5 * ce, rel=1e-6)
    override, _, _ = evaluate_loss(m, x, y, alpha=1.0, beta=1.0)
    assert override == pytest.approx(mse + ce, rel=1e-6)


# --- gradients & training ---


def test_gradients_match_finite_differences():
    arch = ArchSpec(input_len=10, num_classes=3,
                    stages=(ConvStage(3, 3, 2), ConvStage(4, 3, 2)),
                    latent_dim=4, mlp_hidden=(5,))
    rng = np.random.default_rng(11)
    m = randomize_biases(init_model(arch, rng, dtype=np.float64), rng)
    x = rng.normal(size=(5, 10))
    y = rng.integers(0, 3, size=5)
    assert grad_check(m, x, y) < 1e-4


def test_gradients_with_uneven_loss_weights():
    arch = small_arch(recon_weight=0.3, pred_weight=1.7)
    rng = np.random.default_rng(13)
    m = randomize_biases(init_model(arch, rng, dtype=np.float64), rng)
    x = rng.normal(size=(4, 12))
    y = rng.integers(0, 3, size=4)
    assert grad_check(m, x, y) < 1e-4


def test_train_step_zero_lr_is_noop():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(0))
    before = {k: v.copy() for k, v in m.params.items()}
    train_step(m, np.ones((2, 12), dtype=np.float32), np.array([0, 1]), lr=0.0)
    for k in before:
        assert np.array_equal(m.params[k], before[k])


def test_head_only_updates_classifier_only():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(4))
    before = {k: v.copy() for k, v in m.params.items()}
    train_step(m, np.random.default_rng(0).normal(size=(6, 12)).astype(np.float32),
               np.array([0, 1, 2, 0, 1, 2]), lr=0.1, head_only=True)
    for k in before:
        changed = not np.array_equal(m.params[k], before[k])
        assert changed == k.startswith("mlp.")


def test_training_decreases_loss():
    arch = small_arch()
    rng = np.random.default_rng(8)
    m = init_model(arch, rng)
    x = rng.normal(size=(32, 12)).astype(np.float32)
    y = rng.integers(0, 3, size=32)
    losses = [train_step(m, x, y, lr=0.05) for _ in range(50)]
    assert losses[-1] < losses[0]
    increases = sum(b > a for a, b in zip(losses, losses[1:]))
    assert increases <= 2  # full-batch SGD should be almost monotone here


def test_non_finite_loss_aborts():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(0))
    m.params["mlp.fc1.w"][:] = np.inf
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        train_step(m, np.ones((2, 12), dtype=np.float32), np.array([0, 1]), lr=0.01)


def test_train_step_rejects_bad_labels():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(0))
    x = np.ones((2, 12), dtype=np.float32)
    with pytest.raises(ValueError):
        train_step(m, x, np.array([0, 3]), lr=0.01)
    with pytest.raises(ValueError):
        train_step(m, x, np.array([0]), lr=0.01)


def test_model_copy_is_deep():
    arch = small_arch()
    m = init_model(arch, np.random.default_rng(0))
    c = m.copy()
    c.params["enc.fc.w"][:] = 7.0
    assert not np.array_equal(m.params["enc.fc.w"], c.params["enc.fc.w"])
    assert m.arch is c.arch

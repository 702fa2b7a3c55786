"""Predictive semantics, persistence integrity, and the training loop."""

import numpy as np
import pytest

from npactive.errors import IntegrityError, ValidationError
from npactive.neural_process import Normalization, NpArchitecture, NeuralProcess
from npactive.simulators import ring_plus_self
from npactive.spatiotemporal import SpatiotemporalArchitecture, SpatiotemporalNeuralProcess
from npactive.surrogate import (
    TrainedSurrogate,
    TrainSettings,
    train_surrogate,
    validation_loss,
)


def identity_norm(theta_dim, x_dim):
    return Normalization(
        theta_loc=np.zeros(theta_dim),
        theta_scale=np.ones(theta_dim),
        x_loc=np.zeros(x_dim),
        x_scale=np.ones(x_dim),
    )


def _constant_decoder_surrogate(bias=(1.5, -2.0)):
    """Tiny model whose decoder ignores z entirely: mean is a fixed vector."""
    arch = NpArchitecture(theta_dim=1, x_dim=2, r_dim=4, z_dim=2, encoder_widths=(), decoder_widths=())
    model = NeuralProcess(arch, seed=0)
    model.decoder.layers[0].w.data[:] = 0.0
    model.decoder.layers[0].b.data = np.array(bias)
    sur = TrainedSurrogate(model, identity_norm(1, 2), (2,))
    rng = np.random.default_rng(0)
    sur.set_context(rng.standard_normal((6, 1)), rng.standard_normal((6, 2)))
    return sur


def _z_passthrough_surrogate():
    """Decoder means equal the first two latent coordinates."""
    arch = NpArchitecture(theta_dim=1, x_dim=2, r_dim=4, z_dim=2, encoder_widths=(), decoder_widths=())
    model = NeuralProcess(arch, seed=1)
    w = np.zeros((3, 2))
    w[0, 0] = 1.0
    w[1, 1] = 1.0
    model.decoder.layers[0].w.data = w
    model.decoder.layers[0].b.data = np.zeros(2)
    sur = TrainedSurrogate(model, identity_norm(1, 2), (2,))
    rng = np.random.default_rng(1)
    sur.set_context(rng.standard_normal((5, 1)), rng.standard_normal((5, 2)))
    return sur


def test_predict_mean_and_std_for_constant_decoder():
    sur = _constant_decoder_surrogate()
    out = sur.predict(np.array([0.3]), n_samples=16, rng=np.random.default_rng(2))
    np.testing.assert_allclose(out.mean, [1.5, -2.0], atol=1e-12)
    # zero decoder spread: predictive std collapses to the observation noise
    np.testing.assert_allclose(out.std, sur.model.obs_std_np(), atol=1e-12)
    assert out.samples.shape == (16, 2)


def test_predict_denormalizes_through_the_stats():
    sur = _constant_decoder_surrogate()
    sur.set_normalization(
        Normalization(
            theta_loc=np.zeros(1),
            theta_scale=np.ones(1),
            x_loc=np.array([10.0, -5.0]),
            x_scale=np.array([2.0, 4.0]),
        )
    )
    raw = sur.predict(np.array([0.3]), n_samples=8, rng=np.random.default_rng(3))
    np.testing.assert_allclose(raw.mean, [10.0 + 2.0 * 1.5, -5.0 + 4.0 * -2.0], atol=1e-12)
    np.testing.assert_allclose(raw.std, sur.model.obs_std_np() * [2.0, 4.0], atol=1e-12)
    norm = sur.predict(np.array([0.3]), n_samples=8, rng=np.random.default_rng(3), denormalize=False)
    np.testing.assert_allclose(norm.mean, [1.5, -2.0], atol=1e-12)


def test_predict_std_combines_latent_spread_with_noise():
    sur = _z_passthrough_surrogate()
    theta = np.array([0.0])
    out = sur.predict(theta, n_samples=40, rng=np.random.default_rng(5))
    z = sur.prior().sample(40, np.random.default_rng(5))
    expected_std = np.sqrt(z.var(axis=0, ddof=1) + sur.model.obs_std_np() ** 2)
    np.testing.assert_allclose(out.std, expected_std, rtol=1e-12)
    np.testing.assert_allclose(out.mean, z.mean(axis=0), rtol=1e-12)


def test_predictive_sampler_cycles_latent_pool():
    sur = _z_passthrough_surrogate()
    _, _, z = sur.sample_predictive_norm(np.array([0.0]), n=5, rng=np.random.default_rng(6), n_z=2)
    np.testing.assert_array_equal(z[0], z[2])
    np.testing.assert_array_equal(z[0], z[4])
    np.testing.assert_array_equal(z[1], z[3])
    assert not np.array_equal(z[0], z[1])


def test_posterior_with_samples_matches_explicit_append():
    sur = _z_passthrough_surrogate()
    theta = np.array([0.4])
    xhat = np.random.default_rng(7).standard_normal((3, 2))
    means, stds = sur.posterior_with_samples(theta, xhat)
    for j in range(3):
        full_thetas = np.vstack([sur._ctx_thetas, theta[None, :]])
        full_xs = np.vstack([sur._ctx_xs, xhat[j][None, :]])
        ref = sur.posterior(full_thetas, full_xs)
        np.testing.assert_allclose(means[j], ref.mean, rtol=0, atol=1e-12)
        np.testing.assert_allclose(stds[j], ref.std, rtol=0, atol=1e-12)


def test_predict_validation():
    sur = _constant_decoder_surrogate()
    with pytest.raises(ValidationError):
        sur.predict(np.array([0.0]), n_samples=1, rng=np.random.default_rng(0))
    with pytest.raises(ValidationError):
        sur.sample_predictive_norm(np.array([0.0]), n=0, rng=np.random.default_rng(0))
    fresh = TrainedSurrogate(sur.model, sur.normalization, (2,))
    with pytest.raises(ValidationError):
        fresh.prior()
    with pytest.raises(ValidationError):
        fresh.to_payload()
    with pytest.raises(ValidationError):
        sur.set_context(np.zeros((0, 1)), np.zeros((0, 2)))
    with pytest.raises(ValidationError):
        sur.set_context(np.zeros((3, 1)), np.zeros((3, 5)))


def test_checkpoint_roundtrip_preserves_predictions(tmp_path):
    sur = _z_passthrough_surrogate()
    sur.training_steps = 123
    path = tmp_path / "surrogate.json"
    sur.save(path)
    again = TrainedSurrogate.load(path)
    assert again.training_steps == 123
    assert again.feature_shape == (2,)
    theta = np.array([0.7])
    a = sur.predict(theta, 12, np.random.default_rng(8))
    b = again.predict(theta, 12, np.random.default_rng(8))
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.std, b.std)


def test_spatiotemporal_checkpoint_roundtrip(tmp_path):
    arch = SpatiotemporalArchitecture(
        theta_dim=2, horizon=3, nodes=2, channels=1, hidden_dim=5, z_dim=2, diffusion_order=1
    )
    model = SpatiotemporalNeuralProcess(arch, ring_plus_self(2), seed=4)
    sur = TrainedSurrogate(model, identity_norm(2, arch.x_dim), (3, 2, 1))
    rng = np.random.default_rng(9)
    sur.set_context(rng.standard_normal((4, 2)), rng.standard_normal((4, arch.x_dim)))
    path = tmp_path / "st.json"
    sur.save(path)
    again = TrainedSurrogate.load(path)
    assert isinstance(again.model, SpatiotemporalNeuralProcess)
    np.testing.assert_array_equal(again.model.graph.weights, model.graph.weights)
    theta = np.array([1.0, -0.5])
    a = sur.predict(theta, 6, np.random.default_rng(10))
    b = again.predict(theta, 6, np.random.default_rng(10))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.samples.shape == (6, 3, 2, 1)


def test_checkpoint_tampering_is_detected(tmp_path):
    sur = _z_passthrough_surrogate()
    path = tmp_path / "surrogate.json"
    sur.save(path)
    text = path.read_text(encoding="utf-8")
    tampered = text.replace("123", "124", 1) if "123" in text else text.replace("0.", "1.", 1)
    path.write_text(tampered, encoding="utf-8")
    with pytest.raises(IntegrityError):
        TrainedSurrogate.load(path)


def test_checkpoint_version_refusal(tmp_path):
    sur = _z_passthrough_surrogate()
    payload = sur.to_payload()
    payload["version"] = payload["version"] + 1
    with pytest.raises(IntegrityError):
        TrainedSurrogate.from_payload(payload)


def test_checkpoint_requires_valid_json(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(IntegrityError):
        TrainedSurrogate.load(path)


def test_validation_loss_matches_hand_computation():
    sur = _constant_decoder_surrogate(bias=(0.5, 0.5))
    rng = np.random.default_rng(11)
    val_thetas = rng.standard_normal((7, 1))
    val_xs = rng.standard_normal((7, 2))
    got = validation_loss(sur, val_thetas, val_xs)
    sigma = sur.model.obs_std_np()
    resid = (val_xs - 0.5) / sigma
    expected = (
        0.5 * np.sum(resid**2, axis=1)
        + np.sum(np.log(sigma))
        + np.log(2 * np.pi)
    ).mean()
    assert got == pytest.approx(expected, rel=1e-12)
    assert validation_loss(sur, val_thetas, val_xs) == got


def _toy_training_data(seed=12, n_train=40, n_val=12):
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(-1.0, 1.0, (n_train + n_val, 1))
    xs = np.column_stack([2.0 * thetas[:, 0], -thetas[:, 0]])
    xs += 0.05 * rng.standard_normal(xs.shape)
    return (thetas[:n_train], xs[:n_train]), (thetas[n_train:], xs[n_train:])


def _fresh_toy_surrogate(seed=0):
    arch = NpArchitecture(theta_dim=1, x_dim=2, r_dim=16, z_dim=4, encoder_widths=(16,), decoder_widths=(16,))
    model = NeuralProcess(arch, seed=seed)
    return TrainedSurrogate(model, identity_norm(1, 2), (2,))


def test_training_improves_and_restores_best_weights():
    (tt, tx), (vt, vx) = _toy_training_data()
    sur = _fresh_toy_surrogate()
    sur.set_normalization(Normalization.fit(tt, tx))
    settings = TrainSettings(steps=80, lr=3e-3, context_fraction=0.2, patience=200)
    report = train_surrogate(sur, tt, tx, vt, vx, settings, np.random.default_rng(13))
    assert report.steps_run == 80
    assert len(report.val_history) == 81
    assert report.best_val_loss == min(report.val_history)
    assert report.best_val_loss < report.val_history[0]
    # the restored parameters actually reproduce the best validation loss
    assert validation_loss(sur, vt, vx) == pytest.approx(report.best_val_loss, rel=1e-12)


def test_training_zero_steps_is_a_no_op():
    (tt, tx), (vt, vx) = _toy_training_data()
    sur = _fresh_toy_surrogate()
    before = {k: p.data.copy() for k, p in sur.model.params().items()}
    report = train_surrogate(sur, tt, tx, vt, vx, TrainSettings(steps=0), np.random.default_rng(0))
    assert report.steps_run == 0
    assert report.val_history == [report.best_val_loss]
    for k, p in sur.model.params().items():
        np.testing.assert_array_equal(p.data, before[k])


def test_training_stops_after_patience_without_improvement():
    (tt, tx), (vt, vx) = _toy_training_data()
    sur = _fresh_toy_surrogate()
    settings = TrainSettings(steps=50, lr=0.0, patience=4)
    report = train_surrogate(sur, tt, tx, vt, vx, settings, np.random.default_rng(14))
    assert report.steps_run == 4
    assert all(v == report.val_history[0] for v in report.val_history)


def test_training_is_deterministic_with_minibatches():
    (tt, tx), (vt, vx) = _toy_training_data()
    histories = []
    for _ in range(2):
        sur = _fresh_toy_surrogate(seed=3)
        settings = TrainSettings(steps=25, lr=2e-3, batch_size=8, context_fraction=0.25)
        report = train_surrogate(sur, tt, tx, vt, vx, settings, np.random.default_rng(15))
        histories.append(report.val_history)
    assert histories[0] == histories[1]


def test_training_requires_two_pairs():
    sur = _fresh_toy_surrogate()
    with pytest.raises(ValidationError):
        train_surrogate(
            sur, np.zeros((1, 1)), np.zeros((1, 2)), np.zeros((2, 1)), np.zeros((2, 2)),
            TrainSettings(steps=1), np.random.default_rng(0),
        )

"""Encoder contracts: determinism, normalization, gradients, checkpoints."""

import numpy as np
import pytest

import repr_robust.autodiff as ad
from repr_robust import divergences
from repr_robust.autodiff import Tensor, backward, finite_difference_check
from repr_robust.encoders import Encoder, EncoderSpec, init_params
from repr_robust.errors import (CheckpointError, ConfigError, DomainError,
                                ShapeError)
from conftest import linear_encoder


class TestSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            EncoderSpec("rnn", 8)
        with pytest.raises(ConfigError):
            EncoderSpec("mlp", 8, repr_dim=1)
        with pytest.raises(ConfigError):
            EncoderSpec("mlp", 8, hidden=(0,))
        with pytest.raises(ConfigError):
            EncoderSpec("cnn", 6, hidden=(4, 8))  # 6 not divisible by 4
        with pytest.raises(ConfigError):
            EncoderSpec("mlp", 8, channels=2)

    def test_param_count_matches_layout(self, mlp_encoder, cnn_encoder):
        for enc in (mlp_encoder, cnn_encoder):
            assert enc.params.size == enc.spec.param_count()

    def test_json_round_trip(self):
        spec = EncoderSpec("cnn", 16, 3, (8, 16), repr_dim=12, normalize=True,
                           seed=99)
        assert EncoderSpec.from_json_dict(spec.to_json_dict()) == spec


class TestEncode:
    def test_normalized_output_unit_norm(self, norm_encoder, rng):
        x = rng.uniform(0, 1, (5, 1, 8, 8))
        reps = norm_encoder.encode(x).data
        assert np.all(np.abs(np.linalg.norm(reps, axis=1) - 1.0) < 1e-9)

    def test_deterministic(self, cnn_encoder, rng):
        x = rng.uniform(0, 1, (2, 1, 8, 8))
        assert np.array_equal(cnn_encoder.encode(x).data,
                              cnn_encoder.encode(x).data)

    def test_zero_params_give_zero_representation(self):
        spec = EncoderSpec("mlp", 4, 1, (8,), repr_dim=4)
        enc = Encoder(spec, np.zeros(spec.param_count()))
        rep = enc.encode(np.full((1, 4, 4), 0.5)).data
        assert np.array_equal(rep, np.zeros(4))

    def test_rejects_out_of_range(self, mlp_encoder):
        with pytest.raises(DomainError):
            mlp_encoder.encode(np.full((1, 8, 8), 1.2))
        with pytest.raises(DomainError):
            mlp_encoder.encode(np.full((1, 8, 8), -0.1))

    def test_rejects_wrong_shape(self, mlp_encoder):
        with pytest.raises(ShapeError):
            mlp_encoder.encode(np.zeros((1, 7, 7)))

    def test_single_and_batch_agree(self, cnn_encoder, rng):
        x = rng.uniform(0, 1, (3, 1, 8, 8))
        batch = cnn_encoder.encode(x).data
        singles = np.stack([cnn_encoder.encode(x[i]).data for i in range(3)])
        assert np.allclose(batch, singles, atol=1e-12)

    def test_features_accepts_noisy_inputs(self, mlp_encoder, rng):
        noisy = rng.normal(0.5, 0.5, (4, 1, 8, 8))
        out = mlp_encoder.features(noisy)
        assert out.shape == (4, 6) and np.isfinite(out).all()


class TestInputGradient:
    def test_self_anchored_loss_has_zero_gradient(self, cnn_encoder, rng):
        x = Tensor(rng.uniform(0, 1, (1, 8, 8)), requires_grad=True)
        rep = cnn_encoder.encode(x)
        loss = divergences.divergence_graph("l2", rep, rep.detach())
        backward(loss)
        assert np.allclose(x.grad, 0.0)

    def test_linear_row_gradient(self, rng):
        w = rng.standard_normal((16, 5))
        enc = linear_encoder(w, side=4)
        x = Tensor(rng.uniform(0, 1, (1, 4, 4)), requires_grad=True)
        rep = enc.encode(x)
        backward(ad.dot(rep, Tensor(np.eye(5)[0])))
        assert np.allclose(x.grad.reshape(-1), w[:, 0])

    def test_cnn_gradient_finite_difference(self, cnn_encoder, rng):
        target = rng.standard_normal(6)

        def fn(t):
            return divergences.divergence_graph(
                "l2", cnn_encoder.encode(t), target)

        x = rng.uniform(0.1, 0.9, (1, 8, 8))
        assert finite_difference_check(fn, Tensor(x)) < 1e-4

    def test_gradient_not_on_graph(self, mlp_encoder, rng):
        rep = mlp_encoder.encode(rng.uniform(0, 1, (1, 8, 8)))
        assert not rep.requires_grad  # plain input: nothing to differentiate


class TestInit:
    def test_seeded_init_reproducible(self):
        spec = EncoderSpec("cnn", 8, 1, (4, 8), repr_dim=6, seed=5)
        assert np.array_equal(init_params(spec), init_params(spec))

    def test_different_seeds_differ(self):
        a = init_params(EncoderSpec("mlp", 8, 1, (16,), repr_dim=6, seed=1))
        b = init_params(EncoderSpec("mlp", 8, 1, (16,), repr_dim=6, seed=2))
        assert not np.array_equal(a, b)

    def test_lipschitz_sanity(self, cnn_encoder, rng):
        x = rng.uniform(0.1, 0.9, (1, 1, 8, 8))
        base = cnn_encoder.features(x)
        for _ in range(20):
            delta = rng.uniform(-1e-6, 1e-6, x.shape)
            moved = cnn_encoder.features(np.clip(x + delta, 0, 1))
            dist = np.linalg.norm(moved - base)
            assert dist <= 1e4 * np.abs(delta).max()


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path, cnn_encoder):
        cnn_encoder.provenance = {"loss": "demo", "epochs": 3}
        path = tmp_path / "enc.urre"
        cnn_encoder.save(path)
        loaded = Encoder.load(path)
        assert np.array_equal(loaded.params, cnn_encoder.params)
        assert loaded.spec == cnn_encoder.spec
        assert loaded.provenance == cnn_encoder.provenance

    def test_corrupt_magic_rejected(self, tmp_path, mlp_encoder):
        path = tmp_path / "enc.urre"
        mlp_encoder.save(path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            Encoder.load(path)

    def test_missing_parameter_detected(self, tmp_path, mlp_encoder):
        path = tmp_path / "enc.urre"
        mlp_encoder.save(path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])  # drop exactly one parameter
        with pytest.raises(CheckpointError, match="count"):
            Encoder.load(path)

    def test_truncated_header_detected(self, tmp_path, mlp_encoder):
        path = tmp_path / "enc.urre"
        mlp_encoder.save(path)
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(CheckpointError):
            Encoder.load(path)

    def test_sections_round_trip(self, tmp_path, mlp_encoder):
        path = tmp_path / "enc.urre"
        payload = np.arange(8.0)
        mlp_encoder.save(path, extra_sections=[("PRBE", {"x": 1}, payload)])
        enc, sections = Encoder.load(path, want_sections=True)
        assert np.array_equal(enc.params, mlp_encoder.params)
        assert sections[0][0] == "PRBE"
        assert sections[0][1] == {"x": 1}
        assert np.array_equal(sections[0][2], payload)

    def test_unexpected_sections_require_opt_in(self, tmp_path, mlp_encoder):
        path = tmp_path / "enc.urre"
        mlp_encoder.save(path, extra_sections=[("PRBE", {}, np.zeros(2))])
        with pytest.raises(CheckpointError, match="sections"):
            Encoder.load(path)

    def test_wrong_param_count_at_construction(self, mlp_encoder):
        with pytest.raises(CheckpointError, match="count"):
            Encoder(mlp_encoder.spec, np.zeros(3))

"""Attack engine: budget and range invariants, the defining one-step and
iterative behaviors, bitwise specialization collapse, and determinism."""

import numpy as np
import pytest

from repr_robust import attacks as atk
from repr_robust import divergences as dv
from repr_robust.attacks import AttackConfig
from repr_robust.encoders import Encoder, EncoderSpec
from repr_robust.errors import ConfigError, GraphError
from repr_robust.seeding import item_generator
from conftest import identity_encoder


@pytest.fixture
def tiny_cnn():
    return Encoder(EncoderSpec("cnn", 8, 1, (4, 8), repr_dim=6, seed=21))


@pytest.fixture
def tiny_mlp():
    return Encoder(EncoderSpec("mlp", 8, 1, (12,), repr_dim=6, seed=22))


class TestClipAndProject:
    def test_clip_values(self):
        assert np.array_equal(atk.clip01(np.array([1.3, -0.2, 0.5])),
                              [1.0, 0.0, 0.5])

    def test_project_boundary(self):
        out = atk.project_linf(np.array([0.6]), np.array([0.5]), 0.05)
        assert np.isclose(out[0], 0.55)

    def test_project_inside_unchanged(self):
        x_hat = np.array([0.52, 0.48])
        out = atk.project_linf(x_hat, np.array([0.5, 0.5]), 0.05)
        assert np.array_equal(out, x_hat)

    def test_project_coordinatewise(self, rng):
        x = rng.uniform(0, 1, 50)
        x_hat = rng.uniform(-0.5, 1.5, 50)
        out = atk.project_linf(x_hat, x, 0.07)
        # brute coordinate check
        for i in range(50):
            assert abs(out[i] - x[i]) <= 0.07 + 1e-15
            expected = min(max(x_hat[i], x[i] - 0.07), x[i] + 0.07)
            assert out[i] == expected

    def test_project_shape_mismatch(self):
        with pytest.raises(ConfigError):
            atk.project_linf(np.zeros(3), np.zeros(4), 0.1)


class TestConfigValidation:
    def test_alpha_epsilon_ordering(self):
        with pytest.raises(ConfigError):
            AttackConfig(epsilon=0.05, alpha=0.1)
        with pytest.raises(ConfigError):
            AttackConfig(epsilon=1.5, alpha=0.1)
        with pytest.raises(ConfigError):
            AttackConfig(alpha=0.0)

    def test_iterations_positive(self):
        with pytest.raises(ConfigError):
            AttackConfig(iterations=0)

    def test_mode_and_init_checked(self):
        with pytest.raises(ConfigError):
            AttackConfig(mode="sideways")
        with pytest.raises(ConfigError):
            AttackConfig(init="warm")

    def test_json_round_trip(self):
        cfg = AttackConfig(epsilon=0.1, alpha=0.01, iterations=3,
                           mode="targeted", seed=5)
        assert AttackConfig.from_json_dict(cfg.to_json_dict()) == cfg


class TestOneStep:
    def test_self_target_is_fixed_point(self, rng):
        enc = identity_encoder(side=2)
        x = rng.uniform(0.2, 0.8, (1, 2, 2))
        target = enc.encode(x).data
        cfg = AttackConfig(epsilon=0.05, alpha=0.01, iterations=1,
                           mode="targeted", seed=3)
        res = atk.u_fgsm(enc, x, cfg, target=target)
        assert np.array_equal(res.adversarial, x)

    def test_untargeted_steps_against_probe_direction(self, rng):
        # identity encoder: gradient of d(f(x), f(x+eta)) is -eta/|eta|
        enc = identity_encoder(side=2)
        x = rng.uniform(0.3, 0.7, (1, 2, 2))
        cfg = AttackConfig(epsilon=0.05, alpha=0.01, iterations=1,
                           eta_scale=1e-3, seed=17)
        res = atk.u_fgsm(enc, x, cfg)
        eta = item_generator(cfg.seed, 0).uniform(-cfg.eta_scale,
                                                  cfg.eta_scale, x.shape)
        expected = atk.clip01(x + cfg.alpha * -np.sign(eta))
        assert np.allclose(res.adversarial, expected)

    def test_step_magnitude_alpha(self, tiny_cnn, rng):
        x = rng.uniform(0.2, 0.8, (1, 8, 8))
        cfg = AttackConfig(epsilon=0.05, alpha=0.01, iterations=1, seed=2)
        res = atk.u_fgsm(enc=tiny_cnn, x=x, cfg=cfg)
        moved = np.abs(res.adversarial - x)
        nonzero = moved > 0
        assert nonzero.any()
        assert np.allclose(moved[nonzero], cfg.alpha)

    def test_targeted_requires_target(self, tiny_cnn, rng):
        cfg = AttackConfig(mode="targeted")
        with pytest.raises(ConfigError, match="target"):
            atk.u_fgsm(tiny_cnn, rng.uniform(0, 1, (1, 8, 8)), cfg)
        with pytest.raises(ConfigError, match="target"):
            atk.u_pgd(tiny_cnn, rng.uniform(0, 1, (1, 8, 8)), cfg)

    def test_untargeted_rejects_target(self, tiny_cnn, rng):
        cfg = AttackConfig(mode="untargeted")
        with pytest.raises(ConfigError):
            atk.u_pgd(tiny_cnn, rng.uniform(0, 1, (1, 8, 8)), cfg,
                      target=np.zeros(6))


class TestIterative:
    def test_single_clean_iteration_collapses_to_one_step(self, tiny_cnn, rng):
        # without init noise, the first untargeted iterate anchors at itself:
        # gradient is exactly zero, so the attack stays at x, matching the
        # one-step attack with the probe anchor replaced by the clean anchor
        x = rng.uniform(0.2, 0.8, (1, 8, 8))
        cfg = AttackConfig(epsilon=0.05, alpha=0.01, iterations=1,
                           init="none", seed=9)
        res = atk.u_pgd(tiny_cnn, x, cfg)
        assert np.array_equal(res.adversarial, x)

    @pytest.mark.parametrize("mode,init", [
        ("untargeted", "random-uniform"),
        ("untargeted", "eta-perturbation"),
        ("targeted", "none"),
        ("targeted", "random-uniform"),
    ])
    def test_budget_and_range_invariants(self, tiny_cnn, rng, mode, init):
        for seed in range(5):
            x = rng.uniform(0, 1, (1, 8, 8))
            cfg = AttackConfig(epsilon=0.07, alpha=0.01, iterations=4,
                               mode=mode, init=init, seed=seed)
            target = (tiny_cnn.encode(rng.uniform(0, 1, (1, 8, 8))).data
                      if mode == "targeted" else None)
            res = atk.u_pgd(tiny_cnn, x, cfg, target=target)
            assert np.abs(res.adversarial - x).max() <= cfg.epsilon + 1e-9
            assert res.adversarial.min() >= 0.0
            assert res.adversarial.max() <= 1.0

    def test_trajectory_records_iterations_plus_final(self, tiny_cnn, rng):
        x = rng.uniform(0, 1, (1, 8, 8))
        cfg = AttackConfig(iterations=6, seed=1)
        res = atk.u_pgd(tiny_cnn, x, cfg)
        assert res.trajectory.shape == (7,)

    def test_deterministic(self, tiny_cnn, rng):
        x = rng.uniform(0, 1, (1, 8, 8))
        cfg = AttackConfig(iterations=3, seed=123)
        a = atk.u_pgd(tiny_cnn, x, cfg).adversarial
        b = atk.u_pgd(tiny_cnn, x, cfg).adversarial
        assert np.array_equal(a, b)

    def test_beats_random_perturbation_baseline(self, tiny_mlp):
        # final divergence of the iterated attack vs a random same-budget
        # perturbation, over seeded trials
        wins = 0
        trials = 200
        for seed in range(trials):
            trial_rng = np.random.default_rng(10_000 + seed)
            x = trial_rng.uniform(0.1, 0.9, (1, 8, 8))
            cfg = AttackConfig(epsilon=0.1, alpha=0.001, iterations=50,
                               seed=seed)
            res = atk.u_pgd(tiny_mlp, x, cfg)
            clean = tiny_mlp.encode(x).data
            d_atk = dv.divergence("l2", tiny_mlp.encode(res.adversarial).data,
                                  clean)
            noise = trial_rng.uniform(-0.1, 0.1, x.shape)
            d_rand = dv.divergence(
                "l2", tiny_mlp.encode(atk.clip01(x + noise)).data, clean)
            wins += d_atk >= d_rand
        assert wins / trials >= 0.95

    def test_targeted_reduces_relative_divergence(self, tiny_cnn):
        ratios = []
        for seed in range(20):
            trial_rng = np.random.default_rng(20_000 + seed)
            x_i = trial_rng.uniform(0, 1, (1, 8, 8))
            x_j = trial_rng.uniform(0, 1, (1, 8, 8))
            target = tiny_cnn.encode(x_j).data
            cfg = AttackConfig(epsilon=0.1, alpha=0.01, iterations=10,
                               mode="targeted", seed=seed)
            res = atk.u_pgd(tiny_cnn, x_i, cfg, target=target)
            before = dv.divergence("l2", tiny_cnn.encode(x_i).data, target)
            after = dv.divergence(
                "l2", tiny_cnn.encode(res.adversarial).data, target)
            ratios.append(after / before)
        assert np.median(ratios) < 1.0


class TestTaxonomyCollapse:
    """The named attacks are exactly the generic engine plus a plugin."""

    @pytest.mark.parametrize("seed", range(5))
    def test_untargeted_pgd(self, tiny_cnn, seed):
        x = np.random.default_rng(seed).uniform(0, 1, (1, 8, 8))
        cfg = AttackConfig(epsilon=0.06, alpha=0.004, iterations=5, seed=seed)
        named = atk.u_pgd(tiny_cnn, x, cfg)
        generic = atk.loss_attack_instance(
            tiny_cnn, x, atk.DivergenceFromClean("l2"), cfg)
        assert np.array_equal(named.adversarial, generic.adversarial)
        assert np.array_equal(named.trajectory, generic.trajectory)

    @pytest.mark.parametrize("seed", range(5))
    def test_targeted_pgd(self, tiny_cnn, seed):
        r = np.random.default_rng(seed + 1)
        x = r.uniform(0, 1, (1, 8, 8))
        target = tiny_cnn.encode(r.uniform(0, 1, (1, 8, 8))).data
        cfg = AttackConfig(epsilon=0.06, alpha=0.004, iterations=5,
                           mode="targeted", seed=seed)
        named = atk.u_pgd(tiny_cnn, x, cfg, target=target)
        generic = atk.loss_attack_instance(
            tiny_cnn, x, atk.DivergenceToTarget(target, "l2"), cfg)
        assert np.array_equal(named.adversarial, generic.adversarial)

    @pytest.mark.parametrize("seed", range(3))
    def test_one_step_untargeted(self, tiny_cnn, seed):
        x = np.random.default_rng(seed + 2).uniform(0, 1, (1, 8, 8))
        cfg = AttackConfig(epsilon=0.05, alpha=0.01, iterations=1, seed=seed)
        named = atk.u_fgsm(tiny_cnn, x, cfg)
        generic = atk.loss_attack_instance(
            tiny_cnn, x,
            atk.EtaProbeDivergence("l2", eta_scale=cfg.eta_scale),
            cfg.replace(iterations=1, init="none"))
        assert np.array_equal(named.adversarial, generic.adversarial)

    def test_kl_plugin_runs_with_budget(self, tiny_cnn, rng):
        x = rng.uniform(0, 1, (1, 8, 8))
        cfg = AttackConfig(epsilon=0.05, alpha=0.005, iterations=4,
                           divergence="kl-softmax", seed=4)
        res = atk.u_pgd(tiny_cnn, x, cfg)
        assert np.abs(res.adversarial - x).max() <= cfg.epsilon + 1e-9
        assert res.adversarial.min() >= 0 and res.adversarial.max() <= 1


class TestBatch:
    def test_batch_of_one_matches_instance(self, tiny_cnn, rng):
        x = rng.uniform(0, 1, (1, 1, 8, 8))
        cfg = AttackConfig(epsilon=0.05, alpha=0.005, iterations=3, seed=6)
        plugin = atk.DivergenceFromClean("l2")
        batched = atk.loss_attack_batch(tiny_cnn, x, plugin, cfg)
        single = atk.loss_attack_instance(tiny_cnn, x[0],
                                          atk.DivergenceFromClean("l2"), cfg)
        assert np.allclose(batched.adversarial[0], single.adversarial,
                           atol=1e-12)

    def test_infonce_batch_loss_increases(self, rng):
        enc = Encoder(EncoderSpec("mlp", 8, 1, (16,), repr_dim=6,
                                  normalize=True, seed=30))
        x = rng.uniform(0, 1, (4, 1, 8, 8))
        views = atk.clip01(x + rng.uniform(-0.05, 0.05, x.shape))
        cfg = AttackConfig(epsilon=0.05, alpha=0.005, iterations=3, seed=8)
        res = atk.loss_attack_batch(enc, x, atk.InfoNCEBatchLoss(views, 0.2),
                                    cfg)
        assert res.trajectory[1] > res.trajectory[0]

    def test_all_samples_within_budget(self, tiny_cnn, rng):
        x = rng.uniform(0, 1, (5, 1, 8, 8))
        cfg = AttackConfig(epsilon=0.04, alpha=0.004, iterations=3, seed=9)
        res = atk.loss_attack_batch(tiny_cnn, x, atk.DivergenceFromClean(),
                                    cfg)
        assert np.abs(res.adversarial - x).max() <= cfg.epsilon + 1e-9

    def test_chunking_does_not_change_results(self, tiny_cnn, rng):
        # per-sample counter streams: attacking [0:4] equals attacking
        # [0:2] and [2:4] separately with matching index bases
        x = rng.uniform(0, 1, (4, 1, 8, 8))
        cfg = AttackConfig(epsilon=0.05, alpha=0.005, iterations=3, seed=10)
        whole = atk.u_pgd(tiny_cnn, x, cfg).adversarial
        first = atk.u_pgd(tiny_cnn, x[:2], cfg, index_base=0).adversarial
        second = atk.u_pgd(tiny_cnn, x[2:], cfg, index_base=2).adversarial
        assert np.allclose(np.concatenate([first, second]), whole, atol=1e-12)

    def test_non_scalar_plugin_rejected(self, tiny_cnn, rng):
        class Bad:
            negate_trajectory = False

            def loss(self, enc, x_clean, iterate):
                return enc.encode(iterate)

        with pytest.raises(GraphError, match="scalar"):
            atk.loss_attack_batch(tiny_cnn, rng.uniform(0, 1, (2, 1, 8, 8)),
                                  Bad(), AttackConfig(seed=1))

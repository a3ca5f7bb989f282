"""Certification numerics against independent oracles: the normal quantile
against scipy's implementation, the binomial bound against direct tail
summation, smoothing radii against their defining formulas, and center
smoothing against the chi-distribution Monte Carlo."""

import math

import numpy as np
import pytest
from scipy import special, stats

from repr_robust import certification as ct
from repr_robust.certification import (CertificationResult, SmoothingConfig,
                                       average_certified_radius,
                                       binomial_lower_confidence,
                                       center_smooth, certified_accuracy_curve,
                                       certify_classifier, normal_quantile,
                                       smoothed_predict)
from repr_robust.errors import ConfigError, DataError, DomainError


class TestNormalQuantile:
    def test_against_high_precision_oracle(self):
        grid = np.concatenate([
            np.linspace(1e-9, 0.02, 40),
            np.linspace(0.02, 0.98, 200),
            np.linspace(0.98, 1 - 1e-9, 40),
        ])
        for p in grid:
            assert abs(normal_quantile(p) - special.ndtri(p)) < 1e-9

    def test_median_is_zero(self):
        assert abs(normal_quantile(0.5)) < 1e-12

    def test_monotone(self):
        ps = np.linspace(0.01, 0.99, 99)
        vals = [normal_quantile(p) for p in ps]
        assert np.all(np.diff(vals) > 0)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(DomainError):
                normal_quantile(bad)


def binomial_tail_log(k, n, p):
    """log P[Bin(n,p) >= k] by direct log-space summation (oracle)."""
    i = np.arange(k, n + 1)
    logs = (special.gammaln(n + 1) - special.gammaln(i + 1)
            - special.gammaln(n - i + 1)
            + i * np.log(p) + (n - i) * np.log1p(-p))
    return special.logsumexp(logs)


class TestBinomialLowerBound:
    @pytest.mark.parametrize("k,n,alpha", [
        (9, 10, 0.05), (90, 100, 0.001), (55, 100, 0.05), (1, 20, 0.01),
    ])
    def test_tail_probability_equals_alpha(self, k, n, alpha):
        p = binomial_lower_confidence(k, n, alpha)
        assert abs(math.exp(binomial_tail_log(k, n, p)) - alpha) < 1e-6

    def test_matches_beta_quantile(self):
        for k, n, alpha in [(80, 100, 0.05), (990, 1000, 0.001),
                            (50_000, 100_000, 0.005)]:
            ours = binomial_lower_confidence(k, n, alpha)
            ref = stats.beta.ppf(alpha, k, n - k + 1)
            assert abs(ours - ref) < 1e-10

    def test_all_successes_closed_form(self):
        # P[Bin(n,p) >= n] = p^n = alpha  =>  p = alpha^(1/n)
        assert abs(binomial_lower_confidence(100, 100, 0.05)
                   - 0.05 ** 0.01) < 1e-10

    def test_zero_successes(self):
        assert binomial_lower_confidence(0, 50, 0.05) == 0.0

    def test_never_exceeds_empirical_frequency(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 500))
            k = int(rng.integers(0, n + 1))
            alpha = float(rng.uniform(0.001, 0.4))
            assert binomial_lower_confidence(k, n, alpha) <= k / n + 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            binomial_lower_confidence(5, 4, 0.05)
        with pytest.raises(DomainError):
            binomial_lower_confidence(1, 4, 0.0)


class TestSmoothingConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            SmoothingConfig(sigma=0.0)
        with pytest.raises(ConfigError):
            SmoothingConfig(n0=0)
        with pytest.raises(ConfigError):
            SmoothingConfig(alpha=0.5)


def constant_classifier(label):
    return lambda batch: np.full(len(batch), label, dtype=np.int64)


class TestCertifyClassifier:
    def test_constant_classifier_large_radius(self):
        cfg = SmoothingConfig(sigma=0.25, n0=50, n=100_000, alpha=0.001,
                              seed=3)
        res = certify_classifier(constant_classifier(2), np.full((1, 2, 2), 0.5),
                                 4, cfg)
        assert not res.abstain and res.prediction == 2
        # p_lower = alpha^(1/n)-style bound near 1 gives radius beyond 2 sigma
        p_lower = binomial_lower_confidence(100_000, 100_000, 0.001)
        assert np.isclose(res.radius, 0.25 * normal_quantile(p_lower))
        assert res.radius > 2 * cfg.sigma

    def test_coin_flip_abstains(self):
        def coin(batch):
            return (np.asarray(batch).reshape(len(batch), -1).sum(axis=1)
                    > 2.0).astype(np.int64)

        cfg = SmoothingConfig(sigma=0.25, n0=50, n=2000, alpha=0.01, seed=5)
        res = certify_classifier(coin, np.full((1, 2, 2), 0.5), 2, cfg)
        assert res.abstain and res.radius is None

    def test_radius_formula_at_three_quarters(self):
        # sigma * Phi^-1(0.75) against an independently computed quantile
        oracle = stats.norm.ppf(0.75)
        assert abs(0.25 * normal_quantile(0.75) - 0.25 * oracle) < 1e-6
        assert abs(0.25 * normal_quantile(0.75) - 0.16862) < 5e-6

    def test_monotone_radius_in_p(self):
        radii = [0.25 * normal_quantile(p) for p in (0.55, 0.7, 0.9, 0.99)]
        assert np.all(np.diff(radii) > 0)

    def test_deterministic(self):
        cfg = SmoothingConfig(n0=20, n=500, alpha=0.01, seed=11)
        a = certify_classifier(constant_classifier(1), np.zeros((1, 2, 2)), 3,
                               cfg)
        b = certify_classifier(constant_classifier(1), np.zeros((1, 2, 2)), 3,
                               cfg)
        assert a.radius == b.radius and a.prediction == b.prediction


class TestAverageCertifiedRadius:
    def res(self, radius=None, abstain=False):
        return CertificationResult("classifier", abstain=abstain,
                                   radius=radius)

    def test_all_abstain_zero(self):
        results = [self.res(abstain=True)] * 3
        assert average_certified_radius(results, [True] * 3) == 0.0

    def test_two_sample_example(self):
        results = [self.res(radius=0.2), self.res(abstain=True)]
        assert average_certified_radius(results, [True, True]) == 0.1

    def test_misclassified_counts_zero(self):
        results = [self.res(radius=0.4), self.res(radius=0.4)]
        assert average_certified_radius(results, [True, False]) == 0.2

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            average_certified_radius([], [])

    def test_matches_per_sample_recomputation(self, rng):
        results, correct = [], []
        for _ in range(20):
            if rng.uniform() < 0.3:
                results.append(self.res(abstain=True))
            else:
                results.append(self.res(radius=float(rng.uniform(0, 1))))
            correct.append(bool(rng.uniform() < 0.8))
        total = sum(r.radius for r, ok in zip(results, correct)
                    if ok and not r.abstain)
        assert np.isclose(average_certified_radius(results, correct),
                          total / 20)

    def test_curve_monotone_non_increasing(self, rng):
        results = [self.res(radius=float(rng.uniform(0, 1)))
                   for _ in range(30)]
        curve = certified_accuracy_curve(results, [True] * 30,
                                         np.linspace(0, 1, 11))
        assert np.all(np.diff(curve) <= 0)


def flatten_fn(batch):
    return np.asarray(batch).reshape(len(batch), -1)


class TestCenterSmoothing:
    def test_constant_encoder_radius_zero(self):
        cfg = SmoothingConfig(n0=200, n=2000, alpha1=0.01, alpha2=0.01, seed=2)
        res = center_smooth(lambda b: np.zeros((len(b), 3)),
                            np.full((1, 2, 2), 0.5), cfg, repr_dim=3)
        assert not res.abstain
        assert res.radius == 0.0
        assert np.array_equal(res.center, np.zeros(3))

    def test_identity_encoder_matches_chi_median(self):
        dim = 4
        cfg = SmoothingConfig(sigma=0.25, n0=10_000, n=100_000,
                              alpha1=0.005, alpha2=0.005, seed=9)
        res = center_smooth(flatten_fn, np.full((1, 2, 2), 0.5), cfg,
                            repr_dim=dim)
        chi = np.linalg.norm(
            np.random.default_rng(0).standard_normal((1_000_000, dim)),
            axis=1)
        oracle = 0.25 * np.median(chi)
        assert abs(res.radius - oracle) / oracle < 0.05

    def test_radius_non_increasing_in_n(self):
        radii = []
        for n in (2000, 10_000, 50_000):
            cfg = SmoothingConfig(sigma=0.25, n0=2000, n=n,
                                  alpha1=0.01, alpha2=0.01, seed=4)
            res = center_smooth(flatten_fn, np.full((1, 2, 2), 0.5), cfg,
                                repr_dim=4)
            radii.append(res.radius)
        assert radii[0] >= radii[1] >= radii[2]

    def test_abstains_when_phase1_budget_impossible(self):
        # tiny n0 makes the discounted mass requirement exceed 1
        cfg = SmoothingConfig(n0=2, n=100, alpha1=0.01, alpha2=0.01, seed=1)
        res = center_smooth(flatten_fn, np.full((1, 2, 2), 0.5), cfg,
                            repr_dim=4)
        assert res.abstain and res.radius is None

    def test_quantile_field_from_distribution(self):
        from repr_robust.measures import DivergenceDistribution
        dist = DivergenceDistribution(np.linspace(0, 2, 100), 100, "l2", 1.0,
                                      "t")
        cfg = SmoothingConfig(n0=500, n=2000, alpha1=0.01, alpha2=0.01,
                              seed=6)
        res = center_smooth(flatten_fn, np.full((1, 2, 2), 0.5), cfg,
                            dist=dist, repr_dim=4)
        assert res.quantile is not None and 0.0 <= res.quantile <= 1.0


class TestSmoothedPredict:
    def test_majority_class(self):
        cls = constant_classifier(3)
        assert smoothed_predict(cls, np.zeros((1, 2, 2)), 500, 0.25, 7, 5) == 3

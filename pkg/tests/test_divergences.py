"""Divergence semantics: defining formulas, metric properties, gradients,
and agreement between the scalar, batched and pairwise evaluation paths."""

import numpy as np
import pytest

from repr_robust import divergences as dv
from repr_robust.autodiff import Tensor, backward, finite_difference_check
from repr_robust.errors import ConfigError, DomainError, ShapeError

ALL_KINDS = list(dv.KINDS)


class TestDefiningValues:
    def test_l2_identity(self):
        assert dv.divergence("l2", [1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_l2_three_four_five(self):
        assert dv.divergence("l2", [0.0, 0.0], [3.0, 4.0]) == 5.0

    def test_linf(self):
        assert dv.divergence("linf", [1.0, -3.0], [0.0, 1.0]) == 4.0

    def test_cosine_orthogonal(self):
        assert np.isclose(dv.divergence("cosine-distance", [1.0, 0.0],
                                        [0.0, 1.0]), 1.0)

    def test_kl_identical(self):
        r = np.array([0.3, -1.2, 2.0])
        assert dv.divergence("kl-softmax", r, r) == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            dv.divergence("wasserstein", [0.0], [1.0])


class TestProperties:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_non_negative_on_random_pairs(self, kind, rng):
        a = rng.standard_normal((10_000, 6))
        b = rng.standard_normal((10_000, 6))
        assert np.all(dv.batch_divergence(kind, a, b) >= 0.0)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_self_divergence_vanishes(self, kind, rng):
        r = rng.standard_normal((200, 8))
        assert np.all(dv.batch_divergence(kind, r, r) < 1e-12)

    @pytest.mark.parametrize("kind", ["l2", "linf"])
    def test_triangle_inequality(self, kind, rng):
        for _ in range(300):
            a, b, c = rng.standard_normal((3, 5))
            assert (dv.divergence(kind, a, c)
                    <= dv.divergence(kind, a, b)
                    + dv.divergence(kind, b, c) + 1e-12)

    @pytest.mark.parametrize("kind", dv.SYMMETRIC)
    def test_symmetry(self, kind, rng):
        a, b = rng.standard_normal((2, 7))
        assert np.isclose(dv.divergence(kind, a, b), dv.divergence(kind, b, a))

    def test_kl_is_asymmetric(self, rng):
        a, b = rng.standard_normal((2, 7))
        assert not np.isclose(dv.divergence("kl-softmax", a, b),
                              dv.divergence("kl-softmax", b, a))


class TestErrors:
    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            dv.divergence("l2", [1.0, 2.0], [1.0, 2.0, 3.0])

    def test_cosine_zero_vector(self):
        with pytest.raises(DomainError):
            dv.divergence("cosine-distance", [0.0, 0.0], [1.0, 0.0])


class TestGradients:
    def test_l2_unit_vector(self):
        live = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        backward(dv.divergence_graph("l2", live, np.zeros(2)))
        assert np.allclose(live.grad, [0.6, 0.8])

    def test_linf_first_max_coordinate(self):
        live = Tensor(np.array([2.0, 5.0]), requires_grad=True)
        backward(dv.divergence_graph("linf", live, np.zeros(2)))
        assert np.array_equal(live.grad, [0.0, 1.0])

    def test_linf_tie_breaks_to_first(self):
        live = Tensor(np.array([5.0, 5.0]), requires_grad=True)
        backward(dv.divergence_graph("linf", live, np.zeros(2)))
        assert np.array_equal(live.grad, [1.0, 0.0])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_difference(self, kind, seed, rng):
        anchor = np.random.default_rng(seed + 500).standard_normal(8)

        def fn(t):
            return dv.divergence_graph(kind, t, anchor, temperature=0.7)

        x = np.random.default_rng(seed).standard_normal(8)
        assert finite_difference_check(fn, Tensor(x)) < 1e-4

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_batched_graph_matches_scalar_graph(self, kind, rng):
        live = rng.standard_normal((4, 6))
        anchors = rng.standard_normal((4, 6))
        batched = dv.batch_divergence_graph(kind, Tensor(live), anchors).data
        singles = [dv.divergence_graph(kind, Tensor(live[i]), anchors[i]).item()
                   for i in range(4)]
        assert np.allclose(batched, singles, atol=1e-12)

    def test_graph_value_matches_plain(self, rng):
        a, b = rng.standard_normal((2, 9))
        for kind in ALL_KINDS:
            g = dv.divergence_graph(kind, Tensor(a), b).item()
            assert np.isclose(g, dv.divergence(kind, a, b), atol=1e-12)


class TestVectorizedPaths:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_cross_matches_scalar(self, kind, rng):
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((7, 4))
        mat = dv.cross_divergence(kind, a, b)
        for i in range(5):
            for j in range(7):
                assert np.isclose(mat[i, j], dv.divergence(kind, a[i], b[j]),
                                  atol=1e-9)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_pairwise_matches_scalar(self, kind, rng):
        r = rng.standard_normal((8, 5))
        condensed = dv.pairwise_divergence(kind, r)
        pos = 0
        for i in range(8):
            for j in range(i + 1, 8):
                assert np.isclose(condensed[pos],
                                  dv.divergence(kind, r[i], r[j]), atol=1e-9)
                pos += 1
        assert pos == condensed.size

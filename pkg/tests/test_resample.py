from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from steinbound.functionals import constant_functional, linear_statistic, table_functional
from steinbound.laws import NormalLaw, uniform_atoms
from steinbound.resample import (
    ContractError, Functional, FunctionalError, SampleBatch, compose, delta_j, k_weight,
    k_weight_table, sample_subset_masks, sample_weighted_subset, subset_source_table,
    t_from_table, t_matrix, tilde_delta_i_delta_j,
)


class TestWeights:
    @given(st.integers(1, 40))
    def test_weights_sum_to_n(self, n):
        total = sum(k_weight(n, s) * comb(n, s) * (n - s) for s in range(n))
        assert total == n

    @given(st.integers(1, 30))
    def test_sum_over_subsets_avoiding_j_is_one(self, n):
        # each j sees total weight one over the subsets that exclude it
        total = sum(k_weight(n, s) * comb(n - 1, s) for s in range(n))
        assert total == 1

    def test_exact_small_values(self):
        assert k_weight(3, 0) == Fraction(1, 3)
        assert k_weight(3, 1) == Fraction(1, 6)
        assert k_weight(3, 2) == Fraction(1, 3)

    def test_large_n_float(self):
        n = 100
        total = sum(k_weight(n, s) * comb(n, s) * (n - s) for s in range(n))
        assert total == pytest.approx(n, rel=1e-10)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            k_weight(3, 3)

    def test_table_matches(self):
        assert np.allclose(k_weight_table(5), [float(k_weight(5, s)) for s in range(5)])


class TestRecombination:
    def test_resample_subset_leaves_batch_untouched(self, rng):
        b = SampleBatch.draw(NormalLaw(2), 5, rng)
        x0 = b.x.copy()
        y = b.resample_subset([1, 3])
        assert np.array_equal(b.x, x0)
        assert np.array_equal(y[[1, 3]], b.x_prime[[1, 3]])
        assert np.array_equal(y[[0, 2, 4]], b.x[[0, 2, 4]])
        with pytest.raises(ValueError):
            b.x[0, 0] = 1.0

    def test_recombine_codes(self, rng):
        b = SampleBatch.draw(NormalLaw(), 3, rng)
        y = b.recombine([2, 0, 1])
        assert y.tolist() == [b.x_tilde[0], b.x[1], b.x_prime[2]]
        with pytest.raises(ContractError):
            b.recombine([0, 3, 1])

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            SampleBatch(np.zeros(3), np.zeros(3), np.zeros(4))

    def test_compose_broadcasts_event_axes(self):
        x, xp, xt = (np.full((2, 3, 2), v) for v in (0.0, 1.0, 2.0))
        src = np.array([[0, 1, 2], [2, 2, 0]])
        out = compose(x, xp, xt, src, event_ndim=1)
        assert out[:, :, 0].tolist() == [[0, 1, 2], [2, 2, 0]]

    def test_subset_table(self):
        t = subset_source_table(3)
        assert t.shape == (8, 3)
        assert t[5].tolist() == [1, 0, 1]


class TestDifferences:
    def test_linear_delta(self, rng):
        f = linear_statistic(4)
        b = SampleBatch.draw(NormalLaw(), 4, rng)
        assert delta_j(f, b, 2)[0] == pytest.approx((b.x[2] - b.x_prime[2]) / 2.0)

    @given(st.lists(st.integers(-8, 8), min_size=12, max_size=12), st.integers(0, 3),
           st.integers(0, 3), st.sets(st.integers(0, 3)))
    def test_linear_second_order_vanishes(self, vals, i, j, a_set):
        # dyadic inputs make the cancellation exact in floating point
        v = np.array(vals, float).reshape(3, 4) / 4
        b = SampleBatch(v[0], v[1], v[2])
        out = tilde_delta_i_delta_j(linear_statistic(4, zero_tol=0.0), b, i, j, a_set)
        if i != j:
            assert out[0] == 0.0

    def test_diagonal_second_order(self, rng):
        f = table_functional([0.0, 1.0, 2.0], rng.normal(size=(3, 3, 3)))
        b = SampleBatch.draw(uniform_atoms(0.0, 1.0, 2.0), 3, rng)
        out = tilde_delta_i_delta_j(f, b, 1, 1)
        y = b.x.copy()
        y[1] = b.x_tilde[1]
        assert out == pytest.approx(f(b.x) - f(y))

    def test_i_in_a_gives_zero(self, rng):
        f = table_functional([0.0, 1.0], rng.normal(size=(2, 2, 2)))
        b = SampleBatch.draw(uniform_atoms(0.0, 1.0), 3, rng)
        assert np.all(tilde_delta_i_delta_j(f, b, 0, 2, {0}) == 0.0)

    def test_index_checked(self, rng):
        b = SampleBatch.draw(NormalLaw(), 3, rng)
        with pytest.raises(ContractError):
            delta_j(linear_statistic(3), b, 3)


class TestFunctional:
    def test_bad_shape(self):
        f = Functional(lambda x: np.zeros(x.shape[:-1] + (3,)), 2)
        with pytest.raises(FunctionalError):
            f(np.zeros((4, 5)))

    def test_failure_carries_context(self):
        def boom(x):
            raise RuntimeError("nope")
        with pytest.raises(FunctionalError, match="j=3"):
            Functional(boom, 1)(np.zeros(3), {"j": 3})

    def test_scaled(self):
        f = linear_statistic(4).scaled(3.0)
        assert f(np.ones(4))[0] == pytest.approx(6.0)


class TestSubsetSampling:
    def test_joint_law_of_draws(self, rng):
        n, reps = 3, 200_000
        mask, j = sample_subset_masks(n, reps, rng)
        codes = mask @ (1 << np.arange(n)) * n + j
        freq = np.bincount(codes, minlength=(1 << n) * n) / reps
        for m in range(1 << n):
            members = [b for b in range(n) if m >> b & 1]
            for jj in range(n):
                p = 0.0 if jj in members or len(members) == n else \
                    float(k_weight(n, len(members))) / n
                se = np.sqrt(max(p * (1 - p), 1e-12) / reps)
                assert abs(freq[m * n + jj] - p) <= 5 * se + 1e-12

    def test_stratified_sizes_cover_all(self, rng):
        mask, j = sample_subset_masks(4, (10, 4), rng, stratify=True)
        sizes = np.sort(mask.sum(axis=-1), axis=-1)
        assert np.all(sizes == np.arange(4))
        assert not np.any(mask[np.arange(10)[:, None], np.arange(4), j])

    def test_single_draw(self, rng):
        d = sample_weighted_subset(5, rng)
        assert d.j not in d.a_set
        assert d.weight == k_weight(5, len(d.a_set))


class TestTMatrix:
    def test_linear_exact(self, rng):
        # for a linear statistic T = (1/2n) sum_j (x_j - x'_j)^2
        b = SampleBatch.draw(NormalLaw(), 5, rng)
        t = t_matrix(linear_statistic(5), b).t
        assert t[0, 0] == pytest.approx(np.sum((b.x - b.x_prime) ** 2) / 10)

    def test_monte_carlo_unbiased(self, rng):
        f = table_functional([0.0, 1.0, 3.0], rng.normal(size=(3, 3, 3, 3)))
        b = SampleBatch.draw(uniform_atoms(0.0, 1.0, 3.0), 4, rng)
        exact = t_matrix(f, b).t
        mc = t_matrix(f, b, "monte-carlo", rng, 100_000)
        assert abs(mc.t[0, 0] - exact[0, 0]) <= 4 * mc.stderr[0, 0]

    def test_cross_table_symmetry(self, rng):
        F = rng.normal(size=(8, 2))
        assert np.allclose(t_from_table(F), t_from_table(F, F))

    def test_exact_cap(self, rng):
        b = SampleBatch.draw(NormalLaw(), 30, rng)
        with pytest.raises(ContractError):
            t_matrix(linear_statistic(30), b)

    def test_constant_is_zero(self, rng):
        b = SampleBatch.draw(NormalLaw(), 4, rng)
        assert np.all(t_matrix(constant_functional(2.0), b).t == 0.0)

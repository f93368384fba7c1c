import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gamma

from steinbound.laws import (
    CubeVertexLaw, FiniteLaw, NormalLaw, UniformBoxLaw, UniformCubeLaw, bernoulli,
    unit_ball_volume,
)
from steinbound.seeding import block_sizes, derive_rng, seed_label, stream_id


class TestLaws:
    @pytest.mark.parametrize("q", [3, 4, 5, 6])
    def test_normal_moments(self, q, rng):
        law = NormalLaw(2)
        x = law.sample(rng, (400_000,))
        mc = np.linalg.norm(x, axis=-1) ** q
        assert abs(mc.mean() - law.norm_moment(q)) <= 5 * mc.std() / np.sqrt(len(mc))

    def test_scalar_normal_third_moment(self):
        assert NormalLaw().norm_moment(3) == pytest.approx(2 * np.sqrt(2 / np.pi))

    def test_cube_vertex_sum(self, rng):
        law = CubeVertexLaw(3)
        s = law.sample_sum(9, 50_000, rng)
        assert set(np.unique(s)) <= set(range(-9, 10, 2))
        assert np.allclose(np.cov(s.T) / 9, np.eye(3), atol=0.03)
        assert law.norm_moment(4) == 9.0

    def test_generic_sum_matches_moments(self, rng):
        law = UniformCubeLaw(2, half_width=np.sqrt(3.0))
        s = law.sample_sum(5, 40_000, rng, chunk=1000)
        assert np.allclose(np.cov(s.T) / 5, law.covariance(), atol=0.04)

    def test_finite_law_validation(self):
        with pytest.raises(ValueError):
            FiniteLaw(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
        law = bernoulli(0.25)
        assert law.covariance()[0, 0] == pytest.approx(0.1875)
        assert law.norm_moment(3) == pytest.approx(0.25)

    def test_box_law_range(self, rng):
        x = UniformBoxLaw(2, 9.0).sample(rng, (1000,))
        assert np.all(np.abs(x) <= 1.5)

    @given(st.integers(0, 12))
    def test_ball_volume(self, m):
        assert unit_ball_volume(m) == pytest.approx(np.pi ** (m / 2) / gamma(m / 2 + 1))


class TestSeeding:
    def test_reproducible(self):
        a = derive_rng(5, "knn", 3).random(4)
        b = derive_rng(5, "knn", 3).random(4)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = derive_rng(5, "knn", 3).random()
        assert a != derive_rng(5, "knn", 4).random()
        assert a != derive_rng(6, "knn", 3).random()
        assert a != derive_rng(5, "gamma", 3).random()

    def test_unknown_stream_is_stable(self):
        assert stream_id("custom") == stream_id("custom") >= 1000

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            derive_rng(-1)

    def test_label(self):
        assert seed_label(7, "rate-study", 2, 0) == "7:8.2.0"
        assert seed_label(7) == "7"

    @given(st.integers(0, 10_000), st.integers(1, 500))
    def test_blocks(self, total, block):
        sizes = block_sizes(total, block)
        assert sum(sizes) == total
        assert all(0 < s <= block for s in sizes)
        assert all(s == block for s in sizes[:-1])

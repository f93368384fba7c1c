import numpy as np
import pytest
from hypothesis import given, strategies as st

from steinbound.boolean import (
    GermGrainScene, UnsupportedDimension, boolean_functional, empirical_covariance,
    exact_covariance_1d, exact_mean_1d, germ_law, sample_scene, union_volumes,
    union_volumes_1d, volume_rows,
)
from steinbound.discs import (
    DegenerateConfiguration, intersection_measures, union_measures,
)
from steinbound.resample import ContractError

from oracles import exposed_half_perimeter, grid_area, nerve_euler

LENS = 2 * np.pi / 3 - np.sqrt(3) / 2  # area of the lens of two unit discs at distance 1


class TestUnionOfDiscs:
    def test_single_and_disjoint(self):
        assert np.allclose(union_measures([[0, 0]], 1.0).vector, [1, np.pi, np.pi])
        assert np.allclose(union_measures([[0, 0], [3, 0]], 1.0).vector,
                           [2, 2 * np.pi, 2 * np.pi])

    def test_lens_union(self):
        v = union_measures([[0, 0], [1, 0]], 1.0).vector
        assert np.allclose(v, [1, 4 * np.pi / 3, 2 * np.pi - LENS], atol=1e-12)

    def test_ring_has_a_hole(self):
        t = np.arange(8) * 2 * np.pi / 8
        ring = 2.0 * np.stack([np.cos(t), np.sin(t)], axis=1)
        assert union_measures(ring, 0.9).v0 == 0

    def test_empty(self):
        assert union_measures(np.zeros((0, 2)), 1.0).vector.tolist() == [0, 0, 0]

    @pytest.mark.parametrize("seed", range(20))
    def test_against_grid_oracles(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-1.5, 1.5, size=(int(rng.integers(3, 11)), 2))
        um = union_measures(c, 0.6)
        _, area = grid_area(c, 0.6, 0.004)
        assert um.v2 == pytest.approx(area, rel=5e-3)
        assert um.v1 == pytest.approx(exposed_half_perimeter(c, 0.6), rel=1e-2)
        assert um.v0 == nerve_euler(c, 0.6)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 9), st.floats(0.2, 1.2))
    def test_euler_matches_nerve(self, seed, m, R):
        c = np.random.default_rng(seed).uniform(-2, 2, size=(m, 2))
        assert union_measures(c, R).v0 == nerve_euler(c, R)

    def test_tangent_pair_is_jittered(self):
        um = union_measures([[0, 0], [2, 0]], 1.0, seed=3)
        assert um.jittered
        assert um.v1 == pytest.approx(2 * np.pi, rel=1e-9)

    def test_coincident_discs(self):
        um = union_measures([[0, 0], [0, 0]], 1.0, seed=1)
        assert um.v0 == 1 and um.v2 == pytest.approx(np.pi, rel=1e-9)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 12), st.floats(0.1, 1.5))
    def test_invariants(self, seed, m, R):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-2, 2, size=(m, 2))
        um = union_measures(c, R)
        assert um.residual < 1e-6
        assert 0 <= um.v2 <= m * np.pi * R * R * (1 + 1e-12)
        assert 0 <= um.v1 <= m * np.pi * R * (1 + 1e-12)
        # invariance under rigid motions
        th = rng.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        moved = union_measures(c @ rot.T + rng.normal(size=2), R)
        assert moved.v0 == um.v0
        assert np.allclose(moved.vector, um.vector, rtol=1e-9, atol=1e-9)

    def test_degenerate_error_carries_seed(self):
        err = DegenerateConfiguration("bad", seed=11, residual=0.5)
        assert err.seed == 11 and "seed=11" in str(err)


class TestIntersections:
    def test_lens(self):
        v = intersection_measures(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0)
        assert np.allclose(v, [1, 2 * np.pi / 3, LENS], atol=1e-12)

    def test_empty_and_identical(self):
        v = intersection_measures(np.array([[[0.0, 0.0], [3.0, 0.0]],
                                            [[0.5, 0.5], [0.5, 0.5]]]), 1.0)
        assert np.allclose(v[0], 0.0)
        assert np.allclose(v[1], [1, np.pi, np.pi])

    @given(st.integers(0, 2 ** 32 - 1))
    def test_additivity_pairs(self, seed):
        # V(A & B) = V(A) + V(B) - V(A | B)
        rng = np.random.default_rng(seed)
        c = rng.uniform(-1, 1, size=(2, 2))
        inter = intersection_measures(c, 0.8)
        union = union_measures(c, 0.8).vector
        single = np.array([1, np.pi * 0.8, np.pi * 0.64])
        assert np.allclose(inter, 2 * single - union, atol=1e-9)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_additivity_triples(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-0.8, 0.8, size=(3, 2))
        R = 0.8
        single = np.array([1, np.pi * R, np.pi * R * R])
        pairs = sum(intersection_measures(c[[i, j]], R) for i, j in ((0, 1), (0, 2), (1, 2)))
        triple = intersection_measures(c, R)
        union = union_measures(c, R).vector
        assert np.allclose(union, 3 * single - pairs + triple, atol=1e-8)


class TestIntervals:
    def test_touching(self):
        assert np.allclose(union_volumes_1d(np.array([0.5, 1.5]), 0.5), [1, 2])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.floats(0.05, 1.0))
    def test_against_grid(self, xs, R):
        x = np.array(xs)
        h = 1e-3
        grid = np.arange(-7, 7, h) + h / 2
        inside = np.any(np.abs(grid[:, None] - x) <= R, axis=1)
        v = union_volumes_1d(x, R)
        assert v[1] == pytest.approx(inside.sum() * h, abs=2 * len(x) * h)
        runs = np.count_nonzero(np.diff(inside.astype(int)) == 1) + int(inside[0])
        gaps = np.diff(np.sort(x))
        if not np.any(np.abs(gaps - 2 * R) < 4 * h):
            assert v[0] == runs

    def test_batched(self, rng):
        x = rng.uniform(-3, 3, size=(5, 4, 1))
        out = union_volumes(x, 1, 0.3)
        assert out.shape == (5, 2)
        assert np.allclose(out[2], union_volumes_1d(x[2, :, 0], 0.3))


class TestScenes:
    def test_ranges(self):
        s1 = sample_scene(1, 4, 0.5, 3)
        assert np.all(np.abs(s1.germs) <= 2)
        s2 = sample_scene(2, 9, 0.5, 3)
        assert np.all(np.abs(s2.germs) <= 1.5)

    def test_deterministic(self):
        assert np.array_equal(sample_scene(2, 30, 0.4, 8).germs, sample_scene(2, 30, 0.4, 8).germs)

    def test_text_roundtrip(self):
        sc = sample_scene(2, 7, 0.3, 5)
        back = GermGrainScene.from_text(sc.to_text())
        assert np.array_equal(back.germs, sc.germs)
        assert (back.d, back.n, back.R, back.seed) == (2, 7, 0.3, 5)

    def test_unsupported_dimension(self):
        with pytest.raises(UnsupportedDimension):
            sample_scene(3, 5, 0.3, 0)

    def test_volume_rows(self):
        rows = volume_rows([sample_scene(2, 5, 0.4, 1)])
        assert set(rows[0]) == {"seed", "V_0", "V_1", "V_2"}
        assert float(rows[0]["V_0"]).is_integer()


class TestExactMoments1d:
    @pytest.mark.parametrize("n,R", [(5, 0.3), (40, 0.3), (120, 1.1), (400, 0.05)])
    def test_two_routes_agree(self, n, R):
        a = exact_mean_1d(n, R, "spacings")
        b = exact_mean_1d(n, R, "inclusion-exclusion")
        assert np.allclose(a, b, rtol=1e-10)

    def test_mean_against_simulation(self, rng):
        n, R = 20, 0.3
        x = germ_law(1, n).sample(rng, (100_000, n))
        v = union_volumes(x, 1, R)
        se = v.std(axis=0) / np.sqrt(len(v))
        assert np.all(np.abs(v.mean(axis=0) - exact_mean_1d(n, R)) <= 4 * se)

    def test_covariance_frozen_quadrature_value(self):
        # independent numerical quadrature of the spacing integrals at n = 50, R = 0.3
        expect = np.array([[0.13947733, 0.04177035], [0.04177035, 0.02531335]])
        assert np.allclose(exact_covariance_1d(50, 0.3), expect, atol=1e-7)

    def test_covariance_against_simulation(self, rng):
        n, R = 30, 0.3
        f = boolean_functional(1, n, R, exact_mean_1d(n, R))
        est = empirical_covariance(f, germ_law(1, n), n, 40_000, rng)
        ex = exact_covariance_1d(n, R)
        assert np.all(np.abs(est.matrix - ex) <= 4 * est.stderr)

    def test_contract(self):
        with pytest.raises(ContractError):
            exact_mean_1d(2, 3.0)

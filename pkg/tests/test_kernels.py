import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sbfplam.errors import (
    ConstantColumnError,
    DegenerateWindowError,
    EmptySampleError,
    InvalidBandwidthError,
)
from sbfplam.kernels import (
    EPANECHNIKOV,
    GAUSSIAN,
    BandwidthFallbackWarning,
    base_kernel_eval,
    boundary_factor,
    boundary_kernel_eval,
    default_bandwidth,
    kde_1d,
    kde_2d,
    kernel_weights,
    make_grid,
    nw_full,
    nw_marginal,
    rot_bandwidth,
    sj_bandwidth,
)


@pytest.fixture(scope="module")
def grid():
    return make_grid(101)


class TestBaseKernel:
    @pytest.mark.parametrize("u, expected", [(0.0, 0.75), (1.0, 0.0), (0.5, 0.5625)])
    def test_epanechnikov_values(self, u, expected):
        assert base_kernel_eval(EPANECHNIKOV, u) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("k", [EPANECHNIKOV, GAUSSIAN])
    def test_integrates_to_one(self, k):
        val, _ = integrate.quad(lambda u: float(k(u)), -np.inf if not k.compact else -1,
                                np.inf if not k.compact else 1)
        assert val == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("k", [EPANECHNIKOV, GAUSSIAN])
    def test_derivative_matches_finite_difference(self, k):
        u = np.linspace(-0.9, 0.9, 37)
        fd = (k(u + 1e-6) - k(u - 1e-6)) / 2e-6
        np.testing.assert_allclose(k.derivative(u), fd, atol=1e-8)

    def test_unknown_kernel(self):
        with pytest.raises(ValueError):
            base_kernel_eval("triangle", 0.0)


class TestBoundaryKernel:
    def test_interior_value(self):
        assert boundary_kernel_eval(EPANECHNIKOV, 0.5, 0.5, 0.1) == pytest.approx(7.5)

    def test_factor_at_edge_is_two(self):
        assert boundary_factor(EPANECHNIKOV, 0.0, 0.1) == pytest.approx(2.0, abs=1e-14)
        assert boundary_factor(GAUSSIAN, 1.0, 0.05) == pytest.approx(2.0, abs=1e-14)
        assert boundary_factor(GAUSSIAN, 1.0, 0.2) == pytest.approx(2.0, abs=1e-5)

    def test_interior_factor_is_one(self):
        assert boundary_factor(EPANECHNIKOV, 0.5, 0.1) == 1.0

    @pytest.mark.parametrize("k", [EPANECHNIKOV, GAUSSIAN])
    @pytest.mark.parametrize("v", [0.0, 0.03, 0.5, 0.97, 1.0])
    def test_normalized_over_unit_interval(self, k, v):
        val, _ = integrate.quad(lambda u: float(boundary_kernel_eval(k, u, v, 0.1)),
                                0.0, 1.0, points=[max(v - 0.1, 0), min(v + 0.1, 1)],
                                epsabs=1e-12, epsrel=1e-12, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(v=st.floats(0, 1), h=st.floats(0.02, 0.5))
    def test_normalization_property(self, v, h):
        val, _ = integrate.quad(lambda u: float(boundary_kernel_eval(EPANECHNIKOV, u, v, h)),
                                0.0, 1.0, points=[max(v - h, 0), min(v + h, 1)],
                                epsabs=1e-12, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("h", [0.0, -0.1, np.nan])
    def test_invalid_bandwidth(self, h):
        with pytest.raises(InvalidBandwidthError):
            boundary_kernel_eval(EPANECHNIKOV, 0.5, 0.5, h)


class TestGridWeights:
    def test_grid_weights_sum_to_one(self, grid):
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-15)
        assert grid.size == 101

    @pytest.mark.parametrize("k", [EPANECHNIKOV, GAUSSIAN])
    def test_rows_integrate_to_one(self, grid, k):
        obs = np.random.default_rng(0).uniform(size=200)
        W = kernel_weights(obs, 0.07, grid, k)
        rows = np.asarray(W @ grid.weights).ravel()
        np.testing.assert_allclose(rows, 1.0, atol=1e-12)

    def test_compact_kernel_gives_sparse(self, grid):
        W = kernel_weights(np.array([0.2, 0.8]), 0.1, grid)
        assert hasattr(W, "tocsr")

    def test_window_between_nodes_is_degenerate(self):
        g = make_grid(11)
        with pytest.raises(DegenerateWindowError):
            kernel_weights(np.array([0.05]), 0.04, g)


class TestKde:
    def test_single_sample_is_kernel_slice(self, grid):
        # Smoothers normalize by grid quadrature, so the slice is the analytic
        # kernel times a constant close to one.
        q = kde_1d([0.5], 0.1, grid)
        slice_ = boundary_kernel_eval(EPANECHNIKOV, grid.points, 0.5, 0.1)
        np.testing.assert_allclose(q, slice_ / grid.integrate(slice_), atol=1e-12)
        np.testing.assert_allclose(q, slice_, rtol=5e-3)

    def test_uniform_density_recovered(self, grid):
        x = np.random.default_rng(1).uniform(size=100_000)
        q = kde_1d(x, 0.05, grid)
        # interior: no boundary-corrected observation reaches the window
        inner = (grid.points >= 0.1) & (grid.points <= 0.9)
        assert np.max(np.abs(q[inner] - 1.0)) < 0.05

    def test_integrates_to_one(self, grid):
        x = np.random.default_rng(2).beta(2, 5, size=500)
        assert grid.integrate(kde_1d(x, 0.08, grid)) == pytest.approx(1.0, abs=0.01)

    def test_empty_sample(self, grid):
        with pytest.raises(EmptySampleError):
            kde_1d([], 0.1, grid)

    def test_2d_uniform(self, grid):
        rng = np.random.default_rng(3)
        x, y = rng.uniform(size=(2, 100_000))
        q = kde_2d(x, y, 0.1, 0.1, grid)
        inner = (grid.points >= 0.2) & (grid.points <= 0.8)
        assert np.max(np.abs(q[np.ix_(inner, inner)] - 1.0)) < 0.1

    def test_2d_marginalizes_to_1d(self, grid):
        rng = np.random.default_rng(4)
        x, y = rng.uniform(size=(2, 300))
        q2 = kde_2d(x, y, 0.1, 0.15, grid)
        np.testing.assert_allclose(q2 @ grid.weights, kde_1d(x, 0.1, grid), atol=1e-10)
        np.testing.assert_allclose(grid.weights @ q2, kde_1d(y, 0.15, grid), atol=1e-10)

    def test_2d_single_point_outer_product(self, grid):
        q2 = kde_2d([0.5], [0.5], 0.1, 0.2, grid)
        expected = np.outer(kde_1d([0.5], 0.1, grid), kde_1d([0.5], 0.2, grid))
        np.testing.assert_allclose(q2, expected, atol=1e-12)
        assert np.linalg.matrix_rank(q2) == 1

    def test_2d_length_mismatch(self, grid):
        with pytest.raises(ValueError):
            kde_2d([0.1, 0.2], [0.3], 0.1, 0.1, grid)


class TestNadarayaWatson:
    def test_constant_response(self, grid):
        z = np.random.default_rng(5).uniform(size=200)
        np.testing.assert_allclose(nw_marginal(np.full(200, 2.5), z, 0.1, grid), 2.5,
                                   rtol=1e-13)

    def test_identity_response_interior(self, grid):
        z = np.random.default_rng(6).uniform(size=10_000)
        m = nw_marginal(z, z, 0.05, grid)
        inner = (grid.points >= 0.1) & (grid.points <= 0.9)
        assert np.max(np.abs(m[inner] - grid.points[inner])) < 0.01

    def test_single_observation(self, grid):
        m_vals = nw_marginal(np.array([3.0]), np.array([0.4]), 0.7, grid)
        np.testing.assert_allclose(m_vals, 3.0)

    def test_single_observation_empty_windows(self, grid):
        with pytest.raises(DegenerateWindowError) as info:
            nw_marginal(np.array([3.0]), np.array([0.4]), 0.1, grid)
        assert 0 in info.value.indices

    def test_matrix_responses(self, grid):
        rng = np.random.default_rng(7)
        z = rng.uniform(size=100)
        R = rng.normal(size=(100, 3))
        M = nw_marginal(R, z, 0.2, grid)
        for k in range(3):
            np.testing.assert_allclose(M[:, k], nw_marginal(R[:, k], z, 0.2, grid),
                                       atol=1e-13)

    def test_full_constant(self):
        rng = np.random.default_rng(8)
        Z = rng.uniform(size=(300, 3))
        np.testing.assert_allclose(nw_full(np.full(300, -1.0), Z, 0.3, Z), -1.0,
                                   rtol=1e-13)

    @pytest.mark.parametrize("k", [EPANECHNIKOV, GAUSSIAN])
    def test_full_d1_matches_marginal(self, grid, k):
        rng = np.random.default_rng(9)
        z = rng.uniform(size=150)
        y = np.sin(4 * z) + rng.normal(size=150)
        full = nw_full(y, z[:, None], 0.1, grid.points[:, None], k, grid)
        np.testing.assert_allclose(full, nw_marginal(y, z, 0.1, grid, k), atol=1e-12)

    def test_full_sparse_matches_dense_bruteforce(self):
        rng = np.random.default_rng(10)
        Z = rng.uniform(size=(80, 2))
        y = rng.normal(size=80)
        h = np.array([0.3, 0.4])
        grid = make_grid()
        from sbfplam.kernels import grid_normalizers
        c = [grid_normalizers(Z[:, j], h[j], grid) for j in range(2)]
        K = np.ones((80, 80))
        for j in range(2):
            K *= EPANECHNIKOV((Z[:, None, j] - Z[None, :, j]) / h[j]) * c[j][None, :] / h[j]
        np.fill_diagonal(K, 0.0)
        expected = K @ y / K.sum(axis=1)
        np.testing.assert_allclose(nw_full(y, Z, h, Z, leave_one_out=True), expected,
                                   atol=1e-12)

    def test_full_isolated_point_flagged(self):
        rng = np.random.default_rng(11)
        Z = rng.uniform(0.0, 0.5, size=(400, 5))
        Z[17] = 0.95
        with pytest.raises(DegenerateWindowError) as info:
            nw_full(rng.normal(size=400), Z, 0.1, Z, leave_one_out=True)
        assert 17 in info.value.indices


class TestBandwidths:
    def test_rot_uniform(self):
        z = np.random.default_rng(12).uniform(size=400)
        expected = 1.06 * np.std(z, ddof=1) * 400 ** -0.2
        assert rot_bandwidth(z) == pytest.approx(expected, rel=1e-12)
        assert rot_bandwidth(z) == pytest.approx(0.0917, abs=0.006)

    def test_rot_constant(self):
        with pytest.raises(ConstantColumnError):
            rot_bandwidth(np.full(50, 0.3))

    def test_rot_shrinks_with_n(self):
        rng = np.random.default_rng(13)
        hs = [rot_bandwidth(np.linspace(0, 1, n)) for n in (100, 1000, 10_000, 100_000)]
        assert all(a > b for a, b in zip(hs, hs[1:]))

    def test_default_covers_gaps(self):
        z = np.r_[np.linspace(0, 0.3, 200), 1.0]
        assert default_bandwidth(z) >= 0.7

    def test_sj_normal_near_silverman(self):
        x = np.random.default_rng(0).standard_normal(10_000)
        silverman = 0.9 * min(np.std(x, ddof=1),
                              np.subtract(*np.percentile(x, [75, 25])) / 1.34) * 1e4 ** -0.2
        assert abs(sj_bandwidth(x) / silverman - 1.0) <= 0.15

    def test_sj_normal_near_amise_optimum(self):
        # For normal data the AMISE-optimal Gaussian bandwidth is (4/3)^(1/5) sd n^(-1/5).
        x = np.random.default_rng(0).standard_normal(10_000)
        optimum = (4 / 3) ** 0.2 * 1e4 ** -0.2
        assert sj_bandwidth(x) == pytest.approx(optimum, rel=0.1)

    def test_sj_too_few(self):
        with pytest.raises(EmptySampleError):
            sj_bandwidth(np.arange(9.0))

    @settings(max_examples=20, deadline=None)
    @given(c=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
    def test_sj_scale_equivariant(self, c, seed):
        x = np.random.default_rng(seed).standard_t(5, size=300)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BandwidthFallbackWarning)
            assert sj_bandwidth(c * x) == pytest.approx(c * sj_bandwidth(x), rel=1e-6)

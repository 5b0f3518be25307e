"""Tests for the numerical kernels."""

import itertools
import logging

import numpy as np
import pytest

from chuk_gmm_sce.linalg_opt import (
    InputError,
    SimplexQP,
    WeightVector,
    auto_bandwidth,
    hac_lrv,
    in_convex_hull,
    min_norm_quadratic,
    project_simplex,
    solve_simplex_qp,
    svd_pca,
)


def _simplex_grid(step: int = 200) -> np.ndarray:
    points = [
        (i / step, j / step, (step - i - j) / step)
        for i, j in itertools.product(range(step + 1), repeat=2)
        if i + j <= step
    ]
    return np.array(points)


class TestWeightVector:
    """Test weight vector invariants."""

    def test_rejects_negative(self):
        """Test negative entries are rejected on the simplex."""
        with pytest.raises(InputError):
            WeightVector([1.2, -0.2])

    def test_rejects_bad_sum(self):
        """Test entries must sum to one on the simplex."""
        with pytest.raises(InputError):
            WeightVector([0.5, 0.4])

    def test_unconstrained_allows_anything_finite(self):
        """Test off-simplex vectors are allowed when flagged."""
        w = WeightVector([2.0, -1.5], on_simplex=False)

        assert not w.on_simplex
        with pytest.raises(InputError):
            WeightVector([np.nan], on_simplex=False)

    def test_from_raw_renormalises(self):
        """Test round-off negatives are clipped and the rest renormalised."""
        w = WeightVector.from_raw([-1e-14, 1.0, 3.0])

        np.testing.assert_allclose(w.values, [0.0, 0.25, 0.75])

    def test_support_and_expand(self):
        """Test support ignores near-zero entries and expand scatters."""
        w = WeightVector([0.0, 0.4, 0.6])
        full = w.expand([1, 3, 4], 6)

        assert w.support == (1, 2)
        np.testing.assert_array_equal(full.values, [0, 0, 0, 0.4, 0.6, 0])


class TestSimplexQP:
    """Test QP construction and solving."""

    def test_rejects_non_psd(self):
        """Test an indefinite matrix is rejected."""
        with pytest.raises(InputError, match="PSD"):
            SimplexQP(np.diag([1.0, -1.0]), np.zeros(2))

    def test_rejects_asymmetric(self):
        """Test an asymmetric matrix is rejected."""
        with pytest.raises(InputError, match="symmetric"):
            SimplexQP(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_nan(self):
        """Test NaN inputs are rejected."""
        with pytest.raises(InputError):
            SimplexQP(np.eye(2), np.array([np.nan, 0.0]))

    def test_single_control(self):
        """Test a one-dimensional QP returns the only vertex."""
        sol = solve_simplex_qp(SimplexQP(np.array([[2.0]]), np.array([1.0])))

        np.testing.assert_array_equal(sol.weights.values, [1.0])
        assert sol.iterations == 0

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_grid_search(self, seed):
        """Test the solution is at least as good as a fine simplex grid."""
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((5, 3))
        qp = SimplexQP(A.T @ A, rng.standard_normal(3), 0.0)
        sol = solve_simplex_qp(qp)

        grid = _simplex_grid()
        grid_obj = np.einsum("ij,jk,ik->i", grid, qp.M, grid) - 2.0 * grid @ qp.b
        assert sol.objective <= grid_obj.min() + 1e-9
        assert sol.kkt_residual <= 1e-10
        assert sol.weights.values.min() >= 0.0
        assert abs(sol.weights.values.sum() - 1.0) <= 1e-10

    def test_interior_optimum(self):
        """Test an interior unconstrained optimum is found exactly."""
        target = np.array([0.2, 0.3, 0.5])
        qp = SimplexQP(np.eye(3), target)
        sol = solve_simplex_qp(qp)

        np.testing.assert_allclose(sol.weights.values, target, atol=1e-9)
        assert sol.unique

    def test_vertex_optimum(self):
        """Test a vertex optimum is returned exactly."""
        qp = SimplexQP(np.eye(3), np.array([5.0, 0.0, 0.0]))
        sol = solve_simplex_qp(qp)

        np.testing.assert_allclose(sol.weights.values, [1.0, 0.0, 0.0], atol=1e-10)

    def test_flat_objective_is_not_unique(self):
        """Test a zero quadratic is flagged as non-unique."""
        sol = solve_simplex_qp(SimplexQP(np.zeros((3, 3)), np.zeros(3)))

        assert not sol.unique
        np.testing.assert_allclose(sol.weights.values.sum(), 1.0)

    def test_non_unique_optimum_warns(self, caplog):
        """Test a flat face is reported at warning level."""
        with caplog.at_level(logging.WARNING, logger="chuk_gmm_sce.linalg_opt"):
            solve_simplex_qp(SimplexQP(np.ones((3, 3)), np.ones(3)))

        assert "not unique" in caplog.text

    @pytest.mark.parametrize("seed", range(5))
    def test_no_worse_than_projected_min_norm(self, seed):
        """Test the QP optimum beats the metric projection of the free minimiser."""
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((3, 6))
        qp = SimplexQP(A.T @ A, rng.standard_normal(6), 0.0)
        sol = solve_simplex_qp(qp)
        projected = project_simplex(min_norm_quadratic(qp), metric=qp.M)

        assert sol.objective <= qp.objective(projected.values) + 1e-8

    def test_rejects_bad_tolerance(self):
        """Test a non-positive tolerance is rejected."""
        with pytest.raises(InputError):
            solve_simplex_qp(SimplexQP(np.eye(2), np.zeros(2)), tol=0.0)


class TestProjection:
    """Test simplex projection."""

    def test_euclidean(self):
        """Test the sort-based projection of a known vector."""
        w = project_simplex([0.5, 0.5, 1.0])

        np.testing.assert_allclose(w.values, [1 / 6, 1 / 6, 2 / 3])

    def test_points_on_simplex_are_fixed(self):
        """Test projecting a simplex point returns it."""
        point = [0.1, 0.2, 0.7]

        np.testing.assert_allclose(project_simplex(point).values, point)

    def test_identity_metric_matches_euclidean(self):
        """Test the metric projection with the identity is Euclidean."""
        v = np.array([0.9, -0.3, 0.6, 0.2])
        euclidean = project_simplex(v)
        metric = project_simplex(v, metric=np.eye(4))

        np.testing.assert_allclose(metric.values, euclidean.values, atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_euclidean_non_expansive(self, seed):
        """Test projected points are no farther apart than the inputs."""
        rng = np.random.default_rng(seed)
        for _ in range(50):
            u, v = 2.0 * rng.standard_normal((2, 6))
            gap = np.linalg.norm(project_simplex(u).values - project_simplex(v).values)

            assert gap <= np.linalg.norm(u - v) + 1e-12

    def test_metric_non_expansive(self):
        """Test the metric projection is non-expansive in its own norm."""
        rng = np.random.default_rng(11)
        A = rng.standard_normal((6, 4))
        G = A.T @ A

        def norm(x):
            return float(np.sqrt(x @ G @ x))

        for _ in range(20):
            u, v = rng.standard_normal((2, 4))
            gap = norm(project_simplex(u, metric=G).values - project_simplex(v, metric=G).values)

            assert gap <= norm(u - v) + 1e-6

    def test_rejects_empty(self):
        """Test an empty vector is rejected."""
        with pytest.raises(InputError):
            project_simplex([])


class TestMinNorm:
    """Test the minimum-norm unconstrained minimiser."""

    def test_singular_matrix(self):
        """Test the pseudo-inverse picks the minimum-norm solution."""
        qp = SimplexQP(np.ones((2, 2)), np.ones(2))

        np.testing.assert_allclose(min_norm_quadratic(qp), [0.5, 0.5])

    def test_invertible_matrix(self):
        """Test an invertible system is solved exactly."""
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -1.0])

        np.testing.assert_allclose(
            min_norm_quadratic(SimplexQP(M, b)), np.linalg.solve(M, b)
        )


class TestConvexHull:
    """Test convex-hull membership."""

    def test_inside(self):
        """Test a point inside a triangle is a member with exact certificate."""
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        inside, weights = in_convex_hull([0.25, 0.25], points)

        assert inside
        np.testing.assert_allclose(points.T @ weights.values, [0.25, 0.25], atol=1e-9)

    def test_outside(self):
        """Test a point outside the triangle is not a member."""
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        inside, weights = in_convex_hull([1.0, 1.0], points)

        assert not inside
        np.testing.assert_allclose(weights.values, [0.0, 0.5, 0.5], atol=1e-8)

    def test_one_dimensional_points(self):
        """Test scalar points are treated as one-dimensional."""
        assert in_convex_hull([0.5], [0.0, 1.0])[0]
        assert not in_convex_hull([2.0], [0.0, 1.0])[0]

    def test_dimension_mismatch(self):
        """Test mismatched dimensions raise."""
        with pytest.raises(InputError):
            in_convex_hull([1.0, 2.0, 3.0], np.eye(2))


class TestHacLrv:
    """Test the Bartlett-kernel long-run variance."""

    def test_constant_series_is_zero(self):
        """Test a constant series has zero long-run variance."""
        np.testing.assert_array_equal(hac_lrv(np.full(20, 3.0)), [[0.0]])

    def test_zero_bandwidth_is_variance(self):
        """Test zero lags give the population variance."""
        assert hac_lrv(np.array([1.0, 2.0, 3.0, 4.0]), bandwidth=0)[0, 0] == pytest.approx(1.25)

    def test_alternating_series(self):
        """Test one Bartlett lag on an alternating series."""
        series = np.tile([1.0, -1.0], 5)

        assert hac_lrv(series, bandwidth=1)[0, 0] == pytest.approx(0.1)

    def test_iid_long_series(self):
        """Test i.i.d. unit-variance noise has long-run variance near one."""
        series = np.random.default_rng(0).standard_normal(50_000)

        assert hac_lrv(series)[0, 0] == pytest.approx(1.0, abs=0.1)

    def test_matrix_output_is_psd(self):
        """Test a multivariate series gives a symmetric PSD matrix."""
        series = np.random.default_rng(1).standard_normal((200, 3))
        S = hac_lrv(series, bandwidth=4)

        assert S.shape == (3, 3)
        np.testing.assert_allclose(S, S.T)
        assert np.linalg.eigvalsh(S).min() >= -1e-12

    def test_rejects_nan(self):
        """Test NaN input is rejected."""
        with pytest.raises(InputError):
            hac_lrv(np.array([1.0, np.nan, 2.0]))

    def test_rejects_short_series(self):
        """Test a single observation is rejected."""
        with pytest.raises(InputError):
            hac_lrv(np.array([1.0]))

    def test_auto_bandwidth(self):
        """Test the plug-in lag count."""
        assert auto_bandwidth(100) == 4
        assert auto_bandwidth(30) == 3


class TestSvdPca:
    """Test principal-components normalisation."""

    def test_normalisation(self):
        """Test factors are orthonormal over T and loadings orthogonal."""
        rng = np.random.default_rng(2)
        data = rng.standard_normal((8, 40))
        fit = svd_pca(data, 3)
        gram = fit.loadings @ fit.loadings.T

        np.testing.assert_allclose(fit.factors.T @ fit.factors / 40, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-10)

    def test_exact_low_rank_reconstruction(self):
        """Test an exact rank-2 matrix is reconstructed with zero residual."""
        rng = np.random.default_rng(3)
        data = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 30))
        fit = svd_pca(data, 2)

        np.testing.assert_allclose(fit.fitted(), data, atol=1e-10)
        np.testing.assert_allclose(fit.residual_variances, 0.0, atol=1e-20)

    def test_sign_convention(self):
        """Test each loading row starts with a positive entry."""
        data = -np.abs(np.random.default_rng(4).standard_normal((5, 20)))
        fit = svd_pca(data, 2)

        for row in fit.loadings:
            assert row[np.flatnonzero(np.abs(row) > 1e-12)[0]] > 0

    def test_rank_out_of_range(self):
        """Test a rank above min(N, T) is rejected."""
        with pytest.raises(InputError):
            svd_pca(np.ones((3, 4)), 4)

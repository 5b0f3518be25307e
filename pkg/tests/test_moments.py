"""Tests for the instrument moment system."""

import numpy as np
import pytest

from chuk_gmm_sce.linalg_opt import InputError
from chuk_gmm_sce.moments import (
    Weighting,
    as_simplex_qp,
    build_moment_system,
    gmm_objective,
    moment_contributions,
    reweight_two_step,
    sample_moments,
    sargan_hansen,
)
from chuk_gmm_sce.panel import PanelData, RoleAssignment

from .conftest import TRUE_WEIGHTS


def _lrv_panel(instrument):
    """Unit of interest alternating ±1, a zero control and one instrument."""
    outcomes = np.array(
        [
            [1.0, -1.0, 1.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [*instrument, 0.0],
        ]
    )
    treated = np.zeros_like(outcomes, dtype=bool)
    treated[0, 4] = True
    panel = PanelData(outcomes, treated, ("y", "c", "k"), (1, 2, 3, 4, 5))
    roles = RoleAssignment(0, (1,), (2,), tuple(range(4)), (4,))
    return panel, roles


class TestBuildMomentSystem:
    """Test block extraction."""

    def test_blocks(self, exact_panel):
        """Test the ones row and the block shapes."""
        panel, roles = exact_panel
        ms = build_moment_system(panel, roles)

        assert ms.instrument_block.shape == (4, 30)
        np.testing.assert_array_equal(ms.instrument_block[0], 1.0)
        assert ms.control_block.shape == (3, 30)
        assert ms.n_instruments == 3
        np.testing.assert_array_equal(ms.weighting, np.eye(4))

    def test_no_instruments_keeps_mean_moment(self, noisy_panel):
        """Test an empty instrument set leaves only the mean moment."""
        panel, roles = noisy_panel
        ms = build_moment_system(panel, roles)

        assert ms.instrument_block.shape == (1, roles.n_pre)
        assert ms.n_instruments == 0

    def test_custom_needs_matrix(self, exact_panel):
        """Test custom weighting without a matrix is rejected."""
        panel, roles = exact_panel

        with pytest.raises(InputError, match="custom"):
            build_moment_system(panel, roles, Weighting.CUSTOM)

    def test_custom_must_be_psd(self, exact_panel):
        """Test a non-PSD custom matrix is rejected."""
        panel, roles = exact_panel

        with pytest.raises(InputError, match="PSD"):
            build_moment_system(panel, roles, "custom", -np.eye(4))

    def test_two_step_needs_two_periods(self, exact_panel):
        """Test two-step weighting needs at least two pre periods."""
        panel, roles = exact_panel

        with pytest.raises(InputError):
            build_moment_system(panel, roles.with_pre_periods((0,)), "two_step")


class TestObjective:
    """Test moments, the objective and its quadratic form."""

    def test_true_weights_zero_moments(self, exact_panel):
        """Test the generating weights satisfy every moment exactly."""
        panel, roles = exact_panel
        ms = build_moment_system(panel, roles)

        np.testing.assert_allclose(sample_moments(ms, TRUE_WEIGHTS), 0.0, atol=1e-12)
        assert gmm_objective(ms, TRUE_WEIGHTS) == pytest.approx(0.0, abs=1e-20)

    def test_quadratic_form_matches_objective(self, exact_panel):
        """Test the expanded QP agrees with g'Ag at arbitrary weights."""
        panel, roles = exact_panel
        ms = build_moment_system(panel, roles)
        qp = as_simplex_qp(ms)
        rng = np.random.default_rng(5)

        for w in rng.dirichlet(np.ones(3), size=5):
            assert qp.objective(w) == pytest.approx(gmm_objective(ms, w), rel=1e-9, abs=1e-12)

    def test_contributions_average_to_moments(self, exact_panel):
        """Test per-period contributions average to the sample moments."""
        panel, roles = exact_panel
        ms = build_moment_system(panel, roles)
        w = np.array([1.0, 0.0, 0.0])

        np.testing.assert_allclose(
            moment_contributions(ms, w).mean(axis=0), sample_moments(ms, w)
        )


class TestSarganHansen:
    """Test the overidentification statistic."""

    def test_exact_fit_is_zero(self, exact_panel):
        """Test an exactly matched unit gives a zero statistic."""
        panel, roles = exact_panel
        statistic, weights = sargan_hansen(build_moment_system(panel, roles))

        assert statistic == pytest.approx(0.0, abs=1e-8)
        np.testing.assert_allclose(weights.values, TRUE_WEIGHTS, atol=1e-6)

    def test_misfit_is_positive(self, exact_panel):
        """Test a single wrong control gives a positive statistic."""
        panel, roles = exact_panel
        statistic, _ = sargan_hansen(build_moment_system(panel, roles.with_partition((1,), (4, 5, 6))))

        assert statistic > 1.0

    def test_instrument_order_does_not_matter(self, noisy_panel):
        """Test permuting the instruments leaves the statistic unchanged."""
        panel, roles = noisy_panel
        forward = roles.with_partition((1, 2, 3), (4, 5, 6, 7, 8, 9, 10, 11))
        shuffled = roles.with_partition((1, 2, 3), (9, 4, 11, 7, 5, 10, 6, 8))

        first, _ = sargan_hansen(build_moment_system(panel, forward))
        second, _ = sargan_hansen(build_moment_system(panel, shuffled))

        assert second == pytest.approx(first, rel=1e-8)

    @pytest.mark.parametrize("scale", [0.5, 3.0])
    def test_scales_with_fourth_power(self, noisy_panel, scale):
        """Test rescaling every outcome by s multiplies the statistic by s**4."""
        panel, roles = noisy_panel
        roles = roles.with_partition((1, 2, 3), (4, 5, 6, 7, 8, 9, 10, 11))
        scaled = PanelData(panel.outcomes * scale, panel.treated, panel.unit_ids, panel.period_ids)

        base, _ = sargan_hansen(build_moment_system(panel, roles))
        rescaled, _ = sargan_hansen(build_moment_system(scaled, roles))

        assert base > 0.0
        assert rescaled == pytest.approx(scale**4 * base, rel=1e-6)


class TestTwoStepWeighting:
    """Test the inverse long-run variance weighting."""

    def test_diagonal_example(self):
        """Test uncorrelated contributions with variances 1 and 4."""
        panel, roles = _lrv_panel([2.0, 2.0, -2.0, -2.0])
        ms = reweight_two_step(build_moment_system(panel, roles), np.array([1.0]), bandwidth=0)

        np.testing.assert_allclose(ms.weighting, np.diag([1.0, 0.25]), atol=1e-12)
        assert ms.rule is Weighting.TWO_STEP

    def test_zero_variance_keeps_identity(self, exact_panel):
        """Test zero residuals keep the identity matrix."""
        panel, roles = exact_panel
        ms = reweight_two_step(build_moment_system(panel, roles), TRUE_WEIGHTS, bandwidth=0)

        np.testing.assert_array_equal(ms.weighting, np.eye(4))

    def test_singular_variance_is_regularised(self):
        """Test a collinear instrument still yields a finite symmetric matrix."""
        panel, roles = _lrv_panel([3.0, 3.0, 3.0, 3.0])
        ms = reweight_two_step(build_moment_system(panel, roles), np.array([1.0]), bandwidth=0)

        assert np.all(np.isfinite(ms.weighting))
        np.testing.assert_allclose(ms.weighting, ms.weighting.T)
        assert np.linalg.eigvalsh(ms.weighting).min() > 0

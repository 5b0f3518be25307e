"""Pytest configuration and fixtures."""

import logging

import numpy as np
import pytest

from chuk_gmm_sce import PanelData, RoleAssignment
from chuk_gmm_sce.dgp import FactorProcess, FittedDGP

TRUE_WEIGHTS = np.array([0.2, 0.3, 0.5])
CONTROL_LOADINGS = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, -1.0, -1.0]])
INSTRUMENT_LOADINGS = np.array([[1.0, 0.5, 0.5], [1.0, -0.5, 1.0], [1.0, 1.0, -0.5]])
EFFECT = 1.0


def make_exact_panel(n_pre: int = 30, n_post: int = 10, seed: int = 0, shift: float = 0.0):
    """Noiseless panel where the unit of interest is 0.2/0.3/0.5 of three controls.

    Factors are ``(1, f1, f2)`` with standard normal ``f``. Units are the unit
    of interest ``u0``, controls ``c1..c3`` and instruments ``k1..k3``. The
    unit of interest gets ``EFFECT`` in every post period; ``shift`` is added
    to its outcomes in every period.
    """
    rng = np.random.default_rng(seed)
    n_periods = n_pre + n_post
    factors = np.column_stack([np.ones(n_periods), rng.standard_normal((n_periods, 2))])
    target_loading = TRUE_WEIGHTS @ CONTROL_LOADINGS
    loadings = np.vstack([target_loading, CONTROL_LOADINGS, INSTRUMENT_LOADINGS])
    outcomes = loadings @ factors.T
    outcomes[0, n_pre:] += EFFECT
    outcomes[0] += shift

    treated = np.zeros_like(outcomes, dtype=bool)
    treated[0, n_pre:] = True
    panel = PanelData(
        outcomes=outcomes,
        treated=treated,
        unit_ids=("u0", "c1", "c2", "c3", "k1", "k2", "k3"),
        period_ids=tuple(range(1, n_periods + 1)),
    )
    roles = RoleAssignment(
        unit_of_interest=0,
        controls=(1, 2, 3),
        instruments=(4, 5, 6),
        pre_periods=tuple(range(n_pre)),
        post_periods=tuple(range(n_pre, n_periods)),
    )
    return panel, roles


def make_noisy_factor_panel(
    n_units: int = 12,
    n_pre: int = 60,
    n_post: int = 20,
    noise: float = 0.3,
    seed: int = 1,
):
    """Two-factor panel with iid shocks; unit 0 treated in post periods only."""
    rng = np.random.default_rng(seed)
    n_periods = n_pre + n_post
    factors = np.column_stack([np.ones(n_periods), rng.standard_normal(n_periods)])
    loadings = np.column_stack([rng.uniform(0.5, 1.5, n_units), rng.uniform(-1, 1, n_units)])
    outcomes = loadings @ factors.T + noise * rng.standard_normal((n_units, n_periods))
    treated = np.zeros_like(outcomes, dtype=bool)
    treated[0, n_pre:] = True
    panel = PanelData(
        outcomes=outcomes,
        treated=treated,
        unit_ids=tuple(f"u{i}" for i in range(n_units)),
        period_ids=tuple(range(2000, 2000 + n_periods)),
    )
    roles = RoleAssignment(
        unit_of_interest=0,
        controls=tuple(range(1, n_units)),
        instruments=(),
        pre_periods=tuple(range(n_pre)),
        post_periods=tuple(range(n_pre, n_periods)),
    )
    return panel, roles


def make_static_dgp(n_units: int = 20, rank: int = 2, seed: int = 3, shock: float = 0.25):
    """White-noise factors around a unit mean with uniform loadings."""
    rng = np.random.default_rng(seed)
    loadings = rng.uniform(0.0, 1.0, (rank, n_units))
    processes = tuple(
        FactorProcess(order=0, diff=0, const=1.0 if f == 0 else 0.0, coefficients=(), sigma2=1.0)
        for f in range(rank)
    )
    return FittedDGP(
        loadings=loadings,
        factor_processes=processes,
        shock_variances=np.full(n_units, shock),
        unit_ids=tuple(f"unit{i:02d}" for i in range(n_units)),
    )


@pytest.fixture
def exact_panel():
    """Noiseless exact-combination panel and its roles."""
    return make_exact_panel()


@pytest.fixture
def noisy_panel():
    """Two-factor panel with iid shocks and all never-treated units as controls."""
    return make_noisy_factor_panel()


@pytest.fixture
def static_dgp():
    """Small DGP with white-noise factors."""
    return make_static_dgp()


@pytest.fixture
def long_csv(tmp_path):
    """The two-unit, two-period long CSV."""
    path = tmp_path / "panel.csv"
    path.write_text(
        "unit,period,outcome,treated\n"
        "a,1,1.0,0\n"
        "a,2,2.0,0\n"
        "b,1,0.0,0\n"
        "b,2,1.0,0\n"
    )
    return path


@pytest.fixture(autouse=True)
def setup_logging():
    """Configure logging for tests."""
    # Suppress logs during tests unless verbose mode
    logging.getLogger("chuk_gmm_sce").setLevel(logging.ERROR)
    logging.getLogger("statsmodels").setLevel(logging.ERROR)

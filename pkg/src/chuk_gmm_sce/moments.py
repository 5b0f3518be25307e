#!/usr/bin/env python3
# src/chuk_gmm_sce/moments.py
"""
Instrument-stacked sample moments, the GMM objective and the Sargan-Hansen test.

For weights ``w`` the sample moments are

    g(w) = (1/T0) * G (y0 - C'w)

with ``G`` a row of ones stacked over the instrument pre-period outcomes,
``C`` the control pre-period outcomes and ``y0`` the unit of interest.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from .linalg_opt import (
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    Bandwidth,
    InputError,
    SimplexQP,
    WeightVector,
    hac_lrv,
    solve_simplex_qp,
)
from .panel import PanelData, RoleAssignment

logger = logging.getLogger(__name__)

RIDGE_EPSILON = 1e-8
MAX_CONDITION = 1e12


class Weighting(str, Enum):
    """How the moment weighting matrix is chosen."""

    IDENTITY = "identity"
    TWO_STEP = "two_step"
    CUSTOM = "custom"


@dataclass(frozen=True)
class MomentSystem:
    """Pre-period blocks plus the weighting matrix ``A``."""

    instrument_block: np.ndarray
    control_block: np.ndarray
    target: np.ndarray
    weighting: np.ndarray
    rule: Weighting = Weighting.IDENTITY

    def __post_init__(self):
        G = np.array(self.instrument_block, dtype=float, ndmin=2)
        C = np.array(self.control_block, dtype=float, ndmin=2)
        y = np.array(self.target, dtype=float).reshape(-1)
        A = np.array(self.weighting, dtype=float, ndmin=2)
        if G.shape[1] != y.size or C.shape[1] != y.size:
            raise InputError("moment blocks must share the pre-period length")
        if not np.all(G[0] == 1.0):
            raise InputError("first instrument row must be the ones row")
        if A.shape != (G.shape[0], G.shape[0]):
            raise InputError(f"weighting must be {G.shape[0]}x{G.shape[0]}")
        if np.abs(A - A.T).max() > 1e-10 * max(1.0, np.abs(A).max()):
            raise InputError("weighting matrix must be symmetric")
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A)[0] < -1e-10 * max(1.0, np.abs(A).max()):
            raise InputError("weighting matrix must be PSD")
        for arr in (G, C, y, A):
            arr.flags.writeable = False
        object.__setattr__(self, "instrument_block", G)
        object.__setattr__(self, "control_block", C)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "weighting", A)
        object.__setattr__(self, "rule", Weighting(self.rule))

    @property
    def n_pre(self) -> int:
        return int(self.target.size)

    @property
    def n_controls(self) -> int:
        return int(self.control_block.shape[0])

    @property
    def n_instruments(self) -> int:
        return int(self.instrument_block.shape[0]) - 1


def build_moment_system(
    panel: PanelData,
    roles: RoleAssignment,
    weighting: Weighting | str = Weighting.IDENTITY,
    custom_matrix: Optional[np.ndarray] = None,
) -> MomentSystem:
    """Extract pre-period blocks for the roles.

    ``two_step`` starts from the identity; ``reweight_two_step`` replaces it
    once first-stage weights exist.
    """
    rule = Weighting(weighting)
    pre = list(roles.pre_periods)
    if not pre:
        raise InputError("moment system needs at least one pre period")
    if rule is Weighting.TWO_STEP and len(pre) < 2:
        raise InputError("two-step weighting needs at least two pre periods")

    Y = panel.outcomes
    G = np.vstack([np.ones(len(pre)), Y[np.ix_(list(roles.instruments), pre)]])
    C = Y[np.ix_(list(roles.controls), pre)]
    y0 = Y[roles.unit_of_interest, pre]

    dim = G.shape[0]
    if rule is Weighting.CUSTOM:
        if custom_matrix is None:
            raise InputError("custom weighting needs a matrix")
        A = np.asarray(custom_matrix, dtype=float)
    else:
        A = np.eye(dim)
    return MomentSystem(G, C, y0, A, rule)


def _values(w: WeightVector | np.ndarray) -> np.ndarray:
    return w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=float)


def residuals(ms: MomentSystem, w: WeightVector | np.ndarray) -> np.ndarray:
    return ms.target - ms.control_block.T @ _values(w)


def moment_contributions(ms: MomentSystem, w: WeightVector | np.ndarray) -> np.ndarray:
    """Per-period summands of the sample moments, shape (T0, K+1)."""
    return (ms.instrument_block * residuals(ms, w)).T


def sample_moments(ms: MomentSystem, w: WeightVector | np.ndarray) -> np.ndarray:
    return ms.instrument_block @ residuals(ms, w) / ms.n_pre


def gmm_objective(ms: MomentSystem, w: WeightVector | np.ndarray) -> float:
    g = sample_moments(ms, w)
    return max(float(g @ ms.weighting @ g), 0.0)


def as_simplex_qp(ms: MomentSystem) -> SimplexQP:
    """Expand ``g'Ag`` into ``w'Mw - 2b'w + c``."""
    scale = float(ms.n_pre) ** 2
    H = ms.control_block @ ms.instrument_block.T
    Gy = ms.instrument_block @ ms.target
    AH = ms.weighting @ H.T
    M = H @ AH / scale
    b = Gy @ AH / scale
    c = float(Gy @ ms.weighting @ Gy) / scale
    return SimplexQP(0.5 * (M + M.T), b, c)


def reweight_two_step(
    ms: MomentSystem,
    w_first: WeightVector | np.ndarray,
    bandwidth: Bandwidth = "auto",
) -> MomentSystem:
    """Replace ``A`` by the inverse long-run variance of the moment contributions.

    A ridge of ``1e-8 * trace / dim`` is added when the long-run variance has
    condition number above 1e12. A zero long-run variance keeps the identity.
    """
    lrv = hac_lrv(moment_contributions(ms, w_first), bandwidth)
    dim = lrv.shape[0]
    trace = float(np.trace(lrv))
    if trace <= np.finfo(float).tiny:
        logger.warning(
            "long-run variance of the moments is zero; keeping identity weighting"
        )
        return replace(ms, weighting=np.eye(dim), rule=Weighting.TWO_STEP)

    if np.linalg.cond(lrv) > MAX_CONDITION:
        ridge = RIDGE_EPSILON * trace / dim
        logger.debug(f"regularising long-run variance with ridge {ridge:.3e}")
        lrv = lrv + ridge * np.eye(dim)

    A = np.linalg.inv(lrv)
    return replace(ms, weighting=0.5 * (A + A.T), rule=Weighting.TWO_STEP)


def sargan_hansen(
    ms: MomentSystem,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> tuple[float, WeightVector]:
    """``T0`` times the minimised objective, with the minimising weights."""
    solution = solve_simplex_qp(as_simplex_qp(ms), tol=tol, max_iter=max_iter)
    statistic = ms.n_pre * gmm_objective(ms, solution.weights)
    return statistic, solution.weights

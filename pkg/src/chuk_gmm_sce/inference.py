#!/usr/bin/env python3
# src/chuk_gmm_sce/inference.py
"""
Block-subsampling confidence intervals for the weighted-average effect.

Each draw picks a pre-period block ``b`` and forms

    a* = -(1/sqrt(T0)) (sum_t v_t Y_Jt)' sqrt(m) (W_b - W) + s* / sqrt(T1)

with ``s* ~ N(0, Σ_v)``. The interval is
``[ā - a*_(ceil((1-δ/2)N)), ā - a*_(ceil((δ/2)N))]``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field
from scipy import stats

from .estimators import EstimationResult, EstimatorMethod, gmm_sce
from .linalg_opt import (
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    Bandwidth,
    QPConvergenceError,
    WeightVector,
    hac_lrv,
)
from .moments import Weighting
from .panel import PanelData, RoleAssignment
from .seeding import SeedLike, make_rng, open_uniforms
from .selection import select_partition

logger = logging.getLogger(__name__)


def default_block_length(n_pre: int) -> int:
    return int(math.floor(n_pre**0.7))


class SubsamplingConfig(BaseModel):
    """Block-subsampling settings; ``m=None`` means ``floor(T0 ** 0.7)``."""

    m: Optional[int] = Field(default=None, ge=2)
    n_draws: int = Field(default=1000, ge=100)
    level: float = Field(default=0.10, gt=0.0, lt=1.0)
    sigma_bandwidth: int | Literal["auto"] = "auto"
    reselect_per_block: bool = False
    selection_method: Literal["sequential", "two_step"] = "sequential"
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    iid_subsampling: bool = False
    n_iid_subsamples: Optional[int] = Field(default=None, ge=2)

    model_config = {"validate_assignment": True}

    def block_length(self, n_pre: int) -> int:
        """Resolved subsample size, validated against ``T0``."""
        m = self.m if self.m is not None else default_block_length(n_pre)
        if not 2 <= m <= n_pre:
            raise ValueError(
                f"subsample size m={m} must satisfy 2 <= m <= T0={n_pre}"
            )
        return m


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    point: float
    sigma_v_hat: float
    draws: np.ndarray
    level: float
    m: int
    n_blocks: int
    n_excluded_blocks: int = 0
    sigma_degenerate: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, include_draws: bool = True) -> dict[str, Any]:
        data: dict[str, Any] = {
            "lower": self.lower,
            "upper": self.upper,
            "point": self.point,
            "level": self.level,
            "coverage": 1.0 - self.level,
            "sigma_v_hat": self.sigma_v_hat,
            "sigma_degenerate": self.sigma_degenerate,
            "m": self.m,
            "n_blocks": self.n_blocks,
            "n_excluded_blocks": self.n_excluded_blocks,
            "n_draws": int(self.draws.size),
            **self.extra,
        }
        if include_draws:
            data["draws"] = [float(x) for x in self.draws]
        return data


def estimate_sigma_v(
    effects: Sequence[float] | np.ndarray,
    weighted_average: float,
    v: Optional[Sequence[float] | np.ndarray] = None,
    bandwidth: Bandwidth = "auto",
) -> float:
    """Long-run variance of ``sqrt(T1) sum_t v_t (a_t - ā)``.

    Uses the series ``T1 v_t (a_t - ā)``; with uniform ``v`` that is the
    deviations themselves. Constant effects give exactly zero.
    """
    alpha = np.asarray(effects, dtype=float).reshape(-1)
    n_post = alpha.size
    if n_post < 2:
        raise ValueError("Σ_v estimation needs at least two post periods")
    v_arr = np.full(n_post, 1.0 / n_post) if v is None else np.asarray(v, float)
    deviations = alpha - weighted_average
    if np.abs(deviations).max() <= 1e-12 * (1.0 + abs(weighted_average)):
        logger.debug("effects are constant; Σ_v is zero")
        return 0.0
    series = n_post * v_arr * deviations
    return float(hac_lrv(series, bandwidth)[0, 0])


def _block_weights(
    panel: PanelData,
    roles: RoleAssignment,
    periods: Sequence[int],
    weighting: Weighting,
    pool_roles: Optional[RoleAssignment],
    cfg: SubsamplingConfig,
    tol: float,
    max_iter: int,
) -> Optional[WeightVector]:
    block_roles = roles.with_pre_periods(periods)
    used = [roles.unit_of_interest, *roles.controls]
    if np.all(np.ptp(panel.outcomes[np.ix_(used, list(periods))], axis=1) == 0.0):
        return None
    try:
        if pool_roles is None:
            return gmm_sce(
                panel, block_roles, weighting, tol=tol, max_iter=max_iter
            ).weights

        block_pool = pool_roles.with_pre_periods(periods)
        selection = select_partition(
            panel, block_pool, cfg.selection_method, cfg.alpha, weighting,
            tol=tol, max_iter=max_iter,
        )
        chosen = selection.apply(block_pool)
        weights = gmm_sce(panel, chosen, weighting, tol=tol, max_iter=max_iter).weights
        assert weights is not None
        positions = [pool_roles.controls.index(j) for j in chosen.controls]
        return weights.expand(positions, pool_roles.n_controls)
    except (QPConvergenceError, np.linalg.LinAlgError, ValueError) as exc:
        logger.warning(f"subsample block starting at {periods[0]} excluded: {exc}")
        return None


def subsample_weights(
    panel: PanelData,
    roles: RoleAssignment,
    m: int,
    weighting: Weighting | str = Weighting.IDENTITY,
    cfg: Optional[SubsamplingConfig] = None,
    pool_roles: Optional[RoleAssignment] = None,
    threads: int = 1,
    blocks: Optional[Sequence[Sequence[int]]] = None,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> list[Optional[WeightVector]]:
    """GMM-SCE weights re-estimated on every contiguous block of ``m`` pre periods.

    Blocks with no outcome variation or failed estimation are ``None``. With
    ``pool_roles`` set, selection is re-run per block and weights are
    returned over the pool's controls. ``blocks`` overrides the contiguous
    blocks (used for i.i.d. subsampling).
    """
    cfg = cfg or SubsamplingConfig()
    pre = list(roles.pre_periods)
    if not 1 <= m <= len(pre):
        raise ValueError(f"subsample size m={m} must lie in [1, T0={len(pre)}]")
    if blocks is None:
        blocks = [pre[b : b + m] for b in range(len(pre) - m + 1)]
    rule = Weighting(weighting)

    def run(periods):
        return _block_weights(
            panel, roles, periods, rule, pool_roles, cfg, tol, max_iter
        )

    if threads > 1 and len(blocks) > 1:
        return list(
            Parallel(n_jobs=threads, prefer="threads")(
                delayed(run)(periods) for periods in blocks
            )
        )
    return [run(periods) for periods in blocks]


def _order_statistic(sorted_draws: np.ndarray, quantile: float) -> float:
    n = sorted_draws.size
    index = min(max(int(math.ceil(quantile * n)), 1), n)
    return float(sorted_draws[index - 1])


def subsampling_ci(
    panel: PanelData,
    roles: RoleAssignment,
    est: EstimationResult,
    cfg: Optional[SubsamplingConfig] = None,
    seed: SeedLike = 0,
    threads: int = 1,
    pool_roles: Optional[RoleAssignment] = None,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> ConfidenceInterval:
    """Confidence interval for the weighted-average effect of a GMM-SCE fit.

    ``pool_roles`` (controls = selection pool, instruments = other treated)
    is required when ``cfg.reselect_per_block`` is set.
    """
    cfg = cfg or SubsamplingConfig()
    if est.method is not EstimatorMethod.GMM or est.weights is None:
        raise ValueError("subsampling inference needs a GMM-SCE estimate")
    if not est.weights.on_simplex:
        raise ValueError("subsampling inference refuses unconstrained weights")
    if cfg.reselect_per_block and pool_roles is None:
        raise ValueError("re-selection per block needs the selection pool roles")

    weighting = Weighting(est.diagnostics.get("weighting", Weighting.IDENTITY.value))
    n_pre, n_post = roles.n_pre, roles.n_post
    m = cfg.block_length(n_pre)

    if cfg.reselect_per_block:
        assert pool_roles is not None
        reference_controls = list(pool_roles.controls)
        positions = [reference_controls.index(j) for j in roles.controls]
        w_hat = est.weights.expand(positions, len(reference_controls)).values
        reselect_roles: Optional[RoleAssignment] = pool_roles
    else:
        reference_controls = list(roles.controls)
        w_hat = est.weights.values
        reselect_roles = None

    index_rng = make_rng(seed, 0)
    draw_rng = make_rng(seed, 1)
    blocks: Optional[list[list[int]]] = None
    if cfg.iid_subsampling:
        pre = np.asarray(roles.pre_periods)
        count = cfg.n_iid_subsamples or (n_pre - m + 1)
        blocks = [
            sorted(int(t) for t in index_rng.choice(pre, size=m, replace=True))
            for _ in range(count)
        ]

    block_weights = subsample_weights(
        panel, roles, m, weighting, cfg, reselect_roles, threads, blocks, tol, max_iter
    )
    usable = [w.values for w in block_weights if w is not None]
    excluded = len(block_weights) - len(usable)
    if len(usable) < 2:
        raise ValueError(
            f"only {len(usable)} usable subsample block(s); reduce m (currently {m})"
        )
    deltas = np.vstack(usable) - w_hat

    sigma = estimate_sigma_v(est.effects, est.weighted_average, est.v, cfg.sigma_bandwidth)
    post = list(roles.post_periods)
    weighted_controls = panel.outcomes[np.ix_(reference_controls, post)] @ est.v

    uniforms = open_uniforms(draw_rng, (cfg.n_draws, 2))
    block_idx = np.minimum(
        (uniforms[:, 0] * len(usable)).astype(int), len(usable) - 1
    )
    s_star = math.sqrt(sigma) * stats.norm.ppf(uniforms[:, 1])
    draws = (
        -(weighted_controls @ deltas[block_idx].T) * math.sqrt(m) / math.sqrt(n_pre)
        + s_star / math.sqrt(n_post)
    )

    ordered = np.sort(draws)
    point = float(est.weighted_average)
    lower = point - _order_statistic(ordered, 1.0 - cfg.level / 2.0)
    upper = point - _order_statistic(ordered, cfg.level / 2.0)
    logger.debug(
        f"subsampling CI [{lower:.4f}, {upper:.4f}] from {len(usable)} blocks, m={m}"
    )
    return ConfidenceInterval(
        lower=lower,
        upper=upper,
        point=point,
        sigma_v_hat=sigma,
        draws=draws,
        level=cfg.level,
        m=m,
        n_blocks=len(usable),
        n_excluded_blocks=excluded,
        sigma_degenerate=sigma == 0.0,
        extra={
            "iid_subsampling": cfg.iid_subsampling,
            "reselect_per_block": cfg.reselect_per_block,
            "selection_method": cfg.selection_method
            if cfg.reselect_per_block
            else None,
        },
    )

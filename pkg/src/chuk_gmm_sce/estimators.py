#!/usr/bin/env python3
# src/chuk_gmm_sce/estimators.py
"""
Treatment-effect estimators.

All estimators return an :class:`EstimationResult` carrying per-period
effects over the post window, their ``v``-weighted average and the gap
series over every period.

* ``gmm_sce``: simplex weights minimising the instrument-moment objective
  (or the minimum-norm unconstrained minimiser)
* ``ols_sce``: simplex weights minimising pre-period MSE
* ``uniform_sce``: equal weights
* ``factor_estimator``: principal components on never-treated units
* ``powell_estimator``: alternating synthetic fits for every unit with
  goodness-of-fit weighted least squares
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .linalg_opt import (
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    Bandwidth,
    FactorFit,
    InputError,
    SimplexQP,
    WeightVector,
    min_norm_quadratic,
    solve_simplex_qp,
    svd_pca,
)
from .moments import (
    Weighting,
    as_simplex_qp,
    build_moment_system,
    gmm_objective,
    reweight_two_step,
)
from .panel import PanelData, RoleAssignment

logger = logging.getLogger(__name__)

SVT_MULTIPLIER = 2.858
POWELL_DENOMINATOR_FLOOR = 1e-12


class EstimatorMethod(str, Enum):
    GMM = "gmm"
    OLS = "ols"
    UNIFORM = "uniform"
    FACTOR = "factor"
    POWELL = "powell"


class EstimationError(RuntimeError):
    """An estimator's preconditions do not hold for the supplied roles."""


@dataclass(frozen=True)
class EstimationResult:
    method: EstimatorMethod
    roles: RoleAssignment
    weights: Optional[WeightVector]
    effects: np.ndarray
    weighted_average: float
    v: np.ndarray
    objective: float
    gap_series: np.ndarray
    synthetic: np.ndarray
    sh_statistic: Optional[float] = None
    factor_fit: Optional[FactorFit] = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, panel: PanelData) -> dict[str, Any]:
        """JSON-ready view keyed by unit and period ids."""
        roles = self.roles
        actual = panel.outcomes[roles.unit_of_interest]
        data: dict[str, Any] = {
            "method": self.method.value,
            "unit_of_interest": panel.unit_ids[roles.unit_of_interest],
            "controls": [panel.unit_ids[j] for j in roles.controls],
            "instruments": [panel.unit_ids[k] for k in roles.instruments],
            "pre_periods": [panel.period_ids[t] for t in roles.pre_periods],
            "post_periods": [panel.period_ids[t] for t in roles.post_periods],
            "weights": None,
            "on_simplex": None,
            "effects": {
                str(panel.period_ids[t]): float(e)
                for t, e in zip(roles.post_periods, self.effects)
            },
            "v": [float(x) for x in self.v],
            "weighted_average": float(self.weighted_average),
            "objective": float(self.objective),
            "sh_statistic": None
            if self.sh_statistic is None
            else float(self.sh_statistic),
            "gap_series": [
                {
                    "period": panel.period_ids[t],
                    "actual": float(actual[t]),
                    "synthetic": float(self.synthetic[t]),
                    "gap": float(self.gap_series[t]),
                }
                for t in range(panel.n_periods)
            ],
            "diagnostics": self.diagnostics,
        }
        if self.weights is not None:
            data["weights"] = {
                panel.unit_ids[j]: float(w)
                for j, w in zip(roles.controls, self.weights.values)
            }
            data["on_simplex"] = self.weights.on_simplex
        if self.factor_fit is not None:
            data["factor_rank"] = self.factor_fit.rank
        return data


def _resolve_v(v: Optional[Sequence[float] | np.ndarray], n_post: int) -> np.ndarray:
    if n_post < 1:
        raise EstimationError("no post-treatment periods")
    if v is None:
        return np.full(n_post, 1.0 / n_post)
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != n_post:
        raise InputError(f"v has {arr.size} entries for {n_post} post periods")
    if arr.min() < 0 or abs(arr.sum() - 1.0) > 1e-10:
        raise InputError("v must be non-negative and sum to one")
    return arr


def effects_and_average(
    weights: WeightVector | np.ndarray,
    panel: PanelData,
    roles: RoleAssignment,
    v: Optional[Sequence[float] | np.ndarray] = None,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Post-period effects, their v-weighted average and the full gap series."""
    w = weights.values if isinstance(weights, WeightVector) else np.asarray(weights)
    v_arr = _resolve_v(v, roles.n_post)
    synthetic = panel.outcomes[list(roles.controls)].T @ w
    gap = panel.outcomes[roles.unit_of_interest] - synthetic
    effects = gap[list(roles.post_periods)]
    return effects, float(v_arr @ effects), gap


def _pre_mse(panel: PanelData, roles: RoleAssignment, gap: np.ndarray) -> float:
    return float(np.mean(gap[list(roles.pre_periods)] ** 2))


def _check_roles(roles: RoleAssignment) -> None:
    if roles.n_controls == 0:
        raise EstimationError("estimator needs at least one control unit")
    if roles.n_pre == 0:
        raise EstimationError("estimator needs at least one pre-treatment period")


def _weight_result(
    method: EstimatorMethod,
    panel: PanelData,
    roles: RoleAssignment,
    weights: WeightVector,
    v: Optional[Sequence[float] | np.ndarray],
    objective: float,
    **extra: Any,
) -> EstimationResult:
    effects, average, gap = effects_and_average(weights, panel, roles, v)
    return EstimationResult(
        method=method,
        roles=roles,
        weights=weights,
        effects=effects,
        weighted_average=average,
        v=_resolve_v(v, roles.n_post),
        objective=objective,
        gap_series=gap,
        synthetic=panel.outcomes[roles.unit_of_interest] - gap,
        **extra,
    )


def gmm_sce(
    panel: PanelData,
    roles: RoleAssignment,
    weighting: Weighting | str = Weighting.IDENTITY,
    v: Optional[Sequence[float] | np.ndarray] = None,
    constrained: bool = True,
    custom_matrix: Optional[np.ndarray] = None,
    bandwidth: Bandwidth = "auto",
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> EstimationResult:
    """GMM synthetic control with instrument units.

    Two-step weighting solves once with the identity, re-weights by the
    inverse long-run variance of the moment contributions and solves once
    more.
    """
    _check_roles(roles)
    rule = Weighting(weighting)
    ms = build_moment_system(panel, roles, rule, custom_matrix)

    def solve(system) -> tuple[np.ndarray, Optional[bool]]:
        qp = as_simplex_qp(system)
        if constrained:
            sol = solve_simplex_qp(qp, tol=tol, max_iter=max_iter)
            return sol.weights.values, sol.unique
        return min_norm_quadratic(qp), None

    w, unique = solve(ms)
    if rule is Weighting.TWO_STEP:
        ms = reweight_two_step(ms, w, bandwidth)
        w, unique = solve(ms)

    weights = WeightVector(w) if constrained else WeightVector(w, on_simplex=False)
    objective = gmm_objective(ms, weights)
    support = len(weights.support)
    logger.debug(
        f"GMM-SCE support {support}/{roles.n_controls} controls with "
        f"{roles.n_instruments + 1} moments"
    )

    diagnostics: dict[str, Any] = {
        "weighting": rule.value,
        "constrained": constrained,
        "support_size": support,
        "n_moments": roles.n_instruments + 1,
    }
    if unique is not None:
        diagnostics["unique"] = unique
    if not constrained:
        diagnostics["weight_sum"] = float(np.sum(w))

    return _weight_result(
        EstimatorMethod.GMM,
        panel,
        roles,
        weights,
        v,
        objective,
        sh_statistic=ms.n_pre * objective,
        diagnostics=diagnostics,
    )


def ols_sce(
    panel: PanelData,
    roles: RoleAssignment,
    v: Optional[Sequence[float] | np.ndarray] = None,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> EstimationResult:
    """Simplex weights minimising pre-period mean squared error."""
    _check_roles(roles)
    pre = list(roles.pre_periods)
    C = panel.outcomes[np.ix_(list(roles.controls), pre)]
    y0 = panel.outcomes[roles.unit_of_interest, pre]
    n_pre = len(pre)
    qp = SimplexQP(C @ C.T / n_pre, C @ y0 / n_pre, float(y0 @ y0) / n_pre)
    sol = solve_simplex_qp(qp, tol=tol, max_iter=max_iter)
    result = _weight_result(
        EstimatorMethod.OLS, panel, roles, sol.weights, v, 0.0,
        diagnostics={"unique": sol.unique},
    )
    return _with_objective(result, _pre_mse(panel, roles, result.gap_series))


def uniform_sce(
    panel: PanelData,
    roles: RoleAssignment,
    v: Optional[Sequence[float] | np.ndarray] = None,
) -> EstimationResult:
    _check_roles(roles)
    weights = WeightVector.uniform(roles.n_controls)
    result = _weight_result(EstimatorMethod.UNIFORM, panel, roles, weights, v, 0.0)
    return _with_objective(result, _pre_mse(panel, roles, result.gap_series))


def _with_objective(result: EstimationResult, objective: float) -> EstimationResult:
    return replace(result, objective=objective)


def estimate_rank_svt(data: np.ndarray) -> int:
    """Number of singular values above 2.858 times the median singular value."""
    X = np.asarray(data, dtype=float)
    if X.size == 0:
        raise InputError("rank estimation needs a non-empty matrix")
    s = np.linalg.svd(np.atleast_2d(X), compute_uv=False)
    return rank_from_singular_values(s)


def rank_from_singular_values(singular_values: Sequence[float] | np.ndarray) -> int:
    s = np.asarray(singular_values, dtype=float)
    threshold = SVT_MULTIPLIER * float(np.median(s))
    return int(np.count_nonzero(s > threshold))


def factor_estimator(
    panel: PanelData,
    roles: RoleAssignment,
    v: Optional[Sequence[float] | np.ndarray] = None,
    rank: Optional[int] = None,
) -> EstimationResult:
    """Counterfactual from principal components of never-treated units.

    Factors come from never-treated units among the controls and instruments
    over every period; the unit of interest's loadings are fitted by least
    squares on the pre periods. Effects are ``Y0 - λ̂ μ̂0``.
    """
    pool = [
        i
        for i in (*roles.controls, *roles.instruments)
        if not panel.treated[i].any()
    ]
    if not pool:
        raise EstimationError("factor estimator needs never-treated units")
    block = panel.outcomes[pool]
    chosen_rank = estimate_rank_svt(block) if rank is None else int(rank)
    fit = svd_pca(block, chosen_rank)

    y0 = panel.outcomes[roles.unit_of_interest]
    pre = list(roles.pre_periods)
    if chosen_rank == 0:
        logger.warning("estimated factor rank is 0; counterfactual set to zero")
        counterfactual = np.zeros(panel.n_periods)
        loading = np.zeros(0)
    else:
        loading = np.linalg.lstsq(fit.factors[pre], y0[pre], rcond=None)[0]
        counterfactual = fit.factors @ loading

    gap = y0 - counterfactual
    v_arr = _resolve_v(v, roles.n_post)
    effects = gap[list(roles.post_periods)]
    return EstimationResult(
        method=EstimatorMethod.FACTOR,
        roles=roles,
        weights=None,
        effects=effects,
        weighted_average=float(v_arr @ effects),
        v=v_arr,
        objective=_pre_mse(panel, roles, gap),
        gap_series=gap,
        synthetic=counterfactual,
        factor_fit=fit,
        diagnostics={
            "rank": chosen_rank,
            "n_factor_units": len(pool),
            "unit_loading": [float(x) for x in loading],
        },
    )


def _powell_qp(
    Y: np.ndarray, Y_hat: np.ndarray, unit: int
) -> tuple[SimplexQP, np.ndarray]:
    """Moments of one unit's synthetic fit, other units' outcomes as instruments.

    For each other unit ``j`` the moment is
    ``mean_t Y_j (Y_i - sum_{h != i,j} W_h Y_h - W_j Ŷ_j)``.
    """
    others = np.array([j for j in range(Y.shape[0]) if j != unit])
    Z = Y[others]
    n_pre = Y.shape[1]
    B = Z @ Z.T / n_pre
    B[np.diag_indices_from(B)] = np.einsum("jt,jt->j", Z, Y_hat[others]) / n_pre
    c = Z @ Y[unit] / n_pre
    return SimplexQP(B.T @ B, B.T @ c, float(c @ c)), others


def update_estimated_units(
    Y: np.ndarray,
    weights: np.ndarray,
    fit_weights: np.ndarray,
    prior: np.ndarray,
) -> tuple[np.ndarray, list[int]]:
    """Closed-form update of the estimated units ``Ŷ``.

    ``weights[i, j]`` is unit ``i``'s synthetic weight on unit ``j`` (zero
    diagonal) and ``fit_weights`` the per-unit ``a_i``. Units whose
    denominator falls below 1e-12 keep their prior rows; their indices are
    returned.
    """
    n = Y.shape[0]
    synthetic = weights @ Y
    updated = prior.copy()
    skipped: list[int] = []
    for j in range(n):
        denominator = fit_weights[j] + float(
            sum(fit_weights[i] * weights[i, j] ** 2 for i in range(n) if i != j)
        )
        if denominator < POWELL_DENOMINATOR_FLOOR:
            skipped.append(j)
            continue
        numerator = fit_weights[j] * synthetic[j]
        for i in range(n):
            if i == j or weights[i, j] == 0.0:
                continue
            partial = Y[i] - (synthetic[i] - weights[i, j] * Y[j])
            numerator = numerator + fit_weights[i] * partial * weights[i, j]
        updated[j] = numerator / denominator
    return updated, skipped


def _powell_start_weights(initial: Optional[np.ndarray], n: int) -> np.ndarray:
    if initial is None:
        return (np.ones((n, n)) - np.eye(n)) / max(n - 1, 1)
    W = np.array(initial, dtype=float)
    if W.shape != (n, n) or not np.all(np.isfinite(W)):
        raise InputError(f"initial weights must be a finite {n}x{n} matrix")
    np.fill_diagonal(W, 0.0)
    if np.any(W < 0.0) or not np.allclose(W.sum(axis=1), 1.0, atol=1e-8):
        raise InputError("each row of the initial weights must lie on the simplex")
    return W


def powell_estimator(
    panel: PanelData,
    roles: RoleAssignment,
    v: Optional[Sequence[float] | np.ndarray] = None,
    n_iter: int = 10,
    fit_weight_mode: str = "objective",
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
    initial_weights: Optional[np.ndarray] = None,
    initial_fit_weights: Optional[Sequence[float] | np.ndarray] = None,
) -> EstimationResult:
    """Alternating synthetic fits for the unit of interest and every control.

    Each unit's weights are a simplex QP on moments built from the other
    units' outcomes with the current estimated units substituted. ``a_i`` is
    the minimised objective (``fit_weight_mode="objective"``) or its inverse
    (``"inverse"``). Effects come from one weighted least-squares regression
    pooling all units and periods with one treatment regressor per post
    period.

    Units are ordered as the unit of interest followed by the controls.
    ``initial_weights`` (one simplex row per unit, diagonal ignored) and
    ``initial_fit_weights`` replace the uniform starting values; the
    estimated units always start at the observed outcomes.
    """
    _check_roles(roles)
    if fit_weight_mode not in ("objective", "inverse"):
        raise InputError(f"unknown fit weight mode: {fit_weight_mode}")
    units = [roles.unit_of_interest, *roles.controls]
    n = len(units)
    pre = list(roles.pre_periods)
    post = list(roles.post_periods)
    Y_full = panel.outcomes[units]
    Y_pre = Y_full[:, pre]

    W = _powell_start_weights(initial_weights, n)
    a = (
        np.full(n, 1.0 / n)
        if initial_fit_weights is None
        else np.asarray(initial_fit_weights, dtype=float).reshape(-1)
    )
    if a.shape != (n,) or not np.all(np.isfinite(a)) or np.any(a < 0.0):
        raise InputError(f"initial fit weights must be {n} finite non-negative values")
    Y_hat = Y_pre.copy()
    fit_objectives = np.zeros(n)
    for i in range(n):
        qp, others = _powell_qp(Y_pre, Y_hat, i)
        fit_objectives[i] = max(qp.objective(W[i, others]), 0.0)
    skipped_total = 0

    for iteration in range(n_iter):
        Y_hat, skipped = update_estimated_units(Y_pre, W, a, Y_hat)
        if skipped:
            skipped_total += len(skipped)
            logger.warning(
                f"Powell iteration {iteration}: skipped estimated-unit update for "
                f"{len(skipped)} unit(s) with vanishing denominator"
            )
        W_next = np.zeros((n, n))
        a_next = np.zeros(n)
        for i in range(n):
            qp, others = _powell_qp(Y_pre, Y_hat, i)
            sol = solve_simplex_qp(qp, tol=tol, max_iter=max_iter)
            W_next[i, others] = sol.weights.values
            a_next[i] = max(sol.objective, 0.0)
        W = W_next
        fit_objectives = a_next
        a = a_next if fit_weight_mode == "objective" else 1.0 / (a_next + 1e-12)

    # Treatment only enters through the unit of interest's post periods.
    D = np.zeros((n, panel.n_periods))
    D[0, post] = 1.0
    y_resid = Y_full - W @ Y_full
    x_resid = D - W @ D

    v_arr = _resolve_v(v, roles.n_post)
    sqrt_a = np.sqrt(np.clip(a, 0.0, None))[:, None]
    design = np.zeros((n * panel.n_periods, len(post)))
    for s, t in enumerate(post):
        column = np.zeros((n, panel.n_periods))
        column[:, t] = x_resid[:, t]
        design[:, s] = (sqrt_a * column).reshape(-1)
    response = (sqrt_a * y_resid).reshape(-1)
    coefficients = np.linalg.lstsq(design, response, rcond=None)[0]

    gap = Y_full[0] - W[0] @ Y_full
    effects = np.empty(len(post))
    fallback = 0
    for s, t in enumerate(post):
        if float(np.sum(a * x_resid[:, t] ** 2)) <= POWELL_DENOMINATOR_FLOOR:
            effects[s] = gap[t]
            fallback += 1
        else:
            effects[s] = coefficients[s]
    if fallback:
        logger.warning(
            f"Powell regression degenerate in {fallback} post period(s); "
            "using the raw gap there"
        )

    pooled_den = float(np.sum(a[:, None] * x_resid**2))
    pooled = (
        float(np.sum(a[:, None] * x_resid * y_resid)) / pooled_den
        if pooled_den > POWELL_DENOMINATOR_FLOOR
        else float(np.mean(gap[post]))
    )

    weights = WeightVector.from_raw(W[0, 1:])
    return EstimationResult(
        method=EstimatorMethod.POWELL,
        roles=roles,
        weights=weights,
        effects=effects,
        weighted_average=float(v_arr @ effects),
        v=v_arr,
        objective=float(fit_objectives[0]),
        gap_series=gap,
        synthetic=W[0] @ Y_full,
        diagnostics={
            "iterations": n_iter,
            "fit_weight_mode": fit_weight_mode,
            "fit_weights": [float(x) for x in a],
            "fit_objectives": [float(x) for x in fit_objectives],
            "max_estimated_unit_gap": float(np.max(np.abs(Y_hat - Y_pre))),
            "pooled_effect": pooled,
            "skipped_updates": skipped_total,
            "regression_fallback_periods": fallback,
        },
    )

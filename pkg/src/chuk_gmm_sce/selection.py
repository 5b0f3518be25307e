#!/usr/bin/env python3
# src/chuk_gmm_sce/selection.py
"""
Partitioning never-treated units into controls and instruments.

Two procedures are provided:

* sequential downward testing over MSE-nested candidates, stopping at the
  first partition whose Sargan-Hansen statistic falls below the chi-squared
  critical value with ``max(1, K + 1 - J)`` degrees of freedom
* two-step selection, which moves every control with zero first-stage
  weight into the instrument set
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .linalg_opt import (
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    Bandwidth,
    solve_simplex_qp,
)
from .moments import (
    Weighting,
    as_simplex_qp,
    build_moment_system,
    reweight_two_step,
    sargan_hansen,
)
from .panel import PanelData, RoleAssignment

logger = logging.getLogger(__name__)


class SelectionMethod(str, Enum):
    SEQUENTIAL = "sequential"
    TWO_STEP = "two_step"

    @classmethod
    def parse(cls, value: "SelectionMethod | str") -> "SelectionMethod":
        """Accept ``two-step`` as written on the command line."""
        if isinstance(value, cls):
            return value
        return cls(str(value).replace("-", "_"))


@dataclass(frozen=True)
class PartitionCandidate:
    controls: tuple[int, ...]
    instruments: tuple[int, ...]
    sh_statistic: Optional[float] = None
    critical_value: Optional[float] = None

    @property
    def degrees_of_freedom(self) -> int:
        return max(1, len(self.instruments) + 1 - len(self.controls))

    @property
    def passed(self) -> Optional[bool]:
        if self.sh_statistic is None or self.critical_value is None:
            return None
        return self.sh_statistic < self.critical_value

    def to_dict(self, panel: PanelData) -> dict[str, Any]:
        return {
            "controls": [panel.unit_ids[j] for j in self.controls],
            "instruments": [panel.unit_ids[k] for k in self.instruments],
            "sh_statistic": self.sh_statistic,
            "critical_value": self.critical_value,
            "df": self.degrees_of_freedom,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class SelectionResult:
    chosen: PartitionCandidate
    trace: tuple[PartitionCandidate, ...]
    method: SelectionMethod
    no_pass: bool = False
    degenerate: bool = False
    details: dict[str, Any] = field(default_factory=dict)

    def apply(self, roles: RoleAssignment) -> RoleAssignment:
        """Roles with the chosen partition."""
        return roles.with_partition(self.chosen.controls, self.chosen.instruments)

    def to_dict(self, panel: PanelData) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "chosen": self.chosen.to_dict(panel),
            "no_pass": self.no_pass,
            "degenerate": self.degenerate,
            "trace": [c.to_dict(panel) for c in self.trace],
            "details": self.details,
        }


def chi2_quantile(df: int, prob: float) -> float:
    """Inverse chi-squared CDF."""
    if df < 1:
        raise ValueError("degrees of freedom must be at least 1")
    if not 0.0 < prob < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    return float(stats.chi2.ppf(prob, df))


def critical_value(alpha: float, n_controls: int, n_instruments: int) -> float:
    return chi2_quantile(max(1, n_instruments + 1 - n_controls), 1.0 - alpha)


def mse_ordering(
    panel: PanelData, roles: RoleAssignment, pool: Optional[Sequence[int]] = None
) -> list[int]:
    """Pool units sorted by pre-period MSE against the unit of interest."""
    pool = list(roles.controls if pool is None else pool)
    if roles.n_pre < 1:
        raise ValueError("MSE ordering needs at least one pre period")
    pre = list(roles.pre_periods)
    y0 = panel.outcomes[roles.unit_of_interest, pre]
    mse = {i: float(np.mean((y0 - panel.outcomes[i, pre]) ** 2)) for i in pool}
    return sorted(pool, key=lambda i: (mse[i], i))


def build_sequential_candidates(
    ordering: Sequence[int], other_treated: Sequence[int] = ()
) -> list[PartitionCandidate]:
    """Nested candidates: the n-th uses the first n ordered units as controls."""
    ordering = list(ordering)
    return [
        PartitionCandidate(
            controls=tuple(ordering[:n]),
            instruments=tuple(ordering[n:]) + tuple(other_treated),
        )
        for n in range(1, len(ordering) + 1)
    ]


def partition_statistic(
    panel: PanelData,
    roles: RoleAssignment,
    weighting: Weighting | str = Weighting.IDENTITY,
    bandwidth: Bandwidth = "auto",
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> float:
    """Sargan-Hansen statistic of one partition with the estimator's weighting."""
    rule = Weighting(weighting)
    ms = build_moment_system(panel, roles, rule)
    if rule is Weighting.TWO_STEP:
        first = solve_simplex_qp(as_simplex_qp(ms), tol=tol, max_iter=max_iter)
        ms = reweight_two_step(ms, first.weights, bandwidth)
    statistic, _ = sargan_hansen(ms, tol=tol, max_iter=max_iter)
    return statistic


def _evaluate(
    panel: PanelData,
    roles: RoleAssignment,
    candidate: PartitionCandidate,
    alpha: float,
    weighting: Weighting,
    bandwidth: Bandwidth,
    tol: float,
    max_iter: int,
) -> PartitionCandidate:
    statistic = partition_statistic(
        panel,
        roles.with_partition(candidate.controls, candidate.instruments),
        weighting,
        bandwidth,
        tol,
        max_iter,
    )
    return PartitionCandidate(
        candidate.controls,
        candidate.instruments,
        sh_statistic=statistic,
        critical_value=critical_value(
            alpha, len(candidate.controls), len(candidate.instruments)
        ),
    )


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def sequential_select(
    panel: PanelData,
    roles: RoleAssignment,
    alpha: float = 0.05,
    weighting: Weighting | str = Weighting.IDENTITY,
    pool: Optional[Sequence[int]] = None,
    other_treated: Optional[Sequence[int]] = None,
    bandwidth: Bandwidth = "auto",
    threads: int = 1,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> SelectionResult:
    """Downward testing over MSE-nested partitions.

    ``pool`` defaults to the roles' controls and ``other_treated`` to its
    instruments. With ``threads > 1`` every candidate is evaluated up front;
    the trace still stops at the chosen candidate.
    """
    _check_alpha(alpha)
    rule = Weighting(weighting)
    pool = list(roles.controls if pool is None else pool)
    other = list(roles.instruments if other_treated is None else other_treated)
    candidates = build_sequential_candidates(mse_ordering(panel, roles, pool), other)

    args = (alpha, rule, bandwidth, tol, max_iter)
    trace: list[PartitionCandidate] = []
    if threads > 1 and len(candidates) > 1:
        evaluated = Parallel(n_jobs=threads, prefer="threads")(
            delayed(_evaluate)(panel, roles, c, *args) for c in candidates
        )
        for candidate in evaluated:
            trace.append(candidate)
            if candidate.passed:
                break
    else:
        for c in candidates:
            candidate = _evaluate(panel, roles, c, *args)
            trace.append(candidate)
            if candidate.passed:
                break

    chosen = trace[-1]
    no_pass = not chosen.passed
    if no_pass:
        logger.warning(
            "no candidate partition passed the Sargan-Hansen test; "
            "falling back to all pool units as controls"
        )
    logger.debug(
        f"sequential selection chose {len(chosen.controls)} controls after "
        f"{len(trace)} test(s)"
    )
    return SelectionResult(
        chosen=chosen,
        trace=tuple(trace),
        method=SelectionMethod.SEQUENTIAL,
        no_pass=no_pass,
        details={"alpha": alpha, "weighting": rule.value},
    )


def two_step_select(
    panel: PanelData,
    roles: RoleAssignment,
    weighting: Weighting | str = Weighting.IDENTITY,
    pool: Optional[Sequence[int]] = None,
    other_treated: Optional[Sequence[int]] = None,
    alpha: float = 0.05,
    bandwidth: Bandwidth = "auto",
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> SelectionResult:
    """Move zero-weight first-stage controls into the instrument set.

    Stage 1 estimates with every pool unit as a control and the other
    treated units as instruments. Stage 2 keeps the support as controls.
    """
    _check_alpha(alpha)
    rule = Weighting(weighting)
    pool = list(roles.controls if pool is None else pool)
    other = list(roles.instruments if other_treated is None else other_treated)
    if not pool:
        raise ValueError("two-step selection needs a non-empty pool")
    if not other:
        logger.warning(
            "two-step selection without other treated units; "
            "first stage uses the mean moment only"
        )

    stage1_roles = roles.with_partition(pool, other)
    ms = build_moment_system(panel, stage1_roles, rule)
    first = solve_simplex_qp(as_simplex_qp(ms), tol=tol, max_iter=max_iter)
    weights = first.weights
    if rule is Weighting.TWO_STEP:
        ms = reweight_two_step(ms, weights, bandwidth)
        weights = solve_simplex_qp(as_simplex_qp(ms), tol=tol, max_iter=max_iter).weights

    support = weights.support
    degenerate = len(support) == 0
    if degenerate:
        support = (int(np.argmax(weights.values)),)
        logger.warning("first-stage weights have empty support; keeping largest")

    controls = tuple(pool[i] for i in support)
    moved = tuple(u for u in pool if u not in set(controls))
    instruments = moved + tuple(other)

    args = (alpha, rule, bandwidth, tol, max_iter)
    stage1 = _evaluate(panel, roles, PartitionCandidate(tuple(pool), tuple(other)), *args)
    stage2 = _evaluate(panel, roles, PartitionCandidate(controls, instruments), *args)
    logger.debug(
        f"two-step selection kept {len(controls)} of {len(pool)} pool units as controls"
    )
    return SelectionResult(
        chosen=stage2,
        trace=(stage1, stage2),
        method=SelectionMethod.TWO_STEP,
        degenerate=degenerate,
        details={
            "weighting": rule.value,
            "stage1_weights": [float(w) for w in weights.values],
        },
    )


def select_partition(
    panel: PanelData,
    roles: RoleAssignment,
    method: SelectionMethod | str,
    alpha: float = 0.05,
    weighting: Weighting | str = Weighting.IDENTITY,
    bandwidth: Bandwidth = "auto",
    threads: int = 1,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> SelectionResult:
    """Dispatch to the named selection procedure with the roles as pool."""
    chosen = SelectionMethod.parse(method)
    if chosen is SelectionMethod.SEQUENTIAL:
        return sequential_select(
            panel, roles, alpha, weighting, bandwidth=bandwidth, threads=threads,
            tol=tol, max_iter=max_iter,
        )
    return two_step_select(
        panel, roles, weighting, alpha=alpha, bandwidth=bandwidth,
        tol=tol, max_iter=max_iter,
    )

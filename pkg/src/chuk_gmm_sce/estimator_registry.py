#!/usr/bin/env python3
# src/chuk_gmm_sce/estimator_registry.py
"""
Named estimator suites for simulation studies, with allow/deny filtering.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .estimators import (
    EstimationResult,
    factor_estimator,
    gmm_sce,
    ols_sce,
    powell_estimator,
    uniform_sce,
)
from .linalg_opt import DEFAULT_QP_MAX_ITER, DEFAULT_QP_TOL, Bandwidth
from .moments import Weighting
from .panel import PanelData, RoleAssignment
from .selection import SelectionMethod, select_partition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyContext:
    """Everything an estimator suite sees for one replication.

    ``roles.controls`` is the never-treated pool and ``roles.instruments`` the
    other treated units. ``truth`` is the simulation's true effect path.
    """

    panel: PanelData
    roles: RoleAssignment
    alpha: float = 0.05
    weighting: Weighting = Weighting.IDENTITY
    selection_method: SelectionMethod = SelectionMethod.SEQUENTIAL
    bandwidth: Bandwidth = "auto"
    powell_iterations: int = 10
    tol: float = DEFAULT_QP_TOL
    max_iter: int = DEFAULT_QP_MAX_ITER
    truth: Optional[np.ndarray] = None


EstimatorRun = Callable[[StudyContext], "EstimationResult | np.ndarray"]


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    description: str
    category: str
    run: EstimatorRun


def _selected_gmm(method: SelectionMethod) -> EstimatorRun:
    def run(ctx: StudyContext) -> EstimationResult:
        selection = select_partition(
            ctx.panel,
            ctx.roles,
            method,
            alpha=ctx.alpha,
            weighting=ctx.weighting,
            bandwidth=ctx.bandwidth,
            tol=ctx.tol,
            max_iter=ctx.max_iter,
        )
        return gmm_sce(
            ctx.panel,
            selection.apply(ctx.roles),
            ctx.weighting,
            bandwidth=ctx.bandwidth,
            tol=ctx.tol,
            max_iter=ctx.max_iter,
        )

    return run


def _unconstrained_gmm(ctx: StudyContext) -> EstimationResult:
    return gmm_sce(
        ctx.panel,
        ctx.roles,
        ctx.weighting,
        constrained=False,
        bandwidth=ctx.bandwidth,
        tol=ctx.tol,
        max_iter=ctx.max_iter,
    )


def _ols(ctx: StudyContext) -> EstimationResult:
    return ols_sce(ctx.panel, ctx.roles, tol=ctx.tol, max_iter=ctx.max_iter)


def _uniform(ctx: StudyContext) -> EstimationResult:
    return uniform_sce(ctx.panel, ctx.roles)


def _factor(ctx: StudyContext) -> EstimationResult:
    return factor_estimator(ctx.panel, ctx.roles)


def _powell(ctx: StudyContext) -> EstimationResult:
    return powell_estimator(
        ctx.panel,
        ctx.roles.with_partition(ctx.roles.controls, ()),
        n_iter=ctx.powell_iterations,
        tol=ctx.tol,
        max_iter=ctx.max_iter,
    )


BUILTIN_ESTIMATORS: tuple[EstimatorSpec, ...] = (
    EstimatorSpec("ols", "Simplex weights minimising pre-period MSE", "sce", _ols),
    EstimatorSpec("uniform", "Equal weights on every pool unit", "sce", _uniform),
    EstimatorSpec(
        "gmm-sequential",
        "GMM-SCE after sequential downward testing",
        "gmm",
        _selected_gmm(SelectionMethod.SEQUENTIAL),
    ),
    EstimatorSpec(
        "gmm-two-step",
        "GMM-SCE after two-step zero-weight selection",
        "gmm",
        _selected_gmm(SelectionMethod.TWO_STEP),
    ),
    EstimatorSpec(
        "gmm-unconstrained",
        "Minimum-norm GMM with the other treated units as instruments",
        "gmm",
        _unconstrained_gmm,
    ),
    EstimatorSpec("factor", "Principal-components counterfactual", "factor", _factor),
    EstimatorSpec("powell", "Alternating synthetic fits with WLS effects", "iterative", _powell),
)

ALIASES = {"gmm": "gmm-sequential"}


class EstimatorRegistry:
    """Estimator suites available to a study, filtered by name and category."""

    def __init__(
        self,
        allowlist: Optional[Sequence[str]] = None,
        denylist: Optional[Sequence[str]] = None,
        category_allowlist: Optional[Sequence[str]] = None,
        category_denylist: Optional[Sequence[str]] = None,
        include_builtins: bool = True,
    ):
        self.allowlist = [self.canonical(n) for n in allowlist or []]
        self.denylist = [self.canonical(n) for n in denylist or []]
        self.category_allowlist = list(category_allowlist or [])
        self.category_denylist = list(category_denylist or [])
        self._extra: dict[str, EstimatorSpec] = {}
        self._include_builtins = include_builtins
        self._all_estimators: Optional[dict[str, EstimatorSpec]] = None
        self._filtered_estimators: Optional[dict[str, EstimatorSpec]] = None

    @staticmethod
    def canonical(name: str) -> str:
        key = name.strip().lower().replace("_", "-")
        return ALIASES.get(key, key)

    def register(
        self,
        name: str,
        run: EstimatorRun,
        description: str = "",
        category: str = "custom",
    ) -> EstimatorSpec:
        """Add a user estimator; replaces any suite of the same name."""
        key = self.canonical(name)
        spec = EstimatorSpec(key, description or f"user estimator {key}", category, run)
        self._extra[key] = spec
        self.reset_cache()
        logger.debug(f"registered estimator '{key}' in category '{category}'")
        return spec

    def get_all_estimators(self) -> dict[str, EstimatorSpec]:
        if self._all_estimators is None:
            estimators = (
                {spec.name: spec for spec in BUILTIN_ESTIMATORS}
                if self._include_builtins
                else {}
            )
            estimators.update(self._extra)
            self._all_estimators = estimators
        return self._all_estimators

    def get_filtered_estimators(self) -> dict[str, EstimatorSpec]:
        if self._filtered_estimators is None:
            everything = self.get_all_estimators()
            self._filtered_estimators = {
                name: spec
                for name, spec in everything.items()
                if self._should_include(spec)
            }
            logger.debug(
                f"filtered {len(everything)} estimators down to "
                f"{len(self._filtered_estimators)}"
            )
        return self._filtered_estimators

    def _should_include(self, spec: EstimatorSpec) -> bool:
        if self.allowlist and spec.name not in self.allowlist:
            return False
        if spec.name in self.denylist:
            return False
        if self.category_allowlist and spec.category not in self.category_allowlist:
            return False
        return spec.category not in self.category_denylist

    def resolve(self, names: Sequence[str]) -> list[EstimatorSpec]:
        """Specs for ``names`` in order; unknown or filtered names raise ``KeyError``."""
        available = self.get_filtered_estimators()
        resolved = []
        for name in names:
            key = self.canonical(name)
            if key not in available:
                known = ", ".join(sorted(available)) or "none"
                raise KeyError(f"unknown or filtered estimator '{name}' (available: {known})")
            resolved.append(available[key])
        return resolved

    def get_registry_stats(self) -> dict[str, Any]:
        everything = self.get_all_estimators()
        filtered = self.get_filtered_estimators()

        def by_category(specs: dict[str, EstimatorSpec]) -> dict[str, int]:
            counts: dict[str, int] = {}
            for spec in specs.values():
                counts[spec.category] = counts.get(spec.category, 0) + 1
            return counts

        total = len(everything)
        return {
            "total_available": total,
            "total_filtered": len(filtered),
            "filter_ratio": len(filtered) / total if total else 0,
            "categories_available": by_category(everything),
            "categories_filtered": by_category(filtered),
            "filtering_active": bool(
                self.allowlist
                or self.denylist
                or self.category_allowlist
                or self.category_denylist
            ),
        }

    def reset_cache(self):
        self._all_estimators = None
        self._filtered_estimators = None

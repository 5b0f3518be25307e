#!/usr/bin/env python3
# src/chuk_gmm_sce/simlab.py
"""
Placebo-study runner.

Every replication assigns treatment, samples never-treated units, simulates
a panel from a fitted DGP and scores each estimator suite against the true
effects. Replications are keyed by ``(never-treated count, rep)`` and share
one simulated path across pre-period lengths.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .dgp import FittedDGP, assign_treatment, simulate_panel
from .estimator_registry import EstimatorRegistry, EstimatorSpec, StudyContext
from .estimators import EstimationResult
from .linalg_opt import in_convex_hull
from .moments import Weighting
from .panel import RoleAssignment
from .seeding import SeedLike, make_rng, seed_sequence
from .selection import SelectionMethod
from .study_config import StudyDesign

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "pre_periods",
    "n_never_treated",
    "estimator",
    "bias_magnitude",
    "mse_alpha_t",
    "mse_alpha_bar",
    "feasibility_rate",
    "replications",
    "failures",
]


@dataclass(frozen=True)
class RepOutcome:
    """One estimator's errors in one replication (``None`` when it failed)."""

    pre_periods: int
    n_never_treated: int
    rep: int
    estimator: str
    feasible: bool
    mean_error: Optional[float]
    mean_squared_error: Optional[float]
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "pre_periods": self.pre_periods,
            "n_never_treated": self.n_never_treated,
            "rep": self.rep,
            "estimator": self.estimator,
            "feasible": self.feasible,
            "mean_error": self.mean_error,
            "mean_squared_error": self.mean_squared_error,
            "error": self.error,
        }


@dataclass(frozen=True)
class SimCell:
    pre_periods: int
    n_never_treated: int
    estimator: str
    bias_magnitude: float
    mse_alpha_t: float
    mse_alpha_bar: float
    feasibility_rate: float
    replications: int
    failures: int

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in REPORT_COLUMNS}


@dataclass(frozen=True)
class SimReport:
    cells: tuple[SimCell, ...]
    design: dict[str, Any]
    seed: int
    details: tuple[RepOutcome, ...] = field(default_factory=tuple)

    def cell(self, pre_periods: int, n_never_treated: int, estimator: str) -> SimCell:
        for c in self.cells:
            if (c.pre_periods, c.n_never_treated, c.estimator) == (
                pre_periods,
                n_never_treated,
                estimator,
            ):
                return c
        raise KeyError(f"no cell ({pre_periods}, {n_never_treated}, {estimator})")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_dict() for c in self.cells], columns=REPORT_COLUMNS)

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")

    def to_dict(self, include_details: bool = False) -> dict[str, Any]:
        data: dict[str, Any] = {
            "seed": self.seed,
            "design": self.design,
            "cells": [c.to_dict() for c in self.cells],
        }
        if include_details:
            data["replications"] = [d.to_dict() for d in self.details]
        return data


def _effects_of(result: "EstimationResult | np.ndarray", n_post: int) -> np.ndarray:
    effects = result.effects if isinstance(result, EstimationResult) else result
    effects = np.asarray(effects, dtype=float).reshape(-1)
    if effects.size != n_post:
        raise ValueError(f"estimator returned {effects.size} effects, expected {n_post}")
    if not np.all(np.isfinite(effects)):
        raise ValueError("estimator returned non-finite effects")
    return effects


def _run_replication(
    dgp: FittedDGP,
    design: StudyDesign,
    specs: Sequence[EstimatorSpec],
    seed: SeedLike,
    n_never: int,
    rep: int,
    labels: Optional[np.ndarray],
    true_effects: Optional[np.ndarray],
) -> list[RepOutcome]:
    rep_seed = seed_sequence(seed, n_never, rep)
    assignment = assign_treatment(
        dgp, design.n_other_treated + 1, design.assignment, labels, seed=rep_seed
    )
    treated = set(assignment.treated_units)
    remaining = np.array([u for u in range(dgp.n_units) if u not in treated])
    pool = tuple(
        sorted(int(u) for u in make_rng(rep_seed, 3).choice(remaining, n_never, replace=False))
    )
    interest = assignment.unit_of_interest
    feasible, _ = in_convex_hull(
        dgp.loadings[:, interest], dgp.loadings[:, list(pool)].T, design.feasibility_tol
    )

    outcomes: list[RepOutcome] = []
    for n_pre in design.pre_periods:
        panel, truth = simulate_panel(
            dgp,
            n_pre,
            design.post_periods,
            true_effects,
            seed=rep_seed,
            unit_of_interest=interest,
            treated_units=assignment.treated_units,
            path_length=design.path_length,
        )
        roles = RoleAssignment(
            unit_of_interest=interest,
            controls=pool,
            instruments=assignment.other_treated,
            pre_periods=tuple(range(n_pre)),
            post_periods=tuple(range(n_pre, n_pre + design.post_periods)),
        )
        ctx = StudyContext(
            panel=panel,
            roles=roles,
            alpha=design.alpha,
            weighting=Weighting(design.weighting),
            selection_method=SelectionMethod.parse(design.selection_method),
            bandwidth=design.bandwidth,
            powell_iterations=design.powell_iterations,
            truth=truth.effects,
        )
        for spec in specs:
            try:
                errors = _effects_of(spec.run(ctx), design.post_periods) - truth.effects
            except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
                logger.warning(
                    f"{spec.name} failed in rep {rep} (T0={n_pre}, N0={n_never}): {exc}"
                )
                outcomes.append(
                    RepOutcome(n_pre, n_never, rep, spec.name, feasible, None, None, str(exc))
                )
                continue
            outcomes.append(
                RepOutcome(
                    n_pre,
                    n_never,
                    rep,
                    spec.name,
                    feasible,
                    math.fsum(errors) / errors.size,
                    math.fsum(errors**2) / errors.size,
                )
            )
    return outcomes


def _summarise(
    design: StudyDesign, specs: Sequence[EstimatorSpec], outcomes: Sequence[RepOutcome]
) -> tuple[SimCell, ...]:
    cells = []
    for n_never in design.n_never_treated:
        for n_pre in design.pre_periods:
            in_cell = [o for o in outcomes if (o.pre_periods, o.n_never_treated) == (n_pre, n_never)]
            for spec in specs:
                rows = sorted((o for o in in_cell if o.estimator == spec.name), key=lambda o: o.rep)
                ok = [o for o in rows if o.mean_error is not None]
                feasibility = math.fsum(float(o.feasible) for o in rows) / len(rows)
                if ok:
                    bias = abs(math.fsum(o.mean_error for o in ok) / len(ok))  # type: ignore[misc]
                    mse_t = math.fsum(o.mean_squared_error for o in ok) / len(ok)  # type: ignore[misc]
                    mse_bar = math.fsum(o.mean_error**2 for o in ok) / len(ok)  # type: ignore[operator]
                else:
                    bias = mse_t = mse_bar = math.nan
                cells.append(
                    SimCell(
                        pre_periods=n_pre,
                        n_never_treated=n_never,
                        estimator=spec.name,
                        bias_magnitude=bias,
                        mse_alpha_t=mse_t,
                        mse_alpha_bar=mse_bar,
                        feasibility_rate=feasibility,
                        replications=len(ok),
                        failures=len(rows) - len(ok),
                    )
                )
    return tuple(cells)


def run_study(
    dgp: FittedDGP,
    design: StudyDesign,
    seed: int = 0,
    threads: int = 1,
    registry: Optional[EstimatorRegistry] = None,
    labels: Optional[Sequence[int] | np.ndarray] = None,
    true_effects: Optional[Sequence[float] | np.ndarray] = None,
) -> SimReport:
    """Run every design cell and estimator; results do not depend on ``threads``.

    Estimator failures in a replication are logged, counted in ``failures``
    and excluded from that cell's metrics.
    """
    design.check_against(dgp.n_units)
    registry = registry or EstimatorRegistry(denylist=design.estimator_denylist)
    specs = registry.resolve(design.estimators)
    label_arr = None if labels is None else np.asarray(labels, dtype=int)
    effects = None if true_effects is None else np.asarray(true_effects, dtype=float)

    tasks = [(n, r) for n in design.n_never_treated for r in range(design.replications)]
    logger.info(
        f"running {len(tasks)} replication path(s) over {len(design.pre_periods)} "
        f"pre-period length(s) with {len(specs)} estimator(s)"
    )

    def run(task: tuple[int, int]) -> list[RepOutcome]:
        n_never, rep = task
        return _run_replication(dgp, design, specs, seed, n_never, rep, label_arr, effects)

    if threads > 1 and len(tasks) > 1:
        batches = Parallel(n_jobs=threads, prefer="threads")(delayed(run)(t) for t in tasks)
    else:
        batches = [run(t) for t in tasks]
    outcomes = [o for batch in batches for o in batch]

    failures = sum(o.error is not None for o in outcomes)
    if failures:
        logger.warning(f"{failures} estimator run(s) failed and were excluded")
    return SimReport(
        cells=_summarise(design, specs, outcomes),
        design=design.model_dump(mode="json"),
        seed=seed,
        details=tuple(outcomes) if design.detail else (),
    )

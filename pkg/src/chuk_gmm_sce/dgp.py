#!/usr/bin/env python3
# src/chuk_gmm_sce/dgp.py
"""
Linear factor data-generating processes for placebo studies.

A DGP is fitted to an untreated panel by principal components; each factor
gets an AR(p) model on levels or first differences chosen by AIC, and each
unit keeps its residual variance. Simulation resamples factors from those
AR models and adds independent normal shocks.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from statsmodels.tsa.ar_model import AutoReg
from statsmodels.tsa.arima_process import arma_acovf, arma_generate_sample

from .estimators import estimate_rank_svt
from .linalg_opt import svd_pca
from .panel import PanelData
from .seeding import SeedLike, make_rng

logger = logging.getLogger(__name__)

MAX_AR_ORDER = 5
BURN_IN = 200
LOGISTIC_RIDGE = 1e-6
LOGISTIC_MAX_ITER = 100


class TreatmentAssignmentError(RuntimeError):
    """The treatment-probability model did not converge."""


class AssignmentMode(str, Enum):
    UNIFORM = "uniform"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class FactorProcess:
    """AR(p) model for a factor, on levels (``d=0``) or first differences (``d=1``)."""

    order: int
    diff: int
    const: float
    coefficients: tuple[float, ...]
    sigma2: float
    initial_level: float = 0.0
    aic: Optional[float] = None

    def __post_init__(self):
        if self.diff not in (0, 1):
            raise ValueError("differencing order must be 0 or 1")
        if len(self.coefficients) != self.order:
            raise ValueError("coefficient count must equal the AR order")
        if self.sigma2 < 0:
            raise ValueError("innovation variance must be non-negative")
        object.__setattr__(
            self, "coefficients", tuple(float(c) for c in self.coefficients)
        )

    @property
    def ar_polynomial(self) -> np.ndarray:
        return np.r_[1.0, -np.asarray(self.coefficients, dtype=float)]

    @property
    def mean(self) -> float:
        """Mean of the stationary component (the drift when ``d=1``)."""
        return self.const / (1.0 - float(sum(self.coefficients)))

    def is_stationary(self) -> bool:
        if self.order == 0:
            return True
        roots = np.roots(self.ar_polynomial[::-1])
        return bool(np.all(np.abs(roots) > 1.0))

    def stationary_variance(self) -> float:
        """Unconditional variance of the stationary component."""
        if not self.is_stationary():
            return math.inf
        return float(arma_acovf(self.ar_polynomial, [1.0], nobs=1, sigma2=self.sigma2)[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "order": self.order,
            "diff": self.diff,
            "const": self.const,
            "coefficients": list(self.coefficients),
            "sigma2": self.sigma2,
            "initial_level": self.initial_level,
            "aic": self.aic,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FactorProcess":
        return cls(
            order=int(data["order"]),
            diff=int(data["diff"]),
            const=float(data["const"]),
            coefficients=tuple(data.get("coefficients", ())),
            sigma2=float(data["sigma2"]),
            initial_level=float(data.get("initial_level", 0.0)),
            aic=data.get("aic"),
        )


@dataclass(frozen=True)
class FittedDGP:
    """Fixed loadings, per-factor AR models and per-unit shock variances."""

    loadings: np.ndarray
    factor_processes: tuple[FactorProcess, ...]
    shock_variances: np.ndarray
    unit_ids: tuple[str, ...]

    def __post_init__(self):
        loadings = np.array(self.loadings, dtype=float, ndmin=2)
        if loadings.size == 0:
            loadings = np.zeros((len(self.factor_processes), len(self.unit_ids)))
        shocks = np.array(self.shock_variances, dtype=float).reshape(-1)
        if loadings.shape != (len(self.factor_processes), len(self.unit_ids)):
            raise ValueError("loadings must be rank x units")
        if shocks.size != len(self.unit_ids):
            raise ValueError("one shock variance per unit is required")
        if np.any(shocks < 0):
            raise ValueError("shock variances must be non-negative")
        loadings.flags.writeable = False
        shocks.flags.writeable = False
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "shock_variances", shocks)
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "factor_processes", tuple(self.factor_processes))

    @property
    def rank(self) -> int:
        return len(self.factor_processes)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rank": self.rank,
            "unit_ids": list(self.unit_ids),
            "loadings": self.loadings.tolist(),
            "shock_variances": self.shock_variances.tolist(),
            "factor_processes": [p.to_dict() for p in self.factor_processes],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FittedDGP":
        processes = tuple(FactorProcess.from_dict(p) for p in data["factor_processes"])
        if int(data.get("rank", len(processes))) != len(processes):
            raise ValueError("rank does not match the number of factor processes")
        return cls(
            loadings=np.asarray(data["loadings"], dtype=float),
            factor_processes=processes,
            shock_variances=np.asarray(data["shock_variances"], dtype=float),
            unit_ids=tuple(data["unit_ids"]),
        )


@dataclass(frozen=True)
class SimulationTruth:
    """What the simulated panel was generated from."""

    effects: np.ndarray
    average_effect: float
    factors: np.ndarray
    unit_of_interest: int
    treated_units: tuple[int, ...]
    n_pre: int
    n_post: int


@dataclass(frozen=True)
class TreatmentAssignment:
    treated_units: tuple[int, ...]
    unit_of_interest: int
    probabilities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def other_treated(self) -> tuple[int, ...]:
        return tuple(u for u in self.treated_units if u != self.unit_of_interest)


def _random_walk(series: np.ndarray) -> FactorProcess:
    steps = np.diff(series)
    sigma2 = float(np.var(steps, ddof=1)) if steps.size > 1 else 0.0
    return FactorProcess(
        order=0,
        diff=1,
        const=0.0,
        coefficients=(),
        sigma2=sigma2,
        initial_level=float(series[-1]) if series.size else 0.0,
    )


def fit_factor_process(
    series: Sequence[float] | np.ndarray, max_order: int = MAX_AR_ORDER
) -> FactorProcess:
    """AIC choice over AR orders ``0..max_order`` and ``d`` in ``{0, 1}``.

    Every candidate is fitted by conditional least squares on the same
    effective sample so AIC values are comparable. Non-stationary fits are
    discarded; if nothing survives the factor becomes a random walk.
    """
    z = np.asarray(series, dtype=float).reshape(-1)
    best: Optional[FactorProcess] = None
    for diff in (0, 1):
        data = np.diff(z) if diff else z
        hold_back = max_order if diff else max_order + 1
        for order in range(max_order + 1):
            if data.size - hold_back < order + 3:
                continue
            try:
                res = AutoReg(
                    data, lags=order or None, trend="c", hold_back=hold_back
                ).fit()
            except (ValueError, np.linalg.LinAlgError) as exc:
                logger.debug(f"AR({order}) d={diff} fit failed: {exc}")
                continue
            params = np.asarray(res.params, dtype=float)
            candidate = FactorProcess(
                order=order,
                diff=diff,
                const=float(params[0]),
                coefficients=tuple(params[1:]),
                sigma2=float(res.sigma2),
                initial_level=float(z[-1]),
                aic=float(res.aic),
            )
            if not candidate.is_stationary():
                continue
            if best is None or candidate.aic < best.aic:  # type: ignore[operator]
                best = candidate

    if best is None:
        logger.warning(
            "no stationary AR fit for factor; falling back to a random walk"
        )
        return _random_walk(z)
    logger.debug(f"factor model AR({best.order}) d={best.diff} aic={best.aic:.3f}")
    return best


def fit_dgp(panel: PanelData, rank: int | Literal["auto"] = "auto") -> FittedDGP:
    """Fit loadings, factor AR models and shock variances to an untreated panel.

    Periods from the first treated cell onwards are dropped.
    """
    treated_periods = np.flatnonzero(panel.treated.any(axis=0))
    n_periods = int(treated_periods[0]) if treated_periods.size else panel.n_periods
    if n_periods < 2:
        raise ValueError("DGP fitting needs at least two untreated periods")
    if n_periods < panel.n_periods:
        logger.warning(
            f"fitting DGP on the {n_periods} periods before the first treatment"
        )
    data = panel.outcomes[:, :n_periods]

    chosen_rank = estimate_rank_svt(data) if rank == "auto" else int(rank)
    fit = svd_pca(data, chosen_rank)
    if chosen_rank == 0:
        logger.warning("estimated factor rank is 0; DGP is pure noise")
    processes = tuple(fit_factor_process(fit.factors[:, f]) for f in range(chosen_rank))
    logger.debug(f"fitted DGP with rank {chosen_rank} on {panel.n_units} units")
    return FittedDGP(
        loadings=fit.loadings,
        factor_processes=processes,
        shock_variances=fit.residual_variances,
        unit_ids=panel.unit_ids,
    )


def simulate_factor(
    process: FactorProcess,
    n_periods: int,
    rng: np.random.Generator,
    burn_in: int = BURN_IN,
) -> np.ndarray:
    """One factor path with Gaussian innovations; the burn-in is discarded."""
    ma = [1.0]
    path = arma_generate_sample(
        process.ar_polynomial,
        ma,
        n_periods,
        scale=math.sqrt(process.sigma2),
        distrvs=rng.standard_normal,
        burnin=burn_in,
    )
    path = np.asarray(path, dtype=float) + process.mean
    if process.diff:
        path = process.initial_level + np.cumsum(path)
    return path


def simulate_panel(
    dgp: FittedDGP,
    n_pre: int,
    n_post: int,
    true_effects: Optional[Sequence[float] | np.ndarray] = None,
    seed: SeedLike = 0,
    unit_of_interest: int = 0,
    treated_units: Optional[Sequence[int]] = None,
    path_length: Optional[int] = None,
) -> tuple[PanelData, SimulationTruth]:
    """Simulate outcomes ``λμ + ε`` with effects on the unit of interest.

    Factor and shock paths of ``path_length`` periods (default
    ``n_pre + n_post``) are drawn and the last ``n_pre + n_post`` kept, so
    calls sharing a seed and path length share their final periods.
    Treated units are marked treated in every post period.
    """
    if n_pre < 1 or n_post < 1:
        raise ValueError("pre and post lengths must be positive")
    n_periods = n_pre + n_post
    length = n_periods if path_length is None else int(path_length)
    if length < n_periods:
        raise ValueError("path length shorter than the simulated window")
    if not 0 <= unit_of_interest < dgp.n_units:
        raise ValueError(f"unit of interest {unit_of_interest} out of range")

    treated = tuple(sorted(set(treated_units or ()) | {unit_of_interest}))
    if true_effects is None:
        effects = np.zeros(n_post)
    else:
        effects = np.asarray(true_effects, dtype=float).reshape(-1)
        if effects.size == 1:
            effects = np.full(n_post, float(effects[0]))
        if effects.size != n_post:
            raise ValueError(f"expected {n_post} true effects, got {effects.size}")

    factor_rng = make_rng(seed, 0)
    shock_rng = make_rng(seed, 1)
    factors = np.zeros((length, dgp.rank))
    for f, process in enumerate(dgp.factor_processes):
        factors[:, f] = simulate_factor(process, length, factor_rng)
    shocks = shock_rng.standard_normal((dgp.n_units, length))
    shocks *= np.sqrt(dgp.shock_variances)[:, None]

    window = slice(length - n_periods, length)
    factors = factors[window]
    outcomes = (factors @ dgp.loadings).T + shocks[:, window]
    outcomes[unit_of_interest, n_pre:] += effects

    flags = np.zeros_like(outcomes, dtype=bool)
    flags[list(treated), n_pre:] = True
    panel = PanelData(
        outcomes=outcomes,
        treated=flags,
        unit_ids=dgp.unit_ids,
        period_ids=tuple(range(1, n_periods + 1)),
    )
    truth = SimulationTruth(
        effects=effects,
        average_effect=float(np.mean(effects)),
        factors=factors,
        unit_of_interest=unit_of_interest,
        treated_units=treated,
        n_pre=n_pre,
        n_post=n_post,
    )
    return panel, truth


def _treatment_probabilities(
    loadings: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    if np.unique(labels).size < 2:
        logger.warning("labels have a single class; using uniform probabilities")
        return np.full(labels.size, 1.0 / labels.size)
    model = LogisticRegression(
        solver="newton-cholesky",
        C=1.0 / (2.0 * LOGISTIC_RIDGE),
        max_iter=LOGISTIC_MAX_ITER,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        try:
            model.fit(loadings, labels)
        except ConvergenceWarning as exc:
            raise TreatmentAssignmentError(
                f"logistic regression did not converge in {LOGISTIC_MAX_ITER} "
                f"iterations: {exc}"
            ) from exc
    return model.predict_proba(loadings)[:, 1]


def assign_treatment(
    dgp: FittedDGP,
    n_treated: int,
    mode: AssignmentMode | str = AssignmentMode.UNIFORM,
    labels: Optional[Sequence[int] | np.ndarray] = None,
    seed: SeedLike = 0,
) -> TreatmentAssignment:
    """Draw the treated units and the unit of interest among them.

    ``logistic`` samples without replacement with probability proportional
    to the fitted probability of ``labels`` given the loadings.
    """
    mode = AssignmentMode(mode)
    if not 1 <= n_treated <= dgp.n_units:
        raise ValueError(f"n_treated must lie in [1, {dgp.n_units}]")
    rng = make_rng(seed, 2)

    if mode is AssignmentMode.UNIFORM:
        probabilities = np.full(dgp.n_units, 1.0 / dgp.n_units)
    else:
        if labels is None:
            raise ValueError("logistic assignment needs labels")
        y = np.asarray(labels, dtype=int).reshape(-1)
        if y.size != dgp.n_units:
            raise ValueError("one label per unit is required")
        if not set(np.unique(y)) <= {0, 1}:
            raise ValueError("labels must be binary")
        X = dgp.loadings.T if dgp.rank else np.zeros((dgp.n_units, 1))
        probabilities = _treatment_probabilities(X, y)

    positive = int(np.count_nonzero(probabilities > 0))
    if positive < n_treated:
        raise ValueError(
            f"only {positive} units have positive treatment probability"
        )
    treated = rng.choice(
        dgp.n_units, size=n_treated, replace=False, p=probabilities / probabilities.sum()
    )
    unit_of_interest = int(rng.choice(treated))
    return TreatmentAssignment(
        treated_units=tuple(sorted(int(u) for u in treated)),
        unit_of_interest=unit_of_interest,
        probabilities=probabilities,
    )


def load_labels(path: str | Path, unit_ids: Sequence[str]) -> np.ndarray:
    """Binary labels from a ``unit,label`` CSV, aligned to ``unit_ids``."""
    frame = pd.read_csv(path, dtype=str)
    if list(frame.columns[:2]) != ["unit", "label"]:
        raise ValueError("labels file needs columns unit,label")
    mapping = dict(zip(frame["unit"].str.strip(), frame["label"].str.strip()))
    missing = [u for u in unit_ids if u not in mapping]
    if missing:
        raise KeyError(f"labels missing for units: {', '.join(missing)}")
    try:
        return np.array([int(mapping[u]) for u in unit_ids])
    except ValueError as exc:
        raise ValueError(f"labels must be 0 or 1: {exc}") from exc


def load_effect_path(path: str | Path) -> np.ndarray:
    """True-effect path from a single-column CSV (header ``effect``)."""
    frame = pd.read_csv(path)
    if "effect" not in frame.columns:
        raise ValueError("effect file needs an 'effect' column")
    return frame["effect"].to_numpy(dtype=float)

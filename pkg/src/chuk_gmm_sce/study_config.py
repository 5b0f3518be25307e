#!/usr/bin/env python3
# src/chuk_gmm_sce/study_config.py
"""
Simulation study design that extends the shared configuration loading.
"""

import logging
from pathlib import Path
from typing import Any, ClassVar, Literal, Optional

from pydantic import Field, field_validator

from .config import (
    ConfigModel,
    EnvField,
    _parse_bandwidth,
    _parse_bool,
    _parse_int_list,
    _parse_list,
    merge_sources,
)

logger = logging.getLogger(__name__)

DEFAULT_ESTIMATORS = ["ols", "gmm-sequential", "uniform", "factor", "powell"]


class StudyDesign(ConfigModel):
    """One study: a cell per (pre-period length, never-treated count) pair."""

    # Design cells
    pre_periods: list[int] = Field(default_factory=lambda: [25, 50, 100], min_length=1)
    n_never_treated: list[int] = Field(default_factory=lambda: [10, 50], min_length=1)
    post_periods: int = Field(default=50, ge=1)
    n_other_treated: int = Field(default=0, ge=0)
    replications: int = Field(default=1000, ge=1)

    # Estimators
    estimators: list[str] = Field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    estimator_denylist: list[str] = Field(default_factory=list)
    selection_method: Literal["sequential", "two_step"] = "sequential"
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    weighting: Literal["identity", "two_step"] = "identity"
    bandwidth: int | Literal["auto"] = "auto"
    powell_iterations: int = Field(default=10, ge=0)

    # Assignment and truth
    assignment: Literal["uniform", "logistic"] = "uniform"
    labels_file: Optional[str] = None
    true_effects_file: Optional[str] = None
    feasibility_tol: float = Field(default=1e-6, gt=0.0)
    detail: bool = False

    env_prefix: ClassVar[str] = "GMM_SCE_STUDY_"
    env_mapping: ClassVar[dict[str, EnvField]] = {
        "PRE_PERIODS": ("pre_periods", _parse_int_list),
        "N_NEVER_TREATED": ("n_never_treated", _parse_int_list),
        "POST_PERIODS": ("post_periods", int),
        "N_OTHER_TREATED": ("n_other_treated", int),
        "REPLICATIONS": ("replications", int),
        "ESTIMATORS": ("estimators", _parse_list),
        "ESTIMATOR_DENYLIST": ("estimator_denylist", _parse_list),
        "SELECTION_METHOD": "selection_method",
        "ALPHA": ("alpha", float),
        "WEIGHTING": "weighting",
        "BANDWIDTH": ("bandwidth", _parse_bandwidth),
        "POWELL_ITERATIONS": ("powell_iterations", int),
        "ASSIGNMENT": "assignment",
        "LABELS_FILE": "labels_file",
        "TRUE_EFFECTS_FILE": "true_effects_file",
        "FEASIBILITY_TOL": ("feasibility_tol", float),
        "DETAIL": ("detail", _parse_bool),
    }

    @field_validator("pre_periods", "n_never_treated")
    @classmethod
    def _positive(cls, values: list[int]) -> list[int]:
        if any(v < 1 for v in values):
            raise ValueError("design sizes must be positive")
        return sorted(set(values))

    @field_validator("selection_method", "weighting", mode="before")
    @classmethod
    def _underscore(cls, value: Any) -> Any:
        return value.replace("-", "_") if isinstance(value, str) else value

    @field_validator("estimators")
    @classmethod
    def _non_empty(cls, values: list[str]) -> list[str]:
        if not values:
            raise ValueError("a study needs at least one estimator")
        return values

    def check_against(self, n_units: int) -> None:
        """Raise ``ValueError`` when a cell needs more units than the DGP has."""
        needed = 1 + self.n_other_treated + max(self.n_never_treated)
        if needed > n_units:
            raise ValueError(
                f"design needs {needed} units but the DGP has {n_units}"
            )
        if self.assignment == "logistic" and not self.labels_file:
            raise ValueError("logistic assignment needs a labels file")

    @property
    def path_length(self) -> int:
        return max(self.pre_periods) + self.post_periods


def load_study_design_from_sources(
    design_file: Optional[str | Path] = None,
    env_overrides: bool = True,
    cli_overrides: Optional[dict] = None,
) -> StudyDesign:
    """Load a study design with priority CLI > GMM_SCE_STUDY_* environment > file > defaults."""
    return merge_sources(StudyDesign, design_file, env_overrides, cli_overrides)

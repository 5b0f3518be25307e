#!/usr/bin/env python3
# src/chuk_gmm_sce/config.py
"""
Run configuration management using Pydantic.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, ClassVar, Literal, Optional, TypeVar

import yaml
from pydantic import BaseModel, Field, field_validator

from .inference import SubsamplingConfig

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound="ConfigModel")

EnvField = str | tuple[str, Callable[[str], Any]]


def _parse_bool(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


def _parse_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _parse_float_list(value: str) -> list[float]:
    return [float(item) for item in _parse_list(value)]


def _parse_int_list(value: str) -> list[int]:
    return [int(item) for item in _parse_list(value)]


def _parse_bandwidth(value: str) -> int | str:
    return value if value.strip().lower() == "auto" else int(value)


class ConfigModel(BaseModel):
    """File and environment loading shared by every configuration model."""

    env_prefix: ClassVar[str] = "GMM_SCE_"
    env_mapping: ClassVar[dict[str, EnvField]] = {}

    model_config = {
        "validate_assignment": True,
        "arbitrary_types_allowed": True,
    }

    @classmethod
    def from_file(cls: type[ConfigT], config_path: str | Path) -> ConfigT:
        """Load configuration from file (YAML or JSON)."""
        path = Path(config_path)

        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {path}")

        with open(path, "r") as f:
            if path.suffix.lower() in [".yml", ".yaml"]:
                data = yaml.safe_load(f)
            elif path.suffix.lower() == ".json":
                data = json.load(f)
            else:
                raise ValueError(f"Unsupported config file format: {path.suffix}")

        return cls(**(data or {}))

    @classmethod
    def env_values(cls) -> dict[str, Any]:
        """Typed values for every mapped environment variable that is set.

        Values that fail conversion are logged and ignored.
        """
        values: dict[str, Any] = {}
        for suffix, field_info in cls.env_mapping.items():
            env_var = f"{cls.env_prefix}{suffix}"
            raw = os.getenv(env_var)
            if raw is None:
                continue
            if isinstance(field_info, tuple):
                field_name, converter = field_info
                try:
                    values[field_name] = converter(raw)
                except (ValueError, TypeError) as e:
                    logger.warning(f"Invalid value for {env_var}: {e}")
            else:
                values[field_info] = raw
        return values

    @classmethod
    def from_env(cls: type[ConfigT]) -> ConfigT:
        """Load configuration from environment variables."""
        return cls(**cls.env_values())

    def save_to_file(self, config_path: str | Path) -> None:
        """Save configuration to file (YAML or JSON)."""
        path = Path(config_path)

        with open(path, "w") as f:
            if path.suffix.lower() in [".yml", ".yaml"]:
                yaml.dump(
                    self.model_dump(mode="json"),
                    f,
                    default_flow_style=False,
                    sort_keys=False,
                )
            elif path.suffix.lower() == ".json":
                json.dump(self.model_dump(mode="json"), f, indent=2)
            else:
                raise ValueError(f"Unsupported config file format: {path.suffix}")


class RunConfig(ConfigModel):
    """Every parameter the estimate, select and infer commands resolve."""

    # Panel input
    panel: Optional[str] = None
    panel_format: Literal["long_csv", "wide_csv"] = "long_csv"
    treatment_file: Optional[str] = None

    # Roles
    unit: Optional[str] = None
    controls: list[str] = Field(default_factory=list)
    instruments: list[str] = Field(default_factory=list)
    treatment_start: Optional[str] = None
    anticipation: int = Field(default=0, ge=0)

    # Estimation
    method: Literal["gmm", "ols", "uniform", "factor", "powell"] = "gmm"
    weighting: Literal["identity", "two_step"] = "identity"
    constrained: bool = True
    select: Optional[Literal["sequential", "two_step"]] = None
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    v: Optional[list[float]] = None
    bandwidth: int | Literal["auto"] = "auto"
    qp_tol: float = Field(default=1e-10, gt=0.0)
    qp_max_iter: int = Field(default=50_000, ge=1)
    factor_rank: Optional[int] = Field(default=None, ge=0)
    powell_iterations: int = Field(default=10, ge=0)
    powell_fit_weights: Literal["objective", "inverse"] = "objective"

    # Inference
    subsample_m: Optional[int] = Field(default=None, ge=2)
    n_draws: int = Field(default=1000, ge=100)
    level: float = Field(default=0.10, gt=0.0, lt=1.0)
    sigma_bandwidth: int | Literal["auto"] = "auto"
    reselect_per_block: bool = False
    iid_subsampling: bool = False
    n_iid_subsamples: Optional[int] = Field(default=None, ge=2)

    # Execution
    seed: int = Field(default=0, ge=0)
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    out_dir: str = "."
    draws_out: Optional[str] = None

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    verbose: bool = False
    quiet: bool = False

    env_mapping: ClassVar[dict[str, EnvField]] = {
        "PANEL": "panel",
        "PANEL_FORMAT": "panel_format",
        "TREATMENT_FILE": "treatment_file",
        "UNIT": "unit",
        "CONTROLS": ("controls", _parse_list),
        "INSTRUMENTS": ("instruments", _parse_list),
        "TREATMENT_START": "treatment_start",
        "ANTICIPATION": ("anticipation", int),
        "METHOD": "method",
        "WEIGHTING": "weighting",
        "CONSTRAINED": ("constrained", _parse_bool),
        "SELECT": "select",
        "ALPHA": ("alpha", float),
        "V": ("v", _parse_float_list),
        "BANDWIDTH": ("bandwidth", _parse_bandwidth),
        "QP_TOL": ("qp_tol", float),
        "QP_MAX_ITER": ("qp_max_iter", int),
        "FACTOR_RANK": ("factor_rank", int),
        "POWELL_ITERATIONS": ("powell_iterations", int),
        "POWELL_FIT_WEIGHTS": "powell_fit_weights",
        "SUBSAMPLE_M": ("subsample_m", int),
        "N_DRAWS": ("n_draws", int),
        "LEVEL": ("level", float),
        "SIGMA_BANDWIDTH": ("sigma_bandwidth", _parse_bandwidth),
        "RESELECT_PER_BLOCK": ("reselect_per_block", _parse_bool),
        "IID_SUBSAMPLING": ("iid_subsampling", _parse_bool),
        "N_IID_SUBSAMPLES": ("n_iid_subsamples", int),
        "SEED": ("seed", int),
        "THREADS": ("threads", int),
        "OUT_DIR": "out_dir",
        "LOG_LEVEL": "log_level",
        "VERBOSE": ("verbose", _parse_bool),
        "QUIET": ("quiet", _parse_bool),
    }

    # Fields that do not change results and stay out of artifacts.
    EXECUTION_FIELDS: ClassVar[frozenset[str]] = frozenset(
        {"threads", "out_dir", "draws_out", "log_level", "verbose", "quiet"}
    )

    @field_validator("treatment_start", mode="before")
    @classmethod
    def _period_label(cls, value: Any) -> Any:
        return str(value) if value is not None and not isinstance(value, str) else value

    @field_validator("weighting", "select", mode="before")
    @classmethod
    def _normalise_choice(cls, value: Any) -> Any:
        return value.replace("-", "_") if isinstance(value, str) else value

    def subsampling_config(self) -> SubsamplingConfig:
        return SubsamplingConfig(
            m=self.subsample_m,
            n_draws=self.n_draws,
            level=self.level,
            sigma_bandwidth=self.sigma_bandwidth,
            reselect_per_block=self.reselect_per_block,
            selection_method=self.select or "sequential",
            alpha=self.alpha,
            iid_subsampling=self.iid_subsampling,
            n_iid_subsamples=self.n_iid_subsamples,
        )

    def effective_log_level(self) -> str:
        if self.verbose:
            return "DEBUG"
        if self.quiet:
            return "WARNING"
        return self.log_level

    def provenance_dict(self) -> dict[str, Any]:
        """Resolved settings that determine results."""
        data = self.model_dump(mode="json")
        return {k: v for k, v in data.items() if k not in self.EXECUTION_FIELDS}


def merge_sources(
    model: type[ConfigT],
    config_file: Optional[str | Path] = None,
    env_overrides: bool = True,
    cli_overrides: Optional[dict] = None,
) -> ConfigT:
    """Load a configuration model with priority CLI > environment > file > defaults."""
    if config_file:
        base_dict = model.from_file(config_file).model_dump(exclude_unset=True)
        logger.debug(f"Loaded configuration from file: {config_file}")
    else:
        base_dict = {}

    if env_overrides:
        env_dict = model.env_values()
        if env_dict:
            base_dict.update(env_dict)
            logger.debug(f"Applied {len(env_dict)} environment variable override(s)")

    if cli_overrides:
        base_dict.update(cli_overrides)
        logger.debug("Applied CLI overrides")

    return model(**base_dict)


def load_configuration_from_sources(
    config_file: Optional[str | Path] = None,
    env_overrides: bool = True,
    cli_overrides: Optional[dict] = None,
) -> RunConfig:
    """Load the run configuration from multiple sources with priority ordering.

    Priority (highest to lowest):
    1. CLI overrides
    2. Environment variables (GMM_SCE_*)
    3. Configuration file
    4. Defaults
    """
    return merge_sources(RunConfig, config_file, env_overrides, cli_overrides)

#!/usr/bin/env python3
# src/chuk_gmm_sce/cli.py
"""
Command line interface for GMM synthetic control estimation.

Commands: estimate, select, infer, simulate, fit-dgp.
Exit codes: 0 success, 1 numeric failure, 2 usage or validation error.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .artifacts import (
    load_dgp,
    meta_path,
    provenance,
    save_dgp,
    write_csv_meta,
    write_draws,
    write_gap_series,
    write_json,
)
from .config import RunConfig, load_configuration_from_sources
from .dgp import fit_dgp, load_effect_path, load_labels
from .estimator_registry import EstimatorRegistry
from .estimators import (
    EstimationResult,
    factor_estimator,
    gmm_sce,
    ols_sce,
    powell_estimator,
    uniform_sce,
)
from .inference import subsampling_ci
from .panel import PanelData, RoleAssignment, RoleViolation, load_panel, validate_roles
from .selection import SelectionResult, select_partition
from .simlab import run_study
from .study_config import StudyDesign, load_study_design_from_sources

logger = logging.getLogger(__name__)

EXIT_NUMERIC = 1
EXIT_USAGE = 2


class RoleValidationError(ValueError):
    """Role assignment breaks one or more rules."""

    def __init__(self, violations: Sequence[RoleViolation]):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"invalid role assignment:\n{lines}")


def _bandwidth(value: str) -> int | str:
    if value.lower() == "auto":
        return "auto"
    try:
        lags = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be 'auto' or an integer")
    if lags < 0:
        raise argparse.ArgumentTypeError("bandwidth must be non-negative")
    return lags


def _rank(value: str) -> int | str:
    return "auto" if value.lower() == "auto" else int(value)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)

    input_group = common.add_argument_group("Input")
    input_group.add_argument("--panel", help="Panel CSV file")
    input_group.add_argument(
        "--format",
        dest="panel_format",
        choices=["long_csv", "wide_csv"],
        help="Panel file layout (default: long_csv)",
    )
    input_group.add_argument(
        "--treatment-file", help="Wide-format sidecar of unit,first_treated_period"
    )

    exec_group = common.add_argument_group("Execution")
    exec_group.add_argument("--seed", type=int, help="Random seed (default: 0)")
    exec_group.add_argument(
        "--threads", type=int, help="Worker threads (default: available parallelism)"
    )
    exec_group.add_argument("--out-dir", help="Output directory (default: .)")

    log_group = common.add_argument_group("Logging")
    log_group.add_argument(
        "--verbose", "-v", action="store_true", help="Enable verbose debug logging"
    )
    log_group.add_argument(
        "--quiet", "-q", action="store_true", help="Minimize logging output"
    )

    config_group = common.add_argument_group("Configuration")
    config_group.add_argument(
        "--config", "-c", help="Load configuration from file (YAML or JSON)"
    )
    config_group.add_argument(
        "--save-config", help="Save current configuration to file and exit"
    )
    config_group.add_argument(
        "--show-config", action="store_true", help="Show current configuration and exit"
    )
    return common


def _add_role_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("Roles")
    group.add_argument("--unit", help="Unit of interest id")
    group.add_argument("--controls", nargs="+", help="Control unit ids")
    group.add_argument("--instruments", nargs="+", help="Instrument unit ids")
    group.add_argument(
        "--treatment-start",
        help="First post period label (default: first treated period of the unit)",
    )
    group.add_argument(
        "--anticipation",
        type=int,
        help="Move this many final pre periods into the post window (default: 0)",
    )


def _add_estimation_arguments(parser: argparse.ArgumentParser, methods: bool = True) -> None:
    group = parser.add_argument_group("Estimation")
    if methods:
        group.add_argument(
            "--method",
            choices=["gmm", "ols", "uniform", "factor", "powell"],
            help="Estimator (default: gmm)",
        )
        group.add_argument(
            "--unconstrained",
            action="store_true",
            help="Minimum-norm GMM solution without simplex constraints",
        )
        group.add_argument("--factor-rank", type=int, help="Factor rank (default: SVT)")
        group.add_argument("--powell-iterations", type=int, help="Powell iterations")
        group.add_argument(
            "--powell-fit-weights",
            choices=["objective", "inverse"],
            help="Powell goodness-of-fit weights",
        )
        group.add_argument(
            "--select",
            choices=["sequential", "two-step"],
            help="Select the control/instrument partition before estimating",
        )
    group.add_argument(
        "--weighting",
        choices=["identity", "two-step"],
        help="Moment weighting matrix (default: identity)",
    )
    group.add_argument("--alpha", type=float, help="Selection test level (default: 0.05)")
    group.add_argument(
        "--v", nargs="+", type=float, help="Post-period effect weights (default: uniform)"
    )
    group.add_argument(
        "--bandwidth", type=_bandwidth, help="HAC bandwidth: 'auto' or lags"
    )
    group.add_argument("--qp-tol", type=float, help="QP KKT tolerance")
    group.add_argument("--qp-max-iter", type=int, help="QP iteration cap")


def create_argument_parser() -> argparse.ArgumentParser:
    """Create the command line argument parser."""
    parser = argparse.ArgumentParser(
        prog="gmm-sce",
        description="GMM synthetic control estimation with instrument units",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    estimate = sub.add_parser("estimate", parents=[common], help="Estimate treatment effects")
    _add_role_arguments(estimate)
    _add_estimation_arguments(estimate)

    select = sub.add_parser("select", parents=[common], help="Select controls and instruments")
    _add_role_arguments(select)
    _add_estimation_arguments(select, methods=False)
    select.add_argument(
        "--method",
        dest="select",
        choices=["sequential", "two-step"],
        default="sequential",
        help="Selection procedure (default: sequential)",
    )
    select.add_argument(
        "--estimate",
        action="store_true",
        help="Also estimate GMM-SCE with the chosen partition",
    )

    infer = sub.add_parser("infer", parents=[common], help="Subsampling confidence interval")
    _add_role_arguments(infer)
    _add_estimation_arguments(infer, methods=False)
    infer.add_argument(
        "--select",
        choices=["sequential", "two-step"],
        help="Select the partition before estimating",
    )
    sub_group = infer.add_argument_group("Subsampling")
    sub_group.add_argument("--m", dest="subsample_m", type=int, help="Block length")
    sub_group.add_argument("--draws", dest="n_draws", type=int, help="Number of draws")
    sub_group.add_argument("--level", type=float, help="δ for a 1-δ interval")
    sub_group.add_argument("--sigma-bandwidth", type=_bandwidth, help="Σ_v bandwidth")
    sub_group.add_argument(
        "--reselect-per-block", action="store_true", help="Re-run selection per block"
    )
    sub_group.add_argument(
        "--iid-subsampling", action="store_true", help="Draw i.i.d. subsamples"
    )
    sub_group.add_argument("--n-iid-subsamples", type=int, help="i.i.d. subsample count")
    sub_group.add_argument("--draws-out", help="Also write every draw to this CSV")

    simulate = sub.add_parser("simulate", parents=[common], help="Run a placebo study")
    sim_group = simulate.add_argument_group("Study")
    sim_group.add_argument("--design", help="Study design file (JSON or YAML)")
    sim_group.add_argument("--dgp", help="Fitted DGP JSON (default: fit --panel)")
    sim_group.add_argument("--rank", type=_rank, help="Rank when fitting on the fly")
    sim_group.add_argument("--reps", dest="replications", type=int, help="Replications")
    sim_group.add_argument("--pre-periods", nargs="+", type=int, help="T0 values")
    sim_group.add_argument("--n-never-treated", nargs="+", type=int, help="N0 values")
    sim_group.add_argument("--post-periods", type=int, help="T1")
    sim_group.add_argument("--n-other-treated", type=int, help="N1")
    sim_group.add_argument("--estimators", nargs="+", help="Estimator suites to run")
    sim_group.add_argument(
        "--exclude-estimators", nargs="+", dest="estimator_denylist", help="Suites to skip"
    )
    sim_group.add_argument(
        "--selection", dest="selection_method", choices=["sequential", "two-step"]
    )
    sim_group.add_argument("--assignment", choices=["uniform", "logistic"])
    sim_group.add_argument("--labels", dest="labels_file", help="unit,label CSV")
    sim_group.add_argument("--true-effects", dest="true_effects_file", help="effect CSV")
    sim_group.add_argument("--weighting", choices=["identity", "two-step"])
    sim_group.add_argument("--alpha", type=float)
    sim_group.add_argument("--detail", action="store_true", help="Per-rep JSON detail")
    sim_group.add_argument(
        "--list-estimators", action="store_true", help="List estimator suites and exit"
    )

    fit = sub.add_parser("fit-dgp", parents=[common], help="Fit a factor DGP to a panel")
    fit.add_argument("--rank", type=_rank, help="Factor rank: 'auto' or integer")

    return parser


RUN_FIELDS = (
    "panel", "panel_format", "treatment_file", "unit", "controls", "instruments",
    "treatment_start", "anticipation", "method", "weighting", "select", "alpha",
    "v", "bandwidth", "qp_tol", "qp_max_iter", "factor_rank", "powell_iterations",
    "powell_fit_weights", "subsample_m", "n_draws", "level", "sigma_bandwidth",
    "n_iid_subsamples", "seed", "threads", "out_dir", "draws_out",
)
RUN_FLAGS = ("reselect_per_block", "iid_subsampling", "verbose", "quiet")

STUDY_FIELDS = (
    "replications", "pre_periods", "n_never_treated", "post_periods",
    "n_other_treated", "estimators", "estimator_denylist", "selection_method",
    "assignment", "labels_file", "true_effects_file", "weighting", "alpha",
)


def args_to_config_overrides(args) -> dict[str, Any]:
    """Convert command line arguments to run configuration overrides."""
    cli_overrides = {name: getattr(args, name, None) for name in RUN_FIELDS}
    for flag in RUN_FLAGS:
        if getattr(args, flag, False):
            cli_overrides[flag] = True
    if getattr(args, "unconstrained", False):
        cli_overrides["constrained"] = False

    if args.verbose:
        cli_overrides["log_level"] = "DEBUG"
    elif args.quiet:
        cli_overrides["log_level"] = "WARNING"

    # Filter out None values
    return {k: v for k, v in cli_overrides.items() if v is not None}


def args_to_study_overrides(args) -> dict[str, Any]:
    overrides = {name: getattr(args, name, None) for name in STUDY_FIELDS}
    if getattr(args, "detail", False):
        overrides["detail"] = True
    return {k: v for k, v in overrides.items() if v is not None}


def _require_panel(config: RunConfig) -> PanelData:
    if not config.panel:
        raise ValueError("--panel is required for this command")
    return load_panel(config.panel, config.panel_format, config.treatment_file)


def resolve_roles(panel: PanelData, config: RunConfig) -> RoleAssignment:
    """Roles from the configuration, validated against the panel."""
    if not config.unit:
        raise ValueError("--unit is required")
    roles = RoleAssignment.from_ids(
        panel,
        config.unit,
        controls=config.controls or None,
        instruments=config.instruments or None,
        treatment_start=config.treatment_start,
        anticipation=config.anticipation,
    )
    violations = validate_roles(panel, roles)
    if violations:
        raise RoleValidationError(violations)
    return roles


def run_selection(panel: PanelData, roles: RoleAssignment, config: RunConfig) -> SelectionResult:
    assert config.select is not None
    return select_partition(
        panel,
        roles,
        config.select,
        alpha=config.alpha,
        weighting=config.weighting,
        bandwidth=config.bandwidth,
        threads=config.threads,
        tol=config.qp_tol,
        max_iter=config.qp_max_iter,
    )


def run_estimator(panel: PanelData, roles: RoleAssignment, config: RunConfig) -> EstimationResult:
    """Dispatch to the configured estimator."""
    if config.method == "gmm":
        return gmm_sce(
            panel,
            roles,
            config.weighting,
            v=config.v,
            constrained=config.constrained,
            bandwidth=config.bandwidth,
            tol=config.qp_tol,
            max_iter=config.qp_max_iter,
        )
    if config.method == "ols":
        return ols_sce(panel, roles, config.v, tol=config.qp_tol, max_iter=config.qp_max_iter)
    if config.method == "uniform":
        return uniform_sce(panel, roles, config.v)
    if config.method == "factor":
        return factor_estimator(panel, roles, config.v, rank=config.factor_rank)
    return powell_estimator(
        panel,
        roles,
        config.v,
        n_iter=config.powell_iterations,
        fit_weight_mode=config.powell_fit_weights,
        tol=config.qp_tol,
        max_iter=config.qp_max_iter,
    )


def _announce(paths: Sequence[Path]) -> None:
    for path in paths:
        print(f"✅ Wrote {path}")


def cmd_estimate(config: RunConfig) -> list[Path]:
    """Estimate effects; writes estimate.json and gap_series.csv."""
    panel = _require_panel(config)
    roles = resolve_roles(panel, config)
    selection = None
    if config.select:
        selection = run_selection(panel, roles, config)
        roles = selection.apply(roles)
    result = run_estimator(panel, roles, config)
    logger.info(
        f"📊 {result.method.value} weighted-average effect {result.weighted_average:.6g}"
    )

    out = Path(config.out_dir)
    prov = provenance(config.provenance_dict(), panel)
    payload = {
        "result": result.to_dict(panel),
        "selection": selection.to_dict(panel) if selection else None,
        "provenance": prov,
    }
    gap_path = write_gap_series(out / "gap_series.csv", result, panel, prov)
    return [write_json(out / "estimate.json", payload), gap_path, meta_path(gap_path)]


def cmd_select(config: RunConfig, chain_estimate: bool = False) -> list[Path]:
    """Select the partition; writes selection.json and optionally the estimate files."""
    panel = _require_panel(config)
    roles = resolve_roles(panel, config)
    selection = run_selection(panel, roles, config)
    logger.info(
        f"🔍 {selection.method.value} selection kept {len(selection.chosen.controls)} controls"
    )
    out = Path(config.out_dir)
    written = [
        write_json(
            out / "selection.json",
            {
                "selection": selection.to_dict(panel),
                "provenance": provenance(config.provenance_dict(), panel),
            },
        )
    ]
    if chain_estimate:
        written += cmd_estimate(config.model_copy(update={"method": "gmm"}))
    return written


def cmd_infer(config: RunConfig) -> list[Path]:
    """Subsampling confidence interval for the GMM-SCE weighted-average effect."""
    panel = _require_panel(config)
    pool_roles = resolve_roles(panel, config)
    roles = pool_roles
    selection = None
    if config.select:
        selection = run_selection(panel, pool_roles, config)
        roles = selection.apply(pool_roles)
    gmm_config = config.model_copy(update={"method": "gmm"})
    result = run_estimator(panel, roles, gmm_config)
    interval = subsampling_ci(
        panel,
        roles,
        result,
        config.subsampling_config(),
        seed=config.seed,
        threads=config.threads,
        pool_roles=pool_roles if config.reselect_per_block else None,
        tol=config.qp_tol,
        max_iter=config.qp_max_iter,
    )
    logger.info(f"📊 interval [{interval.lower:.6g}, {interval.upper:.6g}]")

    out = Path(config.out_dir)
    prov = provenance(config.provenance_dict(), panel)
    payload = {
        "interval": interval.to_dict(),
        "seed": config.seed,
        "estimate": {
            "weighted_average": result.weighted_average,
            "weights": result.to_dict(panel)["weights"],
        },
        "selection": selection.to_dict(panel) if selection else None,
        "provenance": prov,
    }
    written = [write_json(out / "inference.json", payload)]
    if config.draws_out:
        draws_path = write_draws(config.draws_out, interval, prov)
        written += [draws_path, meta_path(draws_path)]
    return written


def _dgp_hash(data: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def cmd_fit_dgp(config: RunConfig, rank: int | str = "auto") -> list[Path]:
    panel = _require_panel(config)
    dgp = fit_dgp(panel, rank)  # type: ignore[arg-type]
    logger.info(f"📈 fitted DGP with rank {dgp.rank}")
    prov = provenance(config.provenance_dict(), panel, rank=rank)
    return [save_dgp(Path(config.out_dir) / "fitted_dgp.json", dgp, prov)]


def cmd_simulate(
    config: RunConfig,
    design: StudyDesign,
    dgp_path: Optional[str] = None,
    rank: int | str = "auto",
) -> list[Path]:
    """Run a placebo study; writes sim_report.csv and sim_report.json."""
    panel = None
    if dgp_path:
        dgp = load_dgp(dgp_path)
    else:
        panel = _require_panel(config)
        dgp = fit_dgp(panel, rank)  # type: ignore[arg-type]

    labels = load_labels(design.labels_file, dgp.unit_ids) if design.labels_file else None
    effects = (
        load_effect_path(design.true_effects_file) if design.true_effects_file else None
    )
    registry = EstimatorRegistry(denylist=design.estimator_denylist)
    report = run_study(
        dgp,
        design,
        seed=config.seed,
        threads=config.threads,
        registry=registry,
        labels=labels,
        true_effects=effects,
    )

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sim_report.csv"
    report.to_csv(csv_path)
    prov = provenance(
        config.provenance_dict(),
        panel,
        design=design.model_dump(mode="json"),
        dgp_sha256=_dgp_hash(dgp.to_dict()),
    )
    sidecar = write_csv_meta(csv_path, prov)
    json_path = write_json(
        out / "sim_report.json",
        {**report.to_dict(include_details=design.detail), "provenance": prov},
    )
    return [csv_path, sidecar, json_path]


def _list_estimators(design: StudyDesign) -> None:
    registry = EstimatorRegistry(denylist=design.estimator_denylist)
    for name, spec in registry.get_filtered_estimators().items():
        print(f"{name:<20} {spec.category:<10} {spec.description}")


def _rank_arg(args) -> int | str:
    return "auto" if args.rank is None else args.rank


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level, force=True)
    logging.getLogger("chuk_gmm_sce").setLevel(level)


def _dispatch(args, config: RunConfig) -> list[Path]:
    if args.command == "estimate":
        return cmd_estimate(config)
    if args.command == "select":
        return cmd_select(config, chain_estimate=args.estimate)
    if args.command == "infer":
        return cmd_infer(config)
    if args.command == "fit-dgp":
        return cmd_fit_dgp(config, _rank_arg(args))
    raise ValueError(f"unknown command: {args.command}")


def main(argv: Optional[Sequence[str]] = None):
    """Main entry point for the CLI."""
    parser = create_argument_parser()
    args = parser.parse_args(argv)
    _configure_logging("WARNING" if args.quiet else "DEBUG" if args.verbose else "INFO")

    try:
        config = load_configuration_from_sources(
            config_file=args.config,
            cli_overrides=args_to_config_overrides(args),
        )
        _configure_logging(config.effective_log_level())

        design = None
        if args.command == "simulate":
            design = load_study_design_from_sources(
                design_file=args.design,
                cli_overrides=args_to_study_overrides(args),
            )

        if args.save_config:
            target = design if design is not None else config
            target.save_to_file(args.save_config)
            print(f"✅ Configuration saved to {args.save_config}")
            return

        if args.show_config:
            print("📊 Current Configuration:")
            shown: dict[str, Any] = config.model_dump(mode="json")
            if design is not None:
                shown = {"run": shown, "design": design.model_dump(mode="json")}
            print(json.dumps(shown, indent=2))
            return

        if design is not None:
            if args.list_estimators:
                _list_estimators(design)
                return
            paths = cmd_simulate(config, design, args.dgp, _rank_arg(args))
        else:
            paths = _dispatch(args, config)
        _announce(paths)

    except RoleValidationError as e:
        logger.error(f"❌ {e}")
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    except KeyError as e:
        message = e.args[0] if e.args else str(e)
        logger.error(f"❌ {message}")
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"❌ {e}")
        print(f"❌ {e}", file=sys.stderr)
        sys.exit(EXIT_USAGE)
    except (RuntimeError, np.linalg.LinAlgError) as e:
        logger.error(f"💥 numerical failure: {e}")
        print(f"💥 {e}", file=sys.stderr)
        sys.exit(EXIT_NUMERIC)


if __name__ == "__main__":
    main()

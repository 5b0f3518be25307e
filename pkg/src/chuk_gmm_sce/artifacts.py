#!/usr/bin/env python3
# src/chuk_gmm_sce/artifacts.py
"""
JSON and CSV artifact writers.

Every JSON artifact carries a ``provenance`` block with the package version,
the resolved configuration and the SHA-256 of the input panel. CSV artifacts
get the same block in a ``<name>.meta.json`` sidecar together with the
SHA-256 of the CSV itself. Nothing time-dependent is written, so reruns are
byte-identical.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from . import __version__
from .dgp import FittedDGP
from .estimators import EstimationResult
from .inference import ConfidenceInterval
from .panel import PanelData

logger = logging.getLogger(__name__)

PACKAGE_NAME = "chuk-gmm-sce"


def provenance(
    config: dict[str, Any],
    panel: Optional[PanelData] = None,
    **extra: Any,
) -> dict[str, Any]:
    data: dict[str, Any] = {
        "package": PACKAGE_NAME,
        "version": __version__,
        "config": config,
        "panel_sha256": panel.content_hash() if panel is not None else None,
    }
    data.update(extra)
    return data


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: str | Path, payload: dict[str, Any]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w") as f:
        json.dump(payload, f, indent=2, default=_json_default, allow_nan=True)
        f.write("\n")
    logger.debug(f"wrote {target}")
    return target


def read_json(path: str | Path) -> dict[str, Any]:
    with open(path, "r") as f:
        return json.load(f)


def gap_series_frame(result: EstimationResult, panel: PanelData) -> pd.DataFrame:
    """Period, actual, synthetic and gap for every period of the panel."""
    return pd.DataFrame(
        {
            "period": list(panel.period_ids),
            "actual": panel.outcomes[result.roles.unit_of_interest],
            "synthetic": result.synthetic,
            "gap": result.gap_series,
        }
    )


def meta_path(path: str | Path) -> Path:
    target = Path(path)
    return target.with_name(f"{target.stem}.meta.json")


def write_csv_meta(path: str | Path, prov: dict[str, Any]) -> Path:
    """Sidecar with the provenance block and the CSV's own SHA-256."""
    target = Path(path)
    digest = hashlib.sha256(target.read_bytes()).hexdigest()
    return write_json(
        meta_path(target),
        {"artifact": target.name, "sha256": digest, "provenance": prov},
    )


def write_csv(
    path: str | Path, frame: pd.DataFrame, prov: Optional[dict[str, Any]] = None
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, float_format="%.17g", lineterminator="\n")
    logger.debug(f"wrote {target}")
    if prov is not None:
        write_csv_meta(target, prov)
    return target


def write_gap_series(
    path: str | Path,
    result: EstimationResult,
    panel: PanelData,
    prov: Optional[dict[str, Any]] = None,
) -> Path:
    return write_csv(path, gap_series_frame(result, panel), prov)


def write_draws(
    path: str | Path, interval: ConfidenceInterval, prov: Optional[dict[str, Any]] = None
) -> Path:
    return write_csv(path, pd.DataFrame({"draw": interval.draws}), prov)


def save_dgp(path: str | Path, dgp: FittedDGP, prov: dict[str, Any]) -> Path:
    return write_json(path, {"dgp": dgp.to_dict(), "provenance": prov})


def load_dgp(path: str | Path) -> FittedDGP:
    """Read a fitted DGP written by ``save_dgp`` (a bare DGP dict is accepted too)."""
    data = read_json(path)
    return FittedDGP.from_dict(data.get("dgp", data))

#!/usr/bin/env python3
# src/chuk_gmm_sce/panel.py
"""
Panel data model, role assignment, validation and CSV ingestion.

Two on-disk layouts are supported:

* ``long_csv``: header ``unit,period,outcome[,treated]``, one row per cell.
* ``wide_csv``: first column ``unit``, remaining columns are period labels.
  Treatment comes from an optional sidecar CSV ``unit,first_treated_period``.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PeriodLabel = int | str


class PanelFormat(str, Enum):
    """Supported panel file layouts."""

    LONG_CSV = "long_csv"
    WIDE_CSV = "wide_csv"


class PanelParseError(ValueError):
    """Raised when a panel file cannot be turned into a balanced panel."""

    def __init__(
        self,
        message: str,
        unit: Optional[str] = None,
        period: Optional[PeriodLabel] = None,
    ):
        self.unit = unit
        self.period = period
        if unit is not None:
            message = f"{message} at cell ({unit}, {period})"
        super().__init__(message)


@dataclass(frozen=True)
class PanelData:
    """Balanced panel of outcomes and treatment indicators (units x periods)."""

    outcomes: np.ndarray
    treated: np.ndarray
    unit_ids: tuple[str, ...]
    period_ids: tuple[PeriodLabel, ...]

    def __post_init__(self):
        outcomes = np.array(self.outcomes, dtype=float)
        treated = np.array(self.treated, dtype=bool)
        if outcomes.ndim != 2:
            raise ValueError("outcomes must be a units x periods matrix")
        if treated.shape != outcomes.shape:
            raise ValueError(
                f"treated shape {treated.shape} does not match outcomes "
                f"shape {outcomes.shape}"
            )
        if len(self.unit_ids) != outcomes.shape[0]:
            raise ValueError("unit_ids length does not match number of units")
        if len(self.period_ids) != outcomes.shape[1]:
            raise ValueError("period_ids length does not match number of periods")
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise ValueError("unit_ids must be unique")
        if not np.all(np.isfinite(outcomes)):
            rows, cols = np.nonzero(~np.isfinite(outcomes))
            raise ValueError(
                f"missing outcome for unit {self.unit_ids[rows[0]]} "
                f"in period {self.period_ids[cols[0]]}"
            )
        for earlier, later in zip(self.period_ids, self.period_ids[1:]):
            if not _period_less(earlier, later):
                raise ValueError(
                    f"period_ids must be strictly increasing ({earlier!r} >= {later!r})"
                )

        outcomes.flags.writeable = False
        treated.flags.writeable = False
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "treated", treated)
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "period_ids", tuple(self.period_ids))

    @property
    def n_units(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def n_periods(self) -> int:
        return int(self.outcomes.shape[1])

    def unit_index(self, unit_id: str) -> int:
        """Index of a unit id; raises KeyError naming the id when absent."""
        try:
            return self.unit_ids.index(str(unit_id))
        except ValueError:
            raise KeyError(f"unknown unit id: {unit_id}") from None

    def period_index(self, label: PeriodLabel) -> int:
        """Index of a period label, matching ints and their string forms."""
        for idx, period in enumerate(self.period_ids):
            if period == label or str(period) == str(label):
                return idx
        raise KeyError(f"unknown period label: {label}")

    def never_treated(self) -> list[int]:
        """Units untreated in every period."""
        return [int(i) for i in np.nonzero(~self.treated.any(axis=1))[0]]

    def first_treated(self, unit: int) -> Optional[int]:
        hits = np.nonzero(self.treated[unit])[0]
        return int(hits[0]) if hits.size else None

    def with_outcomes(self, outcomes: np.ndarray) -> "PanelData":
        """Copy of this panel with a replaced outcome matrix."""
        return replace(self, outcomes=np.asarray(outcomes, dtype=float))

    def content_hash(self) -> str:
        """SHA-256 over outcomes, treatment and labels."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.outcomes, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.treated, dtype="u1").tobytes())
        digest.update("\x1f".join(self.unit_ids).encode())
        digest.update("\x1f".join(str(p) for p in self.period_ids).encode())
        return digest.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanelData):
            return NotImplemented
        return (
            self.unit_ids == other.unit_ids
            and self.period_ids == other.period_ids
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.treated, other.treated)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class RoleAssignment:
    """Roles of units (interest / controls / instruments) and periods (pre / post)."""

    unit_of_interest: int
    controls: tuple[int, ...]
    instruments: tuple[int, ...] = ()
    pre_periods: tuple[int, ...] = ()
    post_periods: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("controls", "instruments", "pre_periods", "post_periods"):
            object.__setattr__(
                self, name, tuple(int(i) for i in getattr(self, name))
            )
        object.__setattr__(self, "unit_of_interest", int(self.unit_of_interest))

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def n_instruments(self) -> int:
        return len(self.instruments)

    @property
    def n_pre(self) -> int:
        return len(self.pre_periods)

    @property
    def n_post(self) -> int:
        return len(self.post_periods)

    def with_partition(
        self, controls: Sequence[int], instruments: Sequence[int]
    ) -> "RoleAssignment":
        return replace(self, controls=tuple(controls), instruments=tuple(instruments))

    def with_pre_periods(self, pre_periods: Sequence[int]) -> "RoleAssignment":
        return replace(self, pre_periods=tuple(pre_periods))

    @classmethod
    def from_ids(
        cls,
        panel: PanelData,
        unit: str,
        controls: Optional[Sequence[str]] = None,
        instruments: Optional[Sequence[str]] = None,
        treatment_start: Optional[PeriodLabel] = None,
        anticipation: int = 0,
    ) -> "RoleAssignment":
        """Build roles from unit ids and a treatment start label.

        Without ``treatment_start`` the first treated period of the unit of
        interest starts the post window. ``anticipation`` moves the last
        ``anticipation`` pre periods into the post window. Without explicit
        ``controls`` every never-treated unit other than the unit of interest
        and the instruments becomes a control.
        """
        target = panel.unit_index(unit)
        instrument_idx = [panel.unit_index(u) for u in (instruments or [])]

        if treatment_start is not None:
            start = panel.period_index(treatment_start)
        else:
            first = panel.first_treated(target)
            if first is None:
                raise ValueError(
                    f"unit {unit} is never treated; pass a treatment start period"
                )
            start = first
        if anticipation < 0:
            raise ValueError("anticipation must be non-negative")
        start -= anticipation
        if start < 1 or start >= panel.n_periods:
            raise ValueError(
                "treatment start leaves no pre or no post periods "
                f"(start index {start}, {panel.n_periods} periods)"
            )

        if controls:
            control_idx = [panel.unit_index(u) for u in controls]
        else:
            excluded = {target, *instrument_idx}
            control_idx = [i for i in panel.never_treated() if i not in excluded]

        return cls(
            unit_of_interest=target,
            controls=tuple(control_idx),
            instruments=tuple(instrument_idx),
            pre_periods=tuple(range(start)),
            post_periods=tuple(range(start, panel.n_periods)),
        )


@dataclass(frozen=True)
class RoleViolation:
    """One broken role rule."""

    rule: str
    message: str
    unit: Optional[str] = None
    period: Optional[PeriodLabel] = None
    details: dict[str, Any] = field(default_factory=dict)

    def __str__(self) -> str:
        return f"[{self.rule}] {self.message}"


def validate_roles(panel: PanelData, roles: RoleAssignment) -> list[RoleViolation]:
    """Check a role assignment against the panel; one record per broken rule."""
    violations: list[RoleViolation] = []
    n_units, n_periods = panel.n_units, panel.n_periods

    def unit_name(i: int) -> Optional[str]:
        return panel.unit_ids[i] if 0 <= i < n_units else None

    def period_name(t: int) -> Optional[PeriodLabel]:
        return panel.period_ids[t] if 0 <= t < n_periods else None

    all_units = [roles.unit_of_interest, *roles.controls, *roles.instruments]
    for i in all_units:
        if not 0 <= i < n_units:
            violations.append(
                RoleViolation("unit_bounds", f"unit index {i} out of range")
            )
    for t in (*roles.pre_periods, *roles.post_periods):
        if not 0 <= t < n_periods:
            violations.append(
                RoleViolation("period_bounds", f"period index {t} out of range")
            )
    if violations:
        return violations

    if not roles.controls:
        violations.append(RoleViolation("controls_nonempty", "no control units"))
    if not roles.pre_periods:
        violations.append(RoleViolation("pre_nonempty", "no pre-treatment periods"))
    if not roles.post_periods:
        violations.append(RoleViolation("post_nonempty", "no post-treatment periods"))

    for name, members in (("controls", roles.controls), ("instruments", roles.instruments)):
        seen: set[int] = set()
        for i in members:
            if i in seen:
                violations.append(
                    RoleViolation(
                        f"{name}_unique",
                        f"unit {unit_name(i)} listed twice among {name}",
                        unit=unit_name(i),
                    )
                )
            seen.add(i)

    for i in sorted(set(roles.controls) & set(roles.instruments)):
        violations.append(
            RoleViolation(
                "disjoint_units",
                f"unit {unit_name(i)} is both a control and an instrument",
                unit=unit_name(i),
            )
        )
    if roles.unit_of_interest in set(roles.controls) | set(roles.instruments):
        violations.append(
            RoleViolation(
                "interest_excluded",
                f"unit of interest {unit_name(roles.unit_of_interest)} is also "
                "a control or instrument",
                unit=unit_name(roles.unit_of_interest),
            )
        )

    for t in sorted(set(roles.pre_periods) & set(roles.post_periods)):
        violations.append(
            RoleViolation(
                "disjoint_periods",
                f"period {period_name(t)} is both pre and post",
                period=period_name(t),
            )
        )
    if roles.pre_periods and roles.post_periods:
        if max(roles.pre_periods) >= min(roles.post_periods):
            violations.append(
                RoleViolation(
                    "pre_before_post",
                    "every pre period must precede every post period",
                )
            )

    def check_untreated(rule: str, unit: int, periods: Sequence[int], label: str):
        for t in periods:
            if panel.treated[unit, t]:
                violations.append(
                    RoleViolation(
                        rule,
                        f"{label} {unit_name(unit)} is treated in period "
                        f"{period_name(t)}",
                        unit=unit_name(unit),
                        period=period_name(t),
                    )
                )
                return

    check_untreated(
        "interest_untreated_pre", roles.unit_of_interest, roles.pre_periods,
        "unit of interest",
    )
    every_period = (*roles.pre_periods, *roles.post_periods)
    for j in roles.controls:
        check_untreated("control_untreated", j, every_period, "control")
    for k in roles.instruments:
        check_untreated("instrument_untreated_pre", k, roles.pre_periods, "instrument")

    return violations


def _period_less(a: PeriodLabel, b: PeriodLabel) -> bool:
    if isinstance(a, str) and isinstance(b, str):
        try:
            return bool(pd.Timestamp(a) < pd.Timestamp(b))
        except ValueError:
            return a < b
    try:
        return bool(a < b)  # type: ignore[operator]
    except TypeError:
        return str(a) < str(b)


def _parse_period_labels(raw: Sequence[Any]) -> tuple[list[PeriodLabel], list[Any]]:
    """Map raw labels to typed labels and a sort key.

    Integer-like labels stay integers; anything else must parse as a date and
    keeps its original string form.
    """
    text = [str(x).strip() for x in raw]
    numeric = pd.to_numeric(pd.Series(text), errors="coerce")
    if numeric.notna().all() and (numeric == numeric.round()).all():
        labels: list[PeriodLabel] = [int(x) for x in numeric]
        return labels, list(labels)
    dates = pd.to_datetime(pd.Series(text), errors="coerce")
    if dates.isna().any():
        bad = text[int(np.nonzero(dates.isna().to_numpy())[0][0])]
        raise PanelParseError(f"period label {bad!r} is neither an integer nor a date")
    return list(text), list(dates)


def _ordered_periods(raw: Sequence[Any]) -> list[PeriodLabel]:
    labels, keys = _parse_period_labels(raw)
    unique: dict[Any, PeriodLabel] = {}
    for label, key in zip(labels, keys):
        unique.setdefault(key, label)
    return [unique[k] for k in sorted(unique)]


def load_panel(
    path: str | Path,
    format: PanelFormat | str = PanelFormat.LONG_CSV,
    treatment_path: Optional[str | Path] = None,
) -> PanelData:
    """Load a balanced panel; units keep first-appearance order, periods sort ascending."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Panel file not found: {path}")

    fmt = PanelFormat(format)
    if fmt is PanelFormat.LONG_CSV:
        panel = _load_long(path)
    else:
        panel = _load_wide(path, Path(treatment_path) if treatment_path else None)

    logger.debug(
        f"Loaded panel {path.name}: {panel.n_units} units x {panel.n_periods} periods"
    )
    return panel


def _load_long(path: Path) -> PanelData:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    frame.columns = [c.strip() for c in frame.columns]
    missing = {"unit", "period", "outcome"} - set(frame.columns)
    if missing:
        raise PanelParseError(f"long panel is missing columns: {sorted(missing)}")
    has_treated = "treated" in frame.columns

    units = list(dict.fromkeys(u.strip() for u in frame["unit"]))
    raw_periods = [p.strip() for p in frame["period"]]
    labels, keys = _parse_period_labels(raw_periods)
    periods = _ordered_periods(raw_periods)
    key_of = dict(zip(labels, keys))
    ordered_keys = [key_of[p] for p in periods]
    period_pos = {k: t for t, k in enumerate(ordered_keys)}
    unit_pos = {u: i for i, u in enumerate(units)}

    outcomes = np.full((len(units), len(periods)), np.nan)
    treated = np.zeros((len(units), len(periods)), dtype=bool)
    filled = np.zeros_like(treated)

    for row, label, key in zip(frame.itertuples(index=False), labels, keys):
        unit = str(row.unit).strip()
        i, t = unit_pos[unit], period_pos[key]
        if filled[i, t]:
            raise PanelParseError("duplicate (unit, period) pair", unit, label)
        value = _parse_outcome(str(row.outcome), unit, label)
        outcomes[i, t] = value
        if has_treated:
            treated[i, t] = _parse_flag(str(getattr(row, "treated")), unit, label)
        filled[i, t] = True

    if not filled.all():
        i, t = (int(x[0]) for x in np.nonzero(~filled))
        raise PanelParseError("ragged panel, missing cell", units[i], periods[t])

    return PanelData(outcomes, treated, tuple(units), tuple(periods))


def _load_wide(path: Path, treatment_path: Optional[Path]) -> PanelData:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    frame.columns = [c.strip() for c in frame.columns]
    if not frame.columns.size or frame.columns[0] != "unit":
        raise PanelParseError("wide panel must start with a 'unit' column")
    raw_periods = list(frame.columns[1:])
    labels, keys = _parse_period_labels(raw_periods)
    if len(set(keys)) != len(keys):
        raise PanelParseError("duplicate period column in wide panel")
    order = sorted(range(len(keys)), key=lambda k: keys[k])
    periods = [labels[k] for k in order]

    units = [u.strip() for u in frame["unit"]]
    seen: set[str] = set()
    for unit in units:
        if unit in seen:
            raise PanelParseError("duplicate unit row", unit, periods[0])
        seen.add(unit)

    outcomes = np.empty((len(units), len(periods)))
    for i, unit in enumerate(units):
        for t, k in enumerate(order):
            cell = str(frame.iat[i, k + 1]).strip()
            if cell == "":
                raise PanelParseError("ragged panel, missing cell", unit, periods[t])
            outcomes[i, t] = _parse_outcome(cell, unit, periods[t])

    treated = np.zeros(outcomes.shape, dtype=bool)
    if treatment_path is not None:
        if not treatment_path.exists():
            raise FileNotFoundError(f"Treatment sidecar not found: {treatment_path}")
        sidecar = pd.read_csv(treatment_path, dtype=str, keep_default_na=False)
        sidecar.columns = [c.strip() for c in sidecar.columns]
        period_keys = [keys[k] for k in order]
        for row in sidecar.itertuples(index=False):
            unit = str(row.unit).strip()
            start = str(row.first_treated_period).strip()
            if unit not in seen:
                raise PanelParseError(f"sidecar names unknown unit {unit!r}")
            if start == "":
                continue
            _, start_key = _parse_period_labels([start])
            if start_key[0] not in period_keys:
                raise PanelParseError("sidecar period not in panel", unit, start)
            treated[units.index(unit), period_keys.index(start_key[0]):] = True

    return PanelData(outcomes, treated, tuple(units), tuple(periods))


def _parse_outcome(text: str, unit: str, period: PeriodLabel) -> float:
    text = text.strip()
    if text == "":
        raise PanelParseError("missing outcome", unit, period)
    try:
        value = float(text)
    except ValueError:
        raise PanelParseError(f"non-numeric outcome {text!r}", unit, period) from None
    if not np.isfinite(value):
        raise PanelParseError(f"non-finite outcome {text!r}", unit, period)
    return value


def _parse_flag(text: str, unit: str, period: PeriodLabel) -> bool:
    text = text.strip()
    if text in ("", "0", "0.0", "false", "False"):
        return False
    if text in ("1", "1.0", "true", "True"):
        return True
    raise PanelParseError(f"treated flag must be 0 or 1, got {text!r}", unit, period)


def save_panel(
    panel: PanelData,
    path: str | Path,
    format: PanelFormat | str = PanelFormat.LONG_CSV,
    treatment_path: Optional[str | Path] = None,
) -> None:
    """Write a panel in either layout; inverse of load_panel."""
    path = Path(path)
    fmt = PanelFormat(format)

    if fmt is PanelFormat.LONG_CSV:
        records = [
            {
                "unit": unit,
                "period": period,
                "outcome": repr(float(panel.outcomes[i, t])),
                "treated": int(panel.treated[i, t]),
            }
            for i, unit in enumerate(panel.unit_ids)
            for t, period in enumerate(panel.period_ids)
        ]
        pd.DataFrame.from_records(
            records, columns=["unit", "period", "outcome", "treated"]
        ).to_csv(path, index=False)
        return

    wide = pd.DataFrame(
        [[repr(float(x)) for x in row] for row in panel.outcomes],
        columns=[str(p) for p in panel.period_ids],
    )
    wide.insert(0, "unit", list(panel.unit_ids))
    wide.to_csv(path, index=False)

    if panel.treated.any():
        if treatment_path is None:
            raise ValueError("wide format needs a treatment sidecar path for treated units")
        rows = []
        for i, unit in enumerate(panel.unit_ids):
            first = panel.first_treated(i)
            if first is None:
                continue
            if not panel.treated[i, first:].all():
                raise ValueError(
                    f"unit {unit} has non-absorbing treatment; use the long format"
                )
            rows.append({"unit": unit, "first_treated_period": panel.period_ids[first]})
        pd.DataFrame(rows, columns=["unit", "first_treated_period"]).to_csv(
            Path(treatment_path), index=False
        )

"""Panel data containers, CSV ingestion, and predictor matrix assembly.

The canonical input is a long-format CSV: one row per (unit, period) with an
outcome column and zero or more predictor columns. Predictor vectors are
per-unit aggregates (means) of a predictor column over a declared
pre-intervention window; a ``window`` of ``None`` marks a column that is
already aggregated and must be constant within each unit.

Time values are opaque ordered labels. Nothing is parsed as a date; the only
structure used is the sort order of the labels and the position of the
intervention time within it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    ConfigError,
    DuplicateRow,
    InputError,
    MissingCell,
    NonNumericValue,
    TooFewPrePeriods,
    UnknownUnit,
)

__all__ = [
    "PredictorSpec",
    "PanelSchema",
    "PanelDataset",
    "RoleAssignment",
    "load_panel",
    "save_panel",
    "canonical_schema",
    "assign_roles",
    "split_periods",
    "donor_pool",
    "predictor_matrices",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PredictorSpec:
    """How one predictor vector is built from a CSV column.

    ``window`` is an inclusive (first, last) pair of period labels over which
    the column is averaged per unit; ``None`` means the column already holds
    the aggregate and must be constant within each unit.
    """

    name: str
    column: str
    window: tuple | None = None


@dataclass(frozen=True)
class PanelSchema:
    """Column-name map for a long-format panel CSV."""

    unit: str
    time: str
    outcome: str
    intervention_time: object
    predictors: tuple[PredictorSpec, ...] = ()


@dataclass(frozen=True)
class PanelDataset:
    """A validated, immutable unit-by-period panel.

    Attributes
    ----------
    units : tuple of str
        Unit identifiers, in a fixed order (row order of ``outcomes``).
    periods : tuple
        Strictly increasing period labels (column order of ``outcomes``).
    outcomes : ndarray, shape (J, T)
        Outcome value for every (unit, period); no gaps.
    predictors : dict of str -> ndarray
        Per-unit aggregate predictor vectors, each of length J.
    intervention_time : object
        A period label; periods up to and including it are pre-intervention.
    """

    units: tuple[str, ...]
    periods: tuple
    outcomes: np.ndarray
    predictors: dict[str, np.ndarray] = field(default_factory=dict)
    intervention_time: object = None

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(str(u) for u in self.units))
        object.__setattr__(self, "periods", tuple(self.periods))
        object.__setattr__(self, "outcomes", _readonly(self.outcomes))
        object.__setattr__(
            self, "predictors", {k: _readonly(v) for k, v in self.predictors.items()}
        )
        J, T = len(self.units), len(self.periods)
        if len(set(self.units)) != J:
            raise InputError("duplicate unit identifiers")
        for a, b in zip(self.periods, self.periods[1:]):
            if not a < b:
                raise InputError(f"periods not strictly increasing at {a!r} >= {b!r}")
        if self.outcomes.shape != (J, T):
            raise InputError(
                f"outcome matrix shape {self.outcomes.shape} != ({J}, {T})"
            )
        if not np.isfinite(self.outcomes).all():
            raise MissingCell("outcome matrix contains non-finite values")
        for name, vec in self.predictors.items():
            if vec.shape != (J,):
                raise InputError(f"predictor {name!r} has {vec.shape[0]} entries, expected {J}")
            if not np.isfinite(vec).all():
                raise MissingCell(f"predictor {name!r} contains non-finite values")
        if self.intervention_time not in self.periods:
            raise ConfigError(
                f"intervention time {self.intervention_time!r} is not a period label"
            )
        cut = self.periods.index(self.intervention_time)
        if cut + 1 < 2:
            raise TooFewPrePeriods(
                f"only {cut + 1} pre-intervention period(s); at least 2 required"
            )
        if cut + 1 >= T:
            raise InputError("intervention time leaves no post-intervention periods")

    # -- lookups ---------------------------------------------------------

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def predictor_names(self) -> tuple[str, ...]:
        return tuple(self.predictors)

    def unit_index(self, unit) -> int:
        try:
            return self.units.index(str(unit))
        except ValueError:
            raise UnknownUnit(f"unit {unit!r} not in panel") from None

    def period_index(self, period) -> int:
        try:
            return self.periods.index(period)
        except ValueError:
            raise InputError(f"period {period!r} not in panel") from None

    @property
    def pre_indices(self) -> np.ndarray:
        cut = self.periods.index(self.intervention_time)
        return np.arange(cut + 1)

    @property
    def post_indices(self) -> np.ndarray:
        cut = self.periods.index(self.intervention_time)
        return np.arange(cut + 1, self.n_periods)

    def outcome_row(self, unit) -> np.ndarray:
        return self.outcomes[self.unit_index(unit)]

    def truncated(self, last_period, intervention_time) -> "PanelDataset":
        """Panel restricted to periods up to ``last_period`` with a new cut.

        Stored predictor vectors are carried over unchanged; they are
        pre-intervention aggregates of the original panel by construction.
        """
        stop = self.period_index(last_period) + 1
        return replace(
            self,
            periods=self.periods[:stop],
            outcomes=np.array(self.outcomes[:, :stop]),
            intervention_time=intervention_time,
        )


@dataclass(frozen=True)
class RoleAssignment:
    """Partition of units into main treated, potentially affected, and pure controls."""

    main_treated: str
    potentially_affected: tuple[str, ...]
    pure_controls: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "potentially_affected", tuple(self.potentially_affected))
        object.__setattr__(self, "pure_controls", tuple(self.pure_controls))
        groups = [
            {self.main_treated},
            set(self.potentially_affected),
            set(self.pure_controls),
        ]
        total = len(self.potentially_affected) + len(self.pure_controls) + 1
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise InputError("role groups overlap or contain duplicates")
        if not self.pure_controls:
            raise InputError("at least one pure control unit is required")
        # With too few pure controls the cross-weight system can become
        # fragile; warn rather than refuse (tiny panels are legitimate in
        # fixtures and stress tests).
        if len(self.pure_controls) < 3:
            warnings.warn(
                f"only {len(self.pure_controls)} pure control(s); effect "
                "correction is less reliable with so few clean donors",
                UserWarning,
                stacklevel=2,
            )

    @property
    def affected_units(self) -> tuple[str, ...]:
        """Main treated first, then the potentially affected units."""
        return (self.main_treated,) + self.potentially_affected

    @property
    def all_units(self) -> tuple[str, ...]:
        return self.affected_units + self.pure_controls


def assign_roles(
    panel: PanelDataset, main_treated, potentially_affected: Sequence
) -> RoleAssignment:
    """Build a :class:`RoleAssignment` from the panel, deriving pure controls.

    Pure controls are every panel unit not named as main treated or
    potentially affected, in panel order.
    """
    main = str(main_treated)
    affected = tuple(str(u) for u in potentially_affected)
    for u in (main, *affected):
        panel.unit_index(u)
    named = {main, *affected}
    if len(named) != 1 + len(affected):
        raise InputError("main treated repeated in potentially affected list")
    pures = tuple(u for u in panel.units if u not in named)
    return RoleAssignment(main, affected, pures)


# -- loading / saving ----------------------------------------------------


def load_panel(path, schema: PanelSchema) -> PanelDataset:
    """Read and validate a long-format panel CSV.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row, UTF-8, comma separated.
    schema : PanelSchema
        Column names, intervention time, and predictor build rules.

    Raises
    ------
    DuplicateRow, MissingCell, NonNumericValue, TooFewPrePeriods, ConfigError
    """
    try:
        raw = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except FileNotFoundError:
        raise InputError(f"panel file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None

    needed = [schema.unit, schema.time, schema.outcome] + [
        p.column for p in schema.predictors
    ]
    for col in needed:
        if col not in raw.columns:
            raise ConfigError(f"column {col!r} not found in {path}")

    units = list(dict.fromkeys(str(u) for u in raw[schema.unit]))
    periods = sorted(set(raw[schema.time]))

    dup = raw.duplicated(subset=[schema.unit, schema.time])
    if dup.any():
        row = raw[dup].iloc[0]
        raise DuplicateRow(
            f"unit {row[schema.unit]!r} period {row[schema.time]!r} appears twice"
        )
    if len(raw) != len(units) * len(periods):
        seen = set(zip((str(u) for u in raw[schema.unit]), raw[schema.time]))
        for u in units:
            for t in periods:
                if (u, t) not in seen:
                    raise MissingCell(f"no row for unit {u!r} period {t!r}")

    def numeric(col: str) -> pd.Series:
        vals = pd.to_numeric(raw[col], errors="coerce")
        bad = vals.isna() & raw[col].notna()
        if bad.any():
            i = bad.idxmax()
            raise NonNumericValue(
                f"column {col!r} row {i + 2}: {raw[col][i]!r} is not a number"
            )
        if vals.isna().any():
            i = vals.isna().idxmax()
            raise MissingCell(
                f"column {col!r} row {i + 2} (unit {raw[schema.unit][i]!r}, "
                f"period {raw[schema.time][i]!r}) is empty"
            )
        return vals

    frame = raw[[schema.unit, schema.time]].copy()
    frame[schema.unit] = frame[schema.unit].astype(str)
    frame["__outcome"] = numeric(schema.outcome)
    outcomes = (
        frame.pivot(index=schema.unit, columns=schema.time, values="__outcome")
        .reindex(index=units, columns=periods)
        .to_numpy()
    )

    period_pos = {t: i for i, t in enumerate(periods)}
    cut = period_pos.get(schema.intervention_time)
    if cut is None:
        raise ConfigError(
            f"intervention time {schema.intervention_time!r} is not a period label"
        )

    predictors: dict[str, np.ndarray] = {}
    for spec in schema.predictors:
        vals = numeric(spec.column)
        table = (
            pd.DataFrame(
                {schema.unit: frame[schema.unit], schema.time: raw[schema.time], "v": vals}
            )
            .pivot(index=schema.unit, columns=schema.time, values="v")
            .reindex(index=units, columns=periods)
            .to_numpy()
        )
        if spec.window is None:
            first = table[:, 0]
            if not (table == first[:, None]).all():
                raise ConfigError(
                    f"predictor {spec.name!r} has no window but column "
                    f"{spec.column!r} is not constant within units"
                )
            predictors[spec.name] = first
        else:
            lo, hi = spec.window
            if lo not in period_pos or hi not in period_pos:
                raise ConfigError(
                    f"predictor {spec.name!r} window {spec.window!r} uses "
                    "labels outside the panel's periods"
                )
            a, b = period_pos[lo], period_pos[hi]
            if a > b:
                raise ConfigError(f"predictor {spec.name!r} window is reversed")
            if b > cut:
                raise ConfigError(
                    f"predictor {spec.name!r} window extends past the "
                    "intervention time"
                )
            predictors[spec.name] = table[:, a : b + 1].mean(axis=1)

    return PanelDataset(
        units=tuple(units),
        periods=tuple(periods),
        outcomes=outcomes,
        predictors=predictors,
        intervention_time=schema.intervention_time,
    )


def save_panel(panel: PanelDataset, path) -> None:
    """Write a panel to the canonical CSV layout.

    Columns are ``unit, time, outcome`` plus one column per predictor holding
    the per-unit aggregate (constant within unit). Values are written at full
    precision, so reloading with :func:`canonical_schema` reproduces the
    matrices bit for bit.
    """
    rows = {
        "unit": np.repeat(panel.units, panel.n_periods),
        "time": list(panel.periods) * panel.n_units,
        "outcome": panel.outcomes.reshape(-1),
    }
    for name, vec in panel.predictors.items():
        rows[name] = np.repeat(vec, panel.n_periods)
    pd.DataFrame(rows).to_csv(path, index=False)


def canonical_schema(panel: PanelDataset) -> PanelSchema:
    """Schema that reloads a file written by :func:`save_panel`."""
    return PanelSchema(
        unit="unit",
        time="time",
        outcome="outcome",
        intervention_time=panel.intervention_time,
        predictors=tuple(
            PredictorSpec(name=n, column=n, window=None) for n in panel.predictor_names
        ),
    )


# -- slicing -------------------------------------------------------------


def split_periods(panel: PanelDataset) -> tuple[list, list]:
    """Period labels up to and including the intervention time, and after it."""
    cut = panel.periods.index(panel.intervention_time)
    return list(panel.periods[: cut + 1]), list(panel.periods[cut + 1 :])


def donor_pool(
    panel: PanelDataset,
    roles: RoleAssignment,
    target,
    *,
    restricted: bool = False,
) -> tuple[str, ...]:
    """Donor unit ids for a fit of ``target``, in panel order.

    Unrestricted pools contain every other unit; restricted pools contain
    only pure controls (minus the target, if the target is one).
    """
    target = str(target)
    panel.unit_index(target)
    if restricted:
        allowed = set(roles.pure_controls)
    else:
        allowed = set(panel.units)
    return tuple(u for u in panel.units if u != target and u in allowed)


def predictor_matrices(
    panel: PanelDataset, target, donors: Sequence | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Predictor vector of the target and predictor matrix of the donors.

    Returns
    -------
    X1 : ndarray, shape (k,)
        The target's aggregate predictor values, in panel predictor order.
    X0 : ndarray, shape (k, n)
        One column per donor, in the order of ``donors`` (default: every
        unit except the target, in panel order).
    """
    ti = panel.unit_index(target)
    if donors is None:
        donors = [u for u in panel.units if u != str(target)]
    idx = [panel.unit_index(d) for d in donors]
    if ti in idx:
        raise InputError(f"target {target!r} cannot be its own donor")
    names = panel.predictor_names
    X = np.array([panel.predictors[n] for n in names], dtype=float).reshape(
        len(names), panel.n_units
    )
    return X[:, ti].copy(), X[:, idx].copy()

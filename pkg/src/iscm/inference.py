"""Placebo inference: effect-adjusted RMSPE ratios and permutation ranks.

A post/pre RMSPE ratio is only evidence about the target if the donor
outcomes feeding the synthetic path are themselves effect-free. Here the
estimated effects are subtracted from every affected donor's post-period
outcome before the ratio is formed, so affected units can stay in the donor
pool without inflating or deflating the statistic. Pure controls, treated
as pseudo-targets, get ordinary ratios since they carry no effects. The
target's rank among all ratios gives the usual permutation p-value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import InputError, TooFewPrePeriods, ZeroPreRmspe
from .panel import PanelDataset, RoleAssignment
from .pipeline import run_pipeline
from .scm import FitConfig, ScmFit, fit_scm, rmspe
from .solver import EffectSeries

__all__ = [
    "PlaceboConfig",
    "PlaceboRecord",
    "PlaceboResult",
    "placebo_ratio_main",
    "placebo_ratio_affected",
    "placebo_in_space",
    "placebo_in_time",
]

_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class PlaceboConfig:
    """In-space placebo settings."""

    fit: FitConfig = FitConfig()
    donor_pool: str = "pure_controls"  # donor pool for pseudo-treated controls; or "all"
    include_affected: bool = True  # rank affected units' adjusted ratios too

    def __post_init__(self):
        if self.donor_pool not in ("pure_controls", "all"):
            raise InputError(f"unknown placebo donor pool {self.donor_pool!r}")


@dataclass(frozen=True)
class PlaceboRecord:
    unit: str
    pre_rmspe: float
    post_rmspe: float
    ratio: float
    rank: int
    kind: str  # "target" | "affected" | "pure_control"


@dataclass(frozen=True)
class PlaceboResult:
    """Per-unit ratios with the target's rank-based p-value.

    Ranks order ratios from largest (rank 1) to smallest; ties are broken
    by panel unit order. The p-value is rank divided by the number of
    ranked units.
    """

    records: tuple[PlaceboRecord, ...]
    target: str

    @property
    def target_record(self) -> PlaceboRecord:
        return next(r for r in self.records if r.unit == self.target)

    @property
    def target_ratio(self) -> float:
        return self.target_record.ratio

    @property
    def target_rank(self) -> int:
        return self.target_record.rank

    @property
    def p_value(self) -> float:
        return self.target_rank / len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "unit": [r.unit for r in self.records],
                "pre_rmspe": [r.pre_rmspe for r in self.records],
                "post_rmspe": [r.post_rmspe for r in self.records],
                "ratio": [r.ratio for r in self.records],
                "rank": [r.rank for r in self.records],
            }
        )


def _ratio(pre: float, post: float) -> float:
    if pre < _ZERO_TOL:
        if post < _ZERO_TOL:
            return 0.0
        raise ZeroPreRmspe(
            "pre-period RMSPE is zero with a nonzero post gap; the ratio is undefined"
        )
    return post / pre


def _effects_by_unit(iscm_effects) -> dict[str, EffectSeries]:
    if isinstance(iscm_effects, dict):
        series = list(iscm_effects.values())
    else:
        series = list(iscm_effects)
    out = {}
    for s in series:
        if not isinstance(s, EffectSeries):
            raise InputError("iscm_effects must contain EffectSeries objects")
        out[s.unit] = s
    return out


def _adjusted_rmspes(
    panel: PanelDataset,
    fit: ScmFit,
    adjust_units,
    effects: dict[str, EffectSeries],
) -> tuple[float, float]:
    """(pre, post) RMSPE with estimated effects removed from adjusted donors."""
    post = panel.post_indices
    post_labels = [panel.periods[i] for i in post]
    adjusted = np.array(fit.synthetic_path)
    for unit in adjust_units:
        w = fit.weights.weight_for(unit, 0.0)
        if w == 0.0:
            continue
        series = effects.get(str(unit))
        if series is None:
            raise InputError(f"no estimated effect series for affected unit {unit!r}")
        for i, t in zip(post, post_labels):
            adjusted[i] -= w * series.value_at(t)
    actual = panel.outcome_row(fit.target)
    return (
        rmspe(actual, fit.synthetic_path, panel.pre_indices),
        rmspe(actual, adjusted, post),
    )


def placebo_ratio_main(
    panel: PanelDataset,
    roles: RoleAssignment,
    main_fit: ScmFit,
    iscm_effects,
) -> float:
    """Post/pre RMSPE ratio for the main treated with spillovers removed.

    Each potentially affected donor's post-period outcome is replaced by its
    observed value minus its estimated spillover before weighting; the
    denominator is the ordinary pre-period RMSPE. With all estimated effects
    zero this reduces exactly to the unadjusted ratio.
    """
    if main_fit.target != roles.main_treated:
        raise InputError("fit does not target the main treated unit")
    effects = _effects_by_unit(iscm_effects)
    pre, post = _adjusted_rmspes(panel, main_fit, roles.potentially_affected, effects)
    return _ratio(pre, post)


def placebo_ratio_affected(
    panel: PanelDataset,
    roles: RoleAssignment,
    fit_i: ScmFit,
    iscm_effects,
) -> float:
    """Adjusted ratio for one potentially affected unit.

    The estimated effects are subtracted from the outcomes of the main
    treated and every other affected unit, leaving this unit's own outcome
    untouched.
    """
    unit = fit_i.target
    if unit not in roles.potentially_affected:
        raise InputError(f"{unit!r} is not a potentially affected unit")
    effects = _effects_by_unit(iscm_effects)
    adjust = [u for u in roles.affected_units if u != unit]
    pre, post = _adjusted_rmspes(panel, fit_i, adjust, effects)
    return _ratio(pre, post)


def placebo_in_space(
    panel: PanelDataset,
    roles: RoleAssignment,
    config: PlaceboConfig = PlaceboConfig(),
    iscm_effects=None,
    *,
    target=None,
    main_fit: ScmFit | None = None,
    affected_fits=None,
    jobs: int = 1,
) -> PlaceboResult:
    """Rank the target's adjusted ratio against pseudo-treated controls.

    Affected units enter the ranking through their own adjusted ratios (the
    statistic is meaningless for them otherwise); pure controls are refit as
    pseudo-targets, by default against the other pure controls only, and get
    unadjusted ratios. Everything needed that is not supplied (fits, effect
    series) is computed with ``config.fit``.
    """
    target = str(target) if target is not None else roles.main_treated
    if target not in roles.affected_units:
        raise InputError("placebo target must be the main treated or an affected unit")

    if main_fit is None or affected_fits is None or iscm_effects is None:
        run = run_pipeline(panel, roles, config.fit, restricted=False, jobs=jobs)
        main_fit = main_fit or run.main_fit
        affected_fits = affected_fits if affected_fits is not None else run.affected_fits
        iscm_effects = iscm_effects if iscm_effects is not None else run.iscm_effects
    effects = _effects_by_unit(iscm_effects)
    fits = {main_fit.target: main_fit, **{f.target: f for f in affected_fits}}

    entries: dict[str, tuple[float, float, str]] = {}

    def adjusted_entry(unit: str, kind: str):
        fit = fits[unit]
        if unit == roles.main_treated:
            adjust = roles.potentially_affected
        else:
            adjust = [u for u in roles.affected_units if u != unit]
        pre, post = _adjusted_rmspes(panel, fit, adjust, effects)
        entries[unit] = (pre, post, kind)

    adjusted_entry(target, "target")
    if config.include_affected:
        for unit in roles.affected_units:
            if unit != target:
                adjusted_entry(unit, "affected")

    def pseudo_control(unit: str):
        if config.donor_pool == "pure_controls":
            donors = [u for u in roles.pure_controls if u != unit]
        else:
            donors = [u for u in panel.units if u != unit]
        fit = fit_scm(panel, unit, donors, config.fit)
        return unit, (fit.pre_rmspe, fit.post_rmspe, "pure_control")

    controls = [u for u in roles.pure_controls if u != target]
    if len(controls) < 2:
        raise InputError("in-space placebo needs at least 2 pure controls")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for unit, entry in pool.map(pseudo_control, controls):
                entries[unit] = entry
    else:
        for unit in controls:
            entries[unit] = pseudo_control(unit)[1]

    ordered_units = [u for u in panel.units if u in entries]
    ratios = {u: _ratio(entries[u][0], entries[u][1]) for u in ordered_units}
    by_rank = sorted(
        ordered_units, key=lambda u: (-ratios[u], ordered_units.index(u))
    )
    records = tuple(
        PlaceboRecord(
            unit=u,
            pre_rmspe=entries[u][0],
            post_rmspe=entries[u][1],
            ratio=ratios[u],
            rank=by_rank.index(u) + 1,
            kind=entries[u][2],
        )
        for u in ordered_units
    )
    return PlaceboResult(records=records, target=target)


def placebo_in_time(
    panel: PanelDataset,
    roles: RoleAssignment,
    pseudo_intervention_time,
    config: FitConfig = FitConfig(),
    *,
    jobs: int = 1,
) -> EffectSeries:
    """Refit on pre-intervention data only, with an artificial earlier cut.

    Uses outcomes up to the real intervention time, reassigns the
    intervention to ``pseudo_intervention_time``, reruns the full pipeline,
    and returns the main treated unit's corrected pseudo-effect series. For
    a sound design these pseudo-effects should hover near zero. Stored
    predictor vectors are kept as-is (they are pre-intervention aggregates
    of the original panel).
    """
    pseudo_idx = panel.period_index(pseudo_intervention_time)
    true_idx = panel.periods.index(panel.intervention_time)
    if pseudo_idx >= true_idx:
        raise InputError(
            "pseudo intervention time must precede the real intervention time"
        )
    if pseudo_idx < 2:
        raise TooFewPrePeriods(
            "in-time placebo needs at least 2 periods before the pseudo intervention"
        )
    sub = panel.truncated(panel.intervention_time, pseudo_intervention_time)
    run = run_pipeline(sub, roles, config, restricted=False, jobs=jobs)
    return run.effects_for(roles.main_treated, "iscm")

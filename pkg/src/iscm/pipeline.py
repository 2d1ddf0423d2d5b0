"""End-to-end estimation runs shared by the CLI and the placebo machinery."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .panel import PanelDataset, RoleAssignment, donor_pool
from .scm import FitConfig, ScmFit, fit_scm
from .solver import (
    EffectSeries,
    InvertibilityReport,
    OmegaSystem,
    build_system,
    check_invertibility,
    solve_effects,
)

__all__ = ["PipelineResult", "run_pipeline"]


@dataclass(frozen=True)
class PipelineResult:
    """All fits, the assembled system, and every effect series of one run."""

    roles: RoleAssignment
    main_fit: ScmFit
    affected_fits: tuple[ScmFit, ...]
    restricted_fits: dict[str, ScmFit]
    system: OmegaSystem
    invertibility: InvertibilityReport
    iscm_effects: tuple[EffectSeries, ...]
    naive_effects: tuple[EffectSeries, ...]
    restricted_effects: tuple[EffectSeries, ...]

    def effects_for(self, unit, method: str = "iscm") -> EffectSeries:
        pool = {
            "iscm": self.iscm_effects,
            "naive": self.naive_effects,
            "restricted": self.restricted_effects,
        }[method]
        for series in pool:
            if series.unit == str(unit):
                return series
        raise KeyError(f"no {method} effect series for unit {unit!r}")


def run_pipeline(
    panel: PanelDataset,
    roles: RoleAssignment,
    config: FitConfig = FitConfig(),
    *,
    restricted: bool = True,
    jobs: int = 1,
) -> PipelineResult:
    """Fit every affected unit, assemble the system, and solve for effects.

    The main treated and each potentially affected unit get an unrestricted
    fit (all other units as donors); with ``restricted=True`` each also gets
    a pure-controls-only fit for side-by-side reporting. Independent fits
    may run concurrently; results do not depend on the schedule.
    """
    targets = list(roles.affected_units)

    def fit_unrestricted(u):
        return fit_scm(panel, u, donor_pool(panel, roles, u), config)

    def fit_restricted(u):
        return fit_scm(panel, u, donor_pool(panel, roles, u, restricted=True), config)

    tasks = [(fit_unrestricted, u) for u in targets]
    if restricted:
        tasks += [(fit_restricted, u) for u in targets]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fits = list(pool.map(lambda fu: fu[0](fu[1]), tasks))
    else:
        fits = [f(u) for f, u in tasks]

    main_fit = fits[0]
    affected_fits = tuple(fits[1 : len(targets)])
    restricted_fits = (
        {u: f for u, f in zip(targets, fits[len(targets) :])} if restricted else {}
    )

    system = build_system(main_fit, affected_fits, roles, panel)
    invertibility = check_invertibility(system.omega)
    iscm = tuple(solve_effects(system))

    post = panel.post_indices
    post_labels = tuple(panel.periods[i] for i in post)

    def gap_series(fit: ScmFit, method: str) -> EffectSeries:
        gaps = panel.outcome_row(fit.target)[post] - fit.synthetic_path[post]
        return EffectSeries(unit=fit.target, periods=post_labels, values=gaps, method=method)

    naive = tuple(gap_series(f, "naive") for f in [main_fit, *affected_fits])
    restricted_series = tuple(
        gap_series(restricted_fits[u], "restricted") for u in targets if u in restricted_fits
    )
    return PipelineResult(
        roles=roles,
        main_fit=main_fit,
        affected_fits=affected_fits,
        restricted_fits=restricted_fits,
        system=system,
        invertibility=invertibility,
        iscm_effects=iscm,
        naive_effects=naive,
        restricted_effects=restricted_series,
    )

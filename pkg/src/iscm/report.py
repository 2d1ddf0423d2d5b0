"""Tables, CSV frames, and text reports for the command-line workflow.

Machine-readable files carry full double precision (pandas writes the
shortest round-tripping representation); text reports round to two or three
decimals. Nothing here emits timestamps, so identical runs produce
byte-identical output.
"""

from __future__ import annotations

import json

import numpy as np
import pandas as pd

from .diagnostics import SpecComparison
from .inference import PlaceboResult
from .panel import PanelDataset
from .pipeline import PipelineResult
from .scm import ScmFit
from .solver import OmegaSystem

__all__ = [
    "weights_frame",
    "gaps_frame",
    "effects_frame",
    "omega_frame",
    "render_weights_table",
    "fit_summary",
    "fit_report",
    "compare_report",
    "iscm_report",
    "placebo_report",
]


def weights_frame(fits: dict[str, dict[str, ScmFit]]) -> pd.DataFrame:
    """Long-format donor weights: one row per (target, specification, donor)."""
    rows = []
    for target, variants in fits.items():
        for spec_name, fit in variants.items():
            for donor, w in fit.weights.as_dict().items():
                rows.append(
                    {
                        "target": target,
                        "specification": spec_name,
                        "donor": donor,
                        "weight": w,
                    }
                )
    return pd.DataFrame(rows)


def gaps_frame(panel: PanelDataset, fit: ScmFit) -> pd.DataFrame:
    actual = panel.outcome_row(fit.target)
    return pd.DataFrame(
        {
            "period": list(panel.periods),
            "actual": actual,
            "synthetic": fit.synthetic_path,
            "gap": actual - fit.synthetic_path,
        }
    )


def effects_frame(result: PipelineResult) -> pd.DataFrame:
    """One row per (period, unit) with naive, corrected, and restricted columns."""
    by_method = {
        "naive": {s.unit: s for s in result.naive_effects},
        "iscm": {s.unit: s for s in result.iscm_effects},
        "restricted": {s.unit: s for s in result.restricted_effects},
    }
    periods = result.iscm_effects[0].periods
    rows = []
    for unit in result.roles.affected_units:
        for t in periods:
            row = {"period": t, "unit": unit}
            for method, series_map in by_method.items():
                series = series_map.get(unit)
                row[method] = series.value_at(t) if series is not None else np.nan
            rows.append(row)
    return pd.DataFrame(rows)


def omega_frame(system: OmegaSystem) -> pd.DataFrame:
    return pd.DataFrame(
        system.omega,
        index=list(system.affected_units),
        columns=list(system.affected_units),
    ).rename_axis("unit")


def render_weights_table(fit: ScmFit, decimals: int = 3) -> str:
    """Aligned donor/weight table, weights to three decimals."""
    name_w = max(len("Donor"), *(len(d) for d in fit.weights.donors))
    lines = [f"{'Donor'.ljust(name_w)}  Weight"]
    for donor, w in fit.weights.as_dict().items():
        lines.append(f"{donor.ljust(name_w)}  {w:.{decimals}f}")
    return "\n".join(lines)


def fit_summary(fit: ScmFit) -> dict:
    """Machine-readable key-value summary of one fit."""
    out = {
        "target": fit.target,
        "weights": fit.weights.as_dict(),
        "v_weights": {n: float(v) for n, v in zip(fit.v.names, fit.v.values)},
        "pre_rmspe": float(fit.pre_rmspe),
        "post_rmspe": float(fit.post_rmspe),
    }
    if fit.penalty_lambda is not None:
        out["penalty_lambda"] = float(fit.penalty_lambda)
    return out


def write_fit_summary(fit: ScmFit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_summary(fit), fh, indent=2, sort_keys=True)
        fh.write("\n")


def fit_report(panel: PanelDataset, fit: ScmFit) -> str:
    lines = [
        f"Synthetic control fit for {fit.target}",
        "",
        render_weights_table(fit),
        "",
        f"Pre-intervention RMSPE:  {fit.pre_rmspe:.2f}",
        f"Post-intervention RMSPE: {fit.post_rmspe:.2f}",
    ]
    if fit.penalty_lambda is not None:
        lines.append(f"Penalty strength: {fit.penalty_lambda:.6g}")
    mean_gap = float(np.mean(panel.outcome_row(fit.target)[panel.post_indices]
                             - fit.synthetic_path[panel.post_indices]))
    lines.append(f"Mean post-intervention gap: {mean_gap:.2f}")
    return "\n".join(lines) + "\n"


def compare_report(comparison: SpecComparison) -> str:
    c = comparison
    lines = [
        f"Specification comparison for {c.target}",
        "",
        "Affected-unit weights in the unrestricted fit:",
    ]
    if c.affected_weights:
        for unit, w in c.affected_weights.items():
            lines.append(f"  {unit}: {w:.3f}")
    else:
        lines.append("  (none)")
    lines += [
        "",
        "Predictor balance:",
        c.balance.render(),
        "",
        f"Pre-intervention RMSPE, unrestricted: {c.pre_rmspe_unrestricted:.2f}",
        f"Pre-intervention RMSPE, restricted:   {c.pre_rmspe_restricted:.2f}",
    ]
    if c.validation_rmspe_unrestricted is not None:
        lines += [
            f"Validation RMSPE, unrestricted: {c.validation_rmspe_unrestricted:.2f}",
            f"Validation RMSPE, restricted:   {c.validation_rmspe_restricted:.2f}",
        ]
    lines += [
        "",
        "Unrestricted weights:",
        render_weights_table(c.fit_unrestricted),
        "",
        "Restricted weights:",
        render_weights_table(c.fit_restricted),
        "",
        f"Recommendation: {c.recommendation}",
    ]
    return "\n".join(lines) + "\n"


def iscm_report(result: PipelineResult) -> str:
    inv = result.invertibility
    lines = [
        "Spillover-corrected effect estimation",
        "",
        f"Affected units: {', '.join(result.roles.affected_units)}",
        f"System determinant: {inv.determinant:.4f}",
        f"Condition estimate: {inv.condition_estimate:.4g}",
    ]
    if inv.singular_flags:
        lines.append(f"Singularity flags: {', '.join(inv.singular_flags)}")
    if len(result.roles.affected_units) == 2:
        w2 = -result.system.omega[0, 1]
        l1 = -result.system.omega[1, 0]
        lines.append(
            f"Closed-form multiplier 1/(1 - {w2:.2f}*{l1:.2f}) = "
            f"{1.0 / (1.0 - w2 * l1):.4f}"
        )
    for fit in [result.main_fit, *result.affected_fits]:
        lines += ["", f"Unrestricted weights for {fit.target}:", render_weights_table(fit)]
    lines += [""]
    for series in result.iscm_effects:
        mean = float(series.values.mean())
        lines.append(f"Mean corrected effect for {series.unit}: {mean:.2f}")
    return "\n".join(lines) + "\n"


def placebo_report(result: PlaceboResult, in_time_note: str | None = None) -> str:
    lines = [
        f"In-space placebo ratios (target: {result.target})",
        "",
        "Unit".ljust(16) + "Pre RMSPE".rjust(12) + "Post RMSPE".rjust(12)
        + "Ratio".rjust(10) + "Rank".rjust(6),
    ]
    for r in sorted(result.records, key=lambda r: r.rank):
        lines.append(
            r.unit.ljust(16)
            + f"{r.pre_rmspe:.3f}".rjust(12)
            + f"{r.post_rmspe:.3f}".rjust(12)
            + f"{r.ratio:.3f}".rjust(10)
            + str(r.rank).rjust(6)
        )
    lines += [
        "",
        f"Target ratio: {result.target_ratio:.3f}",
        f"Target rank: {result.target_rank} of {len(result.records)}",
        f"Rank-based p-value: {result.p_value:.4f}",
    ]
    if in_time_note:
        lines += ["", in_time_note]
    return "\n".join(lines) + "\n"

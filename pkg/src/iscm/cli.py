"""Command-line front end.

Subcommands cover the full workflow: ``fit`` (one synthetic control),
``compare`` (restricted vs unrestricted specification), ``iscm`` (the full
spillover-corrected pipeline), ``placebo`` (in-space and optional in-time
placebo inference), and ``simulate`` (panel generation with known truth,
plus optional recovery experiments).

Exit codes: 0 on success, 1 on estimation failure, 2 on input error.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import pandas as pd

from . import plots, report
from .config import RunConfig, load_config
from .diagnostics import compare_specs
from .exceptions import ConfigError, InputError, IscmError
from .inference import placebo_in_space, placebo_in_time
from .panel import assign_roles, load_panel, save_panel
from .pipeline import run_pipeline
from .scm import FitConfig, fit_scm
from .simulation import generate, recovery_experiment

__all__ = ["main"]


def _slug(unit: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", unit)


def _require(value, message: str):
    if value is None:
        raise ConfigError(message)
    return value


def _load_inputs(config: RunConfig, *, need_roles: bool):
    data = _require(config.data, f"{config.path}: this command needs a 'data' entry")
    panel = load_panel(data, config.schema)
    roles = None
    if config.main_treated is not None:
        roles = assign_roles(panel, config.main_treated, config.potentially_affected)
    if need_roles and roles is None:
        raise ConfigError(f"{config.path}: this command needs a 'roles' block")
    return panel, roles


def _outdir(config: RunConfig) -> Path:
    config.output.mkdir(parents=True, exist_ok=True)
    return config.output


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def cmd_fit(config: RunConfig) -> None:
    panel, roles = _load_inputs(config, need_roles=False)
    target = _require(
        config.target or config.main_treated,
        f"{config.path}: 'target' or roles.main_treated required for fit",
    )
    fit = fit_scm(panel, target, config=config.fit)
    out = _outdir(config)
    report.weights_frame({target: {"unrestricted": fit}}).to_csv(
        out / "weights.csv", index=False
    )
    report.gaps_frame(panel, fit).to_csv(out / "gaps.csv", index=False)
    report.write_fit_summary(fit, out / "fit.json")
    _write(out / "report.txt", report.fit_report(panel, fit))
    if config.figures:
        plots.save_trend_figure(out / "trends.png", panel, {"synthetic": fit})
        plots.save_gap_figure(out / "gaps.png", panel, fit)


def cmd_compare(config: RunConfig) -> None:
    panel, roles = _load_inputs(config, need_roles=True)
    comparison = compare_specs(panel, roles, config.compare, target=config.target)
    out = _outdir(config)
    comparison.balance.to_frame().to_csv(out / "balance.csv", index=False)
    report.weights_frame(
        {
            comparison.target: {
                "unrestricted": comparison.fit_unrestricted,
                "restricted": comparison.fit_restricted,
            }
        }
    ).to_csv(out / "weights.csv", index=False)
    _write(out / "report.txt", report.compare_report(comparison))
    if config.figures:
        plots.save_trend_figure(
            out / "compare.png",
            panel,
            {
                "unrestricted": comparison.fit_unrestricted,
                "restricted": comparison.fit_restricted,
            },
        )


def cmd_iscm(config: RunConfig) -> None:
    panel, roles = _load_inputs(config, need_roles=True)
    result = run_pipeline(panel, roles, config.fit, jobs=config.jobs)
    out = _outdir(config)
    report.omega_frame(result.system).to_csv(out / "omega.csv")
    report.effects_frame(result).to_csv(out / "effects.csv", index=False)
    fits = {}
    for fit in [result.main_fit, *result.affected_fits]:
        fits[fit.target] = {"unrestricted": fit}
        if fit.target in result.restricted_fits:
            fits[fit.target]["restricted"] = result.restricted_fits[fit.target]
    report.weights_frame(fits).to_csv(out / "weights.csv", index=False)
    _write(out / "report.txt", report.iscm_report(result))
    if config.figures:
        plots.save_trend_figure(
            out / "trends.png",
            panel,
            {
                "unrestricted": result.main_fit,
                "restricted": result.restricted_fits[result.roles.main_treated],
            },
        )
        for unit in roles.affected_units:
            series = {
                "naive": result.effects_for(unit, "naive"),
                "iscm": result.effects_for(unit, "iscm"),
            }
            try:
                series["restricted"] = result.effects_for(unit, "restricted")
            except KeyError:
                pass
            plots.save_effect_figure(
                out / f"effects_{_slug(unit)}.png", panel, unit, series
            )


def cmd_placebo(config: RunConfig) -> None:
    panel, roles = _load_inputs(config, need_roles=True)
    result = placebo_in_space(
        panel, roles, config.placebo, target=config.target, jobs=config.jobs
    )
    out = _outdir(config)
    result.to_frame().to_csv(out / "ratios.csv", index=False)
    note = None
    if config.pseudo_intervention_time is not None:
        series = placebo_in_time(
            panel,
            roles,
            config.pseudo_intervention_time,
            config.fit,
            jobs=config.jobs,
        )
        frame = pd.DataFrame(
            {
                "period": list(series.periods),
                "unit": series.unit,
                "naive": float("nan"),
                "iscm": series.values,
                "restricted": float("nan"),
            }
        )
        frame.to_csv(out / "effects.csv", index=False)
        largest = max(abs(float(v)) for v in series.values)
        note = (
            f"In-time placebo at {config.pseudo_intervention_time}: largest "
            f"absolute pseudo-effect {largest:.3f} (see effects.csv)"
        )
    _write(out / "report.txt", report.placebo_report(result, note))
    if config.figures:
        plots.save_ratio_figure(out / "ratios.png", result)


def cmd_simulate(config: RunConfig) -> None:
    sim_config = _require(
        config.simulation, f"{config.path}: this command needs a 'simulation' block"
    )
    sim = generate(sim_config)
    out = _outdir(config)
    save_panel(sim.panel, out / "panel.csv")
    sim.truth_frame().to_csv(out / "truth.csv", index=False)
    lines = [
        "Simulated panel",
        "",
        f"Units: {sim.panel.n_units} ({sim.config.n_affected} potentially affected)",
        f"Periods: {sim.panel.n_periods} "
        f"(intervention after {sim_config.intervention_time})",
        f"Noise scale: {sim_config.noise_scale}",
        f"Seed: {sim_config.seed}",
    ]
    if config.replications > 0:
        summary = recovery_experiment(
            sim_config,
            config.replications,
            fit_config=FitConfig(v_mode="uniform", seed=config.seed),
            jobs=config.jobs,
        )
        lines += ["", f"Recovery experiment over {config.replications} replications:"]
        frame = summary.summary_frame()
        lines += ["  " + row for row in frame.to_string(index=False).splitlines()]
    _write(out / "report.txt", "\n".join(lines) + "\n")
    if config.figures:
        plots.save_outcome_figure(
            out / "outcomes.png", sim.panel, highlight=sim.roles.main_treated
        )


_COMMANDS = {
    "fit": cmd_fit,
    "compare": cmd_compare,
    "iscm": cmd_iscm,
    "placebo": cmd_placebo,
    "simulate": cmd_simulate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iscm",
        description="Synthetic control estimation with spillover-aware correction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "fit": "fit one synthetic control and export weights, paths, and gaps",
        "compare": "compare restricted and unrestricted specifications",
        "iscm": "run the full spillover-corrected pipeline",
        "placebo": "in-space (and optional in-time) placebo inference",
        "simulate": "generate a panel with known truth; optional recovery runs",
    }
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text[name])
        p.add_argument("--config", required=True, help="run-configuration YAML file")
        p.add_argument("--output", default=None, help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=None, help="worker cap (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
        p.add_argument(
            "--no-figures", action="store_true", help="skip figure rendering"
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(
            args.config,
            output_override=args.output,
            seed_override=args.seed,
            jobs_override=args.jobs,
            figures_override=False if args.no_figures else None,
        )
        _COMMANDS[args.command](config)
    except InputError as exc:
        print(f"iscm {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except IscmError as exc:
        print(f"iscm {args.command}: estimation error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

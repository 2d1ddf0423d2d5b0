"""Run-configuration file loading.

Configurations are YAML: one file declares the data source and schema, the
intervention time, the role assignment, estimator settings, thresholds, and
output options. Errors carry the config file name and, where the offending
key can be located, its line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import CompareConfig
from .exceptions import ConfigError, InvalidConfig
from .inference import PlaceboConfig
from .panel import PanelSchema, PredictorSpec
from .scm import FitConfig, VWeights
from .simulation import SimulationConfig

__all__ = ["RunConfig", "load_config"]

_TOP_LEVEL_KEYS = {
    "data",
    "schema",
    "intervention_time",
    "roles",
    "target",
    "estimator",
    "penalty",
    "v",
    "compare",
    "placebo",
    "simulation",
    "output",
    "seed",
    "jobs",
    "figures",
}


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run configuration."""

    path: Path
    output: Path
    seed: int = 0
    jobs: int = 1
    figures: bool = True
    data: Path | None = None
    schema: PanelSchema | None = None
    main_treated: str | None = None
    potentially_affected: tuple[str, ...] = ()
    target: str | None = None
    fit: FitConfig = FitConfig()
    compare: CompareConfig = field(default_factory=CompareConfig)
    placebo: PlaceboConfig = field(default_factory=PlaceboConfig)
    pseudo_intervention_time: object = None
    simulation: SimulationConfig | None = None
    replications: int = 0


class _Cfg:
    """Raw mapping plus key-line lookup for error messages."""

    def __init__(self, path: Path, mapping: dict, lines: dict):
        self.path = path
        self.mapping = mapping
        self.lines = lines

    def fail(self, keypath: tuple, message: str):
        line = self.lines.get(keypath)
        where = f"{self.path}:{line}" if line else str(self.path)
        raise ConfigError(f"{where}: {message}")

    def get(self, *keypath, default=None, required=False, kind=None, name=None):
        node = self.mapping
        for k in keypath:
            if not isinstance(node, dict) or k not in node:
                if required:
                    self.fail(keypath[:-1] or keypath, f"missing required key {'.'.join(keypath)!r}")
                return default
            node = node[k]
        if kind is not None and not isinstance(node, kind):
            self.fail(
                keypath,
                f"{name or '.'.join(keypath)} must be {getattr(kind, '__name__', kind)}, "
                f"got {type(node).__name__}",
            )
        return node


def _key_lines(text: str) -> dict:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: dict = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key_node, val_node in node.value:
                kp = prefix + (key_node.value,)
                lines[kp] = key_node.start_mark.line + 1
                walk(val_node, kp)

    walk(root, ())
    return lines


def load_config(
    path,
    *,
    output_override=None,
    seed_override: int | None = None,
    jobs_override: int | None = None,
    figures_override: bool | None = None,
) -> RunConfig:
    """Parse and resolve a run-configuration file.

    Raises :class:`ConfigError` with the file name and a line number (YAML
    syntax errors always carry one; semantic errors carry the offending
    key's line when it exists in the file).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        mapping = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark else "?"
        raise ConfigError(f"{path}:{line}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")

    cfg = _Cfg(path, mapping, _key_lines(text))
    for key in mapping:
        if key not in _TOP_LEVEL_KEYS:
            cfg.fail((key,), f"unknown key {key!r}")

    base = path.parent
    out = output_override if output_override is not None else cfg.get("output", default="out")
    seed = seed_override if seed_override is not None else cfg.get("seed", default=0, kind=int)
    jobs = jobs_override if jobs_override is not None else cfg.get("jobs", default=1, kind=int)
    if jobs < 1:
        cfg.fail(("jobs",), "jobs must be at least 1")
    figures = (
        figures_override
        if figures_override is not None
        else cfg.get("figures", default=True, kind=bool)
    )

    data = cfg.get("data")
    schema = _parse_schema(cfg) if data is not None else None
    if data is not None and schema is None:
        cfg.fail(("schema",), "a data file requires a schema block")

    main, affected = _parse_roles(cfg)
    fit = _parse_fit(cfg, seed, jobs)
    compare = _parse_compare(cfg, fit)
    placebo, pseudo_time = _parse_placebo(cfg, fit)
    simulation, replications = _parse_simulation(cfg, seed)

    return RunConfig(
        path=path,
        output=(base / out) if not Path(out).is_absolute() else Path(out),
        seed=seed,
        jobs=jobs,
        figures=figures,
        data=(base / data) if data is not None and not Path(data).is_absolute() else (Path(data) if data else None),
        schema=schema,
        main_treated=main,
        potentially_affected=affected,
        target=cfg.get("target"),
        fit=fit,
        compare=compare,
        placebo=placebo,
        pseudo_intervention_time=pseudo_time,
        simulation=simulation,
        replications=replications,
    )


def _parse_schema(cfg: _Cfg) -> PanelSchema:
    block = cfg.get("schema", required=True, kind=dict)
    unit = cfg.get("schema", "unit", required=True, kind=str)
    time = cfg.get("schema", "time", required=True, kind=str)
    outcome = cfg.get("schema", "outcome", required=True, kind=str)
    t0 = cfg.get("intervention_time", required=True)
    predictors = []
    preds = cfg.get("schema", "predictors", default={})
    if not isinstance(preds, dict):
        cfg.fail(("schema", "predictors"), "predictors must map names to settings")
    for name, spec in preds.items():
        if not isinstance(spec, dict):
            cfg.fail(("schema", "predictors", name), "predictor settings must be a mapping")
        column = spec.get("column", name)
        window = spec.get("window")
        if window is not None:
            if not isinstance(window, list) or len(window) != 2:
                cfg.fail(
                    ("schema", "predictors", name),
                    "window must be a [first, last] pair or null",
                )
            window = tuple(window)
        predictors.append(PredictorSpec(name=str(name), column=str(column), window=window))
    for key in block:
        if key not in {"unit", "time", "outcome", "predictors"}:
            cfg.fail(("schema", key), f"unknown schema key {key!r}")
    return PanelSchema(
        unit=unit,
        time=time,
        outcome=outcome,
        intervention_time=t0,
        predictors=tuple(predictors),
    )


def _parse_roles(cfg: _Cfg):
    roles = cfg.get("roles")
    if roles is None:
        return None, ()
    if not isinstance(roles, dict):
        cfg.fail(("roles",), "roles must be a mapping")
    main = cfg.get("roles", "main_treated", required=True)
    affected = cfg.get("roles", "potentially_affected", default=[])
    if not isinstance(affected, list):
        cfg.fail(("roles", "potentially_affected"), "must be a list of unit ids")
    for key in roles:
        if key not in {"main_treated", "potentially_affected"}:
            cfg.fail(("roles", key), f"unknown roles key {key!r}")
    return str(main), tuple(str(u) for u in affected)


def _parse_fit(cfg: _Cfg, seed: int, jobs: int) -> FitConfig:
    estimator = cfg.get("estimator", default="scm", kind=str)
    if estimator not in ("scm", "penalized"):
        cfg.fail(("estimator",), f"estimator must be 'scm' or 'penalized', got {estimator!r}")
    lam = cfg.get("penalty", "lambda")
    grid = cfg.get("penalty", "grid", default=[0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0])
    if not isinstance(grid, list) or not grid:
        cfg.fail(("penalty", "grid"), "grid must be a non-empty list")
    for key in cfg.get("penalty", default={}) or {}:
        if key not in {"lambda", "grid"}:
            cfg.fail(("penalty", key), f"unknown penalty key {key!r}")
    v_mode = cfg.get("v", "mode", default="optimize", kind=str)
    if v_mode not in ("optimize", "uniform"):
        cfg.fail(("v", "mode"), f"v mode must be 'optimize' or 'uniform', got {v_mode!r}")
    starts = cfg.get("v", "starts", default=10, kind=int)
    nm_max_iter = cfg.get("v", "max_iter")
    explicit = cfg.get("v", "weights")
    for key in cfg.get("v", default={}) or {}:
        if key not in {"mode", "starts", "max_iter", "weights"}:
            cfg.fail(("v", key), f"unknown v key {key!r}")
    v = None
    if explicit is not None:
        if not isinstance(explicit, dict):
            cfg.fail(("v", "weights"), "explicit importance weights must be a mapping")
        names = tuple(str(n) for n in explicit)
        v = VWeights(names, np.array([float(explicit[n]) for n in explicit]))
    return FitConfig(
        estimator=estimator,
        penalty_lambda=float(lam) if lam is not None else None,
        lambda_grid=tuple(float(g) for g in grid),
        v_mode=v_mode,
        v=v,
        v_starts=starts,
        nm_max_iter=nm_max_iter,
        seed=seed,
        jobs=jobs,
    )


def _parse_compare(cfg: _Cfg, fit: FitConfig) -> CompareConfig:
    return CompareConfig(
        fit=fit,
        weight_threshold=float(cfg.get("compare", "weight_threshold", default=0.05)),
        relative_tolerance=float(cfg.get("compare", "relative_tolerance", default=0.10)),
        validation_split=bool(cfg.get("compare", "validation_split", default=False)),
    )


def _parse_placebo(cfg: _Cfg, fit: FitConfig):
    pool = cfg.get("placebo", "donor_pool", default="pure_controls", kind=str)
    if pool not in ("pure_controls", "all"):
        cfg.fail(("placebo", "donor_pool"), "donor_pool must be 'pure_controls' or 'all'")
    include = bool(cfg.get("placebo", "include_affected", default=True))
    pseudo = cfg.get("placebo", "pseudo_intervention_time")
    return PlaceboConfig(fit=fit, donor_pool=pool, include_affected=include), pseudo


def _parse_simulation(cfg: _Cfg, seed: int):
    block = cfg.get("simulation")
    if block is None:
        return None, 0
    if not isinstance(block, dict):
        cfg.fail(("simulation",), "simulation must be a mapping")

    def need(key, kind=int):
        return cfg.get("simulation", key, required=True, kind=kind)

    known = {
        "units",
        "periods",
        "intervention_time",
        "affected",
        "factors",
        "noise_scale",
        "treated_effect",
        "spillover_effects",
        "loading_range",
        "treated_mixture",
        "affected_mixture",
        "predictor_lags",
        "replications",
    }
    for key in block:
        if key not in known:
            cfg.fail(("simulation", key), f"unknown simulation key {key!r}")
    loading = cfg.get("simulation", "loading_range", default=[0.0, 1.0])
    lags = cfg.get("simulation", "predictor_lags", default="all")
    try:
        sim = SimulationConfig(
            n_units=need("units"),
            n_periods=need("periods"),
            intervention_time=need("intervention_time"),
            n_affected=cfg.get("simulation", "affected", default=1, kind=int),
            n_factors=cfg.get("simulation", "factors", default=2, kind=int),
            noise_scale=float(cfg.get("simulation", "noise_scale", default=0.0)),
            treated_effect=cfg.get("simulation", "treated_effect", default=0.0),
            spillover_effects=cfg.get("simulation", "spillover_effects", default=0.0),
            loading_range=tuple(float(x) for x in loading),
            treated_mixture=cfg.get("simulation", "treated_mixture"),
            affected_mixture=cfg.get("simulation", "affected_mixture"),
            predictor_lags=lags,
            seed=seed,
        )
    except InvalidConfig as exc:
        cfg.fail(("simulation",), str(exc))
    return sim, cfg.get("simulation", "replications", default=0, kind=int)

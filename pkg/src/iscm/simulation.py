"""Factor-model panel generator with planted effects and known truth.

Outcomes without intervention follow a linear factor structure: each unit
owns a loading vector, each period a factor draw, plus iid noise. The main
treated unit's loadings are, by default, a convex combination of the
affected and clean-donor loadings, and every affected unit's loadings are a
convex combination of clean-donor loadings; at zero noise this guarantees
that every fit in the correction pipeline has an exact solution, so planted
effects are recoverable and the bias identities can be checked to numerical
precision.

Randomness comes from numpy's seeded PCG64 generator; a fixed draw order
(factors, clean-donor loadings, affected mixtures, treated mixture, noise)
makes panels bit-reproducible per seed, and replication seeds are derived
from the master seed with ``SeedSequence`` so experiments reproduce across
run counts and worker schedules.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .exceptions import InvalidConfig
from .panel import PanelDataset, RoleAssignment
from .scm import FitConfig
from .solver import build_system, solve_effects

__all__ = [
    "SimulationConfig",
    "SimulatedPanel",
    "generate",
    "recovery_experiment",
    "RecoverySummary",
]


@dataclass(frozen=True)
class SimulationConfig:
    """Shape, noise, and planted effects of a generated panel.

    Periods are labeled ``1..n_periods``; ``intervention_time`` is the label
    of the last pre-intervention period. Effect specifications may be a
    scalar (constant across post periods), a sequence with one value per
    post period, or a callable mapping a period label to a value;
    ``spillover_effects`` is one such specification per affected unit
    (a single scalar is broadcast to all of them).
    """

    n_units: int
    n_periods: int
    intervention_time: int
    n_affected: int = 1
    n_factors: int = 2
    noise_scale: float = 0.0
    treated_effect: object = 0.0
    spillover_effects: object = 0.0
    loading_range: tuple[float, float] = (0.0, 1.0)
    treated_mixture: dict | None = None
    affected_mixture: dict | None = None
    predictor_lags: object = "all"
    seed: int = 0

    def __post_init__(self):
        J, T, T0 = self.n_units, self.n_periods, self.intervention_time
        if self.n_affected < 0:
            raise InvalidConfig("n_affected cannot be negative")
        if self.n_affected + 1 >= J - 2:
            raise InvalidConfig(
                f"{self.n_affected} affected unit(s) in a {J}-unit panel leave "
                "too few pure controls (need affected + main < J - 2)"
            )
        if not 2 <= T0 < T:
            raise InvalidConfig(
                f"intervention time {T0} must leave >=2 pre and >=1 post period"
            )
        if self.noise_scale < 0:
            raise InvalidConfig("noise scale cannot be negative")
        if self.n_factors < 1:
            raise InvalidConfig("at least one factor required")
        lo, hi = self.loading_range
        if not lo < hi:
            raise InvalidConfig("loading range must be a (low, high) pair")

    @property
    def unit_ids(self) -> tuple[str, ...]:
        affected = tuple(f"affected_{i}" for i in range(1, self.n_affected + 1))
        n_pure = self.n_units - 1 - self.n_affected
        pures = tuple(f"control_{i}" for i in range(1, n_pure + 1))
        return ("treated",) + affected + pures


@dataclass(frozen=True)
class SimulatedPanel:
    """An observed panel plus the hidden quantities that generated it."""

    panel: PanelDataset
    roles: RoleAssignment
    natural_outcomes: np.ndarray
    treated_effect: np.ndarray
    spillover_effects: dict[str, np.ndarray]
    config: SimulationConfig

    def __post_init__(self):
        yn = np.asarray(self.natural_outcomes, dtype=float)
        yn.setflags(write=False)
        object.__setattr__(self, "natural_outcomes", yn)
        te = np.asarray(self.treated_effect, dtype=float)
        te.setflags(write=False)
        object.__setattr__(self, "treated_effect", te)

    def natural_row(self, unit) -> np.ndarray:
        return self.natural_outcomes[self.panel.unit_index(unit)]

    def planted_effect(self, unit) -> np.ndarray:
        """Planted per-post-period effect for any unit (zeros for pure controls)."""
        unit = str(unit)
        if unit == self.roles.main_treated:
            return self.treated_effect
        if unit in self.spillover_effects:
            return self.spillover_effects[unit]
        return np.zeros(self.panel.post_indices.size)

    def truth_frame(self) -> pd.DataFrame:
        """Long-format truth sidecar: natural outcome and planted effect per cell."""
        periods = self.panel.periods
        post = set(self.panel.post_indices.tolist())
        rows = []
        for ui, unit in enumerate(self.panel.units):
            planted = self.planted_effect(unit)
            for ti, t in enumerate(periods):
                k = ti - self.panel.pre_indices.size
                rows.append(
                    {
                        "unit": unit,
                        "time": t,
                        "natural_outcome": self.natural_outcomes[ui, ti],
                        "planted_effect": planted[k] if ti in post else 0.0,
                    }
                )
        return pd.DataFrame(rows)


def _resolve_effect(spec, post_labels, what: str) -> np.ndarray:
    if callable(spec):
        return np.array([float(spec(t)) for t in post_labels])
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(len(post_labels), float(arr))
    if arr.shape == (len(post_labels),):
        return arr.astype(float)
    raise InvalidConfig(
        f"{what} must be a scalar, a callable, or one value per post period "
        f"({len(post_labels)}), got shape {arr.shape}"
    )


def _mixture_vector(mixture: dict, pool: tuple[str, ...], what: str) -> np.ndarray:
    vec = np.zeros(len(pool))
    for unit, weight in mixture.items():
        if str(unit) not in pool:
            raise InvalidConfig(f"{what} names unknown unit {unit!r}")
        vec[pool.index(str(unit))] = float(weight)
    if vec.min() < 0 or abs(vec.sum() - 1.0) > 1e-9:
        raise InvalidConfig(f"{what} must be convex (nonnegative, summing to 1)")
    return vec


def generate(config: SimulationConfig) -> SimulatedPanel:
    """Draw one panel: factor outcomes, planted effects, known truth.

    Deterministic per seed: the same configuration always yields the same
    panel, bit for bit.
    """
    rng = np.random.default_rng(config.seed)
    units = config.unit_ids
    J, T = config.n_units, config.n_periods
    m, n_pure = config.n_affected, J - 1 - config.n_affected
    periods = tuple(range(1, T + 1))
    post_labels = periods[config.intervention_time :]

    factors = rng.standard_normal((config.n_factors, T))
    lo, hi = config.loading_range
    pure_loadings = rng.uniform(lo, hi, (n_pure, config.n_factors))

    affected_ids = units[1 : 1 + m]
    pure_ids = units[1 + m :]
    affected_loadings = np.empty((m, config.n_factors))
    for i, unit in enumerate(affected_ids):
        if config.affected_mixture and unit in config.affected_mixture:
            mix = _mixture_vector(
                config.affected_mixture[unit], pure_ids, f"affected mixture for {unit!r}"
            )
        else:
            mix = rng.dirichlet(np.ones(n_pure))
        affected_loadings[i] = mix @ pure_loadings

    donor_loadings = np.vstack([affected_loadings, pure_loadings])
    if config.treated_mixture is not None:
        tmix = _mixture_vector(
            config.treated_mixture, affected_ids + pure_ids, "treated mixture"
        )
    else:
        tmix = rng.dirichlet(np.ones(m + n_pure))
    treated_loading = tmix @ donor_loadings

    loadings = np.vstack([treated_loading, donor_loadings])
    natural = loadings @ factors
    if config.noise_scale > 0:
        natural = natural + config.noise_scale * rng.standard_normal((J, T))

    theta = _resolve_effect(config.treated_effect, post_labels, "treated_effect")
    spec = config.spillover_effects
    if isinstance(spec, dict):
        gamma = {
            u: _resolve_effect(spec.get(u, 0.0), post_labels, f"spillover for {u!r}")
            for u in affected_ids
        }
    elif np.ndim(spec) == 0 or callable(spec):
        gamma = {u: _resolve_effect(spec, post_labels, "spillover_effects") for u in affected_ids}
    else:
        if len(spec) != m:
            raise InvalidConfig(
                f"spillover_effects lists {len(spec)} specs for {m} affected unit(s)"
            )
        gamma = {
            u: _resolve_effect(s, post_labels, f"spillover for {u!r}")
            for u, s in zip(affected_ids, spec)
        }

    observed = natural.copy()
    cut = config.intervention_time
    observed[0, cut:] += theta
    for i, unit in enumerate(affected_ids):
        observed[1 + i, cut:] += gamma[unit]

    predictors = _build_predictors(observed, periods, cut, config.predictor_lags)
    panel = PanelDataset(
        units=units,
        periods=periods,
        outcomes=observed,
        predictors=predictors,
        intervention_time=config.intervention_time,
    )
    roles = RoleAssignment(
        main_treated="treated",
        potentially_affected=affected_ids,
        pure_controls=pure_ids,
    )
    return SimulatedPanel(
        panel=panel,
        roles=roles,
        natural_outcomes=natural,
        treated_effect=theta,
        spillover_effects={u: g for u, g in gamma.items()},
        config=config,
    )


def _build_predictors(observed, periods, cut, lags) -> dict[str, np.ndarray]:
    if lags == "mean":
        return {"pre_outcome_mean": observed[:, :cut].mean(axis=1)}
    if lags == "all":
        take = range(cut)
    elif isinstance(lags, int) and lags >= 1:
        take = range(max(0, cut - lags), cut)
    else:
        raise InvalidConfig(f"predictor_lags must be 'all', 'mean', or a count, got {lags!r}")
    return {f"y{periods[i]}": observed[:, i].copy() for i in take}


# -- recovery experiments ---------------------------------------------------


@dataclass(frozen=True)
class RecoverySummary:
    """Estimator errors across replications.

    ``errors[method]`` maps unit id to a (replications, post-periods) array
    of estimate-minus-truth errors. ``affected_weights`` holds the fitted
    main-fit weight of each affected unit per replication.
    """

    replications: int
    units: tuple[str, ...]
    errors: dict[str, dict[str, np.ndarray]]
    affected_weights: dict[str, np.ndarray] = field(default_factory=dict)

    def mean_absolute_error(self, method: str, unit: str) -> float:
        return float(np.abs(self.errors[method][unit]).mean())

    def mean_bias(self, method: str, unit: str) -> float:
        return float(self.errors[method][unit].mean())

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for method, per_unit in self.errors.items():
            for unit in per_unit:
                rows.append(
                    {
                        "estimator": method,
                        "unit": unit,
                        "mean_absolute_error": self.mean_absolute_error(method, unit),
                        "mean_bias": self.mean_bias(method, unit),
                    }
                )
        return pd.DataFrame(rows)


def _replication_seeds(master: int, count: int) -> list[int]:
    children = np.random.SeedSequence(master).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _run_replication(config: SimulationConfig, fit_config: FitConfig):
    from .scm import fit_scm  # local import to keep module import cheap

    sim = generate(config)
    panel, roles = sim.panel, sim.roles
    post = panel.post_indices

    main_fit = fit_scm(panel, roles.main_treated, config=fit_config)
    affected_fits = [
        fit_scm(panel, u, config=fit_config) for u in roles.potentially_affected
    ]
    restricted_fit = fit_scm(
        panel,
        roles.main_treated,
        donors=roles.pure_controls,
        config=fit_config,
    )

    system = build_system(main_fit, affected_fits, roles, panel)
    iscm = {s.unit: s.values for s in solve_effects(system)}

    errors: dict[str, dict[str, np.ndarray]] = {"naive": {}, "iscm": {}, "restricted": {}}
    for fit in [main_fit, *affected_fits]:
        truth = sim.planted_effect(fit.target)
        naive = panel.outcome_row(fit.target)[post] - fit.synthetic_path[post]
        errors["naive"][fit.target] = naive - truth
        errors["iscm"][fit.target] = iscm[fit.target] - truth
    r_gap = panel.outcome_row(roles.main_treated)[post] - restricted_fit.synthetic_path[post]
    errors["restricted"][roles.main_treated] = r_gap - sim.treated_effect

    weights = {
        u: main_fit.weights.weight_for(u, 0.0) for u in roles.potentially_affected
    }
    return errors, weights


def recovery_experiment(
    config: SimulationConfig,
    replications: int,
    *,
    fit_config: FitConfig | None = None,
    jobs: int = 1,
) -> RecoverySummary:
    """Run the full estimation pipeline on fresh panels and tally errors.

    Each replication draws a panel with a seed derived deterministically from
    the master seed and the replication index, fits the unrestricted,
    affected, and restricted synthetic controls, solves for de-biased
    effects, and records estimate-minus-truth errors per estimator.
    """
    if replications < 1:
        raise InvalidConfig("at least one replication required")
    if fit_config is None:
        fit_config = FitConfig(v_mode="uniform")
    seeds = _replication_seeds(config.seed, replications)
    configs = [replace(config, seed=s) for s in seeds]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda c: _run_replication(c, fit_config), configs))
    else:
        results = [_run_replication(c, fit_config) for c in configs]

    units = ("treated",) + tuple(f"affected_{i}" for i in range(1, config.n_affected + 1))
    errors: dict[str, dict[str, np.ndarray]] = {}
    for method in ("naive", "iscm", "restricted"):
        per_unit = {}
        for unit in units:
            rows = [r[0][method][unit] for r in results if unit in r[0][method]]
            if rows:
                per_unit[unit] = np.vstack(rows)
        errors[method] = per_unit
    affected_weights = {
        u: np.array([r[1][u] for r in results])
        for u in units[1:]
    }
    return RecoverySummary(
        replications=replications,
        units=units,
        errors=errors,
        affected_weights=affected_weights,
    )

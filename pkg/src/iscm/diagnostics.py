"""Restricted-vs-unrestricted comparison, balance tables, and bias accounting.

The comparison procedure fits the target twice, once with every other unit
as a donor and once with only the pure controls, then recommends a
specification: excluding the affected units is safe when they carry little
weight or when doing so costs nothing in predictor balance and pre-period
fit; otherwise the inclusive estimator is preferred. Both fits are always
computed and reported so the recommendation never hides the road not taken.

The bias ledger is a simulation instrument: with the no-intervention truth
in hand it decomposes each estimator's error into approximation bias (how
far the synthetic combination is from the true counterfactual) and
contamination bias (planted effects entering through affected donors), and
verifies the closed-form error identities against directly measured errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import ConsistencyError, InputError, PredictorMismatch, TruthUnavailable
from .panel import PanelDataset, RoleAssignment, donor_pool, predictor_matrices
from .scm import FitConfig, ScmFit, fit_scm
from .simulation import SimulatedPanel
from .solver import solve_single_affected

__all__ = [
    "BalanceTable",
    "CompareConfig",
    "SpecComparison",
    "BiasLedger",
    "balance_table",
    "compare_specs",
    "bias_ledger_single_affected",
]


@dataclass(frozen=True)
class BalanceTable:
    """Observed and synthetic predictor values for two fits of one unit."""

    predictors: tuple[str, ...]
    observed: np.ndarray
    unrestricted_synthetic: np.ndarray
    restricted_synthetic: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        for name in ("observed", "unrestricted_synthetic", "restricted_synthetic"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (len(self.predictors),):
                raise PredictorMismatch(f"{name} has shape {v.shape}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def unrestricted_bias(self) -> np.ndarray:
        return np.abs(self.observed - self.unrestricted_synthetic)

    @property
    def restricted_bias(self) -> np.ndarray:
        return np.abs(self.observed - self.restricted_synthetic)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "predictor": self.predictors,
                "observed": self.observed,
                "unrestricted_synthetic": self.unrestricted_synthetic,
                "restricted_synthetic": self.restricted_synthetic,
                "unrestricted_bias": self.unrestricted_bias,
                "restricted_bias": self.restricted_bias,
            }
        )

    def render(self, decimals: int = 2) -> str:
        """Aligned text table, one row per predictor."""
        frame = self.to_frame()
        headers = ["Predictor", "Observed", "Unrestr.", "Restr.", "Unr. bias", "Res. bias"]
        rows = [headers]
        for _, r in frame.iterrows():
            rows.append(
                [r["predictor"]]
                + [
                    f"{r[c]:,.{decimals}f}"
                    for c in (
                        "observed",
                        "unrestricted_synthetic",
                        "restricted_synthetic",
                        "unrestricted_bias",
                        "restricted_bias",
                    )
                ]
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
        lines = []
        for row in rows:
            lines.append(
                row[0].ljust(widths[0])
                + "  "
                + "  ".join(cell.rjust(w) for cell, w in zip(row[1:], widths[1:]))
            )
        return "\n".join(lines)


def balance_table(X1, fit_unrestricted: ScmFit, fit_restricted: ScmFit) -> BalanceTable:
    """Predictor balance of two fits of the same target, as absolute biases."""
    if fit_unrestricted.target != fit_restricted.target:
        raise PredictorMismatch(
            f"fits target different units: {fit_unrestricted.target!r} "
            f"vs {fit_restricted.target!r}"
        )
    if fit_unrestricted.predictor_names != fit_restricted.predictor_names:
        raise PredictorMismatch("fits were built on different predictor sets")
    names = fit_unrestricted.predictor_names
    X1 = np.asarray(X1, dtype=float).reshape(-1)
    if X1.shape != (len(names),):
        raise PredictorMismatch(
            f"observed vector has {X1.size} entries for {len(names)} predictors"
        )
    for fit in (fit_unrestricted, fit_restricted):
        if fit.synthetic_predictors is None:
            raise PredictorMismatch(
                f"fit for {fit.target!r} carries no synthetic predictor values"
            )
    return BalanceTable(
        predictors=names,
        observed=X1,
        unrestricted_synthetic=fit_unrestricted.synthetic_predictors,
        restricted_synthetic=fit_restricted.synthetic_predictors,
    )


@dataclass(frozen=True)
class CompareConfig:
    """Thresholds for the specification recommendation."""

    fit: FitConfig = FitConfig()
    weight_threshold: float = 0.05
    relative_tolerance: float = 0.10
    validation_split: bool = False


@dataclass(frozen=True)
class SpecComparison:
    """Everything the specification decision looked at, plus the verdict."""

    target: str
    affected_weights: dict[str, float]
    balance: BalanceTable
    pre_rmspe_unrestricted: float
    pre_rmspe_restricted: float
    recommendation: str  # "use_iscm" | "use_restricted" | "equivalent"
    fit_unrestricted: ScmFit
    fit_restricted: ScmFit
    validation_rmspe_unrestricted: float | None = None
    validation_rmspe_restricted: float | None = None


def _approx_equal(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(a, b, 1e-12)


def _worse(restricted: float, unrestricted: float, tol: float) -> bool:
    return restricted - unrestricted > tol * max(unrestricted, 1e-12)


def _recommend(affected_weights, bal_u, bal_r, rmspe_u, rmspe_r, config) -> str:
    tol = config.relative_tolerance
    if all(w < config.weight_threshold for w in affected_weights.values()):
        return "use_restricted"
    if _approx_equal(bal_u, bal_r, tol) and _approx_equal(rmspe_u, rmspe_r, tol):
        return "use_restricted"
    if _worse(bal_r, bal_u, tol) or _worse(rmspe_r, rmspe_u, tol):
        return "use_iscm"
    return "equivalent"


def compare_specs(
    panel: PanelDataset,
    roles: RoleAssignment,
    config: CompareConfig = CompareConfig(),
    *,
    target=None,
) -> SpecComparison:
    """Fit the target with and without the affected units and recommend.

    ``target`` defaults to the main treated unit; pass a potentially
    affected unit to repeat the procedure from its point of view.

    The recommendation is advice, not suppression: both fits and the full
    balance table are returned (and reported downstream) regardless.
    """
    target = str(target) if target is not None else roles.main_treated
    if target not in roles.affected_units:
        raise InputError(
            f"comparison target {target!r} must be the main treated or a "
            "potentially affected unit"
        )
    others = [u for u in roles.affected_units if u != target]

    fit_u = fit_scm(panel, target, donor_pool(panel, roles, target), config.fit)
    fit_r = fit_scm(
        panel, target, donor_pool(panel, roles, target, restricted=True), config.fit
    )
    X1, _ = predictor_matrices(panel, target)
    balance = balance_table(X1, fit_u, fit_r)
    affected_weights = {u: fit_u.weights.weight_for(u, 0.0) for u in others}

    bal_u = float(np.linalg.norm(balance.unrestricted_bias))
    bal_r = float(np.linalg.norm(balance.restricted_bias))

    val_u = val_r = None
    if config.validation_split:
        val_u = _validation_rmspe(panel, target, fit_u.weights.donors, config.fit)
        val_r = _validation_rmspe(panel, target, fit_r.weights.donors, config.fit)
        rmspe_u, rmspe_r = val_u, val_r
    else:
        rmspe_u, rmspe_r = fit_u.pre_rmspe, fit_r.pre_rmspe

    return SpecComparison(
        target=target,
        affected_weights=affected_weights,
        balance=balance,
        pre_rmspe_unrestricted=fit_u.pre_rmspe,
        pre_rmspe_restricted=fit_r.pre_rmspe,
        recommendation=_recommend(
            affected_weights, bal_u, bal_r, rmspe_u, rmspe_r, config
        ),
        fit_unrestricted=fit_u,
        fit_restricted=fit_r,
        validation_rmspe_unrestricted=val_u,
        validation_rmspe_restricted=val_r,
    )


def _validation_rmspe(panel, target, donors, fit_config) -> float:
    """Fit on the earlier half of the pre-period, score on the later half."""
    from .exceptions import TooFewPrePeriods
    from .scm import _minimize_simplex_quadratic, _qp_terms

    pre = panel.pre_indices
    if pre.size < 4:
        raise TooFewPrePeriods("validation split needs at least 4 pre-periods")
    train, val = pre[: pre.size // 2], pre[pre.size // 2 :]
    y1 = panel.outcome_row(target)
    Y0 = np.stack([panel.outcome_row(d) for d in donors], axis=1)
    vv = np.full(train.size, 1.0 / train.size)
    H, c, const = _qp_terms(y1[train], Y0[train], vv)
    w, _ = _minimize_simplex_quadratic(H, c, const, max_iter=fit_config.qp_max_iter)
    gaps = y1[val] - Y0[val] @ w
    return math.sqrt(float(gaps @ gaps) / val.size)


# -- bias accounting (simulation only) ---------------------------------------


@dataclass(frozen=True)
class BiasLedger:
    """Per-post-period error decomposition for the single-affected case.

    ``approx_*`` entries are approximation biases (synthetic combination of
    true no-intervention outcomes minus the truth), ``contamination_*`` the
    effect mass entering through affected donors. Measured estimator errors
    and their closed-form counterparts are verified to agree at build time.
    """

    periods: tuple
    approx_bias_main: np.ndarray
    approx_bias_affected: np.ndarray
    contamination_main: np.ndarray
    contamination_affected: np.ndarray
    naive_bias: np.ndarray
    iscm_bias_main: np.ndarray
    iscm_bias_affected: np.ndarray
    main_weight_on_affected: float
    affected_weight_on_main: float
    restricted_approx_bias: np.ndarray | None = None
    restricted_bias: np.ndarray | None = None

    @property
    def amplification(self) -> float:
        """Multiplier mapping combined approximation bias into corrected-effect bias."""
        return 1.0 / (1.0 - self.main_weight_on_affected * self.affected_weight_on_main)

    def to_frame(self) -> pd.DataFrame:
        data = {
            "period": list(self.periods),
            "approx_bias_main": self.approx_bias_main,
            "approx_bias_affected": self.approx_bias_affected,
            "contamination_main": self.contamination_main,
            "contamination_affected": self.contamination_affected,
            "naive_bias": self.naive_bias,
            "iscm_bias_main": self.iscm_bias_main,
            "iscm_bias_affected": self.iscm_bias_affected,
        }
        if self.restricted_bias is not None:
            data["restricted_approx_bias"] = self.restricted_approx_bias
            data["restricted_bias"] = self.restricted_bias
        return pd.DataFrame(data)


def bias_ledger_single_affected(
    sim: SimulatedPanel,
    main_fit: ScmFit,
    affected_fit: ScmFit,
    restricted_fit: ScmFit | None = None,
    *,
    check_tol: float = 1e-8,
) -> BiasLedger:
    """Decompose estimator errors against the simulation's hidden truth.

    Only defined for exactly one potentially affected unit. Verifies two
    identities before returning: the naive error must equal the negated
    approximation bias minus the weighted planted spillover, and the
    corrected-effect error must equal the amplified combination of the two
    approximation biases.
    """
    if not isinstance(sim, SimulatedPanel):
        raise TruthUnavailable("bias accounting requires a simulated panel with truth")
    roles, panel = sim.roles, sim.panel
    if len(roles.potentially_affected) != 1:
        raise InputError("bias ledger is defined for exactly one affected unit")
    affected = roles.potentially_affected[0]
    if main_fit.target != roles.main_treated or affected_fit.target != affected:
        raise InputError("fits do not match the simulation's role assignment")

    post = panel.post_indices
    post_labels = tuple(panel.periods[i] for i in post)
    yn = {u: sim.natural_row(u) for u in panel.units}
    theta, gamma = sim.treated_effect, sim.planted_effect(affected)

    def approx_bias(fit: ScmFit, target: str) -> np.ndarray:
        synth_nat = np.zeros(post.size)
        for d, w in zip(fit.weights.donors, fit.weights.weights):
            synth_nat += w * yn[d][post]
        return synth_nat - yn[target][post]

    b1 = approx_bias(main_fit, roles.main_treated)
    b2 = approx_bias(affected_fit, affected)
    w2 = main_fit.weights.weight_for(affected, 0.0)
    l1 = affected_fit.weights.weight_for(roles.main_treated, 0.0)

    naive_main = panel.outcome_row(roles.main_treated)[post] - main_fit.synthetic_path[post]
    naive_aff = panel.outcome_row(affected)[post] - affected_fit.synthetic_path[post]
    naive_bias = naive_main - theta

    iscm_main = np.empty(post.size)
    iscm_aff = np.empty(post.size)
    for i in range(post.size):
        iscm_main[i], iscm_aff[i] = solve_single_affected(
            naive_main[i], naive_aff[i], w2, l1
        )
    iscm_bias_main = iscm_main - theta
    iscm_bias_aff = iscm_aff - gamma

    scale = max(1.0, float(np.abs(theta).max()), float(np.abs(b1).max()))
    expected_naive = -b1 - w2 * gamma
    if np.abs(naive_bias - expected_naive).max() > check_tol * scale:
        raise ConsistencyError(
            "measured naive error disagrees with its decomposition; "
            "the panel does not satisfy the generating assumptions"
        )
    expected_iscm = (-b1 - w2 * b2) / (1.0 - w2 * l1)
    if np.abs(iscm_bias_main - expected_iscm).max() > check_tol * scale:
        raise ConsistencyError(
            "measured corrected-effect error disagrees with its closed form"
        )

    r_approx = r_bias = None
    if restricted_fit is not None:
        r_approx = approx_bias(restricted_fit, roles.main_treated)
        r_gap = (
            panel.outcome_row(roles.main_treated)[post]
            - restricted_fit.synthetic_path[post]
        )
        r_bias = r_gap - theta

    return BiasLedger(
        periods=post_labels,
        approx_bias_main=b1,
        approx_bias_affected=b2,
        contamination_main=w2 * gamma,
        contamination_affected=l1 * theta,
        naive_bias=naive_bias,
        iscm_bias_main=iscm_bias_main,
        iscm_bias_affected=iscm_bias_aff,
        main_weight_on_affected=w2,
        affected_weight_on_main=l1,
        restricted_approx_bias=r_approx,
        restricted_bias=r_bias,
    )

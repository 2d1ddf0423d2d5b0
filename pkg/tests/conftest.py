import numpy as np
import pytest

from iscm.panel import PanelDataset, RoleAssignment
from iscm.scm import ScmFit, VWeights, WeightVector, rmspe, synthetic_path


def build_panel(outcomes, intervention_time, predictors=None, units=None, periods=None):
    """PanelDataset from a raw outcome matrix, defaulting predictors to pre-means."""
    outcomes = np.asarray(outcomes, dtype=float)
    J, T = outcomes.shape
    units = tuple(units) if units else tuple(f"u{i}" for i in range(J))
    periods = tuple(periods) if periods else tuple(range(1, T + 1))
    cut = periods.index(intervention_time)
    if predictors is None:
        predictors = {"pre_mean": outcomes[:, : cut + 1].mean(axis=1)}
    return PanelDataset(
        units=units,
        periods=periods,
        outcomes=outcomes,
        predictors=predictors,
        intervention_time=intervention_time,
    )


@pytest.fixture
def suppress_small_pool_warning():
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


def manual_fit(panel: PanelDataset, target: str, weight_map: dict) -> ScmFit:
    """ScmFit with hand-assigned weights and a consistent synthetic path."""
    donors = tuple(weight_map)
    w = WeightVector(donors, np.array([weight_map[d] for d in donors]))
    path = synthetic_path(w, panel)
    actual = panel.outcome_row(target)
    X1 = np.array([panel.predictors[n][panel.unit_index(target)] for n in panel.predictor_names])
    X0 = np.array(
        [
            [panel.predictors[n][panel.unit_index(d)] for d in donors]
            for n in panel.predictor_names
        ]
    )
    k = len(panel.predictor_names)
    return ScmFit(
        target=target,
        weights=w,
        v=VWeights(panel.predictor_names, np.full(k, 1.0 / k)),
        synthetic_path=path,
        pre_rmspe=rmspe(actual, path, panel.pre_indices),
        post_rmspe=rmspe(actual, path, panel.post_indices),
        predictor_names=panel.predictor_names,
        synthetic_predictors=X0 @ w.weights,
    )


def tiny_roles(panel, affected):
    """RoleAssignment for tiny fixtures, silencing the small-pool warning."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return RoleAssignment(
            main_treated=panel.units[0],
            potentially_affected=tuple(affected),
            pure_controls=tuple(
                u for u in panel.units[1:] if u not in set(affected)
            ),
        )

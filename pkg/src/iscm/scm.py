"""Synthetic-control weight fitting.

The donor-weight problem is a convex quadratic program over the probability
simplex: minimize the importance-weighted squared predictor mismatch between
the target and a weighted donor combination. It is solved with an accelerated
projected-gradient iteration (monotone restart variant) plus an active-face
refinement step that solves the equality-constrained problem on the current
support; the refinement is what lets the solver reach machine-precision
objectives on degenerate instances where plain first-order steps crawl.
Progress is certified by the linear-minimization duality gap, which upper
bounds the distance to the true minimum, so the returned objective is within
solver tolerance of optimal, not merely stationary.

Predictor-importance weights are selected by Nelder-Mead search in a softmax
parametrization of the simplex, minimizing the pre-intervention outcome
RMSPE of the induced synthetic path, with a fixed set of deterministic
starting points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from scipy.optimize import minimize as _nm_minimize

from .exceptions import (
    DimensionMismatch,
    EmptyPeriodSet,
    InputError,
    SolverDiverged,
    TooFewPrePeriods,
)
from .panel import PanelDataset, predictor_matrices

__all__ = [
    "WeightVector",
    "VWeights",
    "ScmFit",
    "FitConfig",
    "fit_weights",
    "fit_penalized",
    "optimize_v",
    "cross_validate_lambda",
    "synthetic_path",
    "rmspe",
    "fit_scm",
]

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Donor weights on the probability simplex.

    ``strict`` (default) enforces the simplex invariants; pass
    ``strict=False`` to wrap weights from an external estimator that allows
    negative entries.
    """

    donors: tuple[str, ...]
    weights: np.ndarray
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "donors", tuple(str(d) for d in self.donors))
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.shape != (len(self.donors),):
            raise DimensionMismatch(
                f"{len(self.donors)} donors but {w.shape} weights"
            )
        if self.strict:
            if w.min() < -SIMPLEX_TOL or w.max() > 1.0 + SIMPLEX_TOL:
                raise InputError("weights outside [0, 1]")
            if abs(w.sum() - 1.0) > SIMPLEX_TOL:
                raise InputError(f"weights sum to {w.sum()!r}, not 1")

    def weight_for(self, unit, default: float | None = None) -> float:
        unit = str(unit)
        if unit in self.donors:
            return float(self.weights[self.donors.index(unit)])
        if default is None:
            raise InputError(f"unit {unit!r} not in donor pool")
        return default

    def as_dict(self) -> dict[str, float]:
        return {d: float(w) for d, w in zip(self.donors, self.weights)}


@dataclass(frozen=True)
class VWeights:
    """Nonnegative predictor-importance weights summing to one."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (len(self.names),):
            raise DimensionMismatch("one importance weight per predictor required")
        if len(self.names) and (v.min() < -SIMPLEX_TOL or abs(v.sum() - 1.0) > 1e-6):
            raise InputError("importance weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, names: Sequence[str]) -> "VWeights":
        names = tuple(names)
        if not names:
            raise InputError("cannot build importance weights without predictors")
        return cls(names, np.full(len(names), 1.0 / len(names)))


@dataclass(frozen=True)
class ScmFit:
    """A fitted synthetic control for one target unit."""

    target: str
    weights: WeightVector
    v: VWeights
    synthetic_path: np.ndarray
    pre_rmspe: float
    post_rmspe: float
    penalty_lambda: float | None = None
    predictor_names: tuple[str, ...] = ()
    synthetic_predictors: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.synthetic_path, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "synthetic_path", p)
        if self.pre_rmspe < 0 or self.post_rmspe < 0:
            raise InputError("RMSPE cannot be negative")

    def gaps(self, panel: PanelDataset) -> np.ndarray:
        """Observed minus synthetic outcome, over all periods."""
        return panel.outcome_row(self.target) - self.synthetic_path


# -- simplex quadratic program --------------------------------------------


def _project_simplex(v: np.ndarray) -> np.ndarray:
    # Euclidean projection onto {w : w >= 0, sum w = 1}.
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, v.size + 1) > 0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _face_refine(H, c, w, f_w, objective):
    """Solve the equality-constrained problem on the support of ``w``.

    Repeatedly solves the KKT system on the current support and drops the
    most negative coordinate until the face solution is feasible; adopts it
    only if it improves the objective. Deterministic.
    """
    support = np.flatnonzero(w > 1e-12)
    if support.size == 0:
        support = np.array([int(np.argmin(c))])
    n = w.size
    while True:
        k = support.size
        if k == 1:
            cand_s = np.array([1.0])
        else:
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = H[np.ix_(support, support)]
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.concatenate([-c[support], [1.0]])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            cand_s = sol[:k]
        if cand_s.min() >= -1e-12:
            cand = np.zeros(n)
            cand[support] = np.maximum(cand_s, 0.0)
            cand /= cand.sum()
            f_cand = objective(cand)
            if f_cand < f_w:
                return cand, f_cand
            return w, f_w
        if k == 1:
            return w, f_w
        support = np.delete(support, int(np.argmin(cand_s)))


def _minimize_simplex_quadratic(
    H: np.ndarray,
    c: np.ndarray,
    const: float,
    *,
    max_iter: int = 100_000,
    gap_rtol: float = 1e-12,
    improve_rtol: float = 1e-12,
    start: np.ndarray | None = None,
):
    """Minimize ``0.5 w'Hw + c'w + const`` over the simplex.

    Returns ``(w, info)`` where ``info`` carries the final objective, the
    duality-gap certificate, and the iteration count. Raises
    :class:`SolverDiverged` if the iteration cap is reached while the gap
    certificate is still worse than 1e-8 relative to the problem scale.
    """
    n = c.size
    if n == 1:
        return np.array([1.0]), {
            "objective": 0.5 * H[0, 0] + c[0] + const,
            "gap": 0.0,
            "iterations": 0,
        }
    H = 0.5 * (H + H.T)

    def objective(w):
        return 0.5 * float(w @ H @ w) + float(c @ w)

    w = np.full(n, 1.0 / n) if start is None else _project_simplex(np.asarray(start, float))
    f_w = objective(w)
    ref = max(1.0, abs(f_w + const))
    gap_tol = gap_rtol * ref

    L = float(np.linalg.eigvalsh(H)[-1])
    if L < 1e-30:
        # Essentially linear objective: the minimum sits on a vertex.
        j = int(np.argmin(c))
        w = np.zeros(n)
        w[j] = 1.0
        return w, {"objective": objective(w) + const, "gap": 0.0, "iterations": 0}

    step = 1.0 / L
    y = w.copy()
    t = 1.0
    stall = 0
    it = 0
    while it < max_iter:
        it += 1
        grad_y = H @ y + c
        w_next = _project_simplex(y - step * grad_y)
        f_next = objective(w_next)
        if f_next > f_w:
            # Momentum overshot; restart acceleration from the last iterate.
            y = w
            w_next = _project_simplex(y - step * (H @ y + c))
            f_next = objective(w_next)
            t = 1.0
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        stall = stall + 1 if f_w - f_next <= improve_rtol * ref else 0
        w, f_w, t = w_next, f_next, t_next

        if it % 32 == 0 or stall >= 4:
            w2, f2 = _face_refine(H, c, w, f_w, objective)
            if f2 < f_w:
                w, f_w = w2, f2
                y = w.copy()
                t = 1.0
            g = H @ w + c
            gap = float(w @ g - g.min())
            if gap <= gap_tol:
                return w, {"objective": f_w + const, "gap": gap, "iterations": it}
            if stall >= 4:
                if gap <= 1e-8 * ref:
                    return w, {"objective": f_w + const, "gap": gap, "iterations": it}
                stall = 0

    w, f_w = _face_refine(H, c, w, f_w, objective)
    g = H @ w + c
    gap = float(w @ g - g.min())
    if gap <= 1e-8 * ref:
        return w, {"objective": f_w + const, "gap": gap, "iterations": it}
    raise SolverDiverged(
        f"simplex QP hit the {max_iter}-iteration cap with duality gap {gap:.3e}"
    )


def _qp_terms(X1, X0, v_values, lam=0.0):
    """Quadratic/linear/constant terms of the fitting objective."""
    Vx0 = X0 * v_values[:, None]
    H = 2.0 * (X0.T @ Vx0)
    c = -2.0 * (Vx0.T @ X1)
    const = float(v_values @ (X1 * X1))
    if lam:
        c = c + lam * _pairwise_discrepancy(X1, X0, v_values)
    return H, c, const


def _pairwise_discrepancy(X1, X0, v_values) -> np.ndarray:
    # Importance-weighted squared distance between the target and each donor.
    diff = X1[:, None] - X0
    return (v_values[:, None] * diff * diff).sum(axis=0)


def _as_v_values(v, k: int) -> np.ndarray:
    values = v.values if isinstance(v, VWeights) else np.asarray(v, dtype=float)
    if values.shape != (k,):
        raise DimensionMismatch(
            f"{k} predictors but {values.shape} importance weights"
        )
    if values.min() < -SIMPLEX_TOL or abs(values.sum() - 1.0) > 1e-6:
        raise InputError("importance weights must be nonnegative and sum to 1")
    return np.maximum(values, 0.0) / max(values.sum(), 1e-300)


def _check_xmats(X1, X0):
    X1 = np.asarray(X1, dtype=float).reshape(-1)
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim != 2 or X0.shape[0] != X1.size:
        raise DimensionMismatch(
            f"target vector has {X1.size} predictors, donor matrix is {X0.shape}"
        )
    if X0.shape[1] < 1:
        raise DimensionMismatch("at least one donor column required")
    if not (np.isfinite(X1).all() and np.isfinite(X0).all()):
        raise InputError("predictor matrices must be finite")
    return X1, X0


def _donor_labels(donors, n):
    if donors is None:
        return tuple(f"d{i}" for i in range(n))
    donors = tuple(str(d) for d in donors)
    if len(donors) != n:
        raise DimensionMismatch(f"{n} donor columns but {len(donors)} donor ids")
    return donors


def fit_weights(
    X1,
    X0,
    v,
    donors: Sequence | None = None,
    *,
    max_iter: int = 100_000,
) -> WeightVector:
    """Fit donor weights minimizing the importance-weighted predictor mismatch.

    Parameters
    ----------
    X1 : array, shape (k,)
        Target unit's predictor vector.
    X0 : array, shape (k, n)
        Donor predictor matrix, one column per donor.
    v : VWeights or array, shape (k,)
        Predictor-importance weights (nonnegative, summing to 1).
    donors : sequence of str, optional
        Donor ids for the returned vector (defaults to ``d0..d{n-1}``).

    Returns
    -------
    WeightVector
        The simplex minimizer; on degenerate instances with several optima,
        the deterministic limit of the iteration from a uniform start.
    """
    X1, X0 = _check_xmats(X1, X0)
    labels = _donor_labels(donors, X0.shape[1])
    vv = _as_v_values(v, X1.size)
    H, c, const = _qp_terms(X1, X0, vv)
    w, _ = _minimize_simplex_quadratic(H, c, const, max_iter=max_iter)
    return WeightVector(labels, w)


def fit_penalized(
    X1,
    X0,
    v,
    lam: float,
    donors: Sequence | None = None,
    *,
    max_iter: int = 100_000,
) -> WeightVector:
    """Fit donor weights with a pairwise-discrepancy penalty.

    Adds ``lam * sum_j w_j D_j`` to the fitting objective, where ``D_j`` is
    the importance-weighted squared distance between the target's predictors
    and donor ``j``'s. At ``lam=0`` this coincides with :func:`fit_weights`;
    as ``lam`` grows all weight concentrates on the nearest donor.
    """
    if lam < 0:
        raise InputError("penalty strength must be nonnegative")
    X1, X0 = _check_xmats(X1, X0)
    labels = _donor_labels(donors, X0.shape[1])
    vv = _as_v_values(v, X1.size)
    H, c, const = _qp_terms(X1, X0, vv, lam=lam)
    w, _ = _minimize_simplex_quadratic(H, c, const, max_iter=max_iter)
    return WeightVector(labels, w)


# -- predictor-importance search ------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _v_starts(k: int, starts: int, seed: int) -> list[np.ndarray]:
    out = [np.zeros(k)]
    out += [3.0 * np.eye(k)[i] for i in range(k)]
    rng = np.random.default_rng(seed)
    while len(out) < starts:
        out.append(rng.normal(0.0, 1.0, k))
    return out[:starts]


def optimize_v(
    panel: PanelDataset,
    target,
    donors: Sequence | None = None,
    *,
    starts: int = 10,
    nm_max_iter: int | None = None,
    seed: int = 0,
    qp_max_iter: int = 100_000,
    jobs: int = 1,
) -> tuple[VWeights, WeightVector]:
    """Choose predictor-importance weights by pre-period fit quality.

    Runs Nelder-Mead in a softmax parametrization of the importance simplex,
    scoring each candidate by the pre-intervention outcome RMSPE of the
    synthetic path induced by the inner weight fit. The multi-start schedule
    is deterministic: a uniform start, one start favoring each predictor,
    and seeded draws for the remainder; the best start wins, ties broken by
    start index. The returned weights are refit from the uniform solver
    start at the chosen importance vector.
    """
    if donors is None:
        donors = [u for u in panel.units if u != str(target)]
    names = panel.predictor_names
    k = len(names)
    if k == 0:
        raise InputError("panel has no predictors to weight")
    X1, X0 = predictor_matrices(panel, target, donors)
    pre = panel.pre_indices
    if pre.size < 2:
        raise TooFewPrePeriods("importance search needs at least 2 pre-periods")
    if k == 1:
        vw = VWeights(names, np.array([1.0]))
        return vw, fit_weights(X1, X0, vw, donors, max_iter=qp_max_iter)

    y1 = panel.outcome_row(target)[pre]
    Y0 = np.stack([panel.outcome_row(d)[pre] for d in donors], axis=1)
    M = X0 * X1[:, None]
    G = np.einsum("ki,kj->kij", X0, X0)
    x1sq = X1 * X1

    def run_start(z0: np.ndarray) -> tuple[float, np.ndarray]:
        warm: dict[str, np.ndarray | None] = {"w": None}

        def criterion(z):
            vv = _softmax(z)
            H = 2.0 * np.tensordot(vv, G, axes=1)
            c = -2.0 * (M.T @ vv)
            const = float(vv @ x1sq)
            w, _ = _minimize_simplex_quadratic(
                H, c, const, max_iter=qp_max_iter, start=warm["w"]
            )
            warm["w"] = w
            gaps = y1 - Y0 @ w
            return math.sqrt(float(gaps @ gaps) / gaps.size)

        res = _nm_minimize(
            criterion,
            z0,
            method="Nelder-Mead",
            options={
                "maxiter": nm_max_iter if nm_max_iter is not None else 200 * k,
                "xatol": 1e-6,
                "fatol": 1e-12,
            },
        )
        return float(res.fun), _softmax(res.x)

    z_starts = _v_starts(k, starts, seed)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_start, z_starts))
    else:
        results = [run_start(z) for z in z_starts]

    best = min(range(len(results)), key=lambda i: (results[i][0], i))
    v_best = VWeights(names, results[best][1])
    w_best = fit_weights(X1, X0, v_best, donors, max_iter=qp_max_iter)
    return v_best, w_best


def cross_validate_lambda(
    panel: PanelDataset,
    target,
    donors: Sequence | None = None,
    lambda_grid: Sequence[float] = (0.0,),
    *,
    qp_max_iter: int = 100_000,
) -> float:
    """Pick the penalty strength by a time-ordered pre-period split.

    The earlier half of the pre-intervention periods (rounded down) is the
    training window, the remainder the validation window. For each grid
    value, weights are fit to the training-window outcome path (uniform
    importance across training periods) and scored by validation-window
    outcome RMSPE; the best value wins, ties broken toward smaller penalty.
    """
    grid = sorted(set(float(g) for g in lambda_grid))
    if not grid:
        raise InputError("penalty grid is empty")
    if grid[0] < 0:
        raise InputError("penalty strengths must be nonnegative")
    if donors is None:
        donors = [u for u in panel.units if u != str(target)]
    pre = panel.pre_indices
    if pre.size < 4:
        raise TooFewPrePeriods(
            f"cross-validation needs at least 4 pre-periods, panel has {pre.size}"
        )
    train, val = pre[: pre.size // 2], pre[pre.size // 2 :]
    y1 = panel.outcome_row(target)
    Y0 = np.stack([panel.outcome_row(d) for d in donors], axis=1)
    X1cv, X0cv = y1[train], Y0[train]
    vv = np.full(train.size, 1.0 / train.size)

    best_lam, best_score = None, math.inf
    for lam in grid:
        H, c, const = _qp_terms(X1cv, X0cv, vv, lam=lam)
        w, _ = _minimize_simplex_quadratic(H, c, const, max_iter=qp_max_iter)
        gaps = y1[val] - Y0[val] @ w
        score = math.sqrt(float(gaps @ gaps) / val.size)
        if score < best_score:
            best_lam, best_score = lam, score
    return float(best_lam)


# -- paths and errors ------------------------------------------------------


def synthetic_path(weights: WeightVector, panel: PanelDataset) -> np.ndarray:
    """Weighted combination of donor outcome rows, over all periods."""
    rows = np.stack([panel.outcome_row(d) for d in weights.donors], axis=0)
    return weights.weights @ rows


def rmspe(actual, synthetic, periods) -> float:
    """Root mean squared gap between two paths over the listed period indices."""
    actual = np.asarray(actual, dtype=float)
    synthetic = np.asarray(synthetic, dtype=float)
    if actual.shape != synthetic.shape:
        raise DimensionMismatch("paths must have the same length")
    idx = np.asarray(periods, dtype=int)
    if idx.size == 0:
        raise EmptyPeriodSet("RMSPE over an empty period set is undefined")
    gaps = actual[idx] - synthetic[idx]
    return math.sqrt(float(gaps @ gaps) / idx.size)


# -- one-call fit ----------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Settings for a full single-unit fit."""

    estimator: str = "scm"  # "scm" | "penalized"
    penalty_lambda: float | None = None  # fixed strength; None -> cross-validate
    lambda_grid: tuple[float, ...] = (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
    v_mode: str = "optimize"  # "optimize" | "uniform"
    v: VWeights | None = None  # explicit importance weights override v_mode
    v_starts: int = 10
    nm_max_iter: int | None = None
    qp_max_iter: int = 100_000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.estimator not in ("scm", "penalized"):
            raise InputError(f"unknown estimator {self.estimator!r}")
        if self.v_mode not in ("optimize", "uniform"):
            raise InputError(f"unknown v_mode {self.v_mode!r}")


def fit_scm(
    panel: PanelDataset,
    target,
    donors: Sequence | None = None,
    config: FitConfig = FitConfig(),
) -> ScmFit:
    """Fit one unit end to end: importance weights, donor weights, paths.

    For the penalized estimator the importance weights are chosen exactly as
    for the plain estimator and kept fixed; only the donor-weight step gains
    the penalty term.
    """
    target = str(target)
    if donors is None:
        donors = [u for u in panel.units if u != target]
    donors = tuple(str(d) for d in donors)
    X1, X0 = predictor_matrices(panel, target, donors)

    if config.v is not None:
        v = config.v
    elif config.v_mode == "uniform" or len(panel.predictor_names) == 1:
        v = VWeights.uniform(panel.predictor_names)
    else:
        v, _ = optimize_v(
            panel,
            target,
            donors,
            starts=config.v_starts,
            nm_max_iter=config.nm_max_iter,
            seed=config.seed,
            qp_max_iter=config.qp_max_iter,
            jobs=config.jobs,
        )

    lam: float | None = None
    if config.estimator == "penalized":
        lam = (
            config.penalty_lambda
            if config.penalty_lambda is not None
            else cross_validate_lambda(
                panel, target, donors, config.lambda_grid, qp_max_iter=config.qp_max_iter
            )
        )
        w = fit_penalized(X1, X0, v, lam, donors, max_iter=config.qp_max_iter)
    else:
        w = fit_weights(X1, X0, v, donors, max_iter=config.qp_max_iter)

    path = synthetic_path(w, panel)
    actual = panel.outcome_row(target)
    return ScmFit(
        target=target,
        weights=w,
        v=v,
        synthetic_path=path,
        pre_rmspe=rmspe(actual, path, panel.pre_indices),
        post_rmspe=rmspe(actual, path, panel.post_indices),
        penalty_lambda=lam,
        predictor_names=panel.predictor_names,
        synthetic_predictors=X0 @ w.weights,
    )

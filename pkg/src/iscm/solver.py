"""Cross-weight system assembly and de-biased effect solving.

When treatment-affected units sit in each other's donor pools, every naive
gap estimate mixes the true effects through the fitted weights. Stacking one
equation per affected unit gives a linear system whose matrix has ones on
the diagonal and negated cross-fit weights off it; solving it per post
period recovers the de-biased effects.

Two independent solution routes are implemented: Gaussian elimination with
partial pivoting (the production path, factoring the matrix once for all
periods) and a determinant-ratio solve using memoized cofactor expansion
(the cross-check, used up to 10 affected units where its cost is trivial).
Disagreement beyond tolerance is an internal error, never silently ignored.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConsistencyError,
    DimensionMismatch,
    DonorPoolMismatch,
    IllConditionedWarning,
    InputError,
    NotSquare,
    SingularSystem,
    WeightMagnitudeWarning,
)
from .panel import PanelDataset, RoleAssignment
from .scm import ScmFit

__all__ = [
    "OmegaSystem",
    "EffectSeries",
    "InvertibilityReport",
    "build_system",
    "check_invertibility",
    "solve_effects",
    "solve_single_affected",
    "solve_single_affected_simplified",
    "SINGULARITY_TOL",
]

SINGULARITY_TOL = 1e-10
CONDITION_WARN = 1e6
_PATTERN_TOL = 1e-9
_METHODS = ("naive", "restricted", "iscm")


@dataclass(frozen=True)
class EffectSeries:
    """Per-post-period effect estimates for one unit."""

    unit: str
    periods: tuple
    values: np.ndarray
    method: str

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(self.periods))
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (len(self.periods),):
            raise DimensionMismatch("one effect value per post period required")
        if self.method not in _METHODS:
            raise InputError(f"method must be one of {_METHODS}, got {self.method!r}")

    def value_at(self, period) -> float:
        return float(self.values[self.periods.index(period)])


@dataclass(frozen=True)
class OmegaSystem:
    """The assembled cross-weight system.

    ``affected_units`` lists the main treated first, then the potentially
    affected units, matching the row/column order of ``omega``. ``beta``
    maps each post period to the vector of naive gap estimates in the same
    unit order.
    """

    affected_units: tuple[str, ...]
    omega: np.ndarray
    beta: dict

    def __post_init__(self):
        object.__setattr__(self, "affected_units", tuple(self.affected_units))
        om = np.asarray(self.omega, dtype=float)
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        m = len(self.affected_units)
        if om.shape != (m, m):
            raise DimensionMismatch(f"system matrix is {om.shape}, expected ({m}, {m})")
        if not np.all(om.diagonal() == 1.0):
            raise InputError("system matrix must have ones on the diagonal")
        beta = {}
        for t, vec in self.beta.items():
            v = np.asarray(vec, dtype=float)
            if v.shape != (m,):
                raise DimensionMismatch(f"gap vector for period {t!r} has shape {v.shape}")
            v.setflags(write=False)
            beta[t] = v
        if not beta:
            raise InputError("no post periods in the system")
        object.__setattr__(self, "beta", beta)

    @property
    def size(self) -> int:
        return len(self.affected_units)


@dataclass(frozen=True)
class InvertibilityReport:
    """Determinant, conditioning, and detected singular patterns."""

    determinant: float
    condition_estimate: float
    singular_flags: tuple[str, ...]

    @property
    def is_singular(self) -> bool:
        return bool(self.singular_flags)


def build_system(
    main_fit: ScmFit,
    affected_fits,
    roles: RoleAssignment,
    panel: PanelDataset,
) -> OmegaSystem:
    """Assemble the cross-weight matrix and per-period naive gap vectors.

    ``main_fit`` must target the main treated unit with every potentially
    affected unit in its donor pool; each entry of ``affected_fits`` must
    target one potentially affected unit with the main treated and all other
    affected units in its pool.
    """
    units = roles.affected_units
    fits = {str(main_fit.target): main_fit}
    for fit in affected_fits:
        fits[str(fit.target)] = fit
    missing = [u for u in units if u not in fits]
    if missing:
        raise DonorPoolMismatch(f"no fit supplied for affected unit(s) {missing}")
    if str(main_fit.target) != roles.main_treated:
        raise DonorPoolMismatch(
            f"main fit targets {main_fit.target!r}, roles name {roles.main_treated!r}"
        )

    m = len(units)
    omega = np.eye(m)
    for i, row_unit in enumerate(units):
        fit = fits[row_unit]
        if fit.synthetic_path.shape != (panel.n_periods,):
            raise DimensionMismatch(
                f"fit for {row_unit!r} has a synthetic path of length "
                f"{fit.synthetic_path.shape[0]}, panel has {panel.n_periods} periods"
            )
        for j, col_unit in enumerate(units):
            if i == j:
                continue
            try:
                w = fit.weights.weight_for(col_unit)
            except InputError:
                raise DonorPoolMismatch(
                    f"fit for {row_unit!r} lacks {col_unit!r} in its donor pool"
                ) from None
            if abs(w) > 1.0 + 1e-12:
                warnings.warn(
                    f"weight of {col_unit!r} in the fit for {row_unit!r} has "
                    f"magnitude {abs(w):.3f} > 1; the corrected effects may be fragile",
                    WeightMagnitudeWarning,
                    stacklevel=2,
                )
            omega[i, j] = -w

    post = panel.post_indices
    beta = {}
    for t_idx in post:
        t = panel.periods[t_idx]
        beta[t] = np.array(
            [
                panel.outcome_row(u)[t_idx] - fits[u].synthetic_path[t_idx]
                for u in units
            ]
        )
    return OmegaSystem(affected_units=units, omega=omega, beta=beta)


# -- determinants and elimination ------------------------------------------


def _det_expansion(a: np.ndarray) -> float:
    """Determinant by cofactor expansion, memoized over column subsets.

    Exponential-size table (fine for the <=12 sizes it is used at), and a
    genuinely different algorithm from the pivoted elimination path.
    """
    n = a.shape[0]
    full = (1 << n) - 1
    dets = np.empty(full + 1)
    dets[0] = 1.0
    for mask in range(1, full + 1):
        row = n - bin(mask).count("1")
        total = 0.0
        sign = 1.0
        for j in range(n):
            if mask >> j & 1:
                total += sign * a[row, j] * dets[mask ^ (1 << j)]
                sign = -sign
        dets[mask] = total
    return float(dets[full])


def _determinant(a: np.ndarray) -> float:
    if a.shape[0] <= 12:
        return _det_expansion(a)
    sign, logdet = np.linalg.slogdet(a)
    return float(sign * np.exp(logdet))


def _gauss_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` by elimination with partial pivoting.

    ``b`` may hold several right-hand sides as columns; the matrix is
    factored once for all of them.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    single = b.ndim == 1
    if single:
        b = b[:, None]
    n = a.shape[0]
    for col in range(n):
        p = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[p, col]) == 0.0:
            raise SingularSystem("zero pivot during elimination")
        if p != col:
            a[[col, p]] = a[[p, col]]
            b[[col, p]] = b[[p, col]]
        mult = a[col + 1 :, col] / a[col, col]
        a[col + 1 :, col:] -= mult[:, None] * a[col, col:]
        b[col + 1 :] -= mult[:, None] * b[col]
    x = np.empty_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x[:, 0] if single else x


def check_invertibility(
    omega: np.ndarray,
    *,
    singular_tol: float = SINGULARITY_TOL,
    condition_warn: float = CONDITION_WARN,
) -> InvertibilityReport:
    """Determinant, condition estimate, and known singular patterns.

    Flags the two exactly-singular constructions: a pair of units giving
    weight one to each other, and every row's off-diagonal entries summing
    to minus one (no weight left on clean donors anywhere). A matrix is
    reported singular iff a pattern matches or the determinant magnitude is
    below ``singular_tol``; conditioning above ``condition_warn`` only emits
    a warning.
    """
    om = np.asarray(omega, dtype=float)
    if om.ndim != 2 or om.shape[0] != om.shape[1]:
        raise NotSquare(f"expected a square matrix, got shape {om.shape}")
    if np.abs(om.diagonal() - 1.0).max() > 1e-12:
        raise InputError("system matrix must have ones on the diagonal")

    det = _determinant(om)
    with np.errstate(divide="ignore", over="ignore"):
        cond = float(np.linalg.cond(om))

    flags: list[str] = []
    m = om.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            if abs(om[i, j] + 1.0) <= _PATTERN_TOL and abs(om[j, i] + 1.0) <= _PATTERN_TOL:
                flags.append("reciprocal_unit_weight_pair")
                break
        else:
            continue
        break
    offdiag_sums = om.sum(axis=1) - 1.0
    if m > 1 and np.all(np.abs(offdiag_sums + 1.0) <= _PATTERN_TOL):
        flags.append("no_pure_control_weight")
    if abs(det) < singular_tol:
        flags.append("determinant_below_tolerance")

    if not flags and cond > condition_warn:
        warnings.warn(
            f"system matrix condition estimate {cond:.3e} exceeds "
            f"{condition_warn:.0e}; corrected effects may be unreliable",
            IllConditionedWarning,
            stacklevel=2,
        )
    return InvertibilityReport(
        determinant=det, condition_estimate=cond, singular_flags=tuple(flags)
    )


def solve_effects(system: OmegaSystem, *, cross_check: bool = True) -> list[EffectSeries]:
    """Solve the system for every post period.

    The elimination route is the production path; for systems of size at
    most 10 the determinant-ratio route is also evaluated and must agree to
    1e-10 (scaled), otherwise a :class:`ConsistencyError` is raised.
    """
    report = check_invertibility(system.omega)
    if report.is_singular:
        raise SingularSystem(
            f"system matrix is singular ({', '.join(report.singular_flags)}); "
            "the effects are not identified"
        )
    periods = list(system.beta)
    B = np.stack([system.beta[t] for t in periods], axis=1)
    solution = _gauss_solve(system.omega, B)

    if cross_check and system.size <= 10:
        det = _det_expansion(system.omega)
        for p, t in enumerate(periods):
            for j in range(system.size):
                replaced = np.array(system.omega)
                replaced[:, j] = system.beta[t]
                cramer = _det_expansion(replaced) / det
                elim = solution[j, p]
                if abs(cramer - elim) > 1e-10 * max(1.0, abs(elim)):
                    raise ConsistencyError(
                        f"determinant-ratio and elimination solutions disagree "
                        f"for unit index {j} at period {t!r}: {cramer!r} vs {elim!r}"
                    )

    return [
        EffectSeries(
            unit=u, periods=tuple(periods), values=solution[i], method="iscm"
        )
        for i, u in enumerate(system.affected_units)
    ]


def solve_single_affected(
    naive_main: float,
    naive_affected: float,
    main_weight_on_affected: float,
    affected_weight_on_main: float,
) -> tuple[float, float]:
    """Closed-form de-biasing with one potentially affected unit.

    Given the two naive gap estimates and the two cross weights, returns the
    corrected (main effect, spillover effect) pair. Agrees with
    :func:`solve_effects` on the equivalent two-equation system.
    """
    w2 = float(main_weight_on_affected)
    l1 = float(affected_weight_on_main)
    for name, val in (("main_weight_on_affected", w2), ("affected_weight_on_main", l1)):
        if not 0.0 <= val <= 1.0:
            raise InputError(f"{name} must lie in [0, 1], got {val!r}")
    den = 1.0 - w2 * l1
    if abs(den) < SINGULARITY_TOL:
        raise SingularSystem(
            "the two units give weight one to each other; effects are not identified"
        )
    theta = (float(naive_main) + w2 * float(naive_affected)) / den
    gamma = (float(naive_affected) + l1 * float(naive_main)) / den
    return theta, gamma


def solve_single_affected_simplified(
    naive_main: float,
    naive_affected: float,
    main_weight_on_affected: float,
) -> tuple[float, float]:
    """De-biasing when the affected unit's fit omits the main treated.

    With no weight flowing back to the main treated the spillover estimate
    is already unbiased and only the main effect needs the correction term.
    Equals :func:`solve_single_affected` with a zero return weight.
    """
    gamma = float(naive_affected)
    theta = float(naive_main) + float(main_weight_on_affected) * gamma
    return theta, gamma

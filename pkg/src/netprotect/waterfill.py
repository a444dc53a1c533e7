"""Exact solution of the min-max protection problem.

The problem::

    min_{q >= 1, ||q|| <= C}  max_{||sigma|| <= 1}  sum_i (sigma_i y_i / q_i)^2

reduces to ``min_q max_i (y_i / q_i)^2``. Its value ``lambda(C)`` solves
``f(lambda) = C^2`` with ``f(lambda) = sum_i max(1, y_i^2 / lambda)``, and
the optimal protection is ``q_i = max(1, y_i / sqrt(lambda))``: nodes whose
centrality clears the water level ``sqrt(lambda)`` get protection
proportional to their centrality, the rest stay at the floor.

Because ``f`` is piecewise ``(n - k) + S_k / lambda`` (``S_k`` the sum of the
``k`` largest squared centralities), ``lambda(C)`` is found exactly by a
sorted prefix scan; no root finding is involved.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from netprotect.centrality import CentralityVector
from netprotect.errors import InfeasibleBudgetError

logger = logging.getLogger(__name__)

Regime = Literal["low", "intermediate", "high"]

BUDGET_CLAMP = 1e-12
TIE_RTOL = 1e-9


def _as_centrality(y) -> CentralityVector:
    if isinstance(y, CentralityVector):
        return y
    return CentralityVector.from_values(y)


def f_eval(y, lam: float) -> float:
    """``f(lam) = sum_i max(1, y_i^2 / lam)``."""
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    values = _as_centrality(y).values
    return float(np.sum(np.maximum(1.0, values**2 / lam)))


def check_budget(n: int, budget: float) -> float:
    """Return the usable budget, clamping values within ``BUDGET_CLAMP`` below ``sqrt(n)``."""
    floor = np.sqrt(n)
    if not np.isfinite(budget) or budget < floor - BUDGET_CLAMP:
        raise InfeasibleBudgetError(
            f"budget C={float(budget)!r} is below sqrt(n)={float(floor)!r}; q >= 1 cannot fit"
        )
    return float(max(budget, floor))


def _budget_squared(n: int, c: float) -> float:
    # sqrt(n)**2 can round above n; snap so that C = sqrt(n) means exactly q = 1
    if c <= np.sqrt(n) * (1.0 + 4 * np.finfo(float).eps):
        return float(n)
    return c * c


def _breakpoints(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Prefix sums ``S_k`` and ``T_j = f(y_j^2)`` for sorted ``values``.

    ``T_j = (n - j) + S_j / y_j^2`` holds even with ties, and ``T`` is
    nondecreasing in ``j``.
    """
    n = values.size
    sq = values**2
    prefix = np.cumsum(sq)
    t = (n - np.arange(1, n + 1)) + prefix / sq
    return prefix, t


@dataclass(frozen=True)
class Thresholds:
    """Budget thresholds separating the three regimes.

    Below ``low`` only the most central node is protected; above ``high``
    every node is.
    """

    low: float
    high: float


def _thresholds(t: np.ndarray) -> Thresholds:
    low = t[1] if t.size > 1 else t[0]
    return Thresholds(float(np.sqrt(low)), float(np.sqrt(t[-1])))


def thresholds(y) -> Thresholds:
    """``C_low = sqrt(n + y_1^2/y_2^2 - 1)`` and ``C_high = ||y|| / y_n``."""
    _, t = _breakpoints(_as_centrality(y).values)
    return _thresholds(t)


@dataclass(frozen=True)
class ProtectionSolution:
    """Optimal protection for one budget; ``q_star`` is in original node order."""

    q_star: np.ndarray
    lambda_star: float
    k_active: int
    regime: Regime
    budget: float
    thresholds: Thresholds

    @property
    def n(self) -> int:
        return self.q_star.size


def _active_count(t: np.ndarray, c2: float) -> int:
    # k(C) = #{j : f(y_j^2) < C^2}
    return int(np.searchsorted(t, c2, side="left"))


def _regime(c2: float, t: np.ndarray) -> Regime:
    # compared on squared budgets so regime and k(C) share one set of breakpoints;
    # C = C_high counts as high (both regime formulas agree there)
    if c2 >= t[-1]:
        return "high"
    if c2 < (t[1] if t.size > 1 else t[0]):
        return "low"
    return "intermediate"


def solve(y, budget: float) -> ProtectionSolution:
    """Optimal protection ``q*`` and worst-case value ``lambda(C)`` for centralities ``y``.

    Parameters
    ----------
    y : CentralityVector or array_like
        Positive centralities. Plain arrays are sorted internally.
    budget : float
        Protection budget ``C >= sqrt(n)``.

    Returns
    -------
    ProtectionSolution
    """
    y = _as_centrality(y)
    n = y.n
    c = check_budget(n, budget)
    c2 = _budget_squared(n, c)
    values = y.values
    prefix, t = _breakpoints(values)
    k = _active_count(t, c2)
    if k == 0:
        lam = float(values[0] ** 2)
        q_sorted = np.ones(n)
    else:
        lam = float(prefix[k - 1] / (c2 - n + k))
        q_sorted = np.ones(n)
        # floor guards the k-th node against rounding just past its breakpoint
        q_sorted[:k] = np.maximum(1.0, values[:k] / np.sqrt(lam))
    return ProtectionSolution(
        q_star=y.to_original(q_sorted),
        lambda_star=lam,
        k_active=k,
        regime=_regime(c2, t),
        budget=c,
        thresholds=_thresholds(t),
    )


def classify_regime(y, budget: float) -> tuple[Regime, Thresholds]:
    y = _as_centrality(y)
    c = check_budget(y.n, budget)
    _, t = _breakpoints(y.values)
    return _regime(_budget_squared(y.n, c), t), _thresholds(t)


def objective_value(y, q) -> float:
    """Worst-case variance ``max_i (y_i / q_i)^2`` for protection ``q`` (original order)."""
    y = _as_centrality(y)
    ratios = y.original() / np.asarray(q, dtype=float)
    return float(np.max(ratios**2))


def worst_case_shock(y, q) -> np.ndarray:
    """Unit-norm shock std-devs attaining the inner maximum.

    Mass is spread uniformly (in ``sigma^2``) over the nodes maximizing
    ``y_i / q_i`` up to relative ``TIE_RTOL``.
    """
    y = _as_centrality(y)
    q = np.asarray(q, dtype=float)
    if q.shape != (y.n,):
        raise ValueError(f"q has shape {q.shape}, expected ({y.n},)")
    ratios = y.original() / q
    top = ratios.max()
    ties = ratios >= top * (1.0 - TIE_RTOL)
    sigma = np.zeros(y.n)
    sigma[ties] = np.sqrt(1.0 / ties.sum())
    return sigma


def shock_value(y, q, sigma) -> float:
    """``sum_i (sigma_i y_i / q_i)^2``."""
    y = _as_centrality(y)
    return float(np.sum((np.asarray(sigma) * y.original() / np.asarray(q)) ** 2))


@dataclass(frozen=True)
class KKTCertificate:
    """Multipliers and residuals witnessing optimality of a protection vector.

    Refers to the epigraph form ``min psi  s.t. (y_i/q_i)^2 <= psi,
    ||q||^2 <= C^2, q >= 1`` with multipliers ``alpha`` (value constraints),
    ``gamma`` (budget) and ``delta`` (floors).
    """

    psi: float
    alpha: np.ndarray
    gamma: float
    delta: np.ndarray
    residuals: dict[str, float]
    tol: float
    max_violation: float = field(init=False)
    worst: str = field(init=False)

    def __post_init__(self):
        worst = max(self.residuals, key=self.residuals.get)
        object.__setattr__(self, "worst", worst)
        object.__setattr__(self, "max_violation", float(self.residuals[worst]))

    @property
    def valid(self) -> bool:
        return self.max_violation <= self.tol


def kkt_verify(y, sol: ProtectionSolution, tol: float = 1e-9) -> KKTCertificate:
    """Check ``sol`` against the KKT conditions and assemble multipliers.

    The multipliers are rebuilt from ``sol.q_star`` alone, so a perturbed or
    suboptimal ``q`` yields residuals well above ``tol``. All residuals are
    scaled to be dimensionless.
    """
    y = _as_centrality(y)
    q = y.to_sorted(sol.q_star)
    values = y.values
    c = sol.budget
    ratio2 = (values / q) ** 2
    psi = float(ratio2.max())

    active = q > 1.0 + TIE_RTOL
    if active.any():
        # stationarity with delta_i = 0 on active nodes: alpha_i = gamma q_i^4 / y_i^2
        weights = np.where(active, q**4 / values**2, 0.0)
        gamma = 1.0 / weights.sum()
        alpha = gamma * weights
    else:
        tight = ratio2 >= psi * (1.0 - TIE_RTOL)
        alpha = tight / tight.sum()
        gamma = float(np.max(alpha * values**2 / q**4))
    grad_value = 2.0 * alpha * values**2 / q**3
    delta = 2.0 * gamma * q - grad_value
    delta = np.where(active, 0.0, delta)
    stationarity = grad_value - 2.0 * gamma * q + delta
    stat_scale = np.maximum(1.0, np.maximum(grad_value, 2.0 * gamma * q))

    norm2 = float(np.sum(q**2))
    closed_form = np.maximum(1.0, values / np.sqrt(psi))
    residuals = {
        "floor q >= 1": float(np.max(np.maximum(0.0, 1.0 - q))),
        "value (y/q)^2 <= psi": float(np.max(np.maximum(0.0, ratio2 - psi)) / psi),
        "budget ||q|| = C": abs(np.sqrt(norm2) - c) / c,
        "alpha >= 0": float(np.max(np.maximum(0.0, -alpha))),
        "sum alpha = 1": abs(1.0 - float(alpha.sum())),
        "delta >= 0": float(np.max(np.maximum(0.0, -delta) / stat_scale)),
        "gamma >= 0": max(0.0, -gamma),
        "stationarity": float(np.max(np.abs(stationarity) / stat_scale)),
        "slackness alpha": float(np.max(np.abs(alpha * (ratio2 - psi))) / psi),
        "slackness delta": float(np.max(np.abs(delta * (q - 1.0)) / stat_scale)),
        "closed form q = max(1, y/sqrt(psi))": float(np.max(np.abs(q - closed_form) / closed_form)),
        "f(psi) = C^2": abs(float(np.sum(np.maximum(1.0, values**2 / psi))) - c * c) / (c * c),
    }
    cert = KKTCertificate(
        psi=psi,
        alpha=y.to_original(alpha),
        gamma=float(gamma),
        delta=y.to_original(delta),
        residuals=residuals,
        tol=tol,
    )
    if not cert.valid:
        logger.info("KKT check failed: %s = %.3g", cert.worst, cert.max_violation)
    return cert


@dataclass(frozen=True)
class DiffuseBaseline:
    """Protection proportional to centrality spending the full budget.

    ``q = C y / ||y||``. The floor ``q >= 1`` is not enforced; ``feasible``
    reports whether it happens to hold.
    """

    q: np.ndarray
    value: float
    feasible: bool


def diffuse_baseline(y, budget: float) -> DiffuseBaseline:
    y = _as_centrality(y)
    c = check_budget(y.n, budget)
    norm2 = float(np.sum(y.values**2))
    q = c * y.original() / np.sqrt(norm2)
    return DiffuseBaseline(q=q, value=norm2 / (c * c), feasible=bool(np.all(q >= 1.0)))


@dataclass(frozen=True)
class SweepRow:
    budget: float
    lambda_opt: float
    lambda_diff: float
    k_active: int
    regime: Regime
    diffuse_feasible: bool
    q_star: np.ndarray

    @property
    def ratio(self) -> float:
        return self.lambda_opt / self.lambda_diff


@dataclass(frozen=True)
class SweepResult:
    rows: list[SweepRow]
    centrality: CentralityVector

    @property
    def budgets(self) -> np.ndarray:
        return np.array([r.budget for r in self.rows])

    def q_matrix(self) -> np.ndarray:
        """Protections per budget, shape ``(len(rows), n)``."""
        return np.vstack([r.q_star for r in self.rows])


def budget_grid(n: int, low: float | None = None, high: float | None = None,
                points: int = 50, spacing: str = "log") -> np.ndarray:
    """Budget grid, by default 50 log-spaced points from ``sqrt(n)`` to ``n``."""
    low = np.sqrt(n) if low is None else low
    high = float(n) if high is None else high
    if points < 1:
        raise ValueError("grid needs at least one point")
    if spacing == "log":
        grid = np.geomspace(low, high, points)
    elif spacing == "linear":
        grid = np.linspace(low, high, points)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    # pin the endpoints, geomspace may round them
    grid[0] = low
    if points > 1:
        grid[-1] = high
    return grid


def sweep(y, budgets, workers: int = 1) -> SweepResult:
    """Solve and compare with the diffuse baseline on each budget of a strictly increasing grid."""
    y = _as_centrality(y)
    budgets = np.asarray(budgets, dtype=float).ravel()
    if budgets.size == 0:
        raise ValueError("empty budget grid")
    if np.any(np.diff(budgets) <= 0):
        raise ValueError("budget grid must be strictly increasing")
    check_budget(y.n, float(budgets[0]))

    def row(c: float) -> SweepRow:
        sol = solve(y, c)
        base = diffuse_baseline(y, c)
        return SweepRow(c, sol.lambda_star, base.value, sol.k_active, sol.regime,
                        base.feasible, sol.q_star)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, budgets))
    else:
        rows = [row(c) for c in budgets]
    return SweepResult(rows, y)

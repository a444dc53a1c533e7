"""Independent checks of the waterfilling solver.

Nothing here calls :func:`netprotect.waterfill.solve`; callers pass the
solver's value in for comparison.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from netprotect.centrality import CentralityVector
from netprotect.errors import InfeasibleBudgetError
from netprotect.model import InfluenceOperator

Method = Literal["grid", "subgradient", "montecarlo"]

MAX_GRID_NODES = 4
MC_BLOCK = 1 << 14


@dataclass(frozen=True)
class OracleReport:
    oracle_value: float
    solver_value: float
    method: Method
    samples_or_resolution: float
    converged: bool = True
    stderr: float = float("nan")

    @property
    def gap(self) -> float:
        return abs(self.oracle_value - self.solver_value)

    @property
    def relative_gap(self) -> float:
        return self.gap / abs(self.solver_value)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "oracle_value": self.oracle_value,
            "solver_value": self.solver_value,
            "gap": self.gap,
            "relative_gap": self.relative_gap,
            "samples_or_resolution": self.samples_or_resolution,
            "converged": self.converged,
        }
        if np.isfinite(self.stderr):
            out["stderr"] = self.stderr
        return out


def _original_values(y) -> np.ndarray:
    if isinstance(y, CentralityVector):
        return y.original()
    return np.asarray(y, dtype=float).ravel()


def grid_minimum(y, budget: float, resolution: float) -> tuple[float, np.ndarray]:
    """Exact minimum of ``max_i (y_i/q_i)^2`` over the grid ``q_i in {1, 1+r, 1+2r, ...}``, ``||q|| <= C``.

    The objective is nonincreasing in every coordinate, so for fixed leading
    coordinates the best last coordinate is the largest feasible grid value.
    Enumerating the leading ``n - 1`` coordinates therefore still returns the
    minimum over the full grid.
    """
    y = _original_values(y)
    n = y.size
    if n > MAX_GRID_NODES:
        raise ValueError(f"grid oracle supports n <= {MAX_GRID_NODES}, got {n}")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    c2 = budget * budget * (1.0 + 1e-12)
    if c2 < n:
        raise InfeasibleBudgetError(f"empty grid: budget {budget} below sqrt({n})")
    top = int(np.floor((np.sqrt(c2 - (n - 1)) - 1.0) / resolution + 1e-9))
    axis = 1.0 + resolution * np.arange(top + 1)

    def last_coordinate(used: np.ndarray) -> np.ndarray:
        room = c2 - used
        with np.errstate(invalid="ignore"):
            k = np.floor((np.sqrt(np.maximum(room, 0.0)) - 1.0) / resolution + 1e-9)
        return np.where(room >= 1.0, 1.0 + resolution * k, np.nan)

    if n == 1:
        q = np.array([last_coordinate(np.zeros(1))[0]])
        return float((y[0] / q[0]) ** 2), q

    best = np.inf
    best_q = None
    # loop over all but the last two leading coordinates, vectorize the next one
    outer = n - 2
    for head in itertools.product(range(axis.size), repeat=outer):
        head_q = axis[list(head)]
        used = float(np.sum(head_q**2))
        if used + 1.0 * (n - outer) > c2:
            continue
        mid = axis
        last = last_coordinate(used + mid**2)
        ok = np.isfinite(last)
        if not ok.any():
            continue
        ratios = [np.full(mid.size, np.max((y[:outer] / head_q) ** 2)) if outer else np.zeros(mid.size),
                  (y[outer] / mid) ** 2, (y[outer + 1] / last) ** 2]
        vals = np.where(ok, np.maximum.reduce(ratios), np.inf)
        j = int(np.argmin(vals))
        if vals[j] < best:
            best = float(vals[j])
            best_q = np.concatenate([head_q, [mid[j], last[j]]])
    return best, best_q


def brute_force_minmax(y, budget: float, solver_value: float, resolution: float = 0.005) -> OracleReport:
    value, _ = grid_minimum(y, budget, resolution)
    return OracleReport(value, float(solver_value), "grid", resolution)


def project_box_ball(z: np.ndarray, budget: float) -> np.ndarray:
    """Map ``z`` onto ``{q >= 1, ||q|| <= C}`` by alternating floor clipping and rescaling.

    Each pass clips to the floor, then shrinks the coordinates above the floor
    so the norm fits; at most ``n + 1`` passes since the clipped set only grows.
    """
    c2 = budget * budget
    q = np.maximum(np.asarray(z, dtype=float), 1.0)
    for _ in range(q.size + 1):
        free = q > 1.0
        floor_mass = float(np.count_nonzero(~free))
        free_mass = float(np.sum(q[free] ** 2))
        if free_mass + floor_mass <= c2 * (1.0 + 1e-15):
            return q
        q[free] *= np.sqrt(max(c2 - floor_mass, 0.0) / free_mass)
        np.maximum(q, 1.0, out=q)
    return q


def subgradient_minmax(
    y,
    budget: float,
    solver_value: float,
    iters: int = 100_000,
    patience: int = 50,
    rtol: float = 1e-4,
) -> OracleReport:
    """Projected subgradient descent on ``q -> max_i (y_i / q_i)^2``.

    Steps follow Polyak's rule against an estimated target level
    ``best - delta``; ``delta`` halves whenever ``patience`` consecutive steps
    fail to improve the best value by ``delta / 2``. Stops when ``delta``
    falls to rounding level or ``iters`` is reached. ``converged`` reports
    whether the best value is within ``rtol`` of ``solver_value``.
    """
    y = _original_values(y)
    n = y.size
    if budget * budget < n * (1.0 - 1e-12):
        raise InfeasibleBudgetError(f"budget {budget} below sqrt({n})")
    q = project_box_ball(np.full(n, budget / np.sqrt(n)), budget)
    best = float(np.max((y / q) ** 2))
    delta = 0.5 * best
    stall = 0
    for _ in range(iters):
        ratio2 = (y / q) ** 2
        i = int(np.argmax(ratio2))
        value = float(ratio2[i])
        if value < best:
            if value <= best - delta / 2:
                stall = 0
            best = value
        else:
            stall += 1
        if stall >= patience:
            delta /= 2
            stall = 0
        if delta < best * 1e-15:
            break
        grad = -2.0 * y[i] ** 2 / q[i] ** 3
        z = q.copy()
        z[i] -= (value - (best - delta)) / grad
        q = project_box_ball(z, budget)
    converged = abs(best - solver_value) <= rtol * abs(solver_value)
    return OracleReport(best, float(solver_value), "subgradient", iters, converged=converged)


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Empirical variances with standard errors.

    Shocks have known mean zero, so variances are estimated as sample means
    of ``||x||^2`` and ``mean(x)^2``; the standard errors are the sample
    standard deviations of those quantities over ``sqrt(samples)``.
    """

    total_variance: float
    mean_variance: float
    total_stderr: float
    mean_stderr: float
    samples: int

    def __iter__(self):
        yield self.total_variance
        yield self.mean_variance


def _block(op_l: np.ndarray, scale: np.ndarray, seed: int, index: int, size: int) -> np.ndarray:
    # counter-based substream: block i always draws the same numbers
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, index]))
    eta = rng.standard_normal((size, scale.size)) * scale
    x = eta @ op_l.T
    total = np.einsum("ij,ij->i", x, x)
    mean = x.mean(axis=1)
    return np.array([total.sum(), (total**2).sum(), (mean**2).sum(), (mean**4).sum()])


def monte_carlo_variance(
    op: InfluenceOperator,
    q,
    sigma,
    samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> MonteCarloEstimate:
    """Sample ``x = L Q^{-1} eta`` with independent Gaussian ``eta_i ~ N(0, sigma_i^2)``.

    Samples are drawn in fixed-size blocks, each from its own Philox counter
    stream keyed by ``seed``, so results do not depend on ``workers``.
    """
    q = np.asarray(q, dtype=float).ravel()
    sigma = np.asarray(sigma, dtype=float).ravel()
    if q.size != op.n or sigma.size != op.n:
        raise ValueError("q and sigma must match the operator dimension")
    if abs(float(np.sum(sigma**2)) - 1.0) > 1e-9:
        raise ValueError(f"shock variances sum to {float(np.sum(sigma**2)):.12g}, expected 1")
    if np.any(q < 1):
        raise ValueError("protections must be >= 1")
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    scale = sigma / q
    sizes = [MC_BLOCK] * (samples // MC_BLOCK)
    if samples % MC_BLOCK:
        sizes.append(samples % MC_BLOCK)
    jobs = [(op.l, scale, seed, i, s) for i, s in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block(*a), jobs))
    else:
        parts = [_block(*a) for a in jobs]
    s_tot, s_tot2, s_mean, s_mean2 = np.sum(parts, axis=0)
    total = s_tot / samples
    mean = s_mean / samples
    total_sd = np.sqrt(max(s_tot2 / samples - total**2, 0.0) * samples / (samples - 1))
    mean_sd = np.sqrt(max(s_mean2 / samples - mean**2, 0.0) * samples / (samples - 1))
    return MonteCarloEstimate(
        float(total), float(mean),
        float(total_sd / np.sqrt(samples)), float(mean_sd / np.sqrt(samples)),
        samples,
    )


def analytic_variances(op: InfluenceOperator, q, sigma) -> tuple[float, float]:
    """``sum_i Var[x_i]`` and ``Var[mean(x)]`` from the column norms and sums of ``L``."""
    q = np.asarray(q, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ell = op.column_norms
    v = op.column_sums / op.n
    return float(np.sum((sigma * ell / q) ** 2)), float(np.sum((sigma * v / q) ** 2))

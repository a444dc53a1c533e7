"""Network equilibrium models ``x = (I - Lambda)^{-1} D c``.

Three builders cover the standard model classes (production networks,
coordination games / Friedkin-Johnsen dynamics, quadratic games). A raw
``(Lambda, d)`` pair can also be wrapped directly with :func:`build_raw`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.linalg

from netprotect.errors import ConvergenceError, ModelError, SingularSystemError

Provenance = Literal["production", "coordination", "quadratic", "raw"]

ROW_SUM_TOL = 1e-12
STOCHASTIC_TOL = 1e-9
RADIUS_MARGIN = 1e-9
RESIDUAL_TOL = 1e-10


def spectral_radius_estimate(lam: np.ndarray, max_iter: int | None = None) -> float:
    """Upper estimate of the spectral radius of a nonnegative matrix.

    Power iteration on the all-ones vector: ``max(Lambda^k 1)^(1/k)`` is the
    infinity norm of ``Lambda^k`` to the power ``1/k``, which bounds the
    spectral radius from above and converges to it (Gelfand). Iteration
    stops as soon as the bound drops below ``1 - RADIUS_MARGIN``, or after
    ``10 n`` steps.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[0]
    if n == 0:
        return 0.0
    if max_iter is None:
        max_iter = 10 * n
    u = np.ones(n)
    log_norm = 0.0
    estimate = 1.0
    for k in range(1, max_iter + 1):
        u = lam @ u
        top = u.max()
        if top <= 0.0:
            return 0.0
        # renormalize to avoid underflow on long runs
        log_norm += np.log(top)
        u /= top
        estimate = float(np.exp(log_norm / k))
        if estimate < 1.0 - RADIUS_MARGIN:
            return estimate
    return estimate


@dataclass(frozen=True)
class NetworkModel:
    """The pair ``(Lambda, D)`` of an equilibrium model, ``D`` stored as its diagonal."""

    lam: np.ndarray
    d: np.ndarray
    provenance: Provenance = "raw"
    radius: float = field(init=False, repr=False)

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        d = np.array(self.d, dtype=float).ravel()
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise ModelError(f"Lambda must be square, got shape {lam.shape}")
        if d.shape[0] != lam.shape[0]:
            raise ModelError(f"d has length {d.shape[0]}, expected {lam.shape[0]}")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(d))):
            raise ModelError("Lambda and d must be finite")
        if np.any(lam < 0):
            i, j = np.argwhere(lam < 0)[0]
            raise ModelError(f"Lambda[{i},{j}] = {lam[i, j]} is negative")
        sums = lam.sum(axis=1)
        if np.any(sums > 1.0 + ROW_SUM_TOL):
            i = int(np.argmax(sums))
            raise ModelError(f"Lambda row {i} sums to {float(sums[i]):.12g} > 1 (not sub-stochastic)")
        if np.any((d < 0) | (d > 1)):
            i = int(np.argmax((d < 0) | (d > 1)))
            raise ModelError(f"d[{i}] = {d[i]} outside [0, 1]")
        radius = spectral_radius_estimate(lam)
        if radius >= 1.0 - RADIUS_MARGIN:
            raise ModelError(
                f"spectral radius estimate {radius:.12g} is not below 1 - {RADIUS_MARGIN:g}"
            )
        lam.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "radius", radius)

    @property
    def n(self) -> int:
        return self.lam.shape[0]


@dataclass(frozen=True)
class InfluenceOperator:
    """``L = (I - Lambda)^{-1} D`` with lazily cached column statistics."""

    l: np.ndarray

    @property
    def n(self) -> int:
        return self.l.shape[0]

    @cached_property
    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.l, axis=0)

    @cached_property
    def column_sums(self) -> np.ndarray:
        return self.l.sum(axis=0)

    def apply(self, c: np.ndarray) -> np.ndarray:
        return self.l @ np.asarray(c, dtype=float)


@dataclass(frozen=True)
class EquilibriumInput:
    """Reference inputs ``c_bar``, shock std-devs ``sigma`` and protections ``q``.

    Shocks enter the equilibrium as ``c = c_bar + Q^{-1} eta`` with
    ``Cov(eta) = diag(sigma^2)``.
    """

    c_bar: np.ndarray
    shock_sigma: np.ndarray
    protection_q: np.ndarray

    def __post_init__(self):
        c_bar = np.asarray(self.c_bar, dtype=float).ravel()
        sigma = np.asarray(self.shock_sigma, dtype=float).ravel()
        q = np.asarray(self.protection_q, dtype=float).ravel()
        if not (c_bar.shape == sigma.shape == q.shape):
            raise ModelError(
                f"dimension mismatch: c_bar {c_bar.shape}, sigma {sigma.shape}, q {q.shape}"
            )
        if np.any(sigma < 0):
            raise ModelError("shock standard deviations must be nonnegative")
        if np.any(q < 1):
            i = int(np.argmin(q))
            raise ModelError(f"protection q[{i}] = {q[i]} < 1")
        object.__setattr__(self, "c_bar", c_bar)
        object.__setattr__(self, "shock_sigma", sigma)
        object.__setattr__(self, "protection_q", q)

    def in_shock_set(self, tol: float = 1e-9) -> bool:
        """Whether ``sigma`` lies in the unit-total-variance shock set."""
        return abs(float(np.sum(self.shock_sigma**2)) - 1.0) <= tol


def build_raw(lam, d=None) -> NetworkModel:
    lam = np.asarray(lam, dtype=float)
    if d is None:
        d = np.ones(lam.shape[0])
    return NetworkModel(lam, d, provenance="raw")


def build_production(beta: float, p) -> NetworkModel:
    """Production network ``x = beta P x + (1 - beta) c``.

    ``p`` must be row-stochastic; ``Lambda = beta P`` and ``D = (1 - beta) I``.
    """
    if not 0.0 < beta < 1.0:
        raise ModelError(f"beta must lie in (0, 1), got {beta}")
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ModelError(f"P must be square, got shape {p.shape}")
    if np.any(p < 0):
        raise ModelError("P has negative entries")
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)
    if bad.size:
        i = int(bad[0])
        raise ModelError(f"P row {i} sums to {float(sums[i]):.12g}, not 1")
    n = p.shape[0]
    return NetworkModel(beta * p, np.full(n, 1.0 - beta), provenance="production")


def _reaches(adjacency: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Mask of nodes having a directed path (edge i->j iff adjacency[i, j] > 0) into ``targets``."""
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[targets] = True
    queue = deque(int(t) for t in targets)
    incoming = adjacency.T > 0
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(incoming[j] & ~seen):
            seen[i] = True
            queue.append(int(i))
    return seen


def build_coordination(w, rho) -> NetworkModel:
    """Coordination game with anchors (also the Friedkin-Johnsen model).

    ``Lambda_ij = W_ij / (w_i + rho_i)`` and ``D_ii = rho_i / (w_i + rho_i)``
    where ``w_i`` is the i-th row sum of ``W``. Every node must reach an
    anchored node (``rho_i > 0``) through the graph of ``W``.
    """
    w = np.asarray(w, dtype=float)
    rho = np.asarray(rho, dtype=float).ravel()
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ModelError(f"W must be square, got shape {w.shape}")
    if rho.shape[0] != w.shape[0]:
        raise ModelError(f"rho has length {rho.shape[0]}, expected {w.shape[0]}")
    if np.any(w < 0) or np.any(rho < 0):
        raise ModelError("W and rho must be nonnegative")
    wsum = w.sum(axis=1)
    if np.any(wsum <= 0):
        i = int(np.flatnonzero(wsum <= 0)[0])
        raise ModelError(f"node {i} has no neighbours (w_{i} = 0)")
    anchored = np.flatnonzero(rho > 0)
    if anchored.size == 0:
        raise ModelError("no anchored node (rho = 0 everywhere): anchored set is not globally reachable")
    reached = _reaches(w, anchored)
    if not reached.all():
        i = int(np.flatnonzero(~reached)[0])
        raise ModelError(f"anchored set is not globally reachable: node {i} cannot reach it")
    denom = wsum + rho
    return NetworkModel(w / denom[:, None], rho / denom, provenance="coordination")


def build_quadratic(beta: float, w) -> NetworkModel:
    """Quadratic game with complementarities: ``Lambda = beta W``, ``D = I``."""
    w = np.asarray(w, dtype=float)
    if beta < 0:
        raise ModelError(f"beta must be nonnegative, got {beta}")
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ModelError(f"W must be square, got shape {w.shape}")
    if np.any(w < 0):
        raise ModelError("W has negative entries")
    bw = beta * w.sum(axis=1)
    if np.any(bw >= 1.0):
        i = int(np.argmax(bw))
        raise ModelError(f"beta * w_{i} = {float(bw[i]):.12g} >= 1")
    return NetworkModel(beta * w, np.ones(w.shape[0]), provenance="quadratic")


def star_adjacency(n_leaves: int) -> np.ndarray:
    """Adjacency of the undirected star with node 0 as centre."""
    a = np.zeros((n_leaves + 1, n_leaves + 1))
    a[0, 1:] = 1.0
    a[1:, 0] = 1.0
    return a


def build_star(n_leaves: int, beta: float) -> NetworkModel:
    """Production model on a star with degree-normalized ``P``."""
    if n_leaves < 2:
        raise ModelError(f"star needs at least 2 leaves, got {n_leaves}")
    a = star_adjacency(n_leaves)
    return build_production(beta, a / a.sum(axis=1, keepdims=True))


def influence(model: NetworkModel) -> InfluenceOperator:
    """Solve ``(I - Lambda) L = D`` by one LU factorization.

    Columns with ``d_i = 0`` are zero and skipped. Raises
    :class:`SingularSystemError` if the residual exceeds ``RESIDUAL_TOL``.
    """
    n = model.n
    a = np.eye(n) - model.lam
    l = np.zeros((n, n))
    support = np.flatnonzero(model.d > 0)
    if support.size:
        try:
            lu = scipy.linalg.lu_factor(a, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover
            raise SingularSystemError(f"LU factorization failed: {exc}") from exc
        rhs = np.zeros((n, support.size))
        rhs[support, np.arange(support.size)] = model.d[support]
        l[:, support] = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    residual = float(np.max(np.abs(a @ l - np.diag(model.d)))) if n else 0.0
    if not np.isfinite(residual) or residual > RESIDUAL_TOL:
        raise SingularSystemError(
            f"(I - Lambda) L - D residual {residual:.3g} exceeds {RESIDUAL_TOL:g}; "
            "spectral radius too close to 1"
        )
    # L >= 0 exactly; drop rounding noise below zero
    np.maximum(l, 0.0, out=l)
    l.setflags(write=False)
    return InfluenceOperator(l)


def equilibrium(op: InfluenceOperator, inp: EquilibriumInput, eta) -> np.ndarray:
    """Equilibrium ``x = L (c_bar + Q^{-1} eta)``."""
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.shape[0] != op.n or inp.c_bar.shape[0] != op.n:
        raise ModelError(
            f"dimension mismatch: operator has n={op.n}, "
            f"c_bar has {inp.c_bar.shape[0]}, eta has {eta.shape[0]}"
        )
    return op.l @ (inp.c_bar + eta / inp.protection_q)


def iterate_dynamics(
    model: NetworkModel,
    c,
    x0,
    tol: float = 1e-12,
    max_steps: int = 100_000,
) -> tuple[np.ndarray, int]:
    """Run ``x(k+1) = Lambda x(k) + D c`` until successive iterates differ by < ``tol``.

    With ``x0 = c`` this is the Friedkin-Johnsen opinion dynamics. Returns the
    final iterate and the number of steps taken.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    c = np.asarray(c, dtype=float).ravel()
    x = np.asarray(x0, dtype=float).ravel().copy()
    if c.shape[0] != model.n or x.shape[0] != model.n:
        raise ModelError("dimension mismatch between model, c and x0")
    dc = model.d * c
    residual = np.inf
    for step in range(1, max_steps + 1):
        x_next = model.lam @ x + dc
        residual = float(np.max(np.abs(x_next - x))) if model.n else 0.0
        x = x_next
        if residual < tol:
            return x, step
    raise ConvergenceError(
        f"dynamics did not converge in {max_steps} steps (last residual {residual:.3g})",
        residual,
    )

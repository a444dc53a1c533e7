"""Node centralities driving the two protection objectives.

``ell`` (column 2-norms of ``L``) parameterizes the total variance of the
equilibrium; ``bonacich`` (``L' 1 / n``) parameterizes the variance of its
arithmetic mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from netprotect.errors import CentralityError, ModelError
from netprotect.model import InfluenceOperator

Kind = Literal["ell", "bonacich", "raw"]


@dataclass(frozen=True)
class CentralityVector:
    """Centralities sorted in decreasing order.

    ``perm[k]`` is the original node index of ``values[k]``. Ties are ordered
    by ascending original index.
    """

    values: np.ndarray
    kind: Kind
    perm: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        perm = np.asarray(self.perm, dtype=np.intp).ravel()
        if values.size == 0:
            raise CentralityError("empty centrality vector")
        if perm.shape != values.shape or not np.array_equal(np.sort(perm), np.arange(values.size)):
            raise CentralityError("perm is not a permutation of the node indices")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            k = int(np.flatnonzero(~(values > 0))[0])
            raise CentralityError(f"node {perm[k]} has nonpositive centrality {values[k]}")
        if np.any(np.diff(values) > 0):
            raise CentralityError("centrality values are not sorted in decreasing order")
        values.setflags(write=False)
        perm.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "perm", perm)

    @classmethod
    def from_values(cls, values, kind: Kind = "raw") -> "CentralityVector":
        """Sort arbitrary-order positive values into a centrality vector."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size and np.any(~(values > 0)):
            i = int(np.flatnonzero(~(values > 0))[0])
            raise CentralityError(f"node {i} has nonpositive centrality {values[i]}")
        perm = np.argsort(-values, kind="stable")
        return cls(values[perm], kind, perm)

    @property
    def n(self) -> int:
        return self.values.size

    def original(self) -> np.ndarray:
        """Values in original node order."""
        return self.to_original(self.values)

    def to_original(self, sorted_array) -> np.ndarray:
        """Scatter an array aligned with ``values`` back to original node order."""
        out = np.empty(self.n)
        out[self.perm] = sorted_array
        return out

    def to_sorted(self, original_array) -> np.ndarray:
        return np.asarray(original_array, dtype=float)[self.perm]


def ell_centrality(op: InfluenceOperator) -> CentralityVector:
    """Euclidean norm of each column of ``L``."""
    return CentralityVector.from_values(op.column_norms, kind="ell")


def bonacich_centrality(op: InfluenceOperator) -> CentralityVector:
    """Bonacich centrality ``v = L' 1 / n``."""
    return CentralityVector.from_values(op.column_sums / op.n, kind="bonacich")


class StarCentralities(NamedTuple):
    v_center: float
    v_leaf: float
    ell_center: float
    ell_leaf: float


def star_closed_forms(n_leaves: int, beta: float) -> StarCentralities:
    """Closed-form ``v`` and ``ell`` on the star with degree-normalized ``P``.

    The formulas are written in terms of the total node count
    ``n = n_leaves + 1``; that convention is the one reproducing the
    numerically computed Leontief matrix (see ``tests/test_centrality.py``).
    """
    if n_leaves < 2:
        raise ModelError(f"star needs at least 2 leaves, got {n_leaves}")
    if not 0.0 < beta < 1.0:
        raise ModelError(f"beta must lie in (0, 1), got {beta}")
    n = n_leaves + 1
    b = beta
    v_center = (1 + b * (n - 1)) / (n * (1 + b))
    v_leaf = (b + (n - 1)) / (n * (n - 1) * (1 + b))
    ell_center = np.sqrt((1 + b**2 * (n - 1)) / (1 + b) ** 2)
    ell_leaf = np.sqrt(
        (b**2 + (n - 1) * (2 * (2 * b**2 - b**4) + n * (1 - b**2) ** 2 - 1))
        / ((n - 1) ** 2 * (1 + b) ** 2)
    )
    return StarCentralities(float(v_center), float(v_leaf), float(ell_center), float(ell_leaf))


def star_numeric(n_leaves: int, beta: float) -> StarCentralities:
    """Star centralities by sparse linear solves, for stars too big for dense ``L``.

    Solves ``(I - beta P)`` against the columns needed: the transpose system
    for the column sums, and the centre and first-leaf columns for the norms
    (all leaves are equivalent).
    """
    if n_leaves < 2:
        raise ModelError(f"star needs at least 2 leaves, got {n_leaves}")
    n = n_leaves + 1
    leaves = np.arange(1, n)
    rows = np.concatenate([np.zeros(n_leaves, dtype=int), leaves])
    cols = np.concatenate([leaves, np.zeros(n_leaves, dtype=int)])
    vals = np.concatenate([np.full(n_leaves, 1.0 / n_leaves), np.ones(n_leaves)])
    p = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    a = (scipy.sparse.identity(n, format="csc") - beta * p).tocsc()
    solve = scipy.sparse.linalg.factorized(a)
    solve_t = scipy.sparse.linalg.factorized(a.T.tocsc())
    col_sums = (1 - beta) * solve_t(np.ones(n))
    e0 = np.zeros(n)
    e0[0] = 1.0
    e1 = np.zeros(n)
    e1[1] = 1.0
    col_center = (1 - beta) * solve(e0)
    col_leaf = (1 - beta) * solve(e1)
    return StarCentralities(
        float(col_sums[0] / n),
        float(col_sums[1] / n),
        float(np.linalg.norm(col_center)),
        float(np.linalg.norm(col_leaf)),
    )


def star_norms(sc: StarCentralities, n_leaves: int) -> tuple[float, float]:
    """``(||v||, ||ell||)`` over the whole star."""
    nv = np.sqrt(sc.v_center**2 + n_leaves * sc.v_leaf**2)
    nl = np.sqrt(sc.ell_center**2 + n_leaves * sc.ell_leaf**2)
    return float(nv), float(nl)

"""CSV/JSON ingestion and emission.

Edge lists use a ``src,dst,weight`` header; input-output matrices are
headerless square CSV grids. Floats are written with 17 significant digits
so every value round-trips exactly.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from netprotect.centrality import CentralityVector
from netprotect.errors import InputFormatError
from netprotect.waterfill import ProtectionSolution, SweepResult

SWEEP_HEADER = ["C", "lambda_opt", "lambda_diff", "ratio", "k_active", "regime"]
EDGE_HEADER = ["src", "dst", "weight"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class GraphInput:
    n: int
    edges: list[tuple[int, int, float]]
    labels: list[str] | None = None
    directed: bool = True

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            a[i, j] = w
        return a


def _open_text(source) -> tuple[TextIO, bool]:
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8"), True


def read_edge_list(
    source,
    n: int | None = None,
    directed: bool = True,
    one_based: bool = False,
    labels: list[str] | None = None,
) -> GraphInput:
    """Read a ``src,dst[,weight]`` CSV into a validated graph.

    The header line is optional. Undirected graphs are symmetrized by
    mirroring every edge; an edge given in both directions then counts as a
    duplicate. ``n`` defaults to one more than the largest index seen.
    """
    fh, owned = _open_text(source)
    try:
        rows = list(csv.reader(fh))
    finally:
        if owned:
            fh.close()
    offset = 1 if one_based else 0
    edges: list[tuple[int, int, float]] = []
    seen: set[tuple[int, int]] = set()
    start = 0
    if rows and [c.strip().lower() for c in rows[0]][:2] == EDGE_HEADER[:2]:
        start = 1
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) not in (2, 3):
            raise InputFormatError(f"line {lineno}: expected 2 or 3 fields, got {len(row)}")
        try:
            i = int(row[0]) - offset
            j = int(row[1]) - offset
            w = float(row[2]) if len(row) == 3 and row[2].strip() else 1.0
        except ValueError as exc:
            raise InputFormatError(f"line {lineno}: {exc}") from None
        if i < 0 or j < 0:
            raise InputFormatError(f"line {lineno}: negative node index")
        if n is not None and (i >= n or j >= n):
            raise InputFormatError(
                f"line {lineno}: index out of range for n={n} ({i + offset},{j + offset})"
            )
        if not np.isfinite(w) or w < 0:
            raise InputFormatError(f"line {lineno}: weight {w} must be finite and nonnegative")
        pairs = [(i, j)] if directed or i == j else [(i, j), (j, i)]
        for pair in pairs:
            if pair in seen:
                raise InputFormatError(f"line {lineno}: duplicate edge {pair[0] + offset}->{pair[1] + offset}")
            seen.add(pair)
            edges.append((pair[0], pair[1], w))
    if n is None:
        n = 1 + max((max(i, j) for i, j, _ in edges), default=-1)
    if labels is not None and len(labels) != n:
        raise InputFormatError(f"{len(labels)} labels for {n} nodes")
    return GraphInput(n, edges, labels, directed)


def read_io_matrix(source) -> np.ndarray:
    """Read a headerless square CSV of nonnegative reals, unnormalized."""
    fh, owned = _open_text(source)
    try:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    finally:
        if owned:
            fh.close()
    if not rows:
        raise InputFormatError("empty matrix file")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InputFormatError(f"line {lineno}: ragged row ({len(row)} fields, expected {width})")
    try:
        a = np.array(rows, dtype=float)
    except ValueError as exc:
        raise InputFormatError(f"non-numeric entry: {exc}") from None
    if a.shape[0] != a.shape[1]:
        raise InputFormatError(f"matrix is {a.shape[0]}x{a.shape[1]}, not square")
    if not np.all(np.isfinite(a)):
        raise InputFormatError("matrix has non-finite entries")
    if np.any(a < 0):
        i, j = np.argwhere(a < 0)[0]
        raise InputFormatError(f"negative entry at row {i}, column {j}")
    return a


def read_vector(source) -> np.ndarray:
    """Read a vector given one value per line or as a single CSV row."""
    fh, owned = _open_text(source)
    try:
        text = fh.read()
    finally:
        if owned:
            fh.close()
    tokens = [t for t in text.replace(",", " ").split() if t]
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise InputFormatError(f"bad vector entry: {exc}") from None


def normalize_rows(a) -> np.ndarray:
    """Divide each row by its sum; zero rows are an error."""
    a = np.asarray(a, dtype=float)
    sums = a.sum(axis=1)
    zero = np.flatnonzero(sums <= 0)
    if zero.size:
        raise InputFormatError(f"row {int(zero[0])} sums to zero; cannot normalize")
    return a / sums[:, None]


def drop_zero_centrality(values, labels: list[str] | None = None, atol: float = 0.0):
    """Remove nodes whose centrality is ``<= atol``.

    Returns the kept values, their labels (or ``None``) and the kept original indices.
    """
    values = np.asarray(values, dtype=float)
    keep = np.flatnonzero(values > atol)
    kept_labels = [labels[i] for i in keep] if labels is not None else None
    return values[keep], kept_labels, keep


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the target directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj, indent: int = 0) -> str:
    # json.dumps cannot format floats; this covers the small schema emitted here
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj}")
        return fmt(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj), ensure_ascii=False)


def dumps_json(obj) -> str:
    return _json(obj) + "\n"


def _labels(n: int, labels: list[str] | None) -> list[str]:
    if not labels:
        return [str(i) for i in range(n)]
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} nodes")
    return list(labels)


def solution_dict(sol: ProtectionSolution, y: CentralityVector, labels: list[str] | None = None) -> dict:
    names = _labels(sol.n, labels)
    centrality = y.original()
    return {
        "budget": sol.budget,
        "lambda_star": sol.lambda_star,
        "k_active": sol.k_active,
        "regime": sol.regime,
        "thresholds": {"low": sol.thresholds.low, "high": sol.thresholds.high},
        "per_node": [
            {"index": i, "label": names[i], "centrality": float(centrality[i]), "q": float(sol.q_star[i])}
            for i in range(sol.n)
        ],
    }


def write_solution(
    sol: ProtectionSolution,
    y: CentralityVector,
    format: str = "json",
    labels: list[str] | None = None,
    path=None,
) -> str:
    """Serialize a solution as JSON (one object) or CSV (one row per node).

    Returns the text; also writes it atomically to ``path`` if given.
    """
    if sol.n != y.n:
        raise ValueError(f"solution has {sol.n} nodes, centrality has {y.n}")
    if format == "json":
        text = dumps_json(solution_dict(sol, y, labels))
    elif format == "csv":
        names = _labels(sol.n, labels)
        centrality = y.original()
        buf = _stdio.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "label", "centrality", "q"])
        for i in range(sol.n):
            w.writerow([i, names[i], fmt(centrality[i]), fmt(sol.q_star[i])])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown format {format!r}")
    if path is not None:
        atomic_write(path, text)
    return text


def read_solution_csv(source) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Parse a CSV written by :func:`write_solution`: ``(centrality, q, labels)``."""
    fh, owned = _open_text(source)
    try:
        rows = list(csv.DictReader(fh))
    finally:
        if owned:
            fh.close()
    centrality = np.array([float(r["centrality"]) for r in rows])
    q = np.array([float(r["q"]) for r in rows])
    return centrality, q, [r["label"] for r in rows]


def write_sweep(result: SweepResult, path=None) -> str:
    """Sweep table with header ``C,lambda_opt,lambda_diff,ratio,k_active,regime``."""
    rows = result.rows
    if not rows:
        raise ValueError("empty sweep")
    budgets = result.budgets
    if np.any(np.diff(budgets) <= 0):
        raise ValueError("sweep budgets must be strictly increasing")
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([fmt(r.budget), fmt(r.lambda_opt), fmt(r.lambda_diff), fmt(r.ratio), r.k_active, r.regime])
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text)
    return text


def write_trajectories(result: SweepResult, labels: list[str] | None = None, path=None) -> str:
    """Per-node protection as a function of the budget: one row per budget, one column per node."""
    n = result.centrality.n
    names = _labels(n, labels)
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["C"] + [f"q_{name}" for name in names])
    for r in result.rows:
        w.writerow([fmt(r.budget)] + [fmt(x) for x in r.q_star])
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text)
    return text


def read_sweep(source) -> list[dict]:
    fh, owned = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_HEADER:
            raise InputFormatError(f"unexpected sweep header {reader.fieldnames}")
        out = []
        for r in reader:
            out.append({
                "C": float(r["C"]),
                "lambda_opt": float(r["lambda_opt"]),
                "lambda_diff": float(r["lambda_diff"]),
                "ratio": float(r["ratio"]),
                "k_active": int(r["k_active"]),
                "regime": r["regime"],
            })
        return out
    finally:
        if owned:
            fh.close()


def write_rows_csv(header: Iterable[str], rows: Iterable[Iterable], path=None) -> str:
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text)
    return text

"""Command-line front end: ``netprotect {solve,sweep,verify}``.

Exit codes: 0 success, 1 input error, 2 infeasible budget (C < sqrt(n)),
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from netprotect import io as nio
from netprotect.centrality import CentralityVector, bonacich_centrality, ell_centrality
from netprotect.errors import InfeasibleBudgetError
from netprotect.model import (
    InfluenceOperator,
    build_coordination,
    build_production,
    build_quadratic,
    build_raw,
    build_star,
    influence,
)
from netprotect.oracle import (
    OracleReport,
    analytic_variances,
    brute_force_minmax,
    monte_carlo_variance,
    subgradient_minmax,
)
from netprotect.waterfill import budget_grid, kkt_verify, solve, sweep, worst_case_shock

logger = logging.getLogger("netprotect")

OUTPUT_DIR_ENV = "NETPROTECT_OUTPUT_DIR"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3

SUBGRADIENT_RTOL = 1e-4
MC_SIGMAS = 4.0


class CliError(Exception):
    def __init__(self, stage: str, message: str, code: int = EXIT_INPUT):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


@contextmanager
def stage(name: str):
    try:
        yield
    except CliError:
        raise
    except InfeasibleBudgetError as exc:
        raise CliError(name, str(exc), EXIT_INFEASIBLE) from exc
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        raise CliError(name, str(exc), EXIT_INPUT) from exc


@dataclass
class RunConfig:
    model: str | None = None
    beta: float | None = None
    leaves: int | None = None
    input: str | None = None
    input_format: str = "auto"
    undirected: bool = False
    one_based: bool = False
    rho_file: str | None = None
    d_file: str | None = None
    y: str | None = None
    objective: str = "total-var"
    budget: float | None = None
    budget_grid: str | None = None
    output: str | None = None
    format: str = "json"
    trajectories: str | None = None
    seed: int = 0
    verify: list[str] = field(default_factory=list)
    resolution: float = 0.005
    iters: int = 100_000
    samples: int = 100_000
    workers: int = 1


# ---------------------------------------------------------------------------
# pipeline stages


def _read_square(cfg: RunConfig) -> np.ndarray:
    if not cfg.input:
        raise ValueError(f"--input is required for model {cfg.model!r}")
    fmt_ = cfg.input_format
    if fmt_ == "auto":
        with open(cfg.input, encoding="utf-8") as fh:
            first = next((line for line in fh if line.strip()), "")
        fmt_ = "edges" if first.strip().lower().startswith("src") else "matrix"
    if fmt_ == "edges":
        graph = nio.read_edge_list(cfg.input, directed=not cfg.undirected, one_based=cfg.one_based)
        return graph.adjacency()
    if fmt_ == "matrix":
        return nio.read_io_matrix(cfg.input)
    raise ValueError(f"unknown input format {fmt_!r}")


def _need_beta(cfg: RunConfig) -> float:
    if cfg.beta is None:
        raise ValueError(f"--beta is required for model {cfg.model!r}")
    return float(cfg.beta)


def build_operator(cfg: RunConfig) -> InfluenceOperator:
    with stage("model"):
        kind = cfg.model
        if kind == "star":
            if cfg.leaves is None:
                raise ValueError("--leaves is required for the star model")
            model = build_star(int(cfg.leaves), _need_beta(cfg))
        elif kind == "production":
            model = build_production(_need_beta(cfg), nio.normalize_rows(_read_square(cfg)))
        elif kind == "coordination":
            w = _read_square(cfg)
            rho = nio.read_vector(cfg.rho_file) if cfg.rho_file else np.ones(w.shape[0])
            model = build_coordination(w, rho)
        elif kind == "quadratic":
            model = build_quadratic(_need_beta(cfg), _read_square(cfg))
        elif kind == "raw":
            lam = _read_square(cfg)
            d = nio.read_vector(cfg.d_file) if cfg.d_file else None
            model = build_raw(lam, d)
        else:
            raise ValueError(f"unknown model {kind!r}")
        logger.info("built %s model with n=%d", model.provenance, model.n)
    with stage("influence"):
        return influence(model)


def centrality_for(cfg: RunConfig, op: InfluenceOperator | None) -> CentralityVector:
    with stage("centrality"):
        if cfg.y is not None:
            text = cfg.y
            if os.path.exists(text):
                return CentralityVector.from_values(nio.read_vector(text))
            return CentralityVector.from_values([float(t) for t in text.replace(",", " ").split()])
        if cfg.objective == "total-var":
            return ell_centrality(op)
        if cfg.objective == "mean-var":
            return bonacich_centrality(op)
        raise ValueError(f"unknown objective {cfg.objective!r}")


def _load(cfg: RunConfig) -> tuple[InfluenceOperator | None, CentralityVector]:
    if cfg.y is not None and cfg.model is not None:
        raise CliError("config", "give either --y or --model, not both")
    if cfg.y is None and cfg.model is None:
        raise CliError("config", "one of --model or --y is required")
    op = build_operator(cfg) if cfg.model is not None else None
    return op, centrality_for(cfg, op)


def _grid_bound(token: str, n: int) -> float:
    token = token.strip().lower()
    if token == "sqrtn":
        return float(np.sqrt(n))
    if token == "n":
        return float(n)
    return float(token)


def parse_budget_grid(spec: str | None, n: int) -> np.ndarray:
    """``min:max:points[:log|:linear]``; ``sqrtn`` and ``n`` are accepted as bounds."""
    if spec is None:
        return budget_grid(n)
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise ValueError(f"budget grid {spec!r} is not min:max:points[:log]")
    spacing = parts[3].strip().lower() if len(parts) == 4 else "linear"
    low, high = _grid_bound(parts[0], n), _grid_bound(parts[1], n)
    points = int(parts[2])
    if points > 1 and high <= low:
        raise ValueError("budget grid max must exceed min")
    return budget_grid(n, low, high, points, spacing)


def _destination(cfg: RunConfig, default_name: str) -> str | None:
    if cfg.output:
        return cfg.output
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base:
        return str(Path(base) / default_name)
    return None


def _emit(text: str, dest: str | None) -> None:
    if dest is None:
        sys.stdout.write(text)
    else:
        nio.atomic_write(dest, text)
        logger.info("wrote %s", dest)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    if cfg.budget is None or cfg.budget_grid is not None:
        raise CliError("config", "solve takes exactly one --budget (no --budget-grid)")
    _, y = _load(cfg)
    with stage("solve"):
        sol = solve(y, float(cfg.budget))
    with stage("kkt"):
        cert = kkt_verify(y, sol)
    logger.info("lambda*=%.17g k=%d regime=%s kkt=%.3g", sol.lambda_star, sol.k_active,
                sol.regime, cert.max_violation)
    with stage("output"):
        _emit(nio.write_solution(sol, y, cfg.format), _destination(cfg, f"solution.{cfg.format}"))
    if not cert.valid:
        raise CliError("kkt", f"certificate failed: {cert.worst} = {cert.max_violation:.3g}", EXIT_VERIFY)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.budget is not None:
        raise CliError("config", "sweep takes --budget-grid, not --budget")
    _, y = _load(cfg)
    with stage("grid"):
        grid = parse_budget_grid(cfg.budget_grid, y.n)
        if grid[0] < np.sqrt(y.n) - 1e-12:
            raise InfeasibleBudgetError(f"grid starts at {float(grid[0])!r} < sqrt(n) = {float(np.sqrt(y.n))!r}")
    with stage("solve"):
        result = sweep(y, grid, workers=cfg.workers)
    with stage("output"):
        _emit(nio.write_sweep(result), _destination(cfg, "sweep.csv"))
        if cfg.trajectories:
            nio.write_trajectories(result, path=cfg.trajectories)
    return EXIT_OK


def grid_tolerance(lam: float, resolution: float) -> float:
    """Largest possible grid-minimum excess over the true optimum.

    Rounding each coordinate of the optimum down to the grid keeps it feasible
    and shrinks every ``q_i >= 1`` by at most ``resolution``, so the grid
    minimum lies in ``[lam, lam / (1 - resolution)^2]``.
    """
    return lam * ((1.0 - resolution) ** -2 - 1.0) + 1e-12


def run_verification(cfg: RunConfig, op: InfluenceOperator | None,
                     y: CentralityVector) -> tuple[list[dict], bool]:
    sol = solve(y, float(cfg.budget))
    lam = sol.lambda_star
    results = []
    for method in cfg.verify or ["grid", "subgrad", "mc"]:
        if method == "grid":
            rep = brute_force_minmax(y, sol.budget, lam, cfg.resolution)
            tol = grid_tolerance(lam, cfg.resolution)
            passed = rep.oracle_value >= lam - 1e-12 and rep.gap <= tol
            results.append({**rep.to_dict(), "tolerance": tol, "passed": passed})
        elif method == "subgrad":
            rep = subgradient_minmax(y, sol.budget, lam, cfg.iters, rtol=SUBGRADIENT_RTOL)
            passed = rep.converged and rep.oracle_value >= lam * (1 - 1e-12)
            results.append({**rep.to_dict(), "tolerance": SUBGRADIENT_RTOL, "passed": passed})
        elif method == "mc":
            if op is None:
                raise ValueError("the Monte Carlo oracle needs a model (--model), not bare --y")
            sigma = worst_case_shock(y, sol.q_star)
            est = monte_carlo_variance(op, sol.q_star, sigma, cfg.samples, cfg.seed, cfg.workers)
            total_exact, mean_exact = analytic_variances(op, sol.q_star, sigma)
            for quantity, emp, exact, se in (
                ("total_variance", est.total_variance, total_exact, est.total_stderr),
                ("mean_variance", est.mean_variance, mean_exact, est.mean_stderr),
            ):
                rep = OracleReport(emp, exact, "montecarlo", cfg.samples, stderr=se)
                passed = rep.gap <= MC_SIGMAS * se
                results.append({**rep.to_dict(), "quantity": quantity,
                                "tolerance": MC_SIGMAS * se, "passed": passed})
        else:
            raise ValueError(f"unknown oracle {method!r}")
    return results, all(r["passed"] for r in results)


def cmd_verify(cfg: RunConfig) -> int:
    if cfg.budget is None:
        raise CliError("config", "verify needs --budget")
    op, y = _load(cfg)
    with stage("verify"):
        results, ok = run_verification(cfg, op, y)
    with stage("output"):
        _emit(nio.dumps_json({"budget": float(cfg.budget), "reports": results}),
              _destination(cfg, "verify.json"))
    if not ok:
        failed = [r["method"] for r in results if not r["passed"]]
        raise CliError("verify", f"oracle gap above tolerance: {', '.join(failed)}", EXIT_VERIFY)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify}


# ---------------------------------------------------------------------------
# argument handling


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with option defaults; flags override it")
    p.add_argument("--model", choices=["production", "coordination", "quadratic", "raw", "star"], default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--leaves", type=int, default=S, help="leaf count for --model star")
    p.add_argument("--input", default=S, help="edge list (src,dst,weight) or headerless matrix CSV")
    p.add_argument("--input-format", choices=["auto", "edges", "matrix"], default=S)
    p.add_argument("--undirected", action="store_true", default=S)
    p.add_argument("--one-based", action="store_true", default=S)
    p.add_argument("--rho-file", default=S)
    p.add_argument("--d-file", default=S, help="diagonal of D for --model raw")
    p.add_argument("--y", default=S, help="centralities directly, comma list or file")
    p.add_argument("--objective", choices=["total-var", "mean-var"], default=S)
    p.add_argument("--budget", type=float, default=S)
    p.add_argument("--budget-grid", default=S, help="min:max:points[:log]")
    p.add_argument("--output", default=S)
    p.add_argument("--format", choices=["json", "csv"], default=S)
    p.add_argument("--trajectories", default=S, help="sweep only: per-node q(C) CSV path")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--verify", action="append", choices=["grid", "subgrad", "mc"], default=S)
    p.add_argument("--resolution", type=float, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--samples", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netprotect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "optimal protection for one budget"),
        ("sweep", "optimal vs diffuse protection over a budget grid"),
        ("verify", "check the solver against independent oracles"),
    ):
        _add_common(sub.add_parser(name, help=help_))
    return parser


def make_config(ns: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(ns, "config", None):
        with open(ns.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    known = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(ns).items() if k in known})
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if isinstance(values.get("verify"), str):
        values["verify"] = [values["verify"]]
    return RunConfig(**values)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with stage("config"):
            cfg = make_config(ns)
        return COMMANDS[ns.command](cfg)
    except CliError as exc:
        print(f"netprotect {ns.command}: error {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Stage 1: integrality relaxation by a difference-of-convex penalty.

Binary feasibility ``y in {0,1}^n`` is equivalent to ``y - y∘y <= 0`` on the
box ``[0,1]^n``.  The concave part of that constraint is linearized at the
current iterate, giving the linear upper bound

    g(y) <= g_k(y) = (1 - 2 y_k) ∘ y + y_k ∘ y_k,

whose sum is added to the objective with weight ``lam``.  Minimizing the
resulting SOCP and re-linearizing yields a majorize-minimize loop: the exact
penalized objective ``f(x) + lam * sum(y - y∘y)`` never increases.  The loop
stops once every binary is within 1e-5 of an integer or the iteration budget
is exhausted; the final iterate may still be fractional, which is precisely
the case stage 2 exists to repair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backend import CompiledProgram
from .conic import ConicProgram, LinearExpr, SolveOptions, SolveStatus

INTEGRALITY_TOL = 1e-5


class DcStatus(Enum):
    CONVERGED = "converged"  # all binaries integral within tolerance
    FRACTIONAL = "fractional"  # budget or plateau hit with fractional entries
    BACKEND_FAILURE = "backend_failure"


@dataclass
class DcConfig:
    lam: float | None = None  # penalty coefficient; callers usually supply a data-scaled value
    max_iters: int = 50  # per penalty attempt, counting the warm-up relaxation solve
    int_tol: float = INTEGRALITY_TOL
    y_init: str = "relaxation"  # or "half"
    # if the final point is badly fractional, double lam and restart
    lambda_doublings: int = 4
    restart_threshold: float = 0.1
    plateau_tol: float = 1e-9
    solve_options: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self) -> None:
        if self.lam is not None and self.lam < 0:
            raise ValueError("penalty coefficient must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("need at least one iteration")
        if self.y_init not in ("relaxation", "half"):
            raise ValueError(f"unknown y_init {self.y_init!r}")


@dataclass
class DcIteration:
    iteration: int
    lam: float
    y: np.ndarray
    objective: float  # true objective f(x)
    penalized_objective: float  # f(x) + lam * sum(y - y*y)
    max_frac: float
    solve_time: float


@dataclass
class DcResult:
    status: DcStatus
    binary_ids: list[int]
    y_hat: np.ndarray
    x_hat: np.ndarray | None
    trace: list[DcIteration]  # final penalty attempt, length <= max_iters
    restarts: list[list[DcIteration]]  # earlier attempts at smaller lam
    lambda_used: float
    relaxation_objective: float = math.nan

    @property
    def max_frac(self) -> float:
        if self.y_hat.size == 0:
            return 0.0
        return float(np.max(np.abs(self.y_hat - np.round(self.y_hat))))

    @property
    def total_solves(self) -> int:
        return len(self.trace) + sum(len(t) for t in self.restarts)


def binary_indicator_gap(y: np.ndarray) -> np.ndarray:
    """g(y) = y - y∘y; zero exactly on binary vectors, positive inside (0,1)."""
    return y - y * y


def majorized_gap(y: np.ndarray, y_prev: np.ndarray) -> np.ndarray:
    """Linear upper bound of g at y_prev: (1 - 2 y_prev) ∘ y + y_prev ∘ y_prev."""
    return (1.0 - 2.0 * y_prev) * y + y_prev * y_prev


def dc_penalty_expr(y_prev: np.ndarray, y_vars: list[int]) -> LinearExpr:
    """Scalarized majorizer ``sum_i [(1 - 2 y_prev_i) y_i + y_prev_i^2]``."""
    expr = LinearExpr()
    for i, var in enumerate(y_vars):
        expr.add_term(var, 1.0 - 2.0 * float(y_prev[i]))
    expr.const += float(np.sum(y_prev * y_prev))
    return expr


def run_dc(program: ConicProgram, config: DcConfig | None = None) -> DcResult:
    """Run the path-following loop on the assembled primal MISOCP.

    Returns the last iterate even when fractional; fractional output is
    expected behavior, not an error.
    """
    cfg = config or DcConfig()
    if cfg.lam is None:
        raise ValueError(
            "DcConfig.lam is unset; supply a penalty weight "
            "(see v2gflow.v2g.suggest_penalty_weight)"
        )
    y_vars = sorted(program.binary_vars)
    n = len(y_vars)
    relaxed = program.continuous_relaxation()
    compiled = CompiledProgram(relaxed)
    base_obj = program.objective

    relaxation_objective = math.nan
    x0: np.ndarray | None = None
    if cfg.y_init == "relaxation" or n == 0:
        sol0 = compiled.solve(cfg.solve_options)
        if sol0.status is not SolveStatus.OPTIMAL:
            return DcResult(
                status=DcStatus.BACKEND_FAILURE,
                binary_ids=y_vars,
                y_hat=np.full(n, 0.5),
                x_hat=None,
                trace=[],
                restarts=[],
                lambda_used=cfg.lam,
            )
        relaxation_objective = sol0.objective_value
        x0 = sol0.values
        y0 = sol0.values[y_vars] if n else np.zeros(0)
        warmup = (y0, sol0.objective_value, sol0.solve_time)
    else:
        y0 = np.full(n, 0.5)
        warmup = None

    def frac(v: np.ndarray) -> float:
        return float(np.max(np.abs(v - np.round(v)))) if n else 0.0

    lam = cfg.lam
    restarts: list[list[DcIteration]] = []
    trace: list[DcIteration] = []
    y = y0
    x = x0
    status = DcStatus.FRACTIONAL

    for attempt in range(cfg.lambda_doublings + 1):
        trace = []
        if warmup is not None:
            wy, wobj, wtime = warmup
            trace.append(
                DcIteration(
                    iteration=0,
                    lam=lam,
                    y=wy.copy(),
                    objective=wobj,
                    penalized_objective=wobj + lam * float(np.sum(binary_indicator_gap(wy))),
                    max_frac=frac(wy),
                    solve_time=wtime,
                )
            )
        y = y0.copy()
        x = x0
        status = DcStatus.FRACTIONAL
        while len(trace) < cfg.max_iters:
            if frac(y) < cfg.int_tol:
                status = DcStatus.CONVERGED
                break
            penalized = base_obj + lam * dc_penalty_expr(y, y_vars)
            sol = compiled.solve(cfg.solve_options, objective=penalized)
            if sol.status is not SolveStatus.OPTIMAL:
                status = DcStatus.BACKEND_FAILURE
                break
            y_new = sol.values[y_vars]
            x = sol.values
            true_obj = base_obj.evaluate(sol.values)
            trace.append(
                DcIteration(
                    iteration=len(trace),
                    lam=lam,
                    y=y_new.copy(),
                    objective=true_obj,
                    penalized_objective=true_obj + lam * float(np.sum(binary_indicator_gap(y_new))),
                    max_frac=frac(y_new),
                    solve_time=sol.solve_time,
                )
            )
            step = float(np.max(np.abs(y_new - y))) if n else 0.0
            y = y_new
            if trace[-1].max_frac < cfg.int_tol:
                status = DcStatus.CONVERGED
                break
            if step < cfg.plateau_tol:
                break  # fixed point reached while fractional
        if status is DcStatus.CONVERGED or status is DcStatus.BACKEND_FAILURE:
            break
        if frac(y) <= cfg.restart_threshold or attempt == cfg.lambda_doublings:
            break
        restarts.append(trace)
        lam *= 2.0

    return DcResult(
        status=status,
        binary_ids=y_vars,
        y_hat=y.copy(),
        x_hat=None if x is None else np.array(x, copy=True),
        trace=trace,
        restarts=restarts,
        lambda_used=lam,
        relaxation_objective=relaxation_objective,
    )


def trace_to_csv(trace: list[DcIteration], path) -> None:
    """Write one penalty attempt as ``iter,lam,obj,penalized_obj,max_frac,time``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,lam,obj,penalized_obj,max_frac,time\n")
        for it in trace:
            fh.write(
                f"{it.iteration},{it.lam:.9g},{it.objective:.12g},"
                f"{it.penalized_objective:.12g},{it.max_frac:.6g},{it.solve_time:.6g}\n"
            )

"""Continuous-SOCP backend behind the ``solve_continuous`` contract.

The backend is an adapter around the Clarabel interior-point solver.  Nothing
outside this module touches Clarabel; every other stage depends only on the
contract: hand in a binary-free :class:`~v2gflow.conic.ConicProgram`, get back
a :class:`~v2gflow.conic.Solution` whose OPTIMAL points satisfy all
constraints within ``feas_tol`` and close the relative duality gap to
``gap_tol``.

:class:`CompiledProgram` caches the assembled sparse matrices so that solver
loops (branch-and-bound node relaxations, path-following iterations) can
re-solve with patched variable bounds or a swapped objective without paying
the assembly cost again.
"""

from __future__ import annotations

import math
import time

import clarabel
import numpy as np
import scipy.sparse as sp

from .conic import (
    BinaryPresentError,
    ConicProgram,
    LinearExpr,
    Solution,
    SolveOptions,
    SolveStatus,
)

_STATUS_MAP = {
    "Solved": SolveStatus.OPTIMAL,
    "AlmostSolved": SolveStatus.OPTIMAL,  # accepted only if our residual check passes
    "PrimalInfeasible": SolveStatus.INFEASIBLE,
    "AlmostPrimalInfeasible": SolveStatus.NUMERICAL_FAILURE,
    "DualInfeasible": SolveStatus.UNBOUNDED,
    "AlmostDualInfeasible": SolveStatus.NUMERICAL_FAILURE,
    "MaxIterations": SolveStatus.ITERATION_LIMIT,
    "MaxTime": SolveStatus.TIME_LIMIT,
    "NumericalError": SolveStatus.NUMERICAL_FAILURE,
    "InsufficientProgress": SolveStatus.NUMERICAL_FAILURE,
    "Unsolved": SolveStatus.NUMERICAL_FAILURE,
}


class CompiledProgram:
    """Sparse-matrix form of one program, reusable across repeated solves.

    Clarabel's canonical form is ``min q'z  s.t.  Az + s = b,  s in K`` with
    K a product of a zero cone (equalities), the nonnegative orthant
    (inequalities and finite variable bounds) and second-order cones.  A
    rotated cone ``||x||^2 <= u*v`` maps onto the standard cone
    ``||(u - v, 2x)|| <= u + v``, which also implies ``u, v >= 0``.
    """

    def __init__(self, program: ConicProgram):
        self.program = program
        self.n = program.num_vars

        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        b: list[float] = []
        r = 0

        def put(expr: LinearExpr, scale: float = 1.0) -> None:
            nonlocal r
            for v, c in expr.coef.items():
                rows.append(r)
                cols.append(v)
                vals.append(-scale * c)
            b.append(scale * expr.const)
            r += 1

        for e in program.eq_constraints:
            put(e)
        self.n_eq = r

        for e in program.ineq_constraints:
            put(e, scale=-1.0)  # e <= 0  ->  -e >= 0
        # Finite variable bounds become nonnegative-slack rows; remember the
        # row of each so per-solve bound overrides just patch b.
        self.lo_row: dict[int, int] = {}
        self.hi_row: dict[int, int] = {}
        for i in range(self.n):
            if math.isfinite(program.lower[i]):
                rows.append(r)
                cols.append(i)
                vals.append(-1.0)
                b.append(-program.lower[i])  # s = x - lo >= 0
                self.lo_row[i] = r
                r += 1
            if math.isfinite(program.upper[i]):
                rows.append(r)
                cols.append(i)
                vals.append(1.0)
                b.append(program.upper[i])  # s = hi - x >= 0
                self.hi_row[i] = r
                r += 1
        self.n_ineq = r - self.n_eq

        cone_dims: list[int] = []
        for xs, u, v in program.soc_constraints:
            put(u + v)
            put(u - v)
            for e in xs:
                put(e * 2.0)
            cone_dims.append(2 + len(xs))

        self.A = sp.csc_matrix(
            (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
            shape=(r, self.n),
        )
        self.b = np.array(b)
        self.P = sp.csc_matrix((self.n, self.n))
        self.cones = [clarabel.ZeroConeT(self.n_eq), clarabel.NonnegativeConeT(self.n_ineq)]
        self.cones += [clarabel.SecondOrderConeT(d) for d in cone_dims]
        self.q, self.obj_const = self._linear_cost(program.objective)

    def _linear_cost(self, objective: LinearExpr) -> tuple[np.ndarray, float]:
        q = np.zeros(self.n)
        for v, c in objective.coef.items():
            q[v] = c
        return q, objective.const

    def solve(
        self,
        options: SolveOptions | None = None,
        fixed: dict[int, float] | None = None,
        objective: LinearExpr | None = None,
    ) -> Solution:
        """Solve the compiled program, optionally patching bounds or cost.

        ``fixed`` clamps variables (which must carry finite bounds in the base
        program) to single values; ``objective`` replaces the linear cost.
        The base program is never mutated.
        """
        opts = options or SolveOptions()
        return self._solve_once(opts, fixed, objective, t0=time.perf_counter(), _retry=False)

    def _solve_once(
        self,
        opts: SolveOptions,
        fixed: dict[int, float] | None,
        objective: LinearExpr | None,
        t0: float,
        _retry: bool,
    ) -> Solution:
        if objective is None:
            q, obj_expr = self.q, self.program.objective
        else:
            q, _ = self._linear_cost(objective)
            obj_expr = objective

        b = self.b
        if fixed:
            b = b.copy()
            for var, val in fixed.items():
                if var not in self.lo_row or var not in self.hi_row:
                    raise ValueError(f"variable {var} has no finite bounds to patch")
                b[self.lo_row[var]] = -val
                b[self.hi_row[var]] = val

        settings = clarabel.DefaultSettings()
        settings.verbose = opts.verbose
        # Solve one notch tighter than the contract so the independent
        # residual check below passes with margin on well-scaled data.
        settings.tol_feas = opts.feas_tol * 0.1
        settings.tol_gap_rel = opts.gap_tol
        settings.tol_gap_abs = opts.gap_tol
        settings.max_iter = opts.max_iters
        if opts.time_limit is not None:
            settings.time_limit = float(opts.time_limit)

        solver = clarabel.DefaultSolver(self.P, q, self.A, b, self.cones, settings)
        raw = solver.solve()
        status = _STATUS_MAP.get(str(raw.status).split(".")[-1], SolveStatus.NUMERICAL_FAILURE)

        if status is SolveStatus.OPTIMAL:
            values = np.asarray(raw.x)
            if self._residuals(values, fixed) > opts.feas_tol:
                status = SolveStatus.NUMERICAL_FAILURE
            else:
                return Solution(
                    status=SolveStatus.OPTIMAL,
                    values=values,
                    objective_value=obj_expr.evaluate(values),
                    solve_time=time.perf_counter() - t0,
                )
        if status is SolveStatus.NUMERICAL_FAILURE and not _retry:
            # near-degenerate solves sometimes stop a hair short of the
            # contract residuals; one tightened attempt usually lands them
            return self._solve_once(
                opts.tightened(), fixed, objective, t0=t0, _retry=True
            )
        elapsed = time.perf_counter() - t0
        values = None
        if status in (SolveStatus.ITERATION_LIMIT, SolveStatus.TIME_LIMIT):
            values = np.asarray(raw.x)
        return Solution(status=status, values=values, solve_time=elapsed)

    def _residuals(self, values: np.ndarray, fixed: dict[int, float] | None) -> float:
        """Max violation of the solved program, recomputed from the IR."""
        rep = self.program.constraint_violations(values)
        worst = max(rep.eq, rep.ineq, rep.cone)
        for i in range(self.n):
            lo, hi = self.program.lower[i], self.program.upper[i]
            if fixed and i in fixed:
                lo = hi = fixed[i]
            if math.isfinite(lo):
                worst = max(worst, lo - values[i])
            if math.isfinite(hi):
                worst = max(worst, values[i] - hi)
        return worst


def solve_continuous(program: ConicProgram, options: SolveOptions | None = None) -> Solution:
    """Backend contract entry point for one binary-free program."""
    if program.binary_vars:
        raise BinaryPresentError(
            f"{len(program.binary_vars)} binary variables present; relax or fix them first"
        )
    return CompiledProgram(program).solve(options)

"""Intermediate representation for continuous SOCPs with binary-flagged variables.

Every solver stage in this package (branch and bound, the penalized
path-following loop, the trust-region sub-problem) speaks this IR.  A program
is a plain container of linear expressions; the only nonlinearity allowed is
the rotated second-order cone ``||x||^2 <= u*v`` with ``u, v >= 0``.
Quadratic generation costs are therefore encoded upstream with an epigraph
variable and one rotated cone, which keeps the objective linear.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

# Type alias for variable handles.  Ids are dense, assigned in creation order,
# and stable across program copies.
VarId = int


class BoundOrderError(ValueError):
    """Raised when a variable is declared with lower bound above upper bound."""


class BinaryBoundsError(ValueError):
    """Raised when a binary variable is declared with bounds outside [0, 1]."""


class EmptyConeError(ValueError):
    """Raised when a rotated cone is declared with an empty norm part."""


class BinaryPresentError(ValueError):
    """Raised when a continuous-only operation receives unrelaxed binaries."""


class LinearExpr:
    """Affine expression ``sum_i coef_i * x_i + const``.

    Internally a dict keyed by :data:`VarId` so duplicate variables are
    impossible by construction.  Supports ``+``, ``-`` and scalar ``*`` so
    model builders read like the algebra they implement.
    """

    __slots__ = ("coef", "const")

    def __init__(self, coef: Mapping[VarId, float] | None = None, const: float = 0.0):
        self.coef: dict[VarId, float] = dict(coef) if coef else {}
        self.const = float(const)

    @classmethod
    def term(cls, var: VarId, coef: float = 1.0) -> "LinearExpr":
        return cls({var: float(coef)})

    @classmethod
    def constant(cls, value: float) -> "LinearExpr":
        return cls(const=value)

    def copy(self) -> "LinearExpr":
        return LinearExpr(self.coef, self.const)

    def add_term(self, var: VarId, coef: float) -> "LinearExpr":
        """Accumulate ``coef * x_var`` in place (builder hot path)."""
        c = self.coef.get(var, 0.0) + coef
        if c == 0.0:
            self.coef.pop(var, None)
        else:
            self.coef[var] = c
        return self

    @staticmethod
    def _coerce(other) -> "LinearExpr":
        if isinstance(other, LinearExpr):
            return other
        if isinstance(other, (int, float)):
            return LinearExpr(const=float(other))
        return NotImplemented  # type: ignore[return-value]

    def __add__(self, other) -> "LinearExpr":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        out = self.copy()
        out.const += other.const
        for v, c in other.coef.items():
            out.add_term(v, c)
        return out

    __radd__ = __add__

    def __sub__(self, other) -> "LinearExpr":
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "LinearExpr":
        return (-self) + other

    def __neg__(self) -> "LinearExpr":
        return LinearExpr({v: -c for v, c in self.coef.items()}, -self.const)

    def __mul__(self, scalar) -> "LinearExpr":
        if not isinstance(scalar, (int, float)):
            return NotImplemented
        s = float(scalar)
        if s == 0.0:
            return LinearExpr()
        return LinearExpr({v: c * s for v, c in self.coef.items()}, self.const * s)

    __rmul__ = __mul__

    def evaluate(self, values: np.ndarray) -> float:
        return float(sum(c * values[v] for v, c in self.coef.items()) + self.const)

    def terms_sorted(self) -> list[tuple[VarId, float]]:
        return sorted(self.coef.items())

    def is_finite(self) -> bool:
        return math.isfinite(self.const) and all(math.isfinite(c) for c in self.coef.values())

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        parts = [f"{c:+g}*x{v}" for v, c in self.terms_sorted()]
        parts.append(f"{self.const:+g}")
        return " ".join(parts)


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"
    TIME_LIMIT = "time_limit"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolveOptions:
    """Tolerances and limits any continuous-SOCP backend must honor.

    ``feas_tol`` and ``gap_tol`` sit two orders below the 1e-5 integrality
    threshold used by the path-following stage, so backend noise can never
    masquerade as fractionality.
    """

    feas_tol: float = 1e-7
    gap_tol: float = 1e-8
    max_iters: int = 200
    time_limit: float | None = None
    verbose: bool = False

    def tightened(self) -> "SolveOptions":
        """One-notch tighter settings, used when a solve is retried."""
        return SolveOptions(
            feas_tol=self.feas_tol * 0.1,
            gap_tol=self.gap_tol * 0.1,
            max_iters=self.max_iters * 4,
            time_limit=self.time_limit,
            verbose=self.verbose,
        )


@dataclass
class Solution:
    """Result of one continuous solve.

    ``values`` is only attached when the backend produced a usable primal
    point; for OPTIMAL it satisfies every constraint within ``feas_tol``.
    """

    status: SolveStatus
    values: np.ndarray | None = None
    objective_value: float = math.nan
    solve_time: float = 0.0


@dataclass
class ViolationReport:
    """Max constraint residuals of a candidate point, recomputed from the IR."""

    eq: float = 0.0
    ineq: float = 0.0
    bounds: float = 0.0
    cone: float = 0.0

    @property
    def max_violation(self) -> float:
        return max(self.eq, self.ineq, self.bounds, self.cone)

    def feasible(self, tol: float) -> bool:
        return self.max_violation <= tol


class ConicProgram:
    """One continuous SOCP plus a set of binary-flagged variables.

    Minimization problem:

        min  objective
        s.t. eq_constraints[i] == 0
             ineq_constraints[i] <= 0
             ||x||^2 <= u*v, u >= 0, v >= 0   for (x, u, v) in soc_constraints
             lower <= vars <= upper
             vars in binary_vars integral

    A program is treated as immutable once construction finishes; all solver
    stages work on copies, never in place.
    """

    def __init__(self) -> None:
        self.num_vars: int = 0
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.objective: LinearExpr = LinearExpr()
        self.eq_constraints: list[LinearExpr] = []
        self.ineq_constraints: list[LinearExpr] = []
        self.soc_constraints: list[tuple[list[LinearExpr], LinearExpr, LinearExpr]] = []
        self.binary_vars: set[VarId] = set()

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    def add_variable(self, lo: float, hi: float, is_binary: bool = False) -> VarId:
        if not (lo <= hi):
            raise BoundOrderError(f"lower bound {lo} exceeds upper bound {hi}")
        if is_binary and not (0.0 <= lo and hi <= 1.0):
            raise BinaryBoundsError(f"binary variable bounds [{lo}, {hi}] outside [0, 1]")
        vid = self.num_vars
        self.num_vars += 1
        self.lower.append(float(lo))
        self.upper.append(float(hi))
        if is_binary:
            self.binary_vars.add(vid)
        return vid

    def add_eq(self, expr: LinearExpr) -> int:
        self._check_expr(expr)
        self.eq_constraints.append(expr)
        return len(self.eq_constraints) - 1

    def add_ineq(self, expr: LinearExpr) -> int:
        self._check_expr(expr)
        self.ineq_constraints.append(expr)
        return len(self.ineq_constraints) - 1

    def add_rotated_soc(self, x: Iterable[LinearExpr], u, v) -> int:
        """Register ``||x||^2 <= u*v`` (``u >= 0`` and ``v >= 0`` implied)."""
        xs = [e.copy() if isinstance(e, LinearExpr) else LinearExpr.constant(e) for e in x]
        if not xs:
            raise EmptyConeError("rotated cone needs at least one norm entry")
        u = u if isinstance(u, LinearExpr) else LinearExpr.constant(u)
        v = v if isinstance(v, LinearExpr) else LinearExpr.constant(v)
        for e in xs + [u, v]:
            self._check_expr(e)
        self.soc_constraints.append((xs, u.copy(), v.copy()))
        return len(self.soc_constraints) - 1

    def set_objective(self, expr: LinearExpr) -> None:
        self._check_expr(expr)
        self.objective = expr.copy()

    def _check_expr(self, expr: LinearExpr) -> None:
        if not expr.is_finite():
            raise ValueError("non-finite coefficient in expression")
        for v in expr.coef:
            if not (0 <= v < self.num_vars):
                raise ValueError(f"expression references unknown variable {v}")

    # ------------------------------------------------------------------
    # transforms
    # ------------------------------------------------------------------
    def copy(self) -> "ConicProgram":
        out = ConicProgram()
        out.num_vars = self.num_vars
        out.lower = list(self.lower)
        out.upper = list(self.upper)
        out.objective = self.objective.copy()
        out.eq_constraints = [e.copy() for e in self.eq_constraints]
        out.ineq_constraints = [e.copy() for e in self.ineq_constraints]
        out.soc_constraints = [
            ([e.copy() for e in xs], u.copy(), v.copy()) for xs, u, v in self.soc_constraints
        ]
        out.binary_vars = set(self.binary_vars)
        return out

    def continuous_relaxation(self) -> "ConicProgram":
        """Same program with the integrality flags dropped; bounds are kept."""
        out = self.copy()
        out.binary_vars = set()
        return out

    def fix_variable(self, var: VarId, value: float) -> None:
        """Clamp a variable to one value (used by fixing-style transforms)."""
        if not (self.lower[var] - 1e-12 <= value <= self.upper[var] + 1e-12):
            raise BoundOrderError(
                f"fixing variable {var} to {value} outside bounds "
                f"[{self.lower[var]}, {self.upper[var]}]"
            )
        self.lower[var] = float(value)
        self.upper[var] = float(value)

    # ------------------------------------------------------------------
    # independent feasibility checking
    # ------------------------------------------------------------------
    def constraint_violations(self, values: np.ndarray) -> ViolationReport:
        """Recompute every constraint residual directly from ``values``.

        Deliberately independent of any backend: used to vet solver output.
        """
        rep = ViolationReport()
        for e in self.eq_constraints:
            rep.eq = max(rep.eq, abs(e.evaluate(values)))
        for e in self.ineq_constraints:
            rep.ineq = max(rep.ineq, e.evaluate(values))
        for i in range(self.num_vars):
            if math.isfinite(self.lower[i]):
                rep.bounds = max(rep.bounds, self.lower[i] - values[i])
            if math.isfinite(self.upper[i]):
                rep.bounds = max(rep.bounds, values[i] - self.upper[i])
        for xs, u, v in self.soc_constraints:
            uu = u.evaluate(values)
            vv = v.evaluate(values)
            nrm = sum(e.evaluate(values) ** 2 for e in xs)
            # quadratic residual, relative to the cone's own scale
            scale = max(1.0, abs(uu * vv), nrm)
            rep.cone = max(rep.cone, (nrm - uu * vv) / scale, -uu, -vv)
        rep.ineq = max(rep.ineq, 0.0)
        rep.bounds = max(rep.bounds, 0.0)
        rep.cone = max(rep.cone, 0.0)
        return rep

    def max_fractionality(self, values: np.ndarray) -> float:
        """Largest distance of any binary variable to its nearest integer."""
        if not self.binary_vars:
            return 0.0
        return max(abs(values[i] - round(values[i])) for i in self.binary_vars)

    # ------------------------------------------------------------------
    # snapshot format (debugging / oracle replay)
    # ------------------------------------------------------------------
    def to_json_dict(self) -> dict:
        def expr(e: LinearExpr) -> dict:
            return {"terms": [[v, c] for v, c in e.terms_sorted()], "const": e.const}

        def bound(b: float):
            return None if math.isinf(b) else b

        return {
            "num_vars": self.num_vars,
            "bounds": [[bound(lo), bound(hi)] for lo, hi in zip(self.lower, self.upper)],
            "binary": sorted(self.binary_vars),
            "objective": expr(self.objective),
            "eq": [expr(e) for e in self.eq_constraints],
            "ineq": [expr(e) for e in self.ineq_constraints],
            "rsoc": [
                {"x": [expr(e) for e in xs], "u": expr(u), "v": expr(v)}
                for xs, u, v in self.soc_constraints
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ConicProgram":
        def expr(d: dict) -> LinearExpr:
            return LinearExpr({int(v): float(c) for v, c in d["terms"]}, d.get("const", 0.0))

        prog = cls()
        for lo, hi in doc["bounds"]:
            prog.add_variable(-math.inf if lo is None else lo, math.inf if hi is None else hi)
        if prog.num_vars != doc["num_vars"]:
            raise ValueError("bounds length disagrees with num_vars")
        for vid in doc["binary"]:
            if not (0.0 <= prog.lower[vid] and prog.upper[vid] <= 1.0):
                raise BinaryBoundsError(f"binary variable {vid} with bounds outside [0, 1]")
            prog.binary_vars.add(int(vid))
        prog.objective = expr(doc["objective"])
        for d in doc["eq"]:
            prog.add_eq(expr(d))
        for d in doc["ineq"]:
            prog.add_ineq(expr(d))
        for d in doc["rsoc"]:
            prog.add_rotated_soc([expr(e) for e in d["x"]], expr(d["u"]), expr(d["v"]))
        return prog

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load_json(cls, path) -> "ConicProgram":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

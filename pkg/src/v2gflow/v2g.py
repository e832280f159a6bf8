"""EV session model, charging/discharging constraints and primal assembly.

Each parked EV gets, per connected slot, a charging power, a discharging
power, a battery-energy state and two binaries selecting charge / discharge /
idle.  The minimum on-power is strictly positive in every bundled scenario,
so the binaries are load-bearing: the continuous relaxation genuinely cheats
by charging below the minimum rate, which is exactly what the two-stage
pipeline has to repair.

EV-side quantities are kept in kW / kWh; the coupling into the per-unit grid
equations happens in one place, the injection hooks, with the factor
``1 / (1000 * base_mva)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, LinearExpr, VarId
from .distflow import InvariantError, NetworkCase, OpfVarMap, build_opf, check_opf_feasibility

INF = math.inf


class SessionOutOfHorizonError(ValueError):
    """Session departs after the optimization horizon ends."""


@dataclass
class EvSession:
    id: str
    station_bus: int
    t_arr: int  # first connected slot (0-based)
    t_dep: int  # first slot after departure; connected slots are [t_arr, t_dep)
    e_arr: float  # kWh at arrival
    e_dep: float  # kWh required at departure
    e_min: float
    e_max: float
    p_min: float  # kW, minimum power while charging or discharging
    p_max: float  # kW
    eta: float

    def validate(self) -> None:
        if not self.t_arr < self.t_dep:
            raise InvariantError(f"session {self.id}: empty connection window")
        if not (self.e_min <= self.e_arr <= self.e_max):
            raise InvariantError(f"session {self.id}: arrival energy outside battery bounds")
        if not (self.e_min <= self.e_dep <= self.e_max):
            raise InvariantError(f"session {self.id}: departure energy outside battery bounds")
        if not (0 <= self.p_min <= self.p_max):
            raise InvariantError(f"session {self.id}: need 0 <= p_min <= p_max")
        if not (0 < self.eta <= 1):
            raise InvariantError(f"session {self.id}: efficiency must lie in (0, 1]")

    @property
    def slots(self) -> range:
        return range(self.t_arr, self.t_dep)


@dataclass
class PriceCurve:
    beta: list[float]  # currency per kWh, one entry per slot

    def validate(self, T: int) -> None:
        if len(self.beta) != T:
            raise InvariantError(f"price curve has {len(self.beta)} slots, case has {T}")


@dataclass
class V2gVarMap:
    """VarIds per (session index, connected slot)."""

    p_chg: dict[tuple[int, int], VarId] = field(default_factory=dict)
    p_dis: dict[tuple[int, int], VarId] = field(default_factory=dict)
    energy: dict[tuple[int, int], VarId] = field(default_factory=dict)
    y_chg: dict[tuple[int, int], VarId] = field(default_factory=dict)
    y_dis: dict[tuple[int, int], VarId] = field(default_factory=dict)


def build_v2g(
    program: ConicProgram,
    sessions: list[EvSession],
    T: int,
    dt: float,
    base_mva: float,
) -> tuple[V2gVarMap, dict[tuple[int, int], LinearExpr]]:
    """Add all EV constraints; return the var map and per-(bus, t) grid hooks.

    The hook expression for (bus, t) is ``sum_v (P+ / eta - P- * eta)`` in
    per-unit, ready to be added to the active power balance of that bus.
    """
    vm = V2gVarMap()
    hooks: dict[tuple[int, int], LinearExpr] = {}
    kw_to_pu = 1.0 / (1000.0 * base_mva)

    for k, s in enumerate(sessions):
        s.validate()
        if s.t_dep > T:
            raise SessionOutOfHorizonError(
                f"session {s.id} departs at slot {s.t_dep} beyond horizon T={T}"
            )
        for t in s.slots:
            vm.p_chg[k, t] = program.add_variable(0.0, s.p_max)
            vm.p_dis[k, t] = program.add_variable(0.0, s.p_max)
            vm.energy[k, t] = program.add_variable(s.e_min, s.e_max)
            vm.y_chg[k, t] = program.add_variable(0.0, 1.0, is_binary=True)
            vm.y_dis[k, t] = program.add_variable(0.0, 1.0, is_binary=True)

        for t in s.slots:
            yc, yd = vm.y_chg[k, t], vm.y_dis[k, t]
            pc, pd = vm.p_chg[k, t], vm.p_dis[k, t]
            # never charge and discharge in the same slot
            program.add_ineq(LinearExpr.term(yc) + LinearExpr.term(yd) - 1.0)
            # power is confined to [p_min*y, p_max*y] in either direction
            program.add_ineq(LinearExpr.term(yd, s.p_min) - LinearExpr.term(pd))
            program.add_ineq(LinearExpr.term(pd) - LinearExpr.term(yd, s.p_max))
            program.add_ineq(LinearExpr.term(yc, s.p_min) - LinearExpr.term(pc))
            program.add_ineq(LinearExpr.term(pc) - LinearExpr.term(yc, s.p_max))
            # battery energy recurrence, anchored at the arrival energy
            step = LinearExpr.term(vm.energy[k, t], -1.0)
            step.add_term(pc, dt)
            step.add_term(pd, -dt)
            if t == s.t_arr:
                step.const += s.e_arr
            else:
                step.add_term(vm.energy[k, t - 1], 1.0)
            program.add_eq(step)

            hook = hooks.setdefault((s.station_bus, t), LinearExpr())
            hook.add_term(pc, kw_to_pu / s.eta)
            hook.add_term(pd, -kw_to_pu * s.eta)

        # energy requirement at departure
        last = vm.energy[k, s.t_dep - 1]
        program.add_ineq(LinearExpr.constant(s.e_dep) - LinearExpr.term(last))
    return vm, hooks


@dataclass
class AssembledProblem:
    """The full MISOCP plus everything needed to interpret its solution."""

    program: ConicProgram
    case: NetworkCase
    sessions: list[EvSession]
    prices: PriceCurve
    opf: OpfVarMap
    v2g: V2gVarMap


def assemble_primal(
    case: NetworkCase, sessions: list[EvSession], prices: PriceCurve
) -> AssembledProblem:
    """Build the joint OPF + V2G scheduling MISOCP.

    Objective: generation cost plus the EV electricity cost
    ``sum_t beta_t * sum_v (P+ - P-)``; the binaries are exactly the
    charge/discharge indicators.
    """
    prices.validate(case.T)
    bus_ids = set(case.bus_ids())
    for s in sessions:
        if s.station_bus not in bus_ids:
            raise InvariantError(f"session {s.id} references unknown bus {s.station_bus}")

    program = ConicProgram()
    v2g_map, hooks = build_v2g(program, sessions, case.T, case.dt_hours, case.base_mva)
    opf_map = build_opf(program, case, hooks)

    objective = program.objective.copy()  # generation cost, from build_opf
    for k, s in enumerate(sessions):
        for t in s.slots:
            objective.add_term(v2g_map.p_chg[k, t], prices.beta[t])
            objective.add_term(v2g_map.p_dis[k, t], -prices.beta[t])
    program.set_objective(objective)
    return AssembledProblem(program, case, sessions, prices, opf_map, v2g_map)


def ev_injection_values(
    problem: AssembledProblem, values: np.ndarray
) -> dict[tuple[int, int], float]:
    """Per-(bus, t) EV net grid draw in per-unit, recomputed from a solution."""
    inj: dict[tuple[int, int], float] = {}
    kw_to_pu = 1.0 / (1000.0 * problem.case.base_mva)
    for k, s in enumerate(problem.sessions):
        for t in s.slots:
            pc = values[problem.v2g.p_chg[k, t]]
            pd = values[problem.v2g.p_dis[k, t]]
            key = (s.station_bus, t)
            inj[key] = inj.get(key, 0.0) + kw_to_pu * (pc / s.eta - pd * s.eta)
    return inj


def decompose_cost(problem: AssembledProblem, values: np.ndarray) -> tuple[float, float]:
    """(generation cost, EV electricity cost) re-evaluated from the solution.

    The generation part uses the quadratic cost function directly rather than
    the epigraph variable, so the pair is meaningful for any candidate point.
    """
    c_g = 0.0
    for g in problem.case.generators:
        c2, c1, c0 = g.cost
        for t in range(problem.case.T):
            p = values[problem.opf.p_gen[g.bus, t]]
            c_g += c2 * p * p + c1 * p + c0
    c_ev = 0.0
    for k, s in enumerate(problem.sessions):
        for t in s.slots:
            net = values[problem.v2g.p_chg[k, t]] - values[problem.v2g.p_dis[k, t]]
            c_ev += problem.prices.beta[t] * net
    return c_g, c_ev


def polish_solution(problem: AssembledProblem, values: np.ndarray) -> np.ndarray:
    """Make derived variables exact without disturbing the decision variables.

    Interior-point output satisfies equalities only to solver tolerance.  The
    battery-energy trace is recomputed from the power schedule (making the
    telescoping identity exact) and each cost-epigraph variable is set to the
    square it bounds.  Power, flow, voltage and binary entries are untouched;
    feasibility of the polished point is re-verified by the callers' checks.
    """
    out = np.array(values, dtype=float, copy=True)
    dt = problem.case.dt_hours
    for k, s in enumerate(problem.sessions):
        e = s.e_arr
        for t in s.slots:
            e += dt * (out[problem.v2g.p_chg[k, t]] - out[problem.v2g.p_dis[k, t]])
            out[problem.v2g.energy[k, t]] = e
    for (bus, t), s_var in problem.opf.cost_epi.items():
        p = out[problem.opf.p_gen[bus, t]]
        out[s_var] = p * p
    return out


@dataclass
class FullViolationReport:
    """Grid + EV feasibility of one candidate point."""

    opf: "object"
    exclusivity: float = 0.0  # y+ + y- - 1
    power_window: float = 0.0  # (11)-(12) residuals, kW
    energy_recurrence: float = 0.0  # kWh
    energy_bounds: float = 0.0
    departure: float = 0.0
    integrality: float = 0.0
    complementarity: float = 0.0  # max over (ev,t) of P+ * P-, kW^2
    tol: float = 1e-6

    @property
    def max_violation(self) -> float:
        return max(
            self.opf.max_violation,
            self.exclusivity,
            self.power_window,
            self.energy_recurrence,
            self.energy_bounds,
            self.departure,
            self.integrality,
        )

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol


def check_full_feasibility(
    problem: AssembledProblem,
    values: np.ndarray,
    tol: float = 1e-6,
    int_tol: float = 1e-6,
) -> FullViolationReport:
    """The benchmark's feasibility criterion: every primal constraint plus
    integrality of the charge/discharge indicators."""
    opf_rep = check_opf_feasibility(
        problem.case,
        problem.opf,
        values,
        tol=tol,
        ev_injection_values=ev_injection_values(problem, values),
    )
    rep = FullViolationReport(opf=opf_rep, tol=tol)
    dt = problem.case.dt_hours
    for k, s in enumerate(problem.sessions):
        prev_e = s.e_arr
        for t in s.slots:
            yc = values[problem.v2g.y_chg[k, t]]
            yd = values[problem.v2g.y_dis[k, t]]
            pc = values[problem.v2g.p_chg[k, t]]
            pd = values[problem.v2g.p_dis[k, t]]
            e = values[problem.v2g.energy[k, t]]
            rep.integrality = max(
                rep.integrality, abs(yc - round(yc)), abs(yd - round(yd))
            )
            rep.exclusivity = max(rep.exclusivity, yc + yd - 1.0)
            rep.power_window = max(
                rep.power_window,
                s.p_min * yd - pd,
                pd - s.p_max * yd,
                s.p_min * yc - pc,
                pc - s.p_max * yc,
            )
            rep.energy_recurrence = max(
                rep.energy_recurrence, abs(e - prev_e - (pc - pd) * dt)
            )
            rep.energy_bounds = max(rep.energy_bounds, s.e_min - e, e - s.e_max)
            rep.complementarity = max(rep.complementarity, pc * pd)
            prev_e = e
        rep.departure = max(rep.departure, s.e_dep - prev_e)
    rep.exclusivity = max(rep.exclusivity, 0.0)
    rep.power_window = max(rep.power_window, 0.0)
    rep.energy_bounds = max(rep.energy_bounds, 0.0)
    rep.departure = max(rep.departure, 0.0)
    return rep


def telescoping_residual(problem: AssembledProblem, values: np.ndarray) -> float:
    """Max over sessions of |E_dep - e_arr - dt * sum(P+ - P-)|."""
    worst = 0.0
    dt = problem.case.dt_hours
    for k, s in enumerate(problem.sessions):
        net = sum(
            values[problem.v2g.p_chg[k, t]] - values[problem.v2g.p_dis[k, t]] for t in s.slots
        )
        e_last = values[problem.v2g.energy[k, s.t_dep - 1]]
        worst = max(worst, abs(e_last - s.e_arr - dt * net))
    return worst


def suggest_penalty_weight(sessions: list[EvSession], prices: PriceCurve, dt: float) -> float:
    """Data-scaled default for the integrality penalty coefficient.

    Twice the cost of one EV-slot at full power at the mean price, times the
    fleet size: large enough to compete with the objective, small enough not
    to freeze the first iterate.
    """
    if not sessions:
        return 1.0
    mean_price = sum(prices.beta) / len(prices.beta)
    p_bar = max(s.p_max for s in sessions)
    return 2.0 * mean_price * p_bar * dt * len(sessions)

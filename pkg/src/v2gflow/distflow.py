"""Radial distribution network model and relaxed DistFlow OPF builder.

The branch-flow formulation works in squared quantities: ``w = V^2`` per bus
and ``l = I^2`` per branch.  Under that substitution the voltage-drop
equation is linear and the current-definition equality relaxes to the rotated
cone ``P^2 + Q^2 <= l * w``, which is what makes the assembled scheduling
problem a MISOCP rather than a general MINLP.

All grid quantities are per-unit on ``base_mva``.  The root (slack) bus has
its squared voltage pinned to 1.0 to anchor the profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, LinearExpr, VarId

INF = math.inf


class NotRadialError(ValueError):
    """Branch set is not a tree oriented away from the root."""


class MissingRootError(ValueError):
    """No (or more than one) root bus flagged in the case."""


class InvariantError(ValueError):
    """A loaded case violates a structural invariant."""


@dataclass
class Bus:
    id: int
    p_load: list[float]
    q_load: list[float]
    v_min: float = 0.95
    v_max: float = 1.05
    is_root: bool = False

    def validate(self, T: int) -> None:
        if not (0.0 < self.v_min <= self.v_max):
            raise InvariantError(f"bus {self.id}: need 0 < v_min <= v_max")
        if len(self.p_load) != T or len(self.q_load) != T:
            raise InvariantError(f"bus {self.id}: load series must have length T={T}")


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    i_max: float

    def validate(self) -> None:
        if self.r < 0 or self.x < 0:
            raise InvariantError(f"branch {self.from_bus}->{self.to_bus}: negative impedance")
        if self.i_max <= 0:
            raise InvariantError(f"branch {self.from_bus}->{self.to_bus}: i_max must be positive")


@dataclass
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: tuple[float, float, float]  # (c2, c1, c0), cost = c2*P^2 + c1*P + c0 per slot

    def validate(self) -> None:
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise InvariantError(f"generator at bus {self.bus}: inverted limits")
        if self.cost[0] < 0:
            raise InvariantError(f"generator at bus {self.bus}: quadratic cost must be convex")


@dataclass
class NetworkCase:
    name: str
    base_mva: float
    T: int
    dt_hours: float
    buses: list[Bus]
    branches: list[Branch]
    generators: list[Generator]

    def __post_init__(self) -> None:
        self.validate()

    @property
    def root(self) -> int:
        return next(b.id for b in self.buses if b.is_root)

    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def validate(self) -> None:
        if self.T < 1:
            raise InvariantError("need at least one time slot")
        if self.dt_hours <= 0:
            raise InvariantError("slot length must be positive")
        if self.base_mva <= 0:
            raise InvariantError("base_mva must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise InvariantError("duplicate bus ids")
        roots = [b.id for b in self.buses if b.is_root]
        if len(roots) != 1:
            raise MissingRootError(f"expected exactly one root bus, found {roots}")
        for b in self.buses:
            b.validate(self.T)
            if b.is_root and not (b.v_min <= 1.0 <= b.v_max):
                raise InvariantError("root bus voltage range must admit the 1.0 p.u. reference")
        for br in self.branches:
            br.validate()
        for g in self.generators:
            g.validate()
            if g.bus not in set(ids):
                raise InvariantError(f"generator references unknown bus {g.bus}")
        self._check_radial()

    def _check_radial(self) -> None:
        """Tree check: |branches| = |buses| - 1, connected, oriented from root."""
        ids = set(self.bus_ids())
        if len(self.branches) != len(self.buses) - 1:
            raise NotRadialError(
                f"{len(self.branches)} branches for {len(self.buses)} buses; a radial "
                "network needs exactly |buses| - 1"
            )
        children: dict[int, list[int]] = {i: [] for i in ids}
        seen_edges = set()
        for br in self.branches:
            if br.from_bus not in ids or br.to_bus not in ids:
                raise InvariantError(f"branch {br.from_bus}->{br.to_bus} references unknown bus")
            key = (br.from_bus, br.to_bus)
            if key in seen_edges:
                raise NotRadialError(f"duplicate branch {key}")
            seen_edges.add(key)
            children[br.from_bus].append(br.to_bus)
        # walk from the root along the declared orientation
        visited = {self.root}
        frontier = [self.root]
        parent_count = {i: 0 for i in ids}
        while frontier:
            u = frontier.pop()
            for w in children[u]:
                parent_count[w] += 1
                if parent_count[w] > 1 or w in visited:
                    raise NotRadialError(f"bus {w} reached twice; branch set contains a cycle")
                visited.add(w)
                frontier.append(w)
        if visited != ids:
            missing = sorted(ids - visited)
            raise NotRadialError(
                f"buses {missing} unreachable from the root along branch orientation; "
                "orient every branch parent->child away from the root"
            )

    def total_load(self, t: int) -> float:
        return sum(b.p_load[t] for b in self.buses)


@dataclass
class OpfVarMap:
    """VarIds of every squared-voltage/current, flow and generation variable."""

    w: dict[tuple[int, int], VarId] = field(default_factory=dict)  # (bus, t)
    p_gen: dict[tuple[int, int], VarId] = field(default_factory=dict)  # (gen bus, t)
    q_gen: dict[tuple[int, int], VarId] = field(default_factory=dict)
    l: dict[tuple[int, int, int], VarId] = field(default_factory=dict)  # (from, to, t)
    p_flow: dict[tuple[int, int, int], VarId] = field(default_factory=dict)
    q_flow: dict[tuple[int, int, int], VarId] = field(default_factory=dict)
    cost_epi: dict[tuple[int, int], VarId] = field(default_factory=dict)  # c2>0 only


def build_opf(
    program: ConicProgram,
    case: NetworkCase,
    ev_injection: dict[tuple[int, int], LinearExpr] | None = None,
) -> OpfVarMap:
    """Add the relaxed multi-period DistFlow constraints to ``program``.

    ``ev_injection`` supplies the per-(bus, t) EV net active draw in per-unit
    (already divided/multiplied by the charging efficiency); buses without a
    station simply have no entry.  Returns the variable map and accumulates
    the generation-cost terms into the program objective.
    """
    inj = ev_injection or {}
    vm = OpfVarMap()
    T = case.T
    root = case.root
    gen_buses = {g.bus: g for g in case.generators}
    if len(gen_buses) != len(case.generators):
        raise InvariantError("at most one generator per bus is supported")

    for b in case.buses:
        lo2, hi2 = b.v_min**2, b.v_max**2
        for t in range(T):
            if b.id == root:
                # slack reference: the squared voltage is pinned
                vm.w[b.id, t] = program.add_variable(1.0, 1.0)
            else:
                vm.w[b.id, t] = program.add_variable(lo2, hi2)
    for br in case.branches:
        for t in range(T):
            vm.l[br.from_bus, br.to_bus, t] = program.add_variable(0.0, br.i_max**2)
            vm.p_flow[br.from_bus, br.to_bus, t] = program.add_variable(-INF, INF)
            vm.q_flow[br.from_bus, br.to_bus, t] = program.add_variable(-INF, INF)
    for g in case.generators:
        for t in range(T):
            vm.p_gen[g.bus, t] = program.add_variable(g.p_min, g.p_max)
            vm.q_gen[g.bus, t] = program.add_variable(g.q_min, g.q_max)
            if g.cost[0] > 0:
                vm.cost_epi[g.bus, t] = program.add_variable(0.0, INF)

    into: dict[int, list[Branch]] = {b.id: [] for b in case.buses}
    outof: dict[int, list[Branch]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        into[br.to_bus].append(br)
        outof[br.from_bus].append(br)

    for b in case.buses:
        for t in range(T):
            # active balance: load + outflow + EV draw - inflow + losses - gen = 0
            p_bal = LinearExpr.constant(b.p_load[t])
            q_bal = LinearExpr.constant(b.q_load[t])
            for br in outof[b.id]:
                p_bal.add_term(vm.p_flow[br.from_bus, br.to_bus, t], 1.0)
                q_bal.add_term(vm.q_flow[br.from_bus, br.to_bus, t], 1.0)
            hook = inj.get((b.id, t))
            if hook is not None:
                p_bal = p_bal + hook
            for br in into[b.id]:
                p_bal.add_term(vm.p_flow[br.from_bus, br.to_bus, t], -1.0)
                p_bal.add_term(vm.l[br.from_bus, br.to_bus, t], br.r)
                q_bal.add_term(vm.q_flow[br.from_bus, br.to_bus, t], -1.0)
                q_bal.add_term(vm.l[br.from_bus, br.to_bus, t], br.x)
            if b.id in gen_buses:
                p_bal.add_term(vm.p_gen[b.id, t], -1.0)
                q_bal.add_term(vm.q_gen[b.id, t], -1.0)
            program.add_eq(p_bal)
            program.add_eq(q_bal)

    for br in case.branches:
        for t in range(T):
            i, j = br.from_bus, br.to_bus
            # voltage drop: w_i - w_j = 2(R P + X Q) - (R^2 + X^2) l
            drop = LinearExpr.term(vm.w[i, t]) - LinearExpr.term(vm.w[j, t])
            drop.add_term(vm.p_flow[i, j, t], -2.0 * br.r)
            drop.add_term(vm.q_flow[i, j, t], -2.0 * br.x)
            drop.add_term(vm.l[i, j, t], br.r**2 + br.x**2)
            program.add_eq(drop)
            # relaxed current definition: P^2 + Q^2 <= l * w_from
            program.add_rotated_soc(
                [LinearExpr.term(vm.p_flow[i, j, t]), LinearExpr.term(vm.q_flow[i, j, t])],
                LinearExpr.term(vm.l[i, j, t]),
                LinearExpr.term(vm.w[i, t]),
            )

    cost = program.objective.copy()
    for g in case.generators:
        c2, c1, c0 = g.cost
        for t in range(T):
            cost.add_term(vm.p_gen[g.bus, t], c1)
            cost.const += c0
            if c2 > 0:
                s = vm.cost_epi[g.bus, t]
                cost.add_term(s, c2)
                # epigraph: P^2 <= s * 1
                program.add_rotated_soc(
                    [LinearExpr.term(vm.p_gen[g.bus, t])], LinearExpr.term(s), 1.0
                )
    program.set_objective(cost)
    return vm


@dataclass
class OpfViolationReport:
    """Max residuals of the grid constraints, recomputed from case data."""

    active_balance: float = 0.0
    reactive_balance: float = 0.0
    voltage_drop: float = 0.0
    cone_violation: float = 0.0
    cone_tightness: float = 0.0  # |P^2 + Q^2 - l*w|, reported but never asserted
    bounds: float = 0.0
    tol: float = 1e-6

    @property
    def max_violation(self) -> float:
        return max(
            self.active_balance,
            self.reactive_balance,
            self.voltage_drop,
            self.cone_violation,
            self.bounds,
        )

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol


def check_opf_feasibility(
    case: NetworkCase,
    var_map: OpfVarMap,
    values: np.ndarray,
    tol: float = 1e-6,
    ev_injection_values: dict[tuple[int, int], float] | None = None,
) -> OpfViolationReport:
    """Re-evaluate every grid constraint directly from the case data.

    Independent of both the ConicProgram object and the backend; this is the
    feasibility notion the benchmark reports.
    """
    inj = ev_injection_values or {}
    rep = OpfViolationReport(tol=tol)
    gen_buses = {g.bus: g for g in case.generators}
    into: dict[int, list[Branch]] = {b.id: [] for b in case.buses}
    outof: dict[int, list[Branch]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        into[br.to_bus].append(br)
        outof[br.from_bus].append(br)

    for b in case.buses:
        for t in range(case.T):
            w = values[var_map.w[b.id, t]]
            rep.bounds = max(rep.bounds, b.v_min**2 - w, w - b.v_max**2)
            p = b.p_load[t] + inj.get((b.id, t), 0.0)
            q = b.q_load[t]
            for br in outof[b.id]:
                p += values[var_map.p_flow[br.from_bus, br.to_bus, t]]
                q += values[var_map.q_flow[br.from_bus, br.to_bus, t]]
            for br in into[b.id]:
                l = values[var_map.l[br.from_bus, br.to_bus, t]]
                p -= values[var_map.p_flow[br.from_bus, br.to_bus, t]] - br.r * l
                q -= values[var_map.q_flow[br.from_bus, br.to_bus, t]] - br.x * l
            if b.id in gen_buses:
                g = gen_buses[b.id]
                pg = values[var_map.p_gen[b.id, t]]
                qg = values[var_map.q_gen[b.id, t]]
                p -= pg
                q -= qg
                rep.bounds = max(rep.bounds, g.p_min - pg, pg - g.p_max, g.q_min - qg, qg - g.q_max)
            rep.active_balance = max(rep.active_balance, abs(p))
            rep.reactive_balance = max(rep.reactive_balance, abs(q))

    for br in case.branches:
        for t in range(case.T):
            i, j = br.from_bus, br.to_bus
            wi = values[var_map.w[i, t]]
            wj = values[var_map.w[j, t]]
            l = values[var_map.l[i, j, t]]
            p = values[var_map.p_flow[i, j, t]]
            q = values[var_map.q_flow[i, j, t]]
            rep.bounds = max(rep.bounds, -l, l - br.i_max**2)
            drop = wi - wj - 2.0 * (br.r * p + br.x * q) + (br.r**2 + br.x**2) * l
            rep.voltage_drop = max(rep.voltage_drop, abs(drop))
            gap = p * p + q * q - l * wi
            rep.cone_violation = max(rep.cone_violation, gap)
            rep.cone_tightness = max(rep.cone_tightness, abs(gap))
    rep.cone_violation = max(rep.cone_violation, 0.0)
    rep.bounds = max(rep.bounds, 0.0)
    return rep

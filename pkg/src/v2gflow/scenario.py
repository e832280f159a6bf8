"""Case/price/session ingestion and seeded random scenario generation.

File units follow the upstream data sources: case files carry loads and
generator limits in MW/MVAr with per-unit branch impedances (MATPOWER
convention), price files carry currency/MWh (day-ahead feed convention).
Loaders convert to the in-memory units used everywhere else: per-unit grid
quantities on ``base_mva`` and currency/kWh prices.

Sample generation is a pure function of (spec, seed): a fixed draw order on a
``numpy`` generator makes batches bit-reproducible.  Noise standard
deviations are interpreted in the file units - additive MW on each bus load,
additive currency/MWh on each price (floored just above zero), relative noise
on branch impedances floored at 10% of nominal.  EV sessions are drawn so
that each is individually deliverable - the departure slot is never closer
than the slots needed to reach the required energy at full power - so any
infeasibility observed downstream is the method's, not the data's.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .distflow import Branch, Bus, Generator, InvariantError, NetworkCase
from .v2g import EvSession, PriceCurve


class SchemaError(ValueError):
    """A data file does not match the documented schema."""

    def __init__(self, path, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = str(path)
        self.detail = detail


@dataclass
class ScenarioSpec:
    """Knobs of the random scenario generator (defaults follow the study
    setup: 24 hourly slots, station on bus 6, 1-5 arrivals per slot, 100 kWh
    packs arriving at 20-40% charge, 10-20 kW chargers, eta 0.8)."""

    case: str = "case18_synth"
    seed: int = 0
    T: int = 24
    station_bus: int = 6
    arrivals_per_slot: tuple[int, int] = (1, 5)
    soc_arrival_range: tuple[float, float] = (0.20, 0.40)
    capacity_kwh: float = 100.0
    p_range_kw: tuple[float, float] = (10.0, 20.0)
    eta: float = 0.8
    price_noise_sd: float = 0.5  # additive, currency/MWh (price-file units)
    load_noise_sd: float = 1.0  # additive, MW (case-file units)
    impedance_noise_sd: float = 0.1  # relative
    max_stay_slots: int | None = None  # cap on the connection window; None = until horizon
    price_floor: float = 0.01  # currency/MWh
    impedance_floor_frac: float = 0.10
    session_retries: int = 20

    def __post_init__(self) -> None:
        for lo, hi in (self.arrivals_per_slot, self.soc_arrival_range, self.p_range_kw):
            if lo > hi:
                raise InvariantError(f"range ({lo}, {hi}) is not well ordered")
        for sd in (self.price_noise_sd, self.load_noise_sd, self.impedance_noise_sd):
            if sd < 0:
                raise InvariantError("noise standard deviations must be nonnegative")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ScenarioSpec":
        kwargs = dict(doc)
        for key in ("arrivals_per_slot", "soc_arrival_range", "p_range_kw"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class Sample:
    case: NetworkCase
    sessions: list[EvSession]
    prices: PriceCurve
    seed: int
    meta: dict = field(default_factory=dict)


def data_path(name: str) -> Path:
    """Path of a bundled data file (cases, base price curve)."""
    return Path(resources.files("v2gflow") / "data" / name)


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


def _require(doc: dict, field_name: str, path) -> object:
    if field_name not in doc:
        raise SchemaError(path, f"missing field '{field_name}'")
    return doc[field_name]


def load_case(path) -> NetworkCase:
    """Read a case file; MW/MVAr quantities are converted to per-unit.

    Generator cost coefficients in the file apply to MW and are rescaled so
    the in-memory cost applies to per-unit power with an identical value.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, f"invalid JSON: {exc}") from exc
    T = int(_require(doc, "T", path))
    base = float(_require(doc, "base_mva", path))
    if base <= 0:
        raise SchemaError(path, f"base_mva must be positive, got {base}")
    buses = []
    for i, b in enumerate(_require(doc, "buses", path)):
        try:
            buses.append(
                Bus(
                    id=int(_require(b, "id", path)),
                    p_load=[float(v) / base for v in _require(b, "p_load", path)],
                    q_load=[float(v) / base for v in _require(b, "q_load", path)],
                    v_min=float(b.get("v_min", 0.95)),
                    v_max=float(b.get("v_max", 1.05)),
                    is_root=bool(b.get("is_root", False)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, f"buses[{i}]: {exc}") from exc
    branches = []
    for i, br in enumerate(_require(doc, "branches", path)):
        try:
            branches.append(
                Branch(
                    from_bus=int(_require(br, "from", path)),
                    to_bus=int(_require(br, "to", path)),
                    r=float(_require(br, "r", path)),
                    x=float(_require(br, "x", path)),
                    i_max=float(_require(br, "i_max", path)),
                )
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, f"branches[{i}]: {exc}") from exc
    generators = []
    for i, g in enumerate(_require(doc, "generators", path)):
        try:
            cost = [float(v) for v in _require(g, "cost", path)]
            if len(cost) != 3:
                raise ValueError("cost must be [c2, c1, c0]")
            generators.append(
                Generator(
                    bus=int(_require(g, "bus", path)),
                    p_min=float(_require(g, "p_min", path)) / base,
                    p_max=float(_require(g, "p_max", path)) / base,
                    q_min=float(_require(g, "q_min", path)) / base,
                    q_max=float(_require(g, "q_max", path)) / base,
                    cost=(cost[0] * base * base, cost[1] * base, cost[2]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, f"generators[{i}]: {exc}") from exc
    return NetworkCase(
        name=str(doc.get("name", Path(str(path)).stem)),
        base_mva=base,
        T=T,
        dt_hours=float(_require(doc, "dt_hours", path)),
        buses=buses,
        branches=branches,
        generators=generators,
    )


def load_prices(path, T: int | None = None) -> PriceCurve:
    """Read a ``slot,price`` CSV in currency/MWh; returns currency/kWh."""
    beta: list[float] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["slot", "price"]:
            raise SchemaError(path, "expected header 'slot,price'")
        for row in reader:
            if not row:
                continue
            try:
                slot, price = int(row[0]), float(row[1])
            except (ValueError, IndexError) as exc:
                raise SchemaError(path, f"bad row {row!r}") from exc
            if slot != len(beta):
                raise SchemaError(path, f"slots must be consecutive from 0, got {slot}")
            beta.append(price / 1000.0)
    if T is not None and len(beta) != T:
        raise SchemaError(path, f"{len(beta)} price rows but T={T}")
    return PriceCurve(beta)


def load_sessions(path) -> list[EvSession]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, f"invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaError(path, "expected a JSON list of sessions")
    sessions = []
    for i, s in enumerate(doc):
        try:
            ses = EvSession(
                id=str(_require(s, "id", path)),
                station_bus=int(_require(s, "station_bus", path)),
                t_arr=int(_require(s, "t_arr", path)),
                t_dep=int(_require(s, "t_dep", path)),
                e_arr=float(_require(s, "e_arr", path)),
                e_dep=float(_require(s, "e_dep", path)),
                e_min=float(_require(s, "e_min", path)),
                e_max=float(_require(s, "e_max", path)),
                p_min=float(_require(s, "p_min", path)),
                p_max=float(_require(s, "p_max", path)),
                eta=float(_require(s, "eta", path)),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(path, f"sessions[{i}]: {exc}") from exc
        ses.validate()
        sessions.append(ses)
    return sessions


def save_sessions(sessions: list[EvSession], path) -> None:
    doc = [
        {
            "id": s.id,
            "station_bus": s.station_bus,
            "t_arr": s.t_arr,
            "t_dep": s.t_dep,
            "e_arr": s.e_arr,
            "e_dep": s.e_dep,
            "e_min": s.e_min,
            "e_max": s.e_max,
            "p_min": s.p_min,
            "p_max": s.p_max,
            "eta": s.eta,
        }
        for s in sessions
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def save_case(case: NetworkCase, path) -> None:
    """Inverse of :func:`load_case`: per-unit quantities go back to MW/MVAr."""
    base = case.base_mva
    doc = {
        "name": case.name,
        "base_mva": base,
        "T": case.T,
        "dt_hours": case.dt_hours,
        "buses": [
            {
                "id": b.id,
                "p_load": [v * base for v in b.p_load],
                "q_load": [v * base for v in b.q_load],
                "v_min": b.v_min,
                "v_max": b.v_max,
                "is_root": b.is_root,
            }
            for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "i_max": br.i_max}
            for br in case.branches
        ],
        "generators": [
            {
                "bus": g.bus,
                "p_min": g.p_min * base,
                "p_max": g.p_max * base,
                "q_min": g.q_min * base,
                "q_max": g.q_max * base,
                "cost": [g.cost[0] / (base * base), g.cost[1] / base, g.cost[2]],
            }
            for g in case.generators
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def save_prices(prices: PriceCurve, path) -> None:
    """Inverse of :func:`load_prices`: currency/kWh goes back to currency/MWh."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "price"])
        for t, p in enumerate(prices.beta):
            writer.writerow([t, repr(float(p) * 1000.0)])


def load_bundled_case(name: str) -> NetworkCase:
    return load_case(data_path(f"{name}.json"))


def load_bundled_prices(T: int | None = None) -> PriceCurve:
    return load_prices(data_path("prices_day.csv"), T=T)


def truncate_horizon(case: NetworkCase, T: int) -> NetworkCase:
    """Copy of the case shortened to the first T slots (desk-scale runs)."""
    if not (1 <= T <= case.T):
        raise InvariantError(f"cannot truncate case with T={case.T} to T={T}")
    return NetworkCase(
        name=case.name,
        base_mva=case.base_mva,
        T=T,
        dt_hours=case.dt_hours,
        buses=[
            Bus(b.id, b.p_load[:T], b.q_load[:T], b.v_min, b.v_max, b.is_root)
            for b in case.buses
        ],
        branches=[dataclasses.replace(br) for br in case.branches],
        generators=[dataclasses.replace(g) for g in case.generators],
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate_sample(
    spec: ScenarioSpec,
    seed: int | None = None,
    base_case: NetworkCase | None = None,
    base_prices: PriceCurve | None = None,
) -> Sample:
    """Draw one perturbed (case, sessions, prices) triple.

    The draw order is fixed: loads, impedances, prices, then sessions slot by
    slot; identical (spec, seed) inputs give bit-identical samples.
    """
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    case = base_case if base_case is not None else load_bundled_case(spec.case)
    if case.T != spec.T:
        case = truncate_horizon(case, spec.T)
    prices = base_prices if base_prices is not None else load_bundled_prices()
    if len(prices.beta) < spec.T:
        raise InvariantError(
            f"base price curve has {len(prices.beta)} slots, spec needs {spec.T}"
        )
    T = spec.T

    # load noise is specified in MW (file units) and perturbs the active load
    # only; the case holds per-unit
    sd_pu = spec.load_noise_sd / case.base_mva
    buses = []
    for b in case.buses:
        noise_p = rng.normal(0.0, sd_pu, T) if sd_pu > 0 else np.zeros(T)
        p = np.maximum(np.asarray(b.p_load[:T]) + noise_p, 0.0)
        buses.append(Bus(b.id, p.tolist(), list(b.q_load[:T]), b.v_min, b.v_max, b.is_root))

    branches = []
    for br in case.branches:
        if spec.impedance_noise_sd > 0:
            gr, gx = rng.normal(0.0, 1.0, 2)
        else:
            gr = gx = 0.0
        floor = spec.impedance_floor_frac
        r = max(br.r * (1.0 + spec.impedance_noise_sd * gr), floor * br.r)
        x = max(br.x * (1.0 + spec.impedance_noise_sd * gx), floor * br.x)
        branches.append(Branch(br.from_bus, br.to_bus, r, x, br.i_max))

    sample_case = NetworkCase(
        name=case.name,
        base_mva=case.base_mva,
        T=T,
        dt_hours=case.dt_hours,
        buses=buses,
        branches=branches,
        generators=[dataclasses.replace(g) for g in case.generators],
    )

    # price noise and floor are specified in currency/MWh (file units); the
    # in-memory curve is currency/kWh
    if spec.price_noise_sd > 0:
        beta = np.asarray(prices.beta[:T]) + rng.normal(0.0, spec.price_noise_sd / 1000.0, T)
    else:
        beta = np.asarray(prices.beta[:T], dtype=float)
    sample_prices = PriceCurve(np.maximum(beta, spec.price_floor / 1000.0).tolist())

    sessions: list[EvSession] = []
    dropped = 0
    regenerated = 0
    soc_lo, soc_hi = spec.soc_arrival_range
    p_min, p_max = spec.p_range_kw
    cap = spec.capacity_kwh
    a_lo, a_hi = spec.arrivals_per_slot
    for t in range(T):
        k = int(rng.integers(a_lo, a_hi + 1)) if a_hi > 0 else 0
        for _ in range(k):
            placed = False
            for attempt in range(spec.session_retries):
                e_arr = float(rng.uniform(soc_lo, soc_hi)) * cap
                min_stay = max(1, math.ceil((cap - e_arr) / (p_max * case.dt_hours) - 1e-9))
                latest = T if spec.max_stay_slots is None else min(T, t + spec.max_stay_slots)
                if t + min_stay > latest:
                    regenerated += 1
                    continue
                t_dep = int(rng.integers(t + min_stay, latest + 1))
                sessions.append(
                    EvSession(
                        id=f"ev{len(sessions)}",
                        station_bus=spec.station_bus,
                        t_arr=t,
                        t_dep=t_dep,
                        e_arr=e_arr,
                        e_dep=cap,
                        e_min=0.0,
                        e_max=cap,
                        p_min=p_min,
                        p_max=p_max,
                        eta=spec.eta,
                    )
                )
                placed = True
                break
            if not placed:
                dropped += 1
    for s in sessions:
        s.validate()

    meta = {
        "spec": spec.to_json_dict(),
        "seed": seed,
        "load_noise_units": "MW (case-file units, converted to per-unit on base_mva)",
        "price_noise_units": "currency/MWh (price-file units)",
        "sessions": len(sessions),
        "regenerated_draws": regenerated,
        "dropped_arrivals": dropped,
    }
    return Sample(case=sample_case, sessions=sessions, prices=sample_prices, seed=seed, meta=meta)


def write_sample(sample: Sample, out_dir) -> None:
    """Archive one sample as {case.json, sessions.json, prices.csv, meta.json}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_case(sample.case, out / "case.json")
    save_sessions(sample.sessions, out / "sessions.json")
    save_prices(sample.prices, out / "prices.csv")
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(sample.meta, fh, indent=1)


def read_sample(sample_dir) -> Sample:
    d = Path(sample_dir)
    case = load_case(d / "case.json")
    sessions = load_sessions(d / "sessions.json")
    prices = load_prices(d / "prices.csv", T=case.T)
    meta = {}
    meta_path = d / "meta.json"
    if meta_path.exists():
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    return Sample(case=case, sessions=sessions, prices=prices, seed=meta.get("seed", -1), meta=meta)

"""Generate the bundled synthetic radial cases and the base day price curve.

Deterministic (no RNG): every value is a closed-form function of the bus or
branch index, shaped so each feeder keeps voltage/current/generation headroom
under the scenario generator's paper-scale load noise (sigma = 1 MW per bus
per slot, truncated at zero).  Run with --validate to solve seeded samples
and verify that headroom empirically.

Usage:  python3 scripts/make_cases.py [--validate] [--seeds N]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "v2gflow" / "data"

# hourly demand shape (fraction of per-bus peak) and day-ahead style prices
LOAD_SHAPE = [
    0.62, 0.58, 0.55, 0.54, 0.55, 0.60, 0.70, 0.82, 0.90, 0.88, 0.84, 0.80,
    0.78, 0.76, 0.77, 0.80, 0.87, 0.95, 1.00, 0.97, 0.90, 0.80, 0.72, 0.66,
]
PRICES_EUR_MWH = [
    62.0, 55.0, 50.0, 47.0, 46.0, 49.0, 58.0, 72.0, 88.0, 95.0, 90.0, 82.0,
    76.0, 70.0, 66.0, 68.0, 75.0, 88.0, 102.0, 110.0, 104.0, 92.0, 78.0, 68.0,
]


def bus(i, p_peak_mw, T, v_min=0.95, v_max=1.05, root=False):
    shape = LOAD_SHAPE[:T] if T <= 24 else LOAD_SHAPE * (T // 24 + 1)
    p = [round(p_peak_mw * shape[t], 6) for t in range(T)]
    q = [round(0.33 * v, 6) for v in p]
    return {
        "id": i,
        "p_load": [0.0] * T if root else p,
        "q_load": [0.0] * T if root else q,
        "v_min": v_min,
        "v_max": v_max,
        "is_root": root,
    }


def case4_toy():
    T = 4
    buses = [bus(0, 0.0, T, 0.90, 1.10, root=True)]
    for i, peak in [(1, 0.10), (2, 0.06), (3, 0.08)]:
        buses.append(bus(i, peak, T, 0.90, 1.10))
    branches = [
        {"from": 0, "to": 1, "r": 0.010, "x": 0.008, "i_max": 1.0},
        {"from": 1, "to": 2, "r": 0.012, "x": 0.009, "i_max": 0.8},
        {"from": 1, "to": 3, "r": 0.011, "x": 0.008, "i_max": 0.8},
    ]
    gens = [
        {"bus": 0, "p_min": 0.0, "p_max": 1.0, "q_min": -0.5, "q_max": 0.6,
         "cost": [10.0, 50.0, 0.0]},
    ]
    return {
        "name": "case4_toy", "base_mva": 1.0, "T": T, "dt_hours": 1.0,
        "buses": buses, "branches": branches, "generators": gens,
    }


def case18_synth():
    T = 24
    buses = [bus(0, 0.0, T, root=True)]
    for i in range(1, 18):
        peak = round(0.15 + 0.30 * ((i * 7) % 11) / 10.0, 4)  # 0.15 .. 0.45 MW
        buses.append(bus(i, peak, T))
    branches = []
    for i in range(12):  # trunk 0-1-...-12
        i_max = 2.5 if i == 0 else (2.0 if i <= 4 else 1.4)
        branches.append(
            {"from": i, "to": i + 1, "r": 0.0030, "x": 0.0020, "i_max": i_max}
        )
    for frm, to in [(4, 13), (4, 14), (8, 15), (8, 16), (11, 17)]:
        branches.append({"from": frm, "to": to, "r": 0.0040, "x": 0.0028, "i_max": 1.0})
    gens = [
        {"bus": 0, "p_min": 0.0, "p_max": 18.0, "q_min": -8.0, "q_max": 15.0,
         "cost": [0.035, 30.0, 15.0]},
        {"bus": 9, "p_min": 0.0, "p_max": 6.0, "q_min": -3.0, "q_max": 5.0,
         "cost": [0.0, 55.0, 0.0]},
    ]
    return {
        "name": "case18_synth", "base_mva": 10.0, "T": T, "dt_hours": 1.0,
        "buses": buses, "branches": branches, "generators": gens,
    }


def case69_synth():
    T = 24
    buses = [bus(0, 0.0, T, 0.94, 1.06, root=True)]
    for i in range(1, 69):
        peak = round(0.05 + 0.13 * ((i * 5) % 13) / 12.0, 4)  # 0.05 .. 0.18 MW
        buses.append(bus(i, peak, T, 0.94, 1.06))
    branches = []
    for i in range(47):  # trunk 0-1-...-47
        if i < 16:
            i_max = 6.5
        elif i < 32:
            i_max = 4.5
        else:
            i_max = 3.0
        branches.append(
            {"from": i, "to": i + 1, "r": 0.0004, "x": 0.0003, "i_max": i_max}
        )
    laterals = [
        (3, 48), (3, 49), (7, 50), (7, 51), (11, 52), (15, 53), (15, 54),
        (19, 55), (23, 56), (23, 57), (27, 58), (29, 68), (31, 59), (31, 60),
        (35, 61), (39, 62), (39, 63), (43, 64), (45, 65), (46, 66), (47, 67),
    ]
    for frm, to in laterals:
        branches.append({"from": frm, "to": to, "r": 0.0010, "x": 0.0007, "i_max": 1.0})
    gens = [
        {"bus": 0, "p_min": 0.0, "p_max": 62.0, "q_min": -10.0, "q_max": 16.0,
         "cost": [0.020, 28.0, 25.0]},
        {"bus": 35, "p_min": 0.0, "p_max": 10.0, "q_min": -5.0, "q_max": 8.0,
         "cost": [0.0, 52.0, 0.0]},
    ]
    return {
        "name": "case69_synth", "base_mva": 10.0, "T": T, "dt_hours": 1.0,
        "buses": buses, "branches": branches, "generators": gens,
    }


def write_all():
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for builder in (case4_toy, case18_synth, case69_synth):
        doc = builder()
        path = DATA_DIR / f"{doc['name']}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
        print("wrote", path)
    prices = DATA_DIR / "prices_day.csv"
    with open(prices, "w", encoding="utf-8", newline="") as fh:
        fh.write("slot,price\n")
        for t, p in enumerate(PRICES_EUR_MWH):
            fh.write(f"{t},{p}\n")
    print("wrote", prices)


def validate(n_seeds: int):
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
    from v2gflow.backend import solve_continuous
    from v2gflow.conic import SolveStatus
    from v2gflow.scenario import ScenarioSpec, generate_sample, load_bundled_case
    from v2gflow.v2g import assemble_primal

    specs = [
        # the toy runs at toy-scale noise; its role is unit/oracle testing
        ScenarioSpec(case="case4_toy", T=4, station_bus=3, load_noise_sd=0.02,
                     arrivals_per_slot=(0, 1), max_stay_slots=4, p_range_kw=(2.0, 30.0)),
        ScenarioSpec(case="case18_synth", T=24, station_bus=6),
        ScenarioSpec(case="case69_synth", T=24, station_bus=6),
    ]
    for spec in specs:
        name = spec.case
        ok, worst_v, worst_l = 0, 1.0, 0.0
        for seed in range(n_seeds):
            sample = generate_sample(spec, seed=seed)
            prob = assemble_primal(sample.case, sample.sessions, sample.prices)
            sol = solve_continuous(prob.program.continuous_relaxation())
            if sol.status is SolveStatus.OPTIMAL:
                ok += 1
                for (b, t), w in prob.opf.w.items():
                    worst_v = min(worst_v, sol.values[w] ** 0.5)
                for key, l in prob.opf.l.items():
                    br = next(
                        br for br in sample.case.branches
                        if (br.from_bus, br.to_bus) == key[:2]
                    )
                    worst_l = max(worst_l, sol.values[l] / br.i_max**2)
            else:
                print(f"  {name} seed {seed}: {sol.status}")
        print(
            f"{name}: {ok}/{n_seeds} feasible relaxations, "
            f"min voltage {worst_v:.4f} p.u., max current usage {100 * worst_l:.1f}%"
        )


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--validate", action="store_true")
    ap.add_argument("--seeds", type=int, default=40)
    args = ap.parse_args()
    write_all()
    if args.validate:
        validate(args.seeds)

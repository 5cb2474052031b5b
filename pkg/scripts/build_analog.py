"""Regenerate the shipped analog case under src/pumpvs/data/analog.

A 13-bus unbalanced feeder with one three-phase pump load, coupled to a
looped water network fed by one pump from a reservoir into a
valve-regulated tank.  All numbers below are the analog's own choices.

    python3 scripts/build_analog.py [--out DIR]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pumpvs" / "data" / "analog"

V_LN = 2400.0
BASE_W = 1.0e6  # per phase
Z_BASE = V_LN**2 / BASE_W
FT_PER_MILE = 5280.0

# ohm per mile, phases a b c
Z_LINE = np.array(
    [
        [0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j],
        [0.1560 + 0.5017j, 0.3375 + 1.0478j, 0.1535 + 0.3849j],
        [0.1580 + 0.4236j, 0.1535 + 0.3849j, 0.3414 + 1.0348j],
    ]
)
A = np.exp(-2j * np.pi / 3)
ALPHA = np.array([1.0, A, A**2])
GAMMA = np.outer(ALPHA, ALPHA.conj())

BUSES = {
    # id: (phases, p_kw per phase, q_kvar per phase)
    "650": ("abc", (0, 0, 0), (0, 0, 0)),
    "632": ("abc", (17, 66, 117), (10, 38, 68)),
    "633": ("abc", (0, 0, 0), (0, 0, 0)),
    "634": ("abc", (160, 120, 120), (110, 90, 90)),
    "645": ("bc", (0, 170, 0), (0, 125, 0)),
    "646": ("bc", (0, 230, 0), (0, 132, 0)),
    "671": ("abc", (385, 385, 385), (220, 220, 220)),
    "680": ("abc", (0, 0, 0), (0, 0, 0)),
    "684": ("ac", (0, 0, 0), (0, 0, 0)),
    "611": ("c", (0, 0, 170), (0, 0, 80)),
    "652": ("a", (128, 0, 0), (86, 0, 0)),
    "692": ("abc", (0, 0, 170), (0, 0, 151)),
    "675": ("abc", (485, 68, 290), (190, 60, 212)),
}
LINES = [
    # from, to, length ft
    ("650", "632", 2000),
    ("632", "633", 500),
    ("633", "634", 1000),
    ("632", "645", 500),
    ("645", "646", 300),
    ("632", "671", 2000),
    ("671", "680", 1000),
    ("671", "684", 300),
    ("684", "611", 300),
    ("684", "652", 800),
    ("671", "692", 50),
    ("692", "675", 500),
]
PUMP_BUS = "680"
PUMP_ETA = 0.4
SUBSTATION_V = 1.05
# shortens the feeder so the lower voltage limit binds only near peak load
IMPEDANCE_SCALE = 0.66

HOURS = list(range(7, 19))
POWER_MULT = [0.62, 0.68, 0.74, 0.80, 0.84, 0.88, 0.92, 0.96, 1.00, 1.00, 0.97, 0.94]
WATER_MULT = [0.75, 0.80, 0.85, 0.90, 0.95, 1.00, 1.10, 1.20, 1.30, 1.30, 1.20, 1.10]
PRICES = [24.0, 23.0, 26.0, 30.0, 33.0, 36.0, 41.0, 47.0, 56.0, 62.0, 58.0, 51.0]


def line_mn(frm: str, to: str, length_ft: float):
    ph = np.array([c in BUSES[to][0] for c in "abc"])
    Z = Z_LINE * (IMPEDANCE_SCALE * length_ft / FT_PER_MILE) / Z_BASE
    Z = Z * np.outer(ph, ph)
    G = GAMMA * np.outer(ph, ph)
    M = 2.0 * np.real(G * Z.conj())
    N = -2.0 * np.imag(G * Z.conj())
    return M, N


def pdn_json() -> dict:
    buses = [
        {"id": b, "phases": ph, "p_kw": list(map(float, p)), "q_kvar": list(map(float, q))}
        for b, (ph, p, q) in BUSES.items()
    ]
    lines = []
    for frm, to, ft in LINES:
        M, N = line_mn(frm, to, ft)
        lines.append({"from": frm, "to": to, "M": M.round(12).tolist(), "N": N.round(12).tolist()})
    return {
        "schema": 1,
        "name": "analog-13bus",
        "base_power_w": BASE_W,
        "substation": "650",
        "substation_voltage": [SUBSTATION_V] * 3,
        "v_min": 0.95,
        "v_max": 1.05,
        "buses": buses,
        "lines": lines,
        "pumps": [{"pump": "P9", "bus": PUMP_BUS, "eta": PUMP_ETA}],
    }


def wdn_json() -> dict:
    elev = {"J10": 216.0, "J11": 216.0, "J12": 213.0, "J13": 211.0, "J21": 213.0,
            "J22": 211.0, "J23": 210.0, "J31": 213.0, "J32": 216.0}
    base = {"J10": 0.0, "J11": 0.033, "J12": 0.033, "J13": 0.022, "J21": 0.033,
            "J22": 0.044, "J23": 0.033, "J31": 0.022, "J32": 0.022}
    junctions = [
        {"id": j, "elevation": z, "h_min": z + 20.0, "h_max": z + 140.0, "demand": base[j]}
        for j, z in elev.items()
    ]
    pipes_raw = [
        ("P10", "J10", "J11", 30.0),
        ("P11", "J11", "J12", 60.0),
        ("P12", "J12", "J13", 90.0),
        ("P21", "J21", "J22", 90.0),
        ("P22", "J22", "J23", 120.0),
        ("P31", "J31", "J32", 150.0),
        ("P111", "J11", "J21", 60.0),
        ("P112", "J12", "J22", 90.0),
        ("P113", "J13", "J23", 150.0),
        ("P121", "J21", "J31", 90.0),
        ("P122", "J22", "J32", 150.0),
        ("P110", "J12", "T2", 20.0),
    ]
    pipes = [
        {"id": i, "start": s, "end": e, "k": k, "x_min": -0.4, "x_max": 0.4}
        for i, s, e, k in pipes_raw
    ]
    return {
        "schema": 1,
        "name": "analog-looped",
        "junctions": junctions,
        "reservoirs": [{"id": "R9", "head": 244.0}],
        "tanks": [
            {"id": "T2", "area": 800.0, "level_min": 1.0, "level_max": 13.0, "level_init": 6.0,
             "h_min": 230.0, "h_max": 360.0, "head": None}
        ],
        "pipes": pipes,
        "pumps": [
            {"id": "P9", "start": "R9", "end": "J10", "m1": -80.0, "m0": 105.0,
             "g1": 1.0e6, "g0": 2.0e4, "x_min": 0.03, "x_max": 0.40}
        ],
    }


def write_csv(path: Path, header, rows):
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


CASES = {
    "case_a": ("t", {"alpha": 0.08}, 1e-4),
    "case_b": ("t", {"alpha": 0.015}, 1e-4),
    "case_c": ("normal", {"sigma_global": 0.0101, "sigma_node": 0.0398}, 1e-4),
}


def case_toml(name, variant, params, eps):
    dist = "\n".join(f"{k} = {v!r}" for k, v in params.items())
    return f"""name = "{name}"
horizon = 12
dt_hours = 1.0
output = "out/{name}"
sweep = [[0.5, 0.5], [0.1, 0.1], [0.05, 0.05], [0.01, 0.01], [0.001, 0.001], [0.0001, 0.0001]]

[network]
pdn = "pdn.json"
wdn = "wdn.json"
multipliers = "multipliers.csv"
prices = "prices.csv"

[formulation]
mode = "probabilistic"
eps_p = {eps!r}
eps_w = {eps!r}
vs_price = 5.0

[distribution]
variant = "{variant}"
{dist}

[samples]
fit = 500
robust = 2000
evaluation = 50000

[seeds]
fit = 11
robust = 12
evaluation = 13
"""


def main(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "pdn.json").write_text(json.dumps(pdn_json(), indent=1) + "\n")
    (out / "wdn.json").write_text(json.dumps(wdn_json(), indent=1) + "\n")
    write_csv(out / "multipliers.csv", ["period", "hour", "power", "water"],
              [(t, h, p, w) for t, (h, p, w) in enumerate(zip(HOURS, POWER_MULT, WATER_MULT))])
    write_csv(out / "prices.csv", ["period", "hour", "price", "vs_price"],
              [(t, h, p, 5.0) for t, (h, p) in enumerate(zip(HOURS, PRICES))])
    for name, (variant, params, eps) in CASES.items():
        (out / f"{name}.toml").write_text(case_toml(name, variant, params, eps))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=OUT)
    main(ap.parse_args().out)

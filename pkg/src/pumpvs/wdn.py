"""Water distribution network data and its constraint ingredients.

Units are SI throughout: heads and levels in m, flows in m^3/s, pump power
in W (single phase), tank areas in m^2.  Junction demands are stored as
injections, so consumption is nonpositive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import networkx as nx
import numpy as np

SQRT2 = math.sqrt(2.0)
HULL_SLOPE = 2.0 * SQRT2 - 2.0
HULL_OFFSET = 3.0 - 2.0 * SQRT2
# The four cuts enclose k*x*|x| only while neither flow bound dwarfs the other.
HULL_RATIO_MAX = 1.0 + SQRT2


class WdnError(ValueError):
    pass


class DegenerateRange(WdnError):
    pass


class ZeroSlope(WdnError):
    pass


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    h_min: float
    h_max: float
    base_demand: float = 0.0  # consumption, m^3/s, nonnegative


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float


@dataclass(frozen=True)
class Tank:
    """Storage tank.

    ``head`` is ``None`` for tanks behind a regulating valve or booster: the
    network-side head is then a hydraulic unknown (bounded by ``h_min`` and
    ``h_max``) and does not follow the level.  A number pins the head.
    """

    id: str
    area: float
    level_min: float
    level_max: float
    level_init: float
    h_min: float
    h_max: float
    head: float | None = None


@dataclass(frozen=True)
class Pipe:
    id: str
    start: str
    end: str
    k: float
    x_min: float
    x_max: float


@dataclass(frozen=True)
class Pump:
    id: str
    start: str
    end: str
    m1: float
    m0: float
    g1: float
    g0: float
    x_min: float
    x_max: float


@dataclass(frozen=True, eq=False)
class WdnNetwork:
    junctions: tuple[Junction, ...]
    reservoirs: tuple[Reservoir, ...]
    tanks: tuple[Tank, ...]
    pipes: tuple[Pipe, ...]
    pumps: tuple[Pump, ...]
    demand: np.ndarray  # (T, n_junctions) injections, nonpositive for consumers
    dt_hours: float = 1.0

    def __post_init__(self):
        ids = [n.id for n in (*self.junctions, *self.reservoirs, *self.tanks)]
        if len(set(ids)) != len(ids):
            raise WdnError("junction, reservoir and tank ids must be disjoint")
        known = set(ids)
        for el in (*self.pipes, *self.pumps):
            for n in (el.start, el.end):
                if n not in known:
                    raise WdnError(f"edge {el.id!r} references unknown node {n!r}")
        for p in self.pumps:
            if p.x_min < 0 or p.x_min > p.x_max:
                raise WdnError(f"pump {p.id!r}: need 0 <= x_min <= x_max")
        for tk in self.tanks:
            if not (tk.level_min <= tk.level_init <= tk.level_max):
                raise WdnError(f"tank {tk.id!r}: initial level outside its limits")
            if tk.area <= 0:
                raise WdnError(f"tank {tk.id!r}: area must be positive")
        for n in (*self.junctions, *self.tanks):
            if n.h_min > n.h_max:
                raise WdnError(f"node {n.id!r}: h_min > h_max")
        if self.demand.ndim != 2 or self.demand.shape[1] != len(self.junctions):
            raise WdnError(f"demand must have shape (T, {len(self.junctions)})")
        if np.any(self.demand > 0):
            raise WdnError("junction demands are injections and must be nonpositive")
        g = nx.Graph()
        g.add_nodes_from(ids)
        g.add_edges_from((e.start, e.end) for e in (*self.pipes, *self.pumps))
        if ids and not nx.is_connected(g):
            raise WdnError("water network graph is not connected")

    @property
    def horizon(self) -> int:
        return self.demand.shape[0]

    @cached_property
    def node_ids(self) -> tuple[str, ...]:
        """Junctions, then tanks, then reservoirs."""
        return tuple(n.id for n in (*self.junctions, *self.tanks, *self.reservoirs))

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.node_ids)}

    @cached_property
    def edges(self) -> tuple[Pipe | Pump, ...]:
        """Pipes, then pumps."""
        return (*self.pipes, *self.pumps)

    @property
    def free_tanks(self) -> tuple[Tank, ...]:
        return tuple(t for t in self.tanks if t.head is None)

    def head_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = [], []
        for n in self.junctions:
            lo.append(n.h_min)
            hi.append(n.h_max)
        for n in self.tanks:
            lo.append(n.h_min)
            hi.append(n.h_max)
        for n in self.reservoirs:
            lo.append(n.head)
            hi.append(n.head)
        return np.array(lo), np.array(hi)

    def incidence(self) -> np.ndarray:
        """Node-by-edge matrix: +1 where the edge ends, -1 where it starts."""
        A = np.zeros((len(self.node_ids), len(self.edges)))
        for c, e in enumerate(self.edges):
            A[self.node_index[e.start], c] -= 1.0
            A[self.node_index[e.end], c] += 1.0
        return A


def pipe_headloss(k: float, x):
    """Darcy-Weisbach loss k*x*|x| (odd in x)."""
    x = np.asarray(x, dtype=float)
    out = k * x * np.abs(x)
    return float(out) if out.ndim == 0 else out


class HullCut(NamedTuple):
    """dH <= slope*x + const when ``upper``, else dH >= slope*x + const."""

    slope: float
    const: float
    upper: bool


def hull_constraints(k: float, x_min: float, x_max: float) -> tuple[HullCut, ...]:
    """Four affine cuts bounding the head loss k*x*|x| over [x_min, x_max].

    Two chords through the endpoint values and two endpoint tangents.  The
    band contains the true curve when x_min < 0 < x_max and the ratio
    |x_min|/x_max lies in [sqrt(2)-1, sqrt(2)+1]; symmetric bounds are the
    usual choice.
    """
    if not x_min < x_max:
        raise DegenerateRange(f"need x_min < x_max, got [{x_min}, {x_max}]")
    if k <= 0:
        raise WdnError(f"resistance must be positive, got {k}")
    if not (x_min < 0.0 < x_max):
        raise DegenerateRange(f"hull needs x_min < 0 < x_max, got [{x_min}, {x_max}]")
    ratio = abs(x_min) / x_max
    if not (1.0 / HULL_RATIO_MAX <= ratio <= HULL_RATIO_MAX):
        raise DegenerateRange(
            f"hull is not a valid relaxation for |x_min|/x_max = {ratio:.4g}; "
            f"keep it within [{1 / HULL_RATIO_MAX:.4f}, {HULL_RATIO_MAX:.4f}]"
        )
    amin = abs(x_min)
    return (
        HullCut(HULL_SLOPE * k * x_max, HULL_OFFSET * k * x_max**2, True),
        HullCut(HULL_SLOPE * k * amin, -HULL_OFFSET * k * x_min**2, False),
        HullCut(2.0 * k * x_max, -k * x_max**2, False),
        HullCut(2.0 * k * amin, k * x_min**2, True),
    )


def hull_residual(cuts, x, dh):
    """Largest amount by which (x, dh) violates the cuts (<= 0 means inside)."""
    x = np.asarray(x, dtype=float)
    dh = np.asarray(dh, dtype=float)
    worst = np.full(np.broadcast(x, dh).shape, -np.inf)
    for c in cuts:
        rhs = c.slope * x + c.const
        worst = np.maximum(worst, dh - rhs if c.upper else rhs - dh)
    return worst


def pump_power(g1: float, g0: float, x):
    return g1 * x + g0


def pump_flow_from_power(g1: float, g0: float, p):
    if g1 == 0:
        raise ZeroSlope("pump power slope g1 is zero; flow cannot be recovered from power")
    return (p - g0) / g1


def pump_head_gain(m1: float, m0: float, x):
    return m1 * x + m0


def tank_update(level_prev, inflow_sum, area: float, dt_hours: float):
    """Level after one period of net inflow ``inflow_sum`` (m^3/s)."""
    if area <= 0:
        raise WdnError("tank area must be positive")
    return level_prev + (3600.0 * dt_hours / area) * inflow_sum


@dataclass(frozen=True)
class HydraulicState:
    """Per-period flows (T, edges), heads (T, nodes) and levels (T+1, tanks)."""

    flows: np.ndarray
    heads: np.ndarray
    levels: np.ndarray
    converged: np.ndarray | None = None
    residual: np.ndarray | None = None


@dataclass(frozen=True)
class Violation:
    kind: str
    element: str
    period: int
    magnitude: float


def check_feasibility(
    state: HydraulicState, net: WdnNetwork, include_final_tank: bool = False, tol: float = 0.0
) -> list[Violation]:
    """List every head, level and pump-flow bound the state breaks.

    Periods are 1-based for levels (index 0 is the initial level) and
    0-based for heads and flows, mirroring the array layout.
    """
    T = net.horizon
    if state.heads.shape != (T, len(net.node_ids)) or state.flows.shape != (T, len(net.edges)):
        raise ValueError("state dimensions do not match the network")
    out: list[Violation] = []
    lo, hi = net.head_limits()
    for t in range(T):
        for i, nid in enumerate(net.node_ids):
            h = state.heads[t, i]
            if h < lo[i] - tol:
                out.append(Violation("head_min", nid, t, lo[i] - h))
            elif h > hi[i] + tol:
                out.append(Violation("head_max", nid, t, h - hi[i]))
        for s, tk in enumerate(net.tanks):
            lv = state.levels[t + 1, s]
            if lv < tk.level_min - tol:
                out.append(Violation("level_min", tk.id, t + 1, tk.level_min - lv))
            elif lv > tk.level_max + tol:
                out.append(Violation("level_max", tk.id, t + 1, lv - tk.level_max))
        for c, pm in enumerate(net.pumps):
            x = state.flows[t, len(net.pipes) + c]
            if x < pm.x_min - tol:
                out.append(Violation("flow_min", pm.id, t, pm.x_min - x))
            elif x > pm.x_max + tol:
                out.append(Violation("flow_max", pm.id, t, x - pm.x_max))
    if include_final_tank:
        for s, tk in enumerate(net.tanks):
            short = state.levels[0, s] - state.levels[T, s]
            if short > tol:
                out.append(Violation("final_level", tk.id, T, short))
    return out

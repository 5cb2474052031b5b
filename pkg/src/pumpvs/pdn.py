"""Radial three-phase distribution network and its linearized voltage map.

Squared voltage magnitudes under the linearized unbalanced branch-flow model
are affine in the nodal injections.  ``build_voltage_map`` eliminates the
aggregate line flows and returns that affine map explicitly, split into a
per-period constant, a pump-power sensitivity and a forecast-error
sensitivity.  Everything here works in per-unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np
from scipy import sparse

PHASES = "abc"


class NetworkError(ValueError):
    """Base class for malformed network data."""


class CycleDetected(NetworkError):
    def __init__(self, edges):
        self.edges = list(edges)
        super().__init__(f"line graph contains a cycle through {self.edges}")


class DisconnectedBus(NetworkError):
    def __init__(self, buses):
        self.buses = sorted(buses)
        super().__init__(f"buses not reachable from the substation: {self.buses}")


class MissingDemand(NetworkError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    M: np.ndarray
    N: np.ndarray


@dataclass(frozen=True)
class PumpAttachment:
    pump: str
    bus: str
    eta: float


@dataclass(frozen=True, eq=False)
class PdnNetwork:
    """Radial feeder with per-period demand forecasts.

    ``p_demand`` and ``q_demand`` have shape ``(T, n_bus, 3)`` and are in
    per-unit on ``base_power_w`` (per phase).  ``buses`` lists every bus
    including the substation; ``phases[bus]`` is a boolean triple.
    """

    buses: tuple[str, ...]
    substation: str
    phases: dict[str, tuple[bool, bool, bool]]
    lines: tuple[Line, ...]
    p_demand: np.ndarray
    q_demand: np.ndarray
    substation_y: np.ndarray
    pumps: tuple[PumpAttachment, ...] = ()
    v_min: float = 0.95
    v_max: float = 1.05
    dt_hours: float = 1.0
    base_power_w: float = 1.0e6

    def __post_init__(self):
        if not (0 < self.v_min < self.v_max):
            raise NetworkError(f"need 0 < v_min < v_max, got {self.v_min}, {self.v_max}")
        if self.substation not in self.buses:
            raise NetworkError(f"substation {self.substation!r} is not a bus")
        bus_set = set(self.buses)
        for pa in self.pumps:
            if pa.bus not in bus_set:
                raise NetworkError(f"pump {pa.pump!r} attached to unknown bus {pa.bus!r}")
            if not all(self.phases[pa.bus]):
                raise NetworkError(f"pump {pa.pump!r} is a balanced load; bus {pa.bus!r} needs all phases")
        for ln in self.lines:
            for m in (ln.M, ln.N):
                if np.shape(m) != (3, 3) or not np.all(np.isfinite(m)):
                    raise NetworkError(f"line {ln.from_bus}-{ln.to_bus}: M and N must be finite 3x3")

    @property
    def horizon(self) -> int:
        return self.p_demand.shape[0]

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @cached_property
    def load_points(self) -> tuple[tuple[str, int], ...]:
        """(bus, phase) pairs carrying an uncertain real-power demand.

        A point qualifies when the phase is present and its forecast is
        nonzero in at least one period.  The order (bus order, then phase)
        fixes the within-period layout of the error vector.
        """
        pts = []
        for b in self.buses:
            if b == self.substation:
                continue
            i = self.bus_index[b]
            for ph in range(3):
                if self.phases[b][ph] and np.any(self.p_demand[:, i, ph] != 0.0):
                    pts.append((b, ph))
        return tuple(pts)

    @cached_property
    def monitored_points(self) -> tuple[tuple[str, int], ...]:
        """All present (bus, phase) pairs, substation first."""
        return tuple((b, ph) for b in self.buses for ph in range(3) if self.phases[b][ph])

    def error_coordinates(self) -> list[tuple[int, str, int]]:
        """Global error-vector layout: period-major, then bus, then phase."""
        return [(t, b, ph) for t in range(self.horizon) for (b, ph) in self.load_points]


def validate_radial(net: PdnNetwork) -> None:
    """Raise unless the lines form a spanning tree rooted at the substation."""
    g = nx.MultiGraph()
    g.add_nodes_from(net.buses)
    for ln in net.lines:
        for b in (ln.from_bus, ln.to_bus):
            if b not in net.bus_index:
                raise NetworkError(f"line references unknown bus {b!r}")
        g.add_edge(ln.from_bus, ln.to_bus)
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        raise CycleDetected([(u, v) for u, v, *_ in cycle])
    reach = nx.node_connected_component(g, net.substation)
    if len(reach) != len(net.buses):
        raise DisconnectedBus(set(net.buses) - reach)


def _orient(net: PdnNetwork) -> dict[str, tuple[str, Line]]:
    """Map each non-substation bus to (parent bus, line feeding it)."""
    adj: dict[str, list[tuple[str, Line]]] = {b: [] for b in net.buses}
    for ln in net.lines:
        adj[ln.from_bus].append((ln.to_bus, ln))
        adj[ln.to_bus].append((ln.from_bus, ln))
    parent: dict[str, tuple[str, Line]] = {}
    stack = [net.substation]
    seen = {net.substation}
    while stack:
        u = stack.pop()
        for v, ln in adj[u]:
            if v not in seen:
                seen.add(v)
                parent[v] = (u, ln)
                stack.append(v)
    return parent


@dataclass(frozen=True, eq=False)
class VoltageAffineMap:
    """Y[t, m] = y0[t, m] + pump_sens[m, :] @ p[t] + error_sens[m, :] @ dr[t].

    ``points`` indexes m; pump powers are single-phase per-unit, one per
    pump; errors follow ``load_points``.  Sensitivities do not depend on the
    period, so the full (bus, phase, period) x (input, period) matrices are
    block diagonal; ``pump_matrix`` and ``error_matrix`` expand them.
    """

    points: tuple[tuple[str, int], ...]
    load_points: tuple[tuple[str, int], ...]
    pumps: tuple[str, ...]
    y0: np.ndarray
    pump_sens: np.ndarray
    error_sens: np.ndarray
    substation: str = ""

    @property
    def horizon(self) -> int:
        return self.y0.shape[0]

    @property
    def n_points(self) -> int:
        return len(self.points)

    def pump_matrix(self) -> sparse.csr_matrix:
        return sparse.block_diag([self.pump_sens] * self.horizon, format="csr")

    def error_matrix(self) -> sparse.csr_matrix:
        return sparse.block_diag([self.error_sens] * self.horizon, format="csr")

    def non_substation_mask(self) -> np.ndarray:
        return np.array([b != self.substation for b, _ in self.points])


def _path_lines(net: PdnNetwork, parent) -> dict[str, list[Line]]:
    paths: dict[str, list[Line]] = {net.substation: []}

    def walk(b):
        if b not in paths:
            pb, ln = parent[b]
            paths[b] = walk(pb) + [ln]
        return paths[b]

    for b in net.buses:
        walk(b)
    return paths


def build_voltage_map(net: PdnNetwork) -> VoltageAffineMap:
    """Eliminate line flows and return squared voltages as an affine map.

    The sensitivity of Y at bus k to an injection at bus j is minus the sum
    of the M (or N) matrices over lines shared by the root paths of k and j.
    Reactive demand is a known parameter; pumps draw the same single-phase
    power on every phase plus ``eta`` times it as reactive power.
    """
    validate_radial(net)
    if net.p_demand.shape != net.q_demand.shape or net.p_demand.shape[1:] != (len(net.buses), 3):
        raise MissingDemand(
            f"demand arrays must have shape (T, {len(net.buses)}, 3), got {net.p_demand.shape}"
        )
    if not (np.all(np.isfinite(net.p_demand)) and np.all(np.isfinite(net.q_demand))):
        raise MissingDemand("demand forecasts contain non-finite entries")

    parent = _orient(net)
    paths = _path_lines(net, parent)
    path_ids = {b: [id(ln) for ln in ls] for b, ls in paths.items()}

    nb = len(net.buses)
    # Sensitivity blocks per bus pair: AP[k][j] = -sum of shared-line M.
    AP = np.zeros((nb, 3, nb, 3))
    AQ = np.zeros((nb, 3, nb, 3))
    for k in net.buses:
        ik = net.bus_index[k]
        on_k = set(path_ids[k])
        for j in net.buses:
            ij = net.bus_index[j]
            for ln in paths[j]:
                if id(ln) in on_k:
                    AP[ik, :, ij, :] -= ln.M
                    AQ[ik, :, ij, :] -= ln.N

    pts = net.monitored_points
    rows = [(net.bus_index[b], ph) for b, ph in pts]
    T = net.horizon
    y0 = np.empty((T, len(pts)))
    for t in range(T):
        P = net.p_demand[t] * np.array([net.phases[b] for b in net.buses], dtype=float)
        Q = net.q_demand[t] * np.array([net.phases[b] for b in net.buses], dtype=float)
        full = (
            net.substation_y[None, :]
            + np.einsum("kpjq,jq->kp", AP, P)
            + np.einsum("kpjq,jq->kp", AQ, Q)
        )
        y0[t] = [full[i, ph] for i, ph in rows]

    pump_sens = np.zeros((len(pts), len(net.pumps)))
    for e, pa in enumerate(net.pumps):
        j = net.bus_index[pa.bus]
        col = AP[:, :, j, :].sum(axis=2) + pa.eta * AQ[:, :, j, :].sum(axis=2)
        pump_sens[:, e] = [col[i, ph] for i, ph in rows]

    lp = net.load_points
    error_sens = np.zeros((len(pts), len(lp)))
    for c, (b, ph) in enumerate(lp):
        j = net.bus_index[b]
        error_sens[:, c] = [AP[i, p, j, ph] for i, p in rows]

    return VoltageAffineMap(
        points=pts,
        load_points=lp,
        pumps=tuple(pa.pump for pa in net.pumps),
        y0=y0,
        pump_sens=pump_sens,
        error_sens=error_sens,
        substation=net.substation,
    )


def evaluate_voltages(vmap: VoltageAffineMap, p, dr) -> np.ndarray:
    """Squared voltages for pump powers ``p`` and errors ``dr`` (per-unit).

    ``p`` has shape ``(..., T, n_pumps)`` and ``dr`` ``(..., T, n_t)``; flat
    vectors of length ``T*n_pumps`` / ``T*n_t`` are accepted too.  Leading
    batch dimensions broadcast.  Returns ``(..., T, n_points)``.
    """
    T, E, nt = vmap.horizon, len(vmap.pumps), len(vmap.load_points)
    p = np.asarray(p, dtype=float)
    dr = np.asarray(dr, dtype=float)
    if p.ndim == 1 and p.size == T * E:
        p = p.reshape(T, E)
    if dr.ndim == 1 and dr.size == T * nt:
        dr = dr.reshape(T, nt)
    if p.shape[-2:] != (T, E):
        raise DimensionMismatch(f"pump powers need trailing shape {(T, E)}, got {p.shape}")
    if dr.shape[-2:] != (T, nt):
        raise DimensionMismatch(f"errors need trailing shape {(T, nt)}, got {dr.shape}")
    return vmap.y0 + p @ vmap.pump_sens.T + dr @ vmap.error_sens.T

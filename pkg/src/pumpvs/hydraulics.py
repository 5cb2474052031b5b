"""Nonlinear quasi-steady hydraulic solve with pump powers as inputs.

Pump flows follow from power by inverting the affine power curve.  Given
those flows, the unknowns of one period are the pipe flows and the heads at
junctions and at valve-regulated tanks; the equations are the pipe head
losses, the pump head gains and junction mass balance.  The system is square
when every pump is matched by one valve-regulated tank.

Newton's method runs on a whole batch of scenarios at once; step halving is
applied per scenario.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .wdn import HydraulicState, WdnError, WdnNetwork, pump_flow_from_power

logger = logging.getLogger(__name__)

MASS_TOL = 1e-8
HEAD_TOL = 1e-8
MAX_ITER = 60
MAX_HALVINGS = 30
# merit weight for mass rows, so 1 L/s of imbalance counts like 1 m of head
MASS_WEIGHT = 1e3


class NoConvergence(RuntimeError):
    def __init__(self, period, iterations, residual):
        self.period = period
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"hydraulic solve did not converge in period {period} "
            f"after {iterations} iterations (residual {residual:.3e})"
        )


class IllPosedNetwork(WdnError):
    pass


@dataclass(frozen=True, eq=False)
class _Layout:
    n_pipe: int
    n_pump: int
    unknown_nodes: np.ndarray  # node indices with unknown head
    fixed_nodes: np.ndarray
    fixed_heads: np.ndarray
    junction_nodes: np.ndarray
    pipe_start: np.ndarray
    pipe_end: np.ndarray
    pipe_k: np.ndarray
    pump_start: np.ndarray
    pump_end: np.ndarray
    pump_m1: np.ndarray
    pump_m0: np.ndarray
    inc_pipe: np.ndarray  # junction x pipe incidence
    inc_pump: np.ndarray  # junction x pump incidence
    jac0: np.ndarray
    q0: np.ndarray
    h0: np.ndarray
    q_reg: np.ndarray


@lru_cache(maxsize=16)
def _layout(net: WdnNetwork) -> _Layout:
    nj = len(net.junctions)
    ni = net.node_index
    free = [ni[t.id] for t in net.tanks if t.head is None]
    if len(free) != len(net.pumps):
        raise IllPosedNetwork(
            f"with pump flows fixed by power the hydraulic equations are square only when "
            f"valve-regulated tanks ({len(free)}) match pumps ({len(net.pumps)})"
        )
    unknown = np.array(list(range(nj)) + free, dtype=int)
    fixed = np.array(sorted(set(range(len(net.node_ids))) - set(unknown.tolist())), dtype=int)
    fixed_heads = np.empty(len(fixed))
    by_id = {t.id: t for t in net.tanks} | {r.id: r for r in net.reservoirs}
    for c, n in enumerate(fixed):
        fixed_heads[c] = by_id[net.node_ids[n]].head

    A = net.incidence()
    n_pipe, n_pump = len(net.pipes), len(net.pumps)
    inc_pipe = A[:nj, :n_pipe]
    inc_pump = A[:nj, n_pipe:]

    pos = {int(n): n_pipe + c for c, n in enumerate(unknown)}
    m = n_pipe + len(unknown)
    jac = np.zeros((m, m))
    r = 0
    for p in net.pipes:
        s, e = ni[p.start], ni[p.end]
        if s in pos:
            jac[r, pos[s]] += 1.0
        if e in pos:
            jac[r, pos[e]] -= 1.0
        r += 1
    for p in net.pumps:
        s, e = ni[p.start], ni[p.end]
        if e in pos:
            jac[r, pos[e]] += 1.0
        if s in pos:
            jac[r, pos[s]] -= 1.0
        r += 1
    jac[r : r + nj, :n_pipe] = inc_pipe

    lo, hi = net.head_limits()
    return _Layout(
        n_pipe=n_pipe,
        n_pump=n_pump,
        unknown_nodes=unknown,
        fixed_nodes=fixed,
        fixed_heads=fixed_heads,
        junction_nodes=np.arange(nj),
        pipe_start=np.array([ni[p.start] for p in net.pipes], dtype=int),
        pipe_end=np.array([ni[p.end] for p in net.pipes], dtype=int),
        pipe_k=np.array([p.k for p in net.pipes]),
        pump_start=np.array([ni[p.start] for p in net.pumps], dtype=int),
        pump_end=np.array([ni[p.end] for p in net.pumps], dtype=int),
        pump_m1=np.array([p.m1 for p in net.pumps]),
        pump_m0=np.array([p.m0 for p in net.pumps]),
        inc_pipe=inc_pipe,
        inc_pump=inc_pump,
        jac0=jac,
        q0=np.array([0.5 * (p.x_min + p.x_max) for p in net.pipes]),
        h0=0.5 * (lo + hi)[unknown],
        q_reg=np.array([1e-3 * max(abs(p.x_min), abs(p.x_max), 1e-6) for p in net.pipes]),
    )


def _heads(L: _Layout, h_unknown: np.ndarray, n_nodes: int) -> np.ndarray:
    H = np.empty((h_unknown.shape[0], n_nodes))
    H[:, L.unknown_nodes] = h_unknown
    H[:, L.fixed_nodes] = L.fixed_heads
    return H


def _residual(L: _Layout, q, h, xp, demand, n_nodes):
    H = _heads(L, h, n_nodes)
    f_pipe = H[:, L.pipe_start] - H[:, L.pipe_end] - L.pipe_k * q * np.abs(q)
    f_pump = H[:, L.pump_end] - H[:, L.pump_start] - (L.pump_m1 * xp + L.pump_m0)
    f_mass = q @ L.inc_pipe.T + xp @ L.inc_pump.T + demand
    return f_pipe, f_pump, f_mass


def _merit(parts):
    f_pipe, f_pump, f_mass = parts
    return (f_pipe**2).sum(1) + (f_pump**2).sum(1) + ((MASS_WEIGHT * f_mass) ** 2).sum(1)


def _converged(parts):
    f_pipe, f_pump, f_mass = parts
    head = np.maximum(np.abs(f_pipe).max(1, initial=0.0), np.abs(f_pump).max(1, initial=0.0))
    mass = np.abs(f_mass).max(1, initial=0.0)
    return (head <= HEAD_TOL) & (mass <= MASS_TOL), np.maximum(head, mass)


def solve_period_batch(net: WdnNetwork, pump_flows: np.ndarray, period: int):
    """Solve one period for a batch of pump-flow vectors.

    Returns ``(edge_flows (B, E), heads (B, N), converged (B,), residual (B,),
    iterations)``.  Unconverged rows hold the last iterate.
    """
    L = _layout(net)
    xp = np.atleast_2d(np.asarray(pump_flows, dtype=float))
    B = xp.shape[0]
    N = len(net.node_ids)
    demand = net.demand[period]
    q = np.tile(L.q0, (B, 1))
    h = np.tile(L.h0, (B, 1))
    parts = _residual(L, q, h, xp, demand, N)
    ok, res = _converged(parts)
    it = 0
    while not ok.all() and it < MAX_ITER:
        it += 1
        act = ~ok
        qa, ha, xa = q[act], h[act], xp[act]
        pa = [p[act] for p in parts]
        F = np.concatenate(pa, axis=1)
        J = np.broadcast_to(L.jac0, (qa.shape[0], *L.jac0.shape)).copy()
        d = -2.0 * L.pipe_k * np.maximum(np.abs(qa), L.q_reg)
        idx = np.arange(L.n_pipe)
        J[:, idx, idx] = d
        try:
            step = np.linalg.solve(J, -F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = (np.linalg.pinv(J) @ -F[..., None])[..., 0]
        dq, dh = step[:, : L.n_pipe], step[:, L.n_pipe :]
        m0 = _merit(pa)
        alpha = np.ones(qa.shape[0])
        nq, nh = qa + dq, ha + dh
        np_ = _residual(L, nq, nh, xa, demand, N)
        m1 = _merit(np_)
        for _ in range(MAX_HALVINGS):
            bad = m1 > m0
            if not bad.any():
                break
            alpha[bad] *= 0.5
            nq[bad] = qa[bad] + alpha[bad, None] * dq[bad]
            nh[bad] = ha[bad] + alpha[bad, None] * dh[bad]
            sub = _residual(L, nq[bad], nh[bad], xa[bad], demand, N)
            for full, part in zip(np_, sub):
                full[bad] = part
            m1[bad] = _merit(sub)
        q[act], h[act] = nq, nh
        for full, part in zip(parts, np_):
            full[act] = part
        ok, res = _converged(parts)

    flows = np.concatenate([q, xp], axis=1)
    return flows, _heads(L, h, N), ok, res, it


def tank_inflows(net: WdnNetwork, flows: np.ndarray) -> np.ndarray:
    """Net inflow (m^3/s) into each tank for edge flows of shape (..., E)."""
    A = net.incidence()
    rows = [net.node_index[t.id] for t in net.tanks]
    return flows @ A[rows].T


def hydraulic_solve(net: WdnNetwork, pump_powers, raise_on_failure: bool = True) -> HydraulicState:
    """Solve every period at the given single-phase pump powers (T, pumps), W.

    Tank levels start from each tank's initial level and advance with the
    solved net inflows.  Pump flows outside their limits are not an error;
    ``check_feasibility`` reports them.
    """
    pp = np.asarray(pump_powers, dtype=float).reshape(net.horizon, len(net.pumps))
    T = net.horizon
    xp = np.column_stack(
        [pump_flow_from_power(p.g1, p.g0, pp[:, c]) for c, p in enumerate(net.pumps)]
    ) if net.pumps else np.zeros((T, 0))
    flows = np.empty((T, len(net.edges)))
    heads = np.empty((T, len(net.node_ids)))
    conv = np.empty(T, dtype=bool)
    resid = np.empty(T)
    for t in range(T):
        f, h, ok, res, it = solve_period_batch(net, xp[t : t + 1], t)
        if not ok[0]:
            if raise_on_failure:
                raise NoConvergence(t, it, float(res[0]))
            logger.warning("period %d: no convergence, residual %.3e", t, res[0])
        flows[t], heads[t], conv[t], resid[t] = f[0], h[0], ok[0], res[0]
    levels = np.empty((T + 1, len(net.tanks)))
    levels[0] = [tk.level_init for tk in net.tanks]
    inflow = tank_inflows(net, flows)
    scale = np.array([3600.0 * net.dt_hours / tk.area for tk in net.tanks])
    levels[1:] = levels[0] + np.cumsum(inflow * scale, axis=0)
    return HydraulicState(flows=flows, heads=heads, levels=levels, converged=conv, residual=resid)

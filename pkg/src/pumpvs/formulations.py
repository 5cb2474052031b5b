"""Deterministic, adjustable-robust and probabilistic pump scheduling problems.

Internal LP/SOCP units: pump power and capacities in kW, pump-policy gains
dimensionless (kW of pump per kW of forecast error), water flows in L/s,
heads and levels in m.  Schedules leave this module in SI (W, m^3/s).

Pump power ``p`` is single phase; the capacities ``r_up``/``r_dn`` are three
phase, so a pump sits anywhere in ``[p - r_dn/3, p + r_up/3]`` per phase in
real time.  The water network is certified at the nominal point and at both
ends of that range; monotonicity of the network covers everything between.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import backend
from .backend import ProblemBuilder, SolverSettings, StandardProblem
from .pdn import DimensionMismatch, PdnNetwork, VoltageAffineMap, build_voltage_map
from .uncertainty import FittedNormal, RobustBox, psd_factor, std_normal_quantile
from .wdn import HydraulicState, WdnNetwork, hull_constraints

logger = logging.getLogger(__name__)

MODES = ("deterministic", "robust", "probabilistic")
FLOW_SCALE = 1e3  # m^3/s -> L/s
KW = 1e3
STATES = ("nominal", "upper", "lower")


class InstanceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    pdn: PdnNetwork
    wdn: WdnNetwork
    name: str = "instance"

    def __post_init__(self):
        if self.pdn.horizon != self.wdn.horizon:
            raise InstanceError(
                f"power horizon {self.pdn.horizon} differs from water horizon {self.wdn.horizon}"
            )
        if abs(self.pdn.dt_hours - self.wdn.dt_hours) > 1e-12:
            raise InstanceError("power and water period lengths differ")
        attached = [pa.pump for pa in self.pdn.pumps]
        water = [p.id for p in self.wdn.pumps]
        if attached != water:
            raise InstanceError(f"pump attachments {attached} must list the water pumps {water} in order")

    @property
    def horizon(self) -> int:
        return self.wdn.horizon

    @property
    def dt_hours(self) -> float:
        return self.wdn.dt_hours

    @property
    def pump_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.wdn.pumps)

    @cached_property
    def voltage_map(self) -> VoltageAffineMap:
        return build_voltage_map(self.pdn)

    @property
    def n_t(self) -> int:
        return len(self.pdn.load_points)

    @property
    def n_errors(self) -> int:
        return self.horizon * self.n_t

    def error_forecast(self) -> np.ndarray:
        """Forecast real demand (pu) at every error coordinate."""
        idx = [(self.pdn.bus_index[b], ph) for b, ph in self.pdn.load_points]
        return np.concatenate([[self.pdn.p_demand[t, i, ph] for i, ph in idx] for t in range(self.horizon)])

    def error_periods(self) -> np.ndarray:
        return np.repeat(np.arange(self.horizon), self.n_t)

    def pump_power_limits(self) -> tuple[np.ndarray, np.ndarray]:
        """Single-phase pump power limits (W) implied by the flow limits."""
        lo = np.array([p.g1 * p.x_min + p.g0 for p in self.wdn.pumps])
        hi = np.array([p.g1 * p.x_max + p.g0 for p in self.wdn.pumps])
        return lo, hi


@dataclass(frozen=True)
class FormulationConfig:
    """Mode, prices ($/MWh per period) and individual violation levels.

    ``eps_p`` broadcasts to (2, T, points) for the upper/lower voltage
    limits; ``eps_w`` to (2, T, pumps) for the up/down capacity limits.
    """

    mode: str
    prices: np.ndarray
    vs_prices: np.ndarray | float = 5.0
    eps_p: np.ndarray | float = 0.05
    eps_w: np.ndarray | float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not np.all(np.isfinite(self.prices)) or not np.all(np.isfinite(self.vs_prices)):
            raise ValueError("prices must be finite")
        if self.mode == "probabilistic":
            for name in ("eps_p", "eps_w"):
                e = np.asarray(getattr(self, name), dtype=float)
                if np.any((e <= 0) | (e >= 1)):
                    raise ValueError(f"{name} must lie in (0, 1)")
                if np.any(e > 0.5):
                    raise ValueError(
                        f"{name} above 0.5 makes the reformulated chance constraint nonconvex"
                    )


@dataclass(eq=False)
class ConstraintSystem:
    problem: StandardProblem
    instance: ProblemInstance
    config: FormulationConfig
    has_policy: bool


@dataclass(eq=False)
class DecisionSchedule:
    """Solved schedule in SI units; arrays are ``None`` when not optimal.

    ``p_nom`` (T, pumps) single-phase W, ``policy`` (T, pumps, n_t) W per W,
    ``r_up``/``r_dn`` (T, pumps) three-phase W, ``water`` maps nominal,
    upper and lower to hydraulic states from the relaxed water model.
    """

    mode: str
    status: str
    pump_ids: tuple[str, ...]
    power_base_w: float
    p_nom: np.ndarray | None = None
    policy: np.ndarray | None = None
    r_up: np.ndarray | None = None
    r_dn: np.ndarray | None = None
    water: dict[str, HydraulicState] = field(default_factory=dict)
    objective: float | None = None
    scheduled_cost: float | None = None
    capacity_cost: float | None = None
    solve_time: float = 0.0
    detail: str = ""
    eps_p: float | None = None
    eps_w: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def horizon(self) -> int:
        return self.p_nom.shape[0]

    def summary(self) -> dict:
        out = {
            "mode": self.mode,
            "status": self.status,
            "eps_p": self.eps_p,
            "eps_w": self.eps_w,
        }
        if self.optimal:
            out.update(
                total_cost=self.objective,
                scheduled_cost=self.scheduled_cost,
                capacity_cost=self.capacity_cost,
                avg_r_up_kw=float(self.r_up.mean() / KW),
                avg_r_dn_kw=float(self.r_dn.mean() / KW),
            )
        return out


def objective_coefficients(config: FormulationConfig, T: int, E: int, dt_hours: float):
    """Cost per kW of single-phase schedule and per kW of capacity, shape (T, E)."""
    prices = np.broadcast_to(np.asarray(config.prices, dtype=float), (T,))
    vs = np.broadcast_to(np.asarray(config.vs_prices, dtype=float), (T,))
    sched = np.repeat((3.0 * prices * dt_hours / KW)[:, None], E, axis=1)
    cap = np.repeat((vs * dt_hours / KW)[:, None], E, axis=1)
    return sched, cap


def objective(p_nom_w, r_up_w, r_dn_w, config: FormulationConfig, dt_hours: float = 1.0) -> float:
    """Total cost ($) of a schedule given in W."""
    p = np.atleast_2d(np.asarray(p_nom_w, dtype=float))
    T, E = p.shape
    sched, cap = objective_coefficients(config, T, E, dt_hours)
    ru = np.broadcast_to(np.asarray(r_up_w, dtype=float), (T, E))
    rd = np.broadcast_to(np.asarray(r_dn_w, dtype=float), (T, E))
    return float((sched * p / KW).sum() + (cap * (ru + rd) / KW).sum())


class _Water:
    """Index bookkeeping for one copy of the relaxed water model."""

    def __init__(self, b: ProblemBuilder, net: WdnNetwork, tag: str):
        T = net.horizon
        self.net = net
        edges = net.edges
        xlo = np.array([e.x_min for e in edges]) * FLOW_SCALE
        xhi = np.array([e.x_max for e in edges]) * FLOW_SCALE
        self.x = b.add_vars(f"{tag}.x", (T, len(edges)), xlo, xhi)
        lo, hi = net.head_limits()
        self.free_nodes = [i for i, nid in enumerate(net.node_ids) if _head_is_free(net, nid)]
        self.h = b.add_vars(f"{tag}.h", (T, len(self.free_nodes)), lo[self.free_nodes], hi[self.free_nodes])
        self.col_of = {n: c for c, n in enumerate(self.free_nodes)}
        llo = np.array([t.level_min for t in net.tanks])
        lhi = np.array([t.level_max for t in net.tanks])
        self.lvl = b.add_vars(f"{tag}.lvl", (T, len(net.tanks)), llo, lhi)
        self.fixed_head = {
            i: _fixed_head(net, nid) for i, nid in enumerate(net.node_ids) if i not in self.col_of
        }

    def head_terms(self, t: int, node: int, sign: float):
        """(cols, vals, const) contribution of sign*H[node] at period t."""
        if node in self.col_of:
            return [self.h[t, self.col_of[node]]], [sign], 0.0
        return [], [], sign * self.fixed_head[node]


def _head_is_free(net: WdnNetwork, nid: str) -> bool:
    if any(j.id == nid for j in net.junctions):
        return True
    return any(t.id == nid and t.head is None for t in net.tanks)


def _fixed_head(net: WdnNetwork, nid: str) -> float:
    for r in net.reservoirs:
        if r.id == nid:
            return r.head
    for t in net.tanks:
        if t.id == nid:
            return t.head
    raise KeyError(nid)


def _add_water(b: ProblemBuilder, inst: ProblemInstance, tag: str, pump_power, final_tank: bool) -> _Water:
    """Relaxed water constraints for one operating point.

    ``pump_power(t, e)`` returns (cols, vals, const) of the single-phase
    pump power in kW.
    """
    net = inst.wdn
    W = _Water(b, net, tag)
    T = net.horizon
    ni = net.node_index
    n_pipe = len(net.pipes)
    A = net.incidence()
    for t in range(T):
        for c, pipe in enumerate(net.pipes):
            s_c, s_v, s_k = W.head_terms(t, ni[pipe.start], 1.0)
            e_c, e_v, e_k = W.head_terms(t, ni[pipe.end], -1.0)
            for cut in hull_constraints(pipe.k, pipe.x_min, pipe.x_max):
                cols = s_c + e_c + [W.x[t, c]]
                vals = s_v + e_v + [-cut.slope / FLOW_SCALE]
                b.add_row(cols, vals, "<=" if cut.upper else ">=", cut.const - s_k - e_k)
        for e, pump in enumerate(net.pumps):
            col = W.x[t, n_pipe + e]
            s_c, s_v, s_k = W.head_terms(t, ni[pump.start], -1.0)
            e_c, e_v, e_k = W.head_terms(t, ni[pump.end], 1.0)
            b.add_row(s_c + e_c + [col], s_v + e_v + [-pump.m1 / FLOW_SCALE], "==", pump.m0 - s_k - e_k)
            pc, pv, pk = pump_power(t, e)
            b.add_row(list(pc) + [col], list(pv) + [-pump.g1 / (KW * FLOW_SCALE)], "==", pump.g0 / KW - pk)
        for j in range(len(net.junctions)):
            nz = np.flatnonzero(A[j])
            b.add_row(W.x[t, nz], A[j, nz], "==", -net.demand[t, j] * FLOW_SCALE)
        for s, tank in enumerate(net.tanks):
            row = A[ni[tank.id]]
            nz = np.flatnonzero(row)
            gain = 3600.0 * net.dt_hours / tank.area / FLOW_SCALE
            cols = [W.lvl[t, s]] + list(W.x[t, nz])
            vals = [1.0] + list(-gain * row[nz])
            if t == 0:
                b.add_row(cols, vals, "==", tank.level_init)
            else:
                b.add_row(cols + [W.lvl[t - 1, s]], vals + [-1.0], "==", 0.0)
    if final_tank:
        for s, tank in enumerate(net.tanks):
            b.add_row([W.lvl[T - 1, s]], [1.0], ">=", tank.level_init)
    return W


def _base(inst: ProblemInstance, config: FormulationConfig, with_capacity: bool):
    b = ProblemBuilder()
    T, E = inst.horizon, len(inst.pump_ids)
    lo, hi = inst.pump_power_limits()
    p = b.add_vars("p", (T, E), lo / KW, hi / KW)
    sched, cap = objective_coefficients(config, T, E, inst.dt_hours)
    b.add_cost(p, sched)
    if not with_capacity:
        return b, p, None, None, None
    ru = b.add_vars("r_up", (T, E), 0.0)
    rd = b.add_vars("r_dn", (T, E), 0.0)
    b.add_cost(ru, cap)
    b.add_cost(rd, cap)
    C = b.add_vars("C", (T, E, inst.n_t))
    return b, p, ru, rd, C


def _water_triple(b, inst, p, ru, rd):
    _add_water(b, inst, "nominal", lambda t, e: ([p[t, e]], [1.0], 0.0), final_tank=True)
    _add_water(b, inst, "upper", lambda t, e: ([p[t, e], ru[t, e]], [1.0, 1.0 / 3.0], 0.0), final_tank=False)
    _add_water(b, inst, "lower", lambda t, e: ([p[t, e], rd[t, e]], [1.0, -1.0 / 3.0], 0.0), final_tank=False)


def _voltage_data(inst: ProblemInstance):
    """Monitored rows (substation excluded) with sensitivities per kW."""
    vm = inst.voltage_map
    keep = vm.non_substation_mask()
    per_kw = KW / inst.pdn.base_power_w
    return vm.y0[:, keep], vm.pump_sens[keep] * per_kw, vm.error_sens[keep] * per_kw


def build_deterministic(inst: ProblemInstance, config: FormulationConfig) -> ConstraintSystem:
    """Water-only schedule: cheapest pumping with no view of the feeder."""
    b, p, *_ = _base(inst, config, with_capacity=False)
    _add_water(b, inst, "nominal", lambda t, e: ([p[t, e]], [1.0], 0.0), final_tank=True)
    return ConstraintSystem(b.build(), inst, config, has_policy=False)


def build_robust(inst: ProblemInstance, config: FormulationConfig, box: RobustBox) -> ConstraintSystem:
    """Adjustable robust counterpart over the symmetric box ``box``.

    Every constraint affine in the error, a(x) + b(x) @ dr <= c, becomes
    a(x) + sum_i delta_i |b_i(x)| <= c, with |b_i| replaced by epigraph
    variables.  Coordinates with zero half-width drop out.
    """
    if box.dim != inst.n_errors:
        raise DimensionMismatch(f"box has {box.dim} coordinates, instance needs {inst.n_errors}")
    b, p, ru, rd, C = _base(inst, config, with_capacity=True)
    T, E, nt = inst.horizon, len(inst.pump_ids), inst.n_t
    y0, S, Wm = _voltage_data(inst)
    M = S.shape[0]
    vmin2, vmax2 = inst.pdn.v_min**2, inst.pdn.v_max**2
    delta = box.half_width.reshape(T, nt) * inst.pdn.base_power_w / KW
    for t in range(T):
        act = np.flatnonzero(delta[t] > 0)
        na = len(act)
        d = delta[t, act]
        if na:
            tau = b.add_vars(f"tau[{t}]", (M, na), 0.0)
            Ccols = C[t][:, act].T  # (na, E)
            cols = np.concatenate(
                [tau.reshape(-1, 1), np.broadcast_to(Ccols[None], (M, na, E)).reshape(-1, E)], axis=1
            )
            sv = np.broadcast_to(S[:, None, :], (M, na, E)).reshape(-1, E)
            w = Wm[:, act].reshape(-1)
            b.add_rows(cols, np.concatenate([np.ones((M * na, 1)), -sv], axis=1), ">=", w)
            b.add_rows(cols, np.concatenate([np.ones((M * na, 1)), sv], axis=1), ">=", -w)
            vcols = np.concatenate([np.broadcast_to(p[t], (M, E)), tau], axis=1)
            b.add_rows(vcols, np.concatenate([S, np.broadcast_to(d, (M, na))], axis=1), "<=", vmax2 - y0[t])
            b.add_rows(vcols, np.concatenate([S, -np.broadcast_to(d, (M, na))], axis=1), ">=", vmin2 - y0[t])

            kap = b.add_vars(f"kappa[{t}]", (E, na), 0.0)
            kc = np.stack([kap.reshape(-1), Ccols.T.reshape(-1)], axis=1)
            b.add_rows(kc, [1.0, -1.0], ">=", 0.0)
            b.add_rows(kc, [1.0, 1.0], ">=", 0.0)
            for e in range(E):
                b.add_row(list(kap[e]) + [ru[t, e]], list(3.0 * d) + [-1.0], "<=", 0.0)
                b.add_row(list(kap[e]) + [rd[t, e]], list(3.0 * d) + [-1.0], "<=", 0.0)
        else:
            b.add_rows(np.broadcast_to(p[t], (M, E)), S, "<=", vmax2 - y0[t])
            b.add_rows(np.broadcast_to(p[t], (M, E)), S, ">=", vmin2 - y0[t])
    _water_triple(b, inst, p, ru, rd)
    return ConstraintSystem(b.build(), inst, config, has_policy=True)


def _eps(config, name, shape):
    return np.broadcast_to(np.asarray(getattr(config, name), dtype=float), shape)


def build_probabilistic(inst: ProblemInstance, config: FormulationConfig, fitted: FittedNormal) -> ConstraintSystem:
    """Chance-constrained voltages and capacities under a fitted normal.

    P[a + b @ dr <= c] >= 1 - eps becomes a + b @ mu + z ||b L|| <= c with
    z the standard normal quantile at 1 - eps and L L^T the covariance of
    the period's errors.  ``v = C L`` is carried as its own variable so the
    cones stay sparse.
    """
    if fitted.dim != inst.n_errors:
        raise DimensionMismatch(f"fitted normal has dimension {fitted.dim}, instance needs {inst.n_errors}")
    b, p, ru, rd, C = _base(inst, config, with_capacity=True)
    T, E, nt = inst.horizon, len(inst.pump_ids), inst.n_t
    y0, S, Wm = _voltage_data(inst)
    M = S.shape[0]
    vmin2, vmax2 = inst.pdn.v_min**2, inst.pdn.v_max**2
    zp = std_normal_quantile(1.0 - _eps(config, "eps_p", (2, T, M)))
    zw = std_normal_quantile(1.0 - _eps(config, "eps_w", (2, T, E)))
    to_kw = inst.pdn.base_power_w / KW
    for t in range(T):
        idx = np.arange(t * nt, (t + 1) * nt)
        mu = fitted.mean[idx] * to_kw
        L = psd_factor(fitted.cov[np.ix_(idx, idx)]) * to_kw
        need_v = np.any(zp[:, t] != 0) or np.any(zw[:, t] != 0)
        if need_v and nt:
            v = b.add_vars(f"v[{t}]", (E, nt))
            for e in range(E):
                # v[e, j] - sum_i C[e, i] L[i, j] = 0
                cols = np.concatenate([v[e][:, None], np.broadcast_to(C[t, e][None, :], (nt, nt))], axis=1)
                vals = np.concatenate([np.ones((nt, 1)), -L.T], axis=1)
                b.add_rows(cols, vals, "==", 0.0)

        # mean part: a + W mu + sum_e S_e (C_e @ mu)
        base_cols = np.concatenate(
            [np.broadcast_to(p[t], (M, E)), np.broadcast_to(C[t].reshape(-1), (M, E * nt))], axis=1
        )
        base_vals = np.concatenate([S, (S[:, :, None] * mu[None, None, :]).reshape(M, E * nt)], axis=1)
        const = y0[t] + Wm @ mu
        if np.any(zp[:, t] != 0) and nt:
            s = b.add_vars(f"s[{t}]", M, 0.0)
            WL = Wm @ L  # (M, nt)
            cone_cols = np.empty((M, nt + 1, E), dtype=int)
            cone_vals = np.zeros((M, nt + 1, E))
            cone_cols[:, 0, :] = s[:, None]
            cone_vals[:, 0, 0] = 1.0
            cone_cols[:, 1:, :] = np.broadcast_to(v.T[None], (M, nt, E))
            cone_vals[:, 1:, :] = np.broadcast_to(S[:, None, :], (M, nt, E))
            cone_const = np.concatenate([np.zeros((M, 1)), WL], axis=1)
            b.add_cones(cone_cols, cone_vals, cone_const)
            b.add_rows(np.concatenate([base_cols, s[:, None]], axis=1),
                       np.concatenate([base_vals, zp[0, t][:, None]], axis=1), "<=", vmax2 - const)
            b.add_rows(np.concatenate([base_cols, s[:, None]], axis=1),
                       np.concatenate([base_vals, -zp[1, t][:, None]], axis=1), ">=", vmin2 - const)
        else:
            b.add_rows(base_cols, base_vals, "<=", vmax2 - const)
            b.add_rows(base_cols, base_vals, ">=", vmin2 - const)

        for e in range(E):
            mean_cols = list(C[t, e])
            mean_vals = list(3.0 * mu)
            if np.any(zw[:, t, e] != 0) and nt:
                w = b.add_vars(f"w[{t},{e}]", 1, 0.0)
                b.add_cones(np.concatenate([[w[0]], v[e]])[None, :], np.ones((1, nt + 1)), np.zeros((1, nt + 1)))
                b.add_row(mean_cols + [w[0], ru[t, e]], mean_vals + [3.0 * zw[0, t, e], -1.0], "<=", 0.0)
                b.add_row(mean_cols + [w[0], rd[t, e]], mean_vals + [-3.0 * zw[1, t, e], 1.0], ">=", 0.0)
            else:
                b.add_row(mean_cols + [ru[t, e]], mean_vals + [-1.0], "<=", 0.0)
                b.add_row(mean_cols + [rd[t, e]], mean_vals + [1.0], ">=", 0.0)
    _water_triple(b, inst, p, ru, rd)
    return ConstraintSystem(b.build(), inst, config, has_policy=True)


def _water_state(prob: StandardProblem, x: np.ndarray, inst: ProblemInstance, tag: str) -> HydraulicState:
    net = inst.wdn
    T = net.horizon
    flows = x[prob.var(f"{tag}.x")] / FLOW_SCALE
    heads = np.empty((T, len(net.node_ids)))
    free = [i for i, nid in enumerate(net.node_ids) if _head_is_free(net, nid)]
    fixed = [i for i in range(len(net.node_ids)) if i not in free]
    heads[:, free] = x[prob.var(f"{tag}.h")]
    for i in fixed:
        heads[:, i] = _fixed_head(net, net.node_ids[i])
    levels = np.empty((T + 1, len(net.tanks)))
    levels[0] = [tk.level_init for tk in net.tanks]
    levels[1:] = x[prob.var(f"{tag}.lvl")]
    return HydraulicState(flows=flows, heads=heads, levels=levels)


def _scalar_eps(v):
    a = np.asarray(v, dtype=float)
    return float(a.flat[0]) if a.size and np.all(a == a.flat[0]) else None


def solve_system(system: ConstraintSystem, settings: SolverSettings | None = None) -> DecisionSchedule:
    inst, cfg, prob = system.instance, system.config, system.problem
    res = backend.solve(prob, settings)
    probabilistic = cfg.mode == "probabilistic"
    sched = DecisionSchedule(
        mode=cfg.mode,
        status=res.status,
        pump_ids=inst.pump_ids,
        power_base_w=inst.pdn.base_power_w,
        solve_time=res.solve_time,
        detail=res.detail,
        eps_p=_scalar_eps(cfg.eps_p) if probabilistic else None,
        eps_w=_scalar_eps(cfg.eps_w) if probabilistic else None,
    )
    if not res.optimal:
        return sched
    x = res.x
    T, E = inst.horizon, len(inst.pump_ids)
    sched.p_nom = x[prob.var("p")] * KW
    if system.has_policy:
        sched.r_up = x[prob.var("r_up")] * KW
        sched.r_dn = x[prob.var("r_dn")] * KW
        sched.policy = x[prob.var("C")].copy()
        states = STATES
    else:
        sched.r_up = np.zeros((T, E))
        sched.r_dn = np.zeros((T, E))
        sched.policy = np.zeros((T, E, inst.n_t))
        states = ("nominal",)
    for tag in states:
        sched.water[tag] = _water_state(prob, x, inst, tag)
    if not system.has_policy:
        sched.water["upper"] = sched.water["lower"] = sched.water["nominal"]
    sched_c, cap_c = objective_coefficients(cfg, T, E, inst.dt_hours)
    sched.scheduled_cost = float((sched_c * sched.p_nom / KW).sum())
    sched.capacity_cost = float((cap_c * (sched.r_up + sched.r_dn) / KW).sum())
    sched.objective = sched.scheduled_cost + sched.capacity_cost
    return sched


def build(inst: ProblemInstance, config: FormulationConfig, uncertainty=None) -> ConstraintSystem:
    if config.mode == "deterministic":
        return build_deterministic(inst, config)
    if config.mode == "robust":
        if not isinstance(uncertainty, RobustBox):
            raise TypeError("robust mode needs a RobustBox")
        return build_robust(inst, config, uncertainty)
    if not isinstance(uncertainty, FittedNormal):
        raise TypeError("probabilistic mode needs a FittedNormal")
    return build_probabilistic(inst, config, uncertainty)


def schedule(inst, config, uncertainty=None, settings=None) -> DecisionSchedule:
    """Build and solve in one step."""
    return solve_system(build(inst, config, uncertainty), settings)


def realize_pump_power(sched: DecisionSchedule, dr_t, t: int) -> np.ndarray:
    """Real-time single-phase pump powers (W) for period-t errors ``dr_t`` (W)."""
    dr_t = np.asarray(dr_t, dtype=float)
    if dr_t.shape[-1] != sched.policy.shape[2]:
        raise DimensionMismatch(
            f"policy rows have length {sched.policy.shape[2]}, errors have {dr_t.shape[-1]}"
        )
    return sched.p_nom[t] + dr_t @ sched.policy[t].T


def water_state_violation(inst: ProblemInstance, state: HydraulicState, pump_power_w: np.ndarray,
                          final_tank: bool = False) -> float:
    """Largest violation of the relaxed water model at a given operating point.

    Checks variable limits, hull cuts, pump head and power links, junction
    balance and the tank recursion; zero means the state is admissible.
    """
    net = inst.wdn
    A = net.incidence()
    ni = net.node_index
    worst = 0.0
    lo, hi = net.head_limits()
    worst = max(worst, float(np.max(lo - state.heads)), float(np.max(state.heads - hi)))
    xlo = np.array([e.x_min for e in net.edges])
    xhi = np.array([e.x_max for e in net.edges])
    worst = max(worst, float(np.max(xlo - state.flows)), float(np.max(state.flows - xhi)))
    for s, tk in enumerate(net.tanks):
        worst = max(worst, float(np.max(tk.level_min - state.levels[1:, s])),
                    float(np.max(state.levels[1:, s] - tk.level_max)))
        if final_tank:
            worst = max(worst, tk.level_init - state.levels[-1, s])
    n_pipe = len(net.pipes)
    for t in range(net.horizon):
        H = state.heads[t]
        for c, pipe in enumerate(net.pipes):
            dh = H[ni[pipe.start]] - H[ni[pipe.end]]
            x = state.flows[t, c]
            for cut in hull_constraints(pipe.k, pipe.x_min, pipe.x_max):
                r = dh - (cut.slope * x + cut.const)
                worst = max(worst, r if cut.upper else -r)
        for e, pump in enumerate(net.pumps):
            x = state.flows[t, n_pipe + e]
            gain = H[ni[pump.end]] - H[ni[pump.start]]
            worst = max(worst, abs(gain - (pump.m1 * x + pump.m0)))
            worst = max(worst, abs(pump_power_w[t, e] - (pump.g1 * x + pump.g0)) / max(pump.g1, 1.0))
        bal = A[: len(net.junctions)] @ state.flows[t] + net.demand[t]
        worst = max(worst, float(np.max(np.abs(bal), initial=0.0)))
        for s, tk in enumerate(net.tanks):
            inflow = A[ni[tk.id]] @ state.flows[t]
            expect = state.levels[t, s] + 3600.0 * net.dt_hours / tk.area * inflow
            worst = max(worst, abs(state.levels[t + 1, s] - expect))
    return worst

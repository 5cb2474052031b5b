"""Monte Carlo validation of schedules against sampled forecast errors.

Every scenario realizes the affine pump policy, checks squared voltages
through the linear feeder map, checks the pump adjustment against the
scheduled capacities, and runs the nonlinear water physics at the realized
pump powers.  Scenarios are drawn and evaluated chunk by chunk with
per-chunk seeds, so counts do not depend on how chunks are spread over
workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .formulations import DecisionSchedule, ProblemInstance
from .hydraulics import solve_period_batch, tank_inflows
from .pdn import DimensionMismatch, evaluate_voltages
from .uncertainty import CHUNK, RobustBox, sample_chunk

logger = logging.getLogger(__name__)

VOLTAGE_TOL = 1e-6  # pu^2
WATER_TOL = 1e-6  # m and m^3/s
CAPACITY_TOL = 1e-2  # W

POWER_KINDS = ("voltage_max", "voltage_min")
CAPACITY_KINDS = ("capacity_up", "capacity_down")
WATER_KINDS = ("head_min", "head_max", "level_min", "level_max", "flow_min", "flow_max")


@dataclass(eq=False)
class EvaluationReport:
    """Violation counts from one evaluation run.

    ``counts[kind]`` is a (T, elements) integer array whose element labels
    are ``elements[kind]``; ``final_level`` is (1, tanks) with period T.
    """

    mode: str
    label: str
    count: int
    seed: int
    counts: dict[str, np.ndarray]
    elements: dict[str, tuple[str, ...]]
    joint_power: int
    joint_water: int
    joint_total: int
    nonconverged: int
    schedule_summary: dict = field(default_factory=dict)

    def rate(self, kind: str) -> np.ndarray:
        return self.counts[kind] / self.count

    @property
    def joint_power_rate(self) -> float:
        return self.joint_power / self.count

    @property
    def joint_water_rate(self) -> float:
        return self.joint_water / self.count

    @property
    def joint_total_rate(self) -> float:
        return self.joint_total / self.count

    def voltage_stats(self) -> dict:
        rates = np.concatenate([self.rate(k).ravel() for k in POWER_KINDS])
        per_el = sum(self.counts[k].sum(axis=0) for k in POWER_KINDS)
        worst = self.elements["voltage_max"][int(np.argmax(per_el))] if per_el.size else ""
        return {
            "voltage_rate_mean": float(rates.mean()) if rates.size else 0.0,
            "voltage_rate_std": float(rates.std()) if rates.size else 0.0,
            "voltage_rate_max": float(rates.max()) if rates.size else 0.0,
            "most_violated": worst if per_el.size and per_el.max() > 0 else "",
        }

    def individual_rows(self):
        """(constraint id, kind, element, period, rate) for every individual bound."""
        rows = []
        for kind, arr in self.counts.items():
            els = self.elements[kind]
            for t in range(arr.shape[0]):
                period = t if kind != "final_level" else -1
                for j, el in enumerate(els):
                    rows.append((f"{kind}:{el}:{period}", kind, el, period, float(arr[t, j] / self.count)))
        return rows


def _point_labels(inst: ProblemInstance):
    vm = inst.voltage_map
    keep = vm.non_substation_mask()
    return tuple(f"{b}.{'abc'[ph]}" for (b, ph), k in zip(vm.points, keep) if k), keep


def _check_dims(sched: DecisionSchedule, inst: ProblemInstance):
    if not sched.optimal:
        raise ValueError(f"cannot evaluate a schedule with status {sched.status!r}")
    T, E = inst.horizon, len(inst.pump_ids)
    if sched.p_nom.shape != (T, E) or sched.policy.shape != (T, E, inst.n_t):
        raise DimensionMismatch(
            f"schedule has p_nom {sched.p_nom.shape} and policy {sched.policy.shape}; "
            f"instance needs {(T, E)} and {(T, E, inst.n_t)}"
        )
    if tuple(sched.pump_ids) != inst.pump_ids:
        raise DimensionMismatch(f"schedule pumps {sched.pump_ids} differ from instance pumps {inst.pump_ids}")


def _solve_unique(net, xp, t):
    """Hydraulic solve on the distinct rows of ``xp`` only."""
    uniq, inv = np.unique(xp, axis=0, return_inverse=True)
    flows, heads, ok, _, _ = solve_period_batch(net, uniq, t)
    inv = inv.ravel()
    return flows[inv], heads[inv], ok[inv]


def _evaluate_chunk(args):
    sched, inst, dist, size, seed, chunk, include_final_tank, clip = args
    T, E, nt = inst.horizon, len(inst.pump_ids), inst.n_t
    net = inst.wdn
    base = inst.pdn.base_power_w
    X = sample_chunk(dist, size, seed, chunk)
    if clip is not None:
        X = clip.clip(X)
    dr = X.reshape(size, T, nt)
    P = sched.p_nom[None] + np.einsum("btn,ten->bte", dr * base, sched.policy)

    _, keep = _point_labels(inst)
    Y = evaluate_voltages(inst.voltage_map, P / base, dr)[:, :, keep]
    vmax2, vmin2 = inst.pdn.v_max**2, inst.pdn.v_min**2
    viol = {
        "voltage_max": Y > vmax2 + VOLTAGE_TOL,
        "voltage_min": Y < vmin2 - VOLTAGE_TOL,
    }
    adj3 = 3.0 * (P - sched.p_nom[None])
    viol["capacity_up"] = adj3 > sched.r_up[None] + CAPACITY_TOL
    viol["capacity_down"] = -adj3 > sched.r_dn[None] + CAPACITY_TOL

    n_pipe = len(net.pipes)
    g1 = np.array([p.g1 for p in net.pumps])
    g0 = np.array([p.g0 for p in net.pumps])
    xmin = np.array([p.x_min for p in net.pumps])
    xmax = np.array([p.x_max for p in net.pumps])
    lo, hi = net.head_limits()
    limited = np.array([i for i, nid in enumerate(net.node_ids) if not any(r.id == nid for r in net.reservoirs)], dtype=int)
    heads = np.empty((size, T, len(limited)))
    inflow = np.empty((size, T, len(net.tanks)))
    pump_x = np.empty((size, T, E))
    failed = np.zeros((size, T), dtype=bool)
    for t in range(T):
        xp = (P[:, t, :] - g0) / g1
        f, h, ok = _solve_unique(net, xp, t)
        heads[:, t] = h[:, limited]
        inflow[:, t] = tank_inflows(net, f)
        pump_x[:, t] = f[:, n_pipe:]
        failed[:, t] = ~ok
    scale = np.array([3600.0 * net.dt_hours / tk.area for tk in net.tanks])
    init = np.array([tk.level_init for tk in net.tanks])
    levels = init + np.cumsum(inflow * scale, axis=1)  # (B, T, S)
    lmin = np.array([tk.level_min for tk in net.tanks])
    lmax = np.array([tk.level_max for tk in net.tanks])
    ok_t = ~failed[:, :, None]
    viol["head_min"] = (heads < lo[limited] - WATER_TOL) & ok_t
    viol["head_max"] = (heads > hi[limited] + WATER_TOL) & ok_t
    viol["level_min"] = (levels < lmin - WATER_TOL) & ok_t
    viol["level_max"] = (levels > lmax + WATER_TOL) & ok_t
    viol["flow_min"] = pump_x < xmin - WATER_TOL
    viol["flow_max"] = pump_x > xmax + WATER_TOL
    if include_final_tank:
        viol["final_level"] = ((levels[:, -1] < init - WATER_TOL) & ~failed.any(axis=1, keepdims=True))[:, None, :]

    power_any = viol["voltage_max"].any(axis=(1, 2)) | viol["voltage_min"].any(axis=(1, 2))
    water_any = failed.any(axis=1)
    for k in WATER_KINDS + (("final_level",) if include_final_tank else ()):
        water_any |= viol[k].any(axis=(1, 2))
    counts = {k: v.sum(axis=0).astype(np.int64) for k, v in viol.items()}
    return (
        counts,
        int(power_any.sum()),
        int(water_any.sum()),
        int((power_any | water_any).sum()),
        int(failed.any(axis=1).sum()),
    )


def evaluate(
    sched: DecisionSchedule,
    inst: ProblemInstance,
    dist,
    count: int,
    seed: int,
    include_final_tank: bool = False,
    clip_box: RobustBox | None = None,
    chunk_size: int = CHUNK,
    workers: int = 1,
) -> EvaluationReport:
    """Empirical individual and joint violation rates of ``sched``.

    ``dist`` is an ``ErrorDistribution`` or ``FittedNormal``.  With
    ``clip_box`` every scenario is clipped into the box first.  Power
    joint rates cover voltages; capacity exceedances are reported as
    individual rates only.  Non-converged hydraulics count as a water
    violation and are tallied in ``nonconverged``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    _check_dims(sched, inst)
    if dist.dim != inst.n_errors:
        raise DimensionMismatch(f"distribution has dimension {dist.dim}, instance needs {inst.n_errors}")
    jobs = [
        (sched, inst, dist, min(chunk_size, count - start), seed, c, include_final_tank, clip_box)
        for c, start in enumerate(range(0, count, chunk_size))
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_evaluate_chunk, jobs))
    else:
        parts = [_evaluate_chunk(j) for j in jobs]

    counts = {k: sum(p[0][k] for p in parts) for k in parts[0][0]}
    labels, _ = _point_labels(inst)
    net = inst.wdn
    limited = tuple(nid for nid in net.node_ids if not any(r.id == nid for r in net.reservoirs))
    tanks = tuple(tk.id for tk in net.tanks)
    pumps = inst.pump_ids
    elements = {
        "voltage_max": labels,
        "voltage_min": labels,
        "capacity_up": pumps,
        "capacity_down": pumps,
        "head_min": limited,
        "head_max": limited,
        "level_min": tanks,
        "level_max": tanks,
        "flow_min": pumps,
        "flow_max": pumps,
        "final_level": tanks,
    }
    nonconv = sum(p[4] for p in parts)
    if nonconv:
        logger.warning("%d of %d scenarios did not converge hydraulically", nonconv, count)
    return EvaluationReport(
        mode=sched.mode,
        label=getattr(dist, "label", "actual"),
        count=count,
        seed=seed,
        counts=counts,
        elements={k: v for k, v in elements.items() if k in counts},
        joint_power=sum(p[1] for p in parts),
        joint_water=sum(p[2] for p in parts),
        joint_total=sum(p[3] for p in parts),
        nonconverged=nonconv,
        schedule_summary=sched.summary(),
    )


def compare(reports: list[EvaluationReport], names: list[str] | None = None):
    """Side-by-side table of costs, capacities and violation rates.

    Returns ``(header, rows, paired)``.  With two or more reports a delta
    column per report against the first is appended.  ``paired`` is False
    when seeds or counts differ; the table is still produced.
    """
    if not reports:
        return ["metric"], [], True
    names = names or [f"{r.mode}[{r.label}]" for r in reports]
    paired = len({(r.seed, r.count) for r in reports}) == 1
    if not paired:
        logger.warning("reports use different seeds or counts; differences are unpaired")
    metrics = [
        ("total_cost", lambda r: r.schedule_summary.get("total_cost")),
        ("scheduled_cost", lambda r: r.schedule_summary.get("scheduled_cost")),
        ("capacity_cost", lambda r: r.schedule_summary.get("capacity_cost")),
        ("avg_r_up_kw", lambda r: r.schedule_summary.get("avg_r_up_kw")),
        ("avg_r_dn_kw", lambda r: r.schedule_summary.get("avg_r_dn_kw")),
        ("joint_power_pct", lambda r: 100.0 * r.joint_power_rate),
        ("joint_water_pct", lambda r: 100.0 * r.joint_water_rate),
        ("joint_total_pct", lambda r: 100.0 * r.joint_total_rate),
        ("nonconverged", lambda r: float(r.nonconverged)),
        ("voltage_rate_max", lambda r: r.voltage_stats()["voltage_rate_max"]),
        ("scenarios", lambda r: float(r.count)),
        ("seed", lambda r: float(r.seed)),
    ]
    header = ["metric", *names]
    if len(reports) > 1:
        header += [f"delta_{n}" for n in names[1:]]
    rows = []
    for name, fn in metrics:
        vals = [fn(r) for r in reports]
        row = [name, *["" if v is None else float(v) for v in vals]]
        if len(reports) > 1:
            for v in vals[1:]:
                row.append("" if v is None or vals[0] is None else float(v) - float(vals[0]))
        rows.append(row)
    rows.append(["paired", *[str(paired).lower()] * len(reports), *[""] * (len(reports) - 1)])
    return header, rows, paired

"""Command-line experiment runner.

    pumpvs solve    --config case.toml [--mode M] [--eps-p E] [--eps-w E]
    pumpvs evaluate --config case.toml [--schedule FILE] [--samples N]
    pumpvs sweep    --config case.toml [--eps-p E ...] [--eps-w E ...]
    pumpvs report   --config case.toml

Exit codes: 0 ok, 2 infeasible, 3 input error, 4 solver failure.
``PUMPVS_OUT`` overrides the config's output directory; ``--out`` wins
over both.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend, montecarlo, plotting
from .backend import SolverSettings
from .formulations import DecisionSchedule, FormulationConfig, ProblemInstance, build, solve_system
from .io import (
    ExperimentConfig,
    InputError,
    atomic_write,
    config_digest,
    csv_text,
    dumps_schedule,
    load_config,
    load_instance,
    load_schedule,
)
from .pdn import DimensionMismatch
from .uncertainty import ErrorDistribution, fit_mle, robust_box, sample

logger = logging.getLogger("pumpvs")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4
OUT_ENV = "PUMPVS_OUT"


@dataclass
class Context:
    cfg: ExperimentConfig
    inst: ProblemInstance
    prices: dict
    out: Path
    digest: str
    timing: bool
    dump_problem: bool

    @property
    def settings(self) -> SolverSettings:
        s = self.cfg.solver
        return SolverSettings(tol_gap=s.tol_gap, tol_feas=s.tol_feas, max_iter=s.max_iter)

    def actual(self) -> ErrorDistribution:
        d = self.cfg.distribution
        return ErrorDistribution(
            variant=d.variant,
            forecast=self.inst.error_forecast(),
            periods=self.inst.error_periods(),
            sigma_global=d.sigma_global,
            sigma_node=d.sigma_node,
            dof=d.dof,
            correlation=d.correlation,
            alpha=d.alpha,
        )

    def fitted(self):
        c = self.cfg
        return fit_mle(sample(self.actual(), c.samples.fit, c.seeds.fit, c.samples.chunk))

    def box(self):
        c = self.cfg
        b = robust_box(sample(self.actual(), c.samples.robust, c.seeds.robust, c.samples.chunk))
        return b.scaled(c.formulation.robust_scale)

    def formulation(self, mode: str, eps_p=None, eps_w=None) -> FormulationConfig:
        f = self.cfg.formulation
        return FormulationConfig(
            mode=mode,
            prices=self.prices["price"],
            vs_prices=self.prices["vs_price"],
            eps_p=f.eps_p if eps_p is None else eps_p,
            eps_w=f.eps_w if eps_w is None else eps_w,
        )

    def uncertainty_for(self, mode: str):
        if mode == "robust":
            return self.box()
        if mode == "probabilistic":
            return self.fitted()
        return None

    def write(self, name: str, text: str):
        atomic_write(self.out / name, text)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    upd = {}
    form = {}
    if getattr(args, "mode", None):
        form["mode"] = args.mode
    eps_p = getattr(args, "eps_p", None)
    eps_w = getattr(args, "eps_w", None)
    if args.command != "sweep":
        if eps_p is not None:
            form["eps_p"] = eps_p[0]
        if eps_w is not None:
            form["eps_w"] = eps_w[0]
    if form:
        upd["formulation"] = cfg.formulation.model_copy(update=form)
    if args.seed is not None:
        upd["seeds"] = cfg.seeds.model_copy(
            update={"fit": args.seed, "robust": args.seed + 1, "evaluation": args.seed + 2}
        )
    if args.samples is not None:
        upd["samples"] = cfg.samples.model_copy(update={"evaluation": args.samples})
    if args.command == "sweep" and (eps_p is not None or eps_w is not None):
        ep = eps_p if eps_p is not None else eps_w
        ew = eps_w if eps_w is not None else eps_p
        if len(ep) != len(ew):
            raise InputError("--eps-p and --eps-w need the same number of values")
        upd["sweep"] = tuple(zip(ep, ew))
    cfg = cfg.model_copy(update=upd)
    # re-validate the merged config
    try:
        return ExperimentConfig.model_validate(cfg.model_dump(by_alias=True))
    except Exception as exc:
        raise InputError(f"invalid override: {exc}") from None


def _context(args) -> Context:
    cfg, base = load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    inst, prices = load_instance(cfg, base)
    if args.out:
        out = Path(args.out)
    elif os.environ.get(OUT_ENV):
        out = Path(os.environ[OUT_ENV])
    else:
        out = base / cfg.output
    digest = config_digest(cfg, {"command": args.command})
    return Context(cfg, inst, prices, out, digest, args.timing, getattr(args, "dump_problem", False))


def _solve(ctx: Context, mode: str, eps_p=None, eps_w=None, unc=None) -> DecisionSchedule:
    fc = ctx.formulation(mode, eps_p, eps_w)
    unc = ctx.uncertainty_for(mode) if unc is None else unc
    system = build(ctx.inst, fc, unc)
    if ctx.dump_problem:
        ctx.write(f"problem_{mode}.txt", backend.dumps(system.problem))
    return solve_system(system, ctx.settings)


def _exit_for(status: str) -> int:
    if status == "optimal":
        return EXIT_OK
    if status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def _band_rows(ctx: Context, scheds: dict[str, DecisionSchedule]):
    lo, hi = ctx.inst.pump_power_limits()
    rows = []
    for mode, s in scheds.items():
        if not s.optimal:
            continue
        for t in range(ctx.inst.horizon):
            for e, pid in enumerate(s.pump_ids):
                p = s.p_nom[t, e]
                rows.append(
                    (mode, t, pid, p / 1e3, (p - s.r_dn[t, e] / 3) / 1e3, (p + s.r_up[t, e] / 3) / 1e3,
                     lo[e] / 1e3, hi[e] / 1e3)
                )
    header = ["mode", "period", "pump", "p_nom_kw", "band_low_kw", "band_high_kw", "p_min_kw", "p_max_kw"]
    return header, rows


def _hours(ctx: Context):
    return np.arange(ctx.inst.horizon) * ctx.inst.dt_hours


def _write_bands(ctx: Context, scheds: dict, stem: str = "pump_bands"):
    header, rows = _band_rows(ctx, scheds)
    ctx.write(f"{stem}.csv", csv_text(header, rows, ctx.digest))
    lo, hi = ctx.inst.pump_power_limits()
    plotting.pump_bands(scheds, (lo[0] / 1e3, hi[0] / 1e3), _hours(ctx), ctx.out / f"{stem}.png", ctx.digest)


def _cost_rows(ctx: Context, scheds: dict[str, DecisionSchedule]):
    header = ["mode", "status", "eps_p", "eps_w", "total_cost", "scheduled_cost", "capacity_cost",
              "avg_r_up_kw", "avg_r_dn_kw"]
    if ctx.timing:
        header.append("solve_time_s")
    rows = []
    for mode, s in scheds.items():
        m = s.summary()
        row = [mode, s.status, m["eps_p"] if m["eps_p"] is not None else "",
               m["eps_w"] if m["eps_w"] is not None else ""]
        row += [m.get(k, "") for k in ("total_cost", "scheduled_cost", "capacity_cost", "avg_r_up_kw", "avg_r_dn_kw")]
        if ctx.timing:
            row.append(s.solve_time)
        rows.append(row)
    return header, rows


def cmd_solve(ctx: Context) -> int:
    mode = ctx.cfg.formulation.mode
    s = _solve(ctx, mode)
    ctx.write("schedule.json", dumps_schedule(s, ctx.digest, timing=ctx.timing))
    header, rows = _cost_rows(ctx, {mode: s})
    ctx.write("costs.csv", csv_text(header, rows, ctx.digest))
    if s.optimal:
        _write_bands(ctx, {mode: s})
        print(f"{mode}: optimal, total cost {s.objective:.6f} $ "
              f"(scheduled {s.scheduled_cost:.6f}, capacity {s.capacity_cost:.6f})")
    else:
        print(f"{mode}: {s.status} {s.detail}".rstrip(), file=sys.stderr)
    return _exit_for(s.status)


def _joint_row(name, fit_r, act_r):
    return (name, 100 * fit_r.joint_power_rate, 100 * fit_r.joint_water_rate, 100 * fit_r.joint_total_rate,
            100 * act_r.joint_power_rate, 100 * act_r.joint_water_rate, 100 * act_r.joint_total_rate)


JOINT_HEADER = ["schedule", "fitted_power_pct", "fitted_water_pct", "fitted_total_pct",
                "actual_power_pct", "actual_water_pct", "actual_total_pct"]


def _evaluate_pair(ctx: Context, s: DecisionSchedule, fitted, actual):
    c = ctx.cfg
    clip = ctx.box() if c.evaluation.clip_to_box else None
    kw = dict(count=c.samples.evaluation, seed=c.seeds.evaluation, include_final_tank=c.evaluation.include_final_tank,
              clip_box=clip, chunk_size=c.samples.chunk, workers=c.evaluation.workers)
    return montecarlo.evaluate(s, ctx.inst, fitted, **kw), montecarlo.evaluate(s, ctx.inst, actual, **kw)


def _write_individual(ctx: Context, rep, name: str):
    header = ["constraint", "kind", "element", "period", "rate"]
    ctx.write(name, csv_text(header, rep.individual_rows(), ctx.digest))


def cmd_evaluate(ctx: Context, schedule_path) -> int:
    path = Path(schedule_path) if schedule_path else ctx.out / "schedule.json"
    s = load_schedule(path)
    if not s.optimal:
        print(f"schedule in {path} has status {s.status}; nothing to evaluate", file=sys.stderr)
        return EXIT_INFEASIBLE
    fitted, actual = ctx.fitted(), ctx.actual()
    rf, ra = _evaluate_pair(ctx, s, fitted, actual)
    _write_individual(ctx, rf, "individual_rates_fitted.csv")
    _write_individual(ctx, ra, "individual_rates_actual.csv")
    ctx.write("joint_rates.csv", csv_text(JOINT_HEADER, [_joint_row(s.mode, rf, ra)], ctx.digest))
    header, rows, _ = montecarlo.compare([rf, ra], [f"{s.mode}[fitted]", f"{s.mode}[actual]"])
    ctx.write("comparison.csv", csv_text(header, rows, ctx.digest))
    plotting.violation_rates([_joint_row(s.mode, rf, ra)], ctx.out / "violation_rates.png", ctx.digest)
    print(f"{s.mode}: joint total violation {100 * rf.joint_total_rate:.4f}% fitted, "
          f"{100 * ra.joint_total_rate:.4f}% actual over {rf.count} scenarios")
    return EXIT_OK


def _pct(v, base):
    return 100.0 * (v - base) / base if base else float("nan")


def _sweep_rows(ctx: Context, pairs):
    """Table rows for (P) at each violation pair against a fresh (D) baseline."""
    base = _solve(ctx, "deterministic")
    if not base.optimal:
        raise RuntimeError(f"deterministic baseline is {base.status}")
    fitted = ctx.fitted() if pairs else None
    header = ["label", "eps_p", "eps_w", "status", "total_cost", "total_increase_pct", "scheduled_cost",
              "scheduled_increase_pct", "avg_r_up_kw", "avg_r_dn_kw"]
    if ctx.timing:
        header.append("solve_time_s")
    rows, scheds = [], []
    for ep, ew in pairs:
        s = _solve(ctx, "probabilistic", ep, ew, unc=fitted)
        scheds.append(s)
        if s.optimal:
            row = [f"P({ep:g},{ew:g})", ep, ew, s.status, s.objective, _pct(s.objective, base.objective),
                   s.scheduled_cost, _pct(s.scheduled_cost, base.scheduled_cost),
                   float(s.r_up.mean() / 1e3), float(s.r_dn.mean() / 1e3)]
        else:
            row = [f"P({ep:g},{ew:g})", ep, ew, s.status, "", "", "", "", "", ""]
        if ctx.timing:
            row.append(s.solve_time)
        rows.append(row)
    return header, rows, base, scheds


def cmd_sweep(ctx: Context) -> int:
    pairs = list(ctx.cfg.sweep)
    header, rows, _, _ = _sweep_rows(ctx, pairs)
    ctx.write("sweep.csv", csv_text(header, rows, ctx.digest))
    if rows:
        ok = [r for r in rows if r[3] == "optimal"]
        plotting.sweep_costs([r[1] for r in ok], [r[5] for r in ok], [r[7] for r in ok],
                             ctx.out / "sweep.png", ctx.digest)
    for r in rows:
        print(f"{r[0]}: {r[3]}" + (f", total +{r[5]:.4f}%" if r[3] == "optimal" else ""))
    return EXIT_OK


def cmd_report(ctx: Context) -> int:
    """Solve all three modes, evaluate each feasible schedule, sweep, plot."""
    f = ctx.cfg.formulation
    fitted, actual = ctx.fitted(), ctx.actual()
    scheds = {
        "deterministic": _solve(ctx, "deterministic"),
        "probabilistic": _solve(ctx, "probabilistic", unc=fitted),
        "robust": _solve(ctx, "robust"),
    }
    for mode, s in scheds.items():
        ctx.write(f"schedule_{mode}.json", dumps_schedule(s, ctx.digest, timing=ctx.timing))
    header, rows = _cost_rows(ctx, scheds)
    base = scheds["deterministic"]
    header = header + ["total_increase_pct", "scheduled_increase_pct"]
    for r, s in zip(rows, scheds.values()):
        if s.optimal and base.optimal:
            r += [_pct(s.objective, base.objective), _pct(s.scheduled_cost, base.scheduled_cost)]
        else:
            r += ["", ""]
    ctx.write("costs.csv", csv_text(header, rows, ctx.digest))
    _write_bands(ctx, scheds)

    joint, reports, names = [], [], []
    for mode, s in scheds.items():
        if not s.optimal:
            continue
        rf, ra = _evaluate_pair(ctx, s, fitted, actual)
        _write_individual(ctx, rf, f"individual_rates_{mode}_fitted.csv")
        _write_individual(ctx, ra, f"individual_rates_{mode}_actual.csv")
        joint.append(_joint_row(mode, rf, ra))
        reports += [rf, ra]
        names += [f"{mode}[fitted]", f"{mode}[actual]"]
    ctx.write("joint_rates.csv", csv_text(JOINT_HEADER, joint, ctx.digest))
    header, rows, _ = montecarlo.compare(reports, names)
    ctx.write("comparison.csv", csv_text(header, rows, ctx.digest))
    if joint:
        plotting.violation_rates(joint, ctx.out / "violation_rates.png", ctx.digest)

    pairs = list(ctx.cfg.sweep)
    if pairs:
        sh, srows, _, _ = _sweep_rows(ctx, pairs)
        ctx.write("sweep.csv", csv_text(sh, srows, ctx.digest))
        ok = [r for r in srows if r[3] == "optimal"]
        plotting.sweep_costs([r[1] for r in ok], [r[5] for r in ok], [r[7] for r in ok],
                             ctx.out / "sweep.png", ctx.digest)
    for mode, s in scheds.items():
        msg = f"{s.objective:.6f} $" if s.optimal else ""
        print(f"{mode}: {s.status} {msg}".rstrip())
    for r in joint:
        print(f"{r[0]}: joint total {r[3]:.4f}% fitted, {r[6]:.4f}% actual")
    print(f"eps_p={f.eps_p:g} eps_w={f.eps_w:g}; outputs in {ctx.out}")
    return EXIT_OK if scheds["probabilistic"].optimal else _exit_for(scheds["probabilistic"].status)


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pumpvs", description="Pump scheduling with voltage support.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (.toml or .json)")
        p.add_argument("--seed", type=int, help="base seed: fit=S, robust=S+1, evaluation=S+2")
        p.add_argument("--samples", type=int, help="evaluation scenario count")
        p.add_argument("--out", help="output directory")
        p.add_argument("--timing", action="store_true", help="record solver wall-clock times in outputs")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("solve", help="solve one formulation and write the schedule")
    common(p)
    p.add_argument("--mode", choices=["deterministic", "robust", "probabilistic"])
    p.add_argument("--eps-p", type=float, nargs=1)
    p.add_argument("--eps-w", type=float, nargs=1)
    p.add_argument("--dump-problem", action="store_true", help="also write the standard-form problem text")

    p = sub.add_parser("evaluate", help="Monte Carlo evaluation of a schedule file")
    common(p)
    p.add_argument("--schedule", help="schedule JSON (default: <out>/schedule.json)")

    p = sub.add_parser("sweep", help="probabilistic costs over violation levels")
    common(p)
    p.add_argument("--eps-p", type=float, nargs="*")
    p.add_argument("--eps-w", type=float, nargs="*")

    p = sub.add_parser("report", help="solve all modes, evaluate, sweep and plot")
    common(p)
    p.add_argument("--mode", choices=["deterministic", "robust", "probabilistic"])
    p.add_argument("--eps-p", type=float, nargs=1)
    p.add_argument("--eps-w", type=float, nargs=1)
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        ctx = _context(args)
        if args.command == "solve":
            return cmd_solve(ctx)
        if args.command == "evaluate":
            return cmd_evaluate(ctx, args.schedule)
        if args.command == "sweep":
            return cmd_sweep(ctx)
        return cmd_report(ctx)
    except (InputError, DimensionMismatch) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

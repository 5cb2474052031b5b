"""File formats: network JSON, time-series CSV, experiment config, schedules.

Network files carry ``"schema": 1`` and reject unknown fields.  CSV series
carry an explicit ``period`` column (0-based, contiguous).  Configs may be
JSON or TOML; relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Literal

import numpy as np
import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .formulations import DecisionSchedule, ProblemInstance
from .pdn import Line, PdnNetwork, PumpAttachment
from .wdn import HydraulicState, Junction, Pipe, Pump, Reservoir, Tank, WdnNetwork

SCHEMA_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent input; the message names the file and field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _finite(v):
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    return v


# power network -------------------------------------------------------------


class BusSpec(_Strict):
    id: str
    phases: str = "abc"
    p_kw: tuple[float, float, float] = (0.0, 0.0, 0.0)
    q_kvar: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("phases")
    @classmethod
    def _phases(cls, v):
        if not v or any(c not in "abc" for c in v) or len(set(v)) != len(v):
            raise ValueError("phases must be a nonempty subset of 'abc'")
        return v

    _f = field_validator("p_kw", "q_kvar")(_finite)


class LineSpec(_Strict):
    from_bus: str = Field(alias="from")
    to_bus: str = Field(alias="to")
    M: tuple[tuple[float, float, float], ...]
    N: tuple[tuple[float, float, float], ...]

    @field_validator("M", "N")
    @classmethod
    def _square(cls, v):
        if len(v) != 3:
            raise ValueError("must be 3x3")
        return _finite(v)


class PumpAttachSpec(_Strict):
    pump: str
    bus: str
    eta: float = 0.0


class PdnSpec(_Strict):
    schema_: Literal[1] = Field(alias="schema")
    name: str = "pdn"
    base_power_w: float = Field(gt=0)
    substation: str
    substation_voltage: tuple[float, float, float]
    v_min: float = 0.95
    v_max: float = 1.05
    buses: tuple[BusSpec, ...]
    lines: tuple[LineSpec, ...]
    pumps: tuple[PumpAttachSpec, ...] = ()


# water network -------------------------------------------------------------


class JunctionSpec(_Strict):
    id: str
    elevation: float
    h_min: float
    h_max: float
    demand: float = 0.0  # base consumption, m^3/s


class ReservoirSpec(_Strict):
    id: str
    head: float


class TankSpec(_Strict):
    id: str
    area: float = Field(gt=0)
    level_min: float
    level_max: float
    level_init: float
    h_min: float
    h_max: float
    head: float | None = None


class PipeSpec(_Strict):
    id: str
    start: str
    end: str
    k: float = Field(gt=0)
    x_min: float
    x_max: float


class PumpSpec(_Strict):
    id: str
    start: str
    end: str
    m1: float
    m0: float
    g1: float
    g0: float
    x_min: float = Field(ge=0)
    x_max: float


class WdnSpec(_Strict):
    schema_: Literal[1] = Field(alias="schema")
    name: str = "wdn"
    junctions: tuple[JunctionSpec, ...]
    reservoirs: tuple[ReservoirSpec, ...] = ()
    tanks: tuple[TankSpec, ...] = ()
    pipes: tuple[PipeSpec, ...] = ()
    pumps: tuple[PumpSpec, ...] = ()


# experiment config ---------------------------------------------------------


class NetworkPaths(_Strict):
    pdn: str
    wdn: str
    multipliers: str
    prices: str
    water_demand: str | None = None


class FormulationSection(_Strict):
    mode: Literal["deterministic", "robust", "probabilistic"] = "probabilistic"
    eps_p: float = 0.05
    eps_w: float = 0.05
    vs_price: float = 5.0
    robust_scale: float = Field(default=1.0, ge=0)


class DistributionSection(_Strict):
    variant: Literal["normal", "t"]
    alpha: float = 0.0
    sigma_global: float = 0.0
    sigma_node: float = 0.0
    dof: float = 3.0
    correlation: float = 0.2


class SampleSection(_Strict):
    fit: int = Field(default=500, ge=2)
    robust: int = Field(default=2000, ge=1)
    evaluation: int = Field(default=50000, ge=1)
    chunk: int = Field(default=1024, ge=1)


class SeedSection(_Strict):
    fit: int = 1
    robust: int = 2
    evaluation: int = 3


class EvaluationSection(_Strict):
    include_final_tank: bool = False
    clip_to_box: bool = False
    workers: int = Field(default=1, ge=1)


class SolverSection(_Strict):
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200


class ExperimentConfig(_Strict):
    name: str = "experiment"
    network: NetworkPaths
    horizon: int = Field(gt=0)
    dt_hours: float = Field(default=1.0, gt=0)
    formulation: FormulationSection = FormulationSection()
    distribution: DistributionSection
    samples: SampleSection = SampleSection()
    seeds: SeedSection = SeedSection()
    evaluation: EvaluationSection = EvaluationSection()
    solver: SolverSection = SolverSection()
    sweep: tuple[tuple[float, float], ...] = ()
    output: str = "out"


def _fmt_validation(path, err: ValidationError) -> str:
    lines = [f"{path}: invalid content"]
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"])
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def _read_text(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: file not found")
    return p.read_text(encoding="utf-8")


def _parse_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_config(path) -> tuple[ExperimentConfig, Path]:
    """Parse and validate a config; returns it with the base directory."""
    path = Path(path)
    text = _read_text(path)
    if path.suffix.lower() == ".toml":
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise InputError(_fmt_validation(path, exc)) from None
    return cfg, path.parent.resolve()


def config_digest(cfg: ExperimentConfig, extra: dict | None = None) -> str:
    """sha256 over the canonical JSON of the resolved config plus overrides."""
    payload = {"config": cfg.model_dump(mode="json", by_alias=True), "extra": extra or {}}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# csv series ----------------------------------------------------------------


def read_series(path, columns: tuple[str, ...], horizon: int, optional: tuple[str, ...] = ()):
    """Read a period-indexed CSV into a dict of float arrays of length ``horizon``."""
    text = _read_text(path)
    reader = csv.DictReader(_io.StringIO(text))
    header = reader.fieldnames or []
    if "period" not in header:
        raise InputError(f"{path}: missing 'period' column")
    for c in columns:
        if c not in header:
            raise InputError(f"{path}: missing column {c!r}")
    out = {c: np.full(horizon, np.nan) for c in (*columns, *[o for o in optional if o in header])}
    for lineno, row in enumerate(reader, start=2):
        try:
            t = int(row["period"])
        except (TypeError, ValueError):
            raise InputError(f"{path}: line {lineno}: bad period {row['period']!r}") from None
        if not 0 <= t < horizon:
            raise InputError(f"{path}: line {lineno}: period {t} outside 0..{horizon - 1}")
        for c in out:
            try:
                v = float(row[c])
            except (TypeError, ValueError):
                raise InputError(f"{path}: line {lineno}: column {c!r} is not a number") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: line {lineno}: column {c!r} is not finite")
            out[c][t] = v
    for c, arr in out.items():
        missing = np.flatnonzero(np.isnan(arr))
        if len(missing):
            raise InputError(f"{path}: column {c!r} has no value for periods {missing.tolist()}")
    return out


def read_water_demand(path, junction_ids, horizon: int) -> np.ndarray:
    """Consumption CSV (node, period, demand in m^3/s) as injections (T, J)."""
    text = _read_text(path)
    reader = csv.DictReader(_io.StringIO(text))
    if set(reader.fieldnames or []) < {"node", "period", "demand"}:
        raise InputError(f"{path}: need columns node, period, demand")
    col = {j: c for c, j in enumerate(junction_ids)}
    out = np.full((horizon, len(junction_ids)), np.nan)
    for lineno, row in enumerate(reader, start=2):
        if row["node"] not in col:
            raise InputError(f"{path}: line {lineno}: unknown junction {row['node']!r}")
        try:
            t, v = int(row["period"]), float(row["demand"])
        except ValueError:
            raise InputError(f"{path}: line {lineno}: bad number") from None
        if not 0 <= t < horizon:
            raise InputError(f"{path}: line {lineno}: period {t} outside 0..{horizon - 1}")
        out[t, col[row["node"]]] = -abs(v)
    if np.isnan(out).any():
        raise InputError(f"{path}: demand missing for some junction/period pairs")
    return out


# network construction ------------------------------------------------------


def _pdn_from_spec(spec: PdnSpec, mult: np.ndarray, dt_hours: float) -> PdnNetwork:
    ids = [b.id for b in spec.buses]
    phases = {b.id: tuple(c in b.phases for c in "abc") for b in spec.buses}
    base_kw = spec.base_power_w / 1e3
    p = np.array([b.p_kw for b in spec.buses]) / base_kw
    q = np.array([b.q_kvar for b in spec.buses]) / base_kw
    lines = tuple(Line(ln.from_bus, ln.to_bus, np.array(ln.M), np.array(ln.N)) for ln in spec.lines)
    return PdnNetwork(
        buses=tuple(ids),
        substation=spec.substation,
        phases=phases,
        lines=lines,
        p_demand=mult[:, None, None] * p[None],
        q_demand=mult[:, None, None] * q[None],
        substation_y=np.square(np.array(spec.substation_voltage)),
        pumps=tuple(PumpAttachment(a.pump, a.bus, a.eta) for a in spec.pumps),
        v_min=spec.v_min,
        v_max=spec.v_max,
        dt_hours=dt_hours,
        base_power_w=spec.base_power_w,
    )


def _wdn_from_spec(spec: WdnSpec, demand: np.ndarray, dt_hours: float) -> WdnNetwork:
    return WdnNetwork(
        junctions=tuple(Junction(j.id, j.elevation, j.h_min, j.h_max, j.demand) for j in spec.junctions),
        reservoirs=tuple(Reservoir(r.id, r.head) for r in spec.reservoirs),
        tanks=tuple(
            Tank(t.id, t.area, t.level_min, t.level_max, t.level_init, t.h_min, t.h_max, t.head)
            for t in spec.tanks
        ),
        pipes=tuple(Pipe(p.id, p.start, p.end, p.k, p.x_min, p.x_max) for p in spec.pipes),
        pumps=tuple(Pump(p.id, p.start, p.end, p.m1, p.m0, p.g1, p.g0, p.x_min, p.x_max) for p in spec.pumps),
        demand=demand,
        dt_hours=dt_hours,
    )


def _validate(model, path):
    try:
        return model.model_validate(_parse_json(path))
    except ValidationError as exc:
        raise InputError(_fmt_validation(path, exc)) from None


def load_instance(cfg: ExperimentConfig, base: Path) -> tuple[ProblemInstance, dict]:
    """Build the problem instance and price series named by ``cfg``."""
    net = cfg.network
    T = cfg.horizon
    pdn_spec = _validate(PdnSpec, base / net.pdn)
    wdn_spec = _validate(WdnSpec, base / net.wdn)
    mult = read_series(base / net.multipliers, ("power", "water"), T)
    prices = read_series(base / net.prices, ("price",), T, optional=("vs_price",))
    if net.water_demand:
        demand = read_water_demand(base / net.water_demand, [j.id for j in wdn_spec.junctions], T)
    else:
        consumption = np.array([j.demand for j in wdn_spec.junctions])
        demand = -np.outer(mult["water"], np.abs(consumption))
    try:
        pdn = _pdn_from_spec(pdn_spec, mult["power"], cfg.dt_hours)
        wdn = _wdn_from_spec(wdn_spec, demand + 0.0, cfg.dt_hours)
        inst = ProblemInstance(pdn, wdn, name=cfg.name)
        inst.voltage_map
    except ValueError as exc:
        raise InputError(f"{base / net.pdn} / {base / net.wdn}: {exc}") from None
    if "vs_price" not in prices:
        prices["vs_price"] = np.full(T, cfg.formulation.vs_price)
    return inst, prices


# atomic output -------------------------------------------------------------


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: list[str], rows, digest: str | None = None) -> str:
    """CSV with an optional ``# config-sha256: ...`` first line; floats use repr."""
    buf = _io.StringIO()
    if digest:
        buf.write(f"# config-sha256: {digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in _read_text(path).splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


# schedule json -------------------------------------------------------------


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def schedule_to_dict(s: DecisionSchedule) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "mode": s.mode,
        "status": s.status,
        "pump_ids": list(s.pump_ids),
        "power_base_w": s.power_base_w,
        "p_nom_w": _arr(s.p_nom),
        "policy": _arr(s.policy),
        "r_up_w": _arr(s.r_up),
        "r_dn_w": _arr(s.r_dn),
        "water": {
            k: {"flows": _arr(v.flows), "heads": _arr(v.heads), "levels": _arr(v.levels)}
            for k, v in s.water.items()
        },
        "objective": s.objective,
        "scheduled_cost": s.scheduled_cost,
        "capacity_cost": s.capacity_cost,
        "solve_time": s.solve_time,
        "detail": s.detail,
        "eps_p": s.eps_p,
        "eps_w": s.eps_w,
    }


def schedule_from_dict(d: dict) -> DecisionSchedule:
    if d.get("schema") != SCHEMA_VERSION:
        raise InputError(f"schedule schema must be {SCHEMA_VERSION}")

    def arr(k):
        return None if d.get(k) is None else np.array(d[k], dtype=float)

    policy = arr("policy")
    if policy is not None and policy.ndim != 3:
        policy = policy.reshape(policy.shape[0], len(d["pump_ids"]), -1)
    return DecisionSchedule(
        mode=d["mode"],
        status=d["status"],
        pump_ids=tuple(d["pump_ids"]),
        power_base_w=float(d["power_base_w"]),
        p_nom=arr("p_nom_w"),
        policy=policy,
        r_up=arr("r_up_w"),
        r_dn=arr("r_dn_w"),
        water={
            k: HydraulicState(flows=np.array(v["flows"]), heads=np.array(v["heads"]), levels=np.array(v["levels"]))
            for k, v in d.get("water", {}).items()
        },
        objective=d.get("objective"),
        scheduled_cost=d.get("scheduled_cost"),
        capacity_cost=d.get("capacity_cost"),
        solve_time=float(d.get("solve_time", 0.0)),
        detail=d.get("detail", ""),
        eps_p=d.get("eps_p"),
        eps_w=d.get("eps_w"),
    )


def dumps_schedule(s: DecisionSchedule, digest: str | None = None, timing: bool = True) -> str:
    d = schedule_to_dict(s)
    if not timing:
        d.pop("solve_time")
    if digest:
        d = {"config_sha256": digest, **d}
    return json.dumps(d, indent=1, sort_keys=False) + "\n"


def loads_schedule(text: str) -> DecisionSchedule:
    d = json.loads(text)
    d.pop("config_sha256", None)
    return schedule_from_dict(d)


def load_schedule(path) -> DecisionSchedule:
    try:
        return loads_schedule(_read_text(path))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a schedule file ({exc})") from None

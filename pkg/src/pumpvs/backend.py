"""Standard-form conic problems and their solution.

A ``StandardProblem`` is

    minimize    c @ x + c0
    subject to  lb <= x <= ub
                A x (<= | >= | ==) rhs          row by row
                (G x + h)[blk] in SOC           for each cone block

where a cone block ``[t; u]`` means ``t >= ||u||_2``.  ``solve`` hands the
problem to Clarabel, an interior-point conic solver.  ``dump``/``load``
round-trip a problem through a plain-text file for cross-checking elsewhere.
"""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

SENSES = ("<=", ">=", "==")
FEASIBILITY_CHECK = 1e-6


class InvalidProblem(ValueError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 200


@dataclass(eq=False)
class StandardProblem:
    n: int
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sparse.csr_matrix
    senses: np.ndarray  # entries of SENSES
    rhs: np.ndarray
    G: sparse.csr_matrix
    h: np.ndarray
    cone_dims: list[int] = field(default_factory=list)
    c0: float = 0.0
    blocks: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        if self.A.shape[1] != self.n or self.G.shape[1] != self.n:
            raise InvalidProblem("constraint matrices have the wrong column count")
        for name, arr in (("c", self.c), ("rhs", self.rhs), ("h", self.h),
                          ("A", self.A.data), ("G", self.G.data)):
            if not np.all(np.isfinite(arr)):
                raise InvalidProblem(f"non-finite entries in {name}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb > self.ub):
            raise InvalidProblem("invalid variable bounds")
        if any(d < 2 for d in self.cone_dims) or sum(self.cone_dims) != self.G.shape[0]:
            raise InvalidProblem("cone blocks must have dimension >= 2 and tile G")
        if not set(np.unique(self.senses)) <= set(SENSES):
            raise InvalidProblem(f"row senses must be among {SENSES}")

    def is_lp(self) -> bool:
        return not self.cone_dims

    def primal_violation(self, x: np.ndarray) -> float:
        """Largest scaled violation of bounds, rows and cones at ``x``."""
        worst = 0.0
        scale = lambda v: 1.0 + np.abs(v)  # noqa: E731
        with np.errstate(invalid="ignore"):
            lo = np.where(np.isfinite(self.lb), (self.lb - x) / scale(self.lb), 0.0)
            hi = np.where(np.isfinite(self.ub), (x - self.ub) / scale(self.ub), 0.0)
        worst = max(worst, float(np.max(lo, initial=0.0)), float(np.max(hi, initial=0.0)))
        if self.n_rows:
            ax = self.A @ x
            r = (ax - self.rhs) / scale(self.rhs)
            v = np.where(self.senses == "<=", r, np.where(self.senses == ">=", -r, np.abs(r)))
            worst = max(worst, float(v.max(initial=0.0)))
        if self.cone_dims:
            s = self.G @ x + self.h
            off = 0
            for d in self.cone_dims:
                blk = s[off : off + d]
                worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]) / (1.0 + abs(blk[0])))
                off += d
        return worst

    def var(self, name: str) -> np.ndarray:
        start, shape = self.blocks[name]
        return start + np.arange(int(np.prod(shape))).reshape(shape)


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | numerical-failure
    x: np.ndarray | None
    objective: float | None
    solve_time: float
    iterations: int = 0
    detail: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class ProblemBuilder:
    """Incremental assembly of a ``StandardProblem`` from numpy blocks."""

    def __init__(self):
        self.n = 0
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._c: dict[int, float] = {}
        self.c0 = 0.0
        self.blocks: dict[str, tuple[int, tuple[int, ...]]] = {}
        self._ar, self._ac, self._av = [], [], []
        self._senses: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self.m = 0
        self._gr, self._gc, self._gv = [], [], []
        self._h: list[np.ndarray] = []
        self._cone_dims: list[int] = []
        self.g = 0

    def add_vars(self, name: str, shape, lb=-np.inf, ub=np.inf) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape).tolist()) if not isinstance(shape, tuple) else shape
        size = int(np.prod(shape)) if shape else 1
        if name in self.blocks:
            raise KeyError(f"variable block {name!r} already exists")
        idx = self.n + np.arange(size).reshape(shape)
        self.blocks[name] = (self.n, shape)
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), shape).ravel().copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), shape).ravel().copy())
        self.n += size
        return idx

    def add_cost(self, cols, vals) -> None:
        cols = np.atleast_1d(np.asarray(cols))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape).ravel()
        cols = cols.ravel()
        for c, v in zip(cols.tolist(), vals.tolist()):
            self._c[c] = self._c.get(c, 0.0) + v

    def add_rows(self, cols, vals, sense: str, rhs) -> np.ndarray:
        """Add R rows; ``cols``/``vals`` are (R, K) and ``rhs`` (R,)."""
        if sense not in SENSES:
            raise ValueError(sense)
        cols = np.atleast_2d(np.asarray(cols))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        R, K = cols.shape
        rows = self.m + np.repeat(np.arange(R), K)
        self._ar.append(rows)
        self._ac.append(cols.ravel())
        self._av.append(vals.ravel())
        self._senses.append(np.full(R, sense))
        self._rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (R,)).copy())
        self.m += R
        return self.m - R + np.arange(R)

    def add_row(self, cols, vals, sense: str, rhs: float) -> int:
        return int(self.add_rows(np.asarray(cols)[None, :], np.asarray(vals, dtype=float)[None, :], sense, [rhs])[0])

    def add_cones(self, cols, vals, const) -> None:
        """Add B cones of dimension D; ``cols``/``vals`` are (B, D, K), ``const`` (B, D).

        Row 0 of each block is the epigraph scalar.
        """
        cols = np.asarray(cols)
        vals = np.asarray(vals, dtype=float)
        if cols.ndim == 2:
            cols = cols[..., None]
            vals = vals[..., None] if vals.ndim == 2 else vals
        vals = np.broadcast_to(vals, cols.shape)
        B, D, K = cols.shape
        const = np.broadcast_to(np.asarray(const, dtype=float), (B, D))
        rows = self.g + np.repeat(np.arange(B * D), K)
        self._gr.append(rows)
        self._gc.append(cols.ravel())
        self._gv.append(vals.ravel())
        self._h.append(const.ravel().copy())
        self._cone_dims.extend([D] * B)
        self.g += B * D

    def build(self) -> StandardProblem:
        def mat(r, c, v, nrows):
            if not r:
                return sparse.csr_matrix((nrows, self.n))
            r, c, v = np.concatenate(r), np.concatenate(c), np.concatenate(v)
            keep = v != 0.0
            return sparse.coo_matrix((v[keep], (r[keep], c[keep])), shape=(nrows, self.n)).tocsr()

        c = np.zeros(self.n)
        for k, v in self._c.items():
            c[k] = v
        prob = StandardProblem(
            n=self.n,
            c=c,
            lb=np.concatenate(self._lb) if self._lb else np.zeros(0),
            ub=np.concatenate(self._ub) if self._ub else np.zeros(0),
            A=mat(self._ar, self._ac, self._av, self.m),
            senses=np.concatenate(self._senses) if self._senses else np.zeros(0, dtype="<U2"),
            rhs=np.concatenate(self._rhs) if self._rhs else np.zeros(0),
            G=mat(self._gr, self._gc, self._gv, self.g),
            h=np.concatenate(self._h) if self._h else np.zeros(0),
            cone_dims=list(self._cone_dims),
            c0=self.c0,
            blocks=dict(self.blocks),
        )
        prob.validate()
        return prob


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def _clarabel_data(prob: StandardProblem):
    eye = sparse.identity(prob.n, format="csr")
    eq = prob.senses == "=="
    le = prob.senses == "<="
    ge = prob.senses == ">="
    fixed = np.isfinite(prob.lb) & (prob.lb == prob.ub)
    has_lb = np.isfinite(prob.lb) & ~fixed
    has_ub = np.isfinite(prob.ub) & ~fixed
    blocks = [
        (prob.A[eq], prob.rhs[eq]),
        (eye[fixed], prob.lb[fixed]),
        (prob.A[le], prob.rhs[le]),
        (-prob.A[ge], -prob.rhs[ge]),
        (eye[has_ub], prob.ub[has_ub]),
        (-eye[has_lb], -prob.lb[has_lb]),
        (-prob.G, prob.h),
    ]
    A = sparse.vstack([b[0] for b in blocks], format="csc")
    b = np.concatenate([b[1] for b in blocks])
    n_zero = int(eq.sum() + fixed.sum())
    n_nonneg = int(le.sum() + ge.sum() + has_ub.sum() + has_lb.sum())
    cones = []
    if n_zero:
        cones.append(clarabel.ZeroConeT(n_zero))
    if n_nonneg:
        cones.append(clarabel.NonnegativeConeT(n_nonneg))
    cones.extend(clarabel.SecondOrderConeT(d) for d in prob.cone_dims)
    return A, b, cones


def solve(prob: StandardProblem, settings: SolverSettings | None = None) -> SolveResult:
    """Solve ``prob``; the returned status mirrors the solver's certificate."""
    settings = settings or SolverSettings()
    prob.validate()
    t0 = time.perf_counter()
    A, b, cones = _clarabel_data(prob)
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_threads = 1
    st.tol_gap_abs = settings.tol_gap
    st.tol_gap_rel = settings.tol_gap
    st.tol_feas = settings.tol_feas
    st.max_iter = settings.max_iter
    P = sparse.csc_matrix((prob.n, prob.n))
    sol = clarabel.DefaultSolver(P, prob.c, A, b, cones, st).solve()
    elapsed = time.perf_counter() - t0
    raw = str(sol.status)
    status = _STATUS.get(raw, "numerical-failure")
    if status != "optimal":
        detail = f"solver status {raw} after {sol.iterations} iterations"
        if status == "numerical-failure":
            detail += f" (primal residual {sol.r_prim:.2e}, dual residual {sol.r_dual:.2e})"
        return SolveResult(status, None, None, elapsed, sol.iterations, detail)
    x = np.asarray(sol.x, dtype=float)
    viol = prob.primal_violation(x)
    if viol > FEASIBILITY_CHECK:
        return SolveResult(
            "numerical-failure", None, None, elapsed, sol.iterations,
            f"solver reported {raw} but scaled primal violation is {viol:.2e}",
        )
    if raw != "Solved":
        logger.warning("solver finished with reduced accuracy (%s)", raw)
    return SolveResult("optimal", x, float(prob.c @ x + prob.c0), elapsed, sol.iterations, raw)


def _fmt(v: float) -> str:
    return repr(float(v))


def dump(prob: StandardProblem, fh) -> None:
    """Write ``prob`` in the plain-text standard-form format.

    Sections, each introduced by a keyword line with its entry count:
    VARS (index lb ub), OBJ (constant, then index coefficient), ROWS
    (index sense rhs), A (row col value), CONES (dimensions), G (row col
    value) and H (row value).  Floats use the shortest repr that parses
    back to the same double.
    """
    w = fh.write
    w("# pumpvs standard-form problem, format 1\n")
    w(f"VARS {prob.n}\n")
    for i in range(prob.n):
        w(f"{i} {_fmt(prob.lb[i])} {_fmt(prob.ub[i])}\n")
    nz = np.flatnonzero(prob.c)
    w(f"OBJ {len(nz)} {_fmt(prob.c0)}\n")
    for i in nz:
        w(f"{i} {_fmt(prob.c[i])}\n")
    w(f"ROWS {prob.n_rows}\n")
    for r in range(prob.n_rows):
        w(f"{r} {prob.senses[r]} {_fmt(prob.rhs[r])}\n")
    A = prob.A.tocoo()
    w(f"A {A.nnz}\n")
    for r, c, v in zip(A.row, A.col, A.data):
        w(f"{r} {c} {_fmt(v)}\n")
    w(f"CONES {len(prob.cone_dims)}\n")
    if prob.cone_dims:
        w(" ".join(str(d) for d in prob.cone_dims) + "\n")
    G = prob.G.tocoo()
    w(f"G {G.nnz}\n")
    for r, c, v in zip(G.row, G.col, G.data):
        w(f"{r} {c} {_fmt(v)}\n")
    nzh = np.flatnonzero(prob.h)
    w(f"H {len(nzh)}\n")
    for r in nzh:
        w(f"{r} {_fmt(prob.h[r])}\n")


def dumps(prob: StandardProblem) -> str:
    buf = io.StringIO()
    dump(prob, buf)
    return buf.getvalue()


def load(fh) -> StandardProblem:
    lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    it = iter(lines)

    def header(key):
        parts = next(it).split()
        if parts[0] != key:
            raise InvalidProblem(f"expected section {key}, found {parts[0]}")
        return parts[1:]

    n = int(header("VARS")[0])
    lb, ub = np.empty(n), np.empty(n)
    for _ in range(n):
        i, lo, hi = next(it).split()
        lb[int(i)], ub[int(i)] = float(lo), float(hi)
    k, c0 = header("OBJ")
    c = np.zeros(n)
    for _ in range(int(k)):
        i, v = next(it).split()
        c[int(i)] = float(v)
    m = int(header("ROWS")[0])
    senses = np.empty(m, dtype="<U2")
    rhs = np.empty(m)
    for _ in range(m):
        r, s, v = next(it).split()
        senses[int(r)], rhs[int(r)] = s, float(v)

    def triplets(key, nrows):
        cnt = int(header(key)[0])
        r = np.empty(cnt, dtype=int)
        cc = np.empty(cnt, dtype=int)
        v = np.empty(cnt)
        for j in range(cnt):
            a, b, x = next(it).split()
            r[j], cc[j], v[j] = int(a), int(b), float(x)
        return sparse.coo_matrix((v, (r, cc)), shape=(nrows, n)).tocsr()

    A = triplets("A", m)
    n_cones = int(header("CONES")[0])
    dims = [int(d) for d in next(it).split()] if n_cones else []
    G = triplets("G", sum(dims))
    h = np.zeros(sum(dims))
    for _ in range(int(header("H")[0])):
        r, v = next(it).split()
        h[int(r)] = float(v)
    prob = StandardProblem(n=n, c=c, lb=lb, ub=ub, A=A, senses=senses, rhs=rhs, G=G, h=h,
                           cone_dims=dims, c0=float(c0))
    prob.validate()
    return prob


def loads(text: str) -> StandardProblem:
    return load(io.StringIO(text))

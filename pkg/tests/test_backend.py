from __future__ import annotations

import io
import itertools
import math

import numpy as np
import pytest

from pumpvs.backend import InvalidProblem, ProblemBuilder, SolverSettings, dump, dumps, load, loads, solve


def test_single_bound():
    b = ProblemBuilder()
    x = b.add_vars("x", 1)
    b.add_cost(x, 1.0)
    b.add_row(x, [1.0], ">=", 3.0)
    r = solve(b.build())
    assert r.status == "optimal"
    assert r.x[0] == pytest.approx(3.0, abs=1e-7)
    assert r.objective == pytest.approx(3.0, abs=1e-7)


def test_contradiction_is_infeasible():
    b = ProblemBuilder()
    x = b.add_vars("x", 1)
    b.add_row(x, [1.0], "<=", 0.0)
    b.add_row(x, [1.0], ">=", 1.0)
    r = solve(b.build())
    assert r.status == "infeasible"
    assert r.x is None and r.objective is None


def test_unbounded():
    b = ProblemBuilder()
    x = b.add_vars("x", 1)
    b.add_cost(x, -1.0)
    b.add_row(x, [1.0], ">=", 0.0)
    assert solve(b.build()).status == "unbounded"


def test_fixed_vector_cone():
    b = ProblemBuilder()
    t = b.add_vars("t", 1)
    b.add_cost(t, 1.0)
    b.add_cones(np.full((1, 3, 1), t[0]), np.array([[[1.0], [0.0], [0.0]]]), np.array([[0.0, 1.0, 1.0]]))
    r = solve(b.build())
    assert r.status == "optimal"
    assert r.objective == pytest.approx(math.sqrt(2.0), abs=1e-7)


def test_cone_with_variables():
    # minimize t s.t. ||(x - 1, y - 2)|| <= t, x + y = 0  ->  t = 3/sqrt(2)
    b = ProblemBuilder()
    t, x, y = b.add_vars("t", 1), b.add_vars("x", 1), b.add_vars("y", 1)
    b.add_cost(t, 1.0)
    b.add_row([x[0], y[0]], [1.0, 1.0], "==", 0.0)
    cols = np.array([[[t[0]], [x[0]], [y[0]]]])
    b.add_cones(cols, np.ones((1, 3, 1)), np.array([[0.0, -1.0, -2.0]]))
    r = solve(b.build())
    assert r.objective == pytest.approx(3.0 / math.sqrt(2.0), abs=1e-7)


def _vertex_optimum(c, A, senses, rhs, lb, ub):
    """Minimum of c @ x over all basic feasible points."""
    n = len(c)
    G = [(row, s, r) for row, s, r in zip(A, senses, rhs)]
    for i in range(n):
        e = np.eye(n)[i]
        G += [(e, ">=", lb[i]), (e, "<=", ub[i])]
    best = None
    for act in itertools.combinations(range(len(G)), n):
        M = np.array([G[i][0] for i in act])
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, np.array([G[i][2] for i in act]))
        ok = all(
            (row @ x <= r + 1e-9) if s == "<=" else (row @ x >= r - 1e-9)
            for row, s, r in G
        )
        if ok:
            v = float(c @ x)
            best = v if best is None else min(best, v)
    return best


@pytest.mark.parametrize("seed", range(25))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    senses = rng.choice(["<=", ">="], size=m)
    rhs = rng.normal(size=m)
    lb, ub = -rng.uniform(1, 5, n), rng.uniform(1, 5, n)
    b = ProblemBuilder()
    x = b.add_vars("x", n, lb, ub)
    b.add_cost(x, c)
    for i in range(m):
        b.add_row(x, A[i], senses[i], rhs[i])
    r = solve(b.build())
    expect = _vertex_optimum(c, A, senses, rhs, lb, ub)
    if expect is None:
        assert r.status == "infeasible"
    else:
        assert r.status == "optimal"
        assert r.objective == pytest.approx(expect, abs=1e-6)


def _random_socp(seed):
    rng = np.random.default_rng(seed)
    b = ProblemBuilder()
    x = b.add_vars("x", 4, -3.0, 3.0)
    t = b.add_vars("t", 1)
    b.add_cost(np.concatenate([x, t]), np.concatenate([rng.normal(size=4), [1.0]]))
    b.add_rows(np.tile(x, (3, 1)), rng.normal(size=(3, 4)), "<=", rng.uniform(1, 2, 3))
    cols = np.concatenate([[t[0]], x])[:, None][None]
    b.add_cones(cols, np.ones_like(cols, dtype=float), np.concatenate([[0.0], rng.normal(size=4)])[None])
    return b.build()


def test_repeat_solves_agree():
    p = _random_socp(1)
    a, c = solve(p), solve(p)
    assert a.objective == pytest.approx(c.objective, rel=1e-8)
    assert a.x.tobytes() == c.x.tobytes()


def test_dump_round_trip():
    p = _random_socp(2)
    text = dumps(p)
    q = loads(text)
    assert dumps(q) == text
    assert solve(q).objective == solve(p).objective
    buf = io.StringIO()
    dump(p, buf)
    buf.seek(0)
    assert dumps(load(buf)) == text


def test_rejects_non_finite():
    b = ProblemBuilder()
    x = b.add_vars("x", 1)
    b.add_row(x, [np.nan], "<=", 1.0)
    with pytest.raises(InvalidProblem):
        solve(b.build())


def test_iteration_cap_is_reported():
    p = _random_socp(3)
    r = solve(p, SolverSettings(max_iter=1))
    assert r.status == "numerical-failure"
    assert "iterations" in r.detail


def test_named_blocks():
    b = ProblemBuilder()
    b.add_vars("a", (2, 3))
    v = b.add_vars("b", 4)
    p = b.build()
    np.testing.assert_array_equal(p.var("b"), v)
    assert p.var("a").shape == (2, 3)

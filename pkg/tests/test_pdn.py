from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpvs.pdn import (
    CycleDetected,
    DimensionMismatch,
    DisconnectedBus,
    Line,
    MissingDemand,
    NetworkError,
    PdnNetwork,
    PumpAttachment,
    build_voltage_map,
    evaluate_voltages,
    validate_radial,
)

from conftest import brute_force_voltages, random_radial_pdn

ABC = (True, True, True)
A_ONLY = (True, False, False)


def two_bus(m=0.05, n=0.02, rho=0.1, zeta=0.0, y_sub=1.0, pump_eta=None):
    M = np.diag([m, 0.0, 0.0]) if pump_eta is None else m * np.eye(3)
    N = np.diag([n, 0.0, 0.0]) if pump_eta is None else n * np.eye(3)
    pumps = () if pump_eta is None else (PumpAttachment("P", "1", pump_eta),)
    return PdnNetwork(
        buses=("s", "1"),
        substation="s",
        phases={"s": ABC, "1": ABC if pump_eta is not None else A_ONLY},
        lines=(Line("s", "1", M, N),),
        p_demand=np.array([[[0, 0, 0], [rho, 0, 0]]], dtype=float),
        q_demand=np.array([[[0, 0, 0], [zeta, 0, 0]]], dtype=float),
        substation_y=np.full(3, y_sub),
        pumps=pumps,
    )


def chain(buses, edges, T=1):
    nb = len(buses)
    return PdnNetwork(
        buses=tuple(buses),
        substation=buses[0],
        phases={b: ABC for b in buses},
        lines=tuple(Line(a, b, 0.01 * np.eye(3), np.zeros((3, 3))) for a, b in edges),
        p_demand=np.full((T, nb, 3), 0.1),
        q_demand=np.zeros((T, nb, 3)),
        substation_y=np.ones(3),
    )


def point(vm, bus, ph):
    return vm.points.index((bus, ph))


# ---------------------------------------------------------------- radiality


def test_chain_is_radial():
    validate_radial(chain(["s", "1", "2"], [("s", "1"), ("1", "2")]))


def test_triangle_reports_cycle():
    with pytest.raises(CycleDetected) as err:
        validate_radial(chain(["s", "1", "2"], [("s", "1"), ("1", "2"), ("2", "s")]))
    assert len(err.value.edges) == 3


def test_unreachable_buses_are_listed():
    with pytest.raises(DisconnectedBus) as err:
        validate_radial(chain(["s", "1", "2", "3"], [("s", "1")]))
    assert set(err.value.buses) == {"2", "3"}


def test_non_radial_map_refused():
    with pytest.raises(NetworkError):
        build_voltage_map(chain(["s", "1", "2"], [("s", "1"), ("1", "2"), ("2", "s")]))


def test_bad_demand_shape():
    net = chain(["s", "1"], [("s", "1")])
    bad = PdnNetwork(**{**net.__dict__, "p_demand": np.zeros((1, 3, 3))})
    with pytest.raises(MissingDemand):
        build_voltage_map(bad)


def test_pump_on_partial_bus_rejected():
    with pytest.raises(NetworkError):
        PdnNetwork(
            buses=("s", "1"),
            substation="s",
            phases={"s": ABC, "1": A_ONLY},
            lines=(Line("s", "1", np.eye(3), np.eye(3)),),
            p_demand=np.zeros((1, 2, 3)),
            q_demand=np.zeros((1, 2, 3)),
            substation_y=np.ones(3),
            pumps=(PumpAttachment("P", "1", 0.1),),
        )


# ---------------------------------------------------------------- closed forms


def test_zero_demand_is_flat():
    net = chain(["s", "1", "2", "3"], [("s", "1"), ("1", "2"), ("2", "3")], T=3)
    net = PdnNetwork(**{**net.__dict__, "p_demand": np.zeros((3, 4, 3)), "substation_y": np.array([1.1, 1.0, 0.9])})
    vm = build_voltage_map(net)
    expect = np.array([[1.1, 1.0, 0.9][ph] for _, ph in vm.points])
    np.testing.assert_array_equal(vm.y0, np.tile(expect, (3, 1)))


def test_two_bus_hand_substitution():
    m, n, rho, zeta = 0.05, 0.02, 0.1, 0.07
    vm = build_voltage_map(two_bus(m, n, rho, zeta, y_sub=1.0))
    assert vm.y0[0, point(vm, "1", 0)] == pytest.approx(1.0 - m * rho - n * zeta, abs=1e-15)


def test_two_bus_numeric_value():
    vm = build_voltage_map(two_bus(m=0.05, n=0.0, rho=0.1, zeta=0.0, y_sub=1.0))
    assert vm.y0[0, point(vm, "1", 0)] == pytest.approx(0.995, abs=1e-15)


@pytest.mark.parametrize("m,n,eta", [(0.05, 0.02, 0.3), (0.1, 0.0, 0.5), (0.02, 0.04, 0.0)])
def test_pump_coefficient(m, n, eta):
    vm = build_voltage_map(two_bus(m, n, pump_eta=eta))
    for ph in range(3):
        assert vm.pump_sens[point(vm, "1", ph), 0] == pytest.approx(-(m + n * eta), abs=1e-15)


def test_substation_row_is_constant():
    rng = np.random.default_rng(3)
    net = random_radial_pdn(rng, 5, T=2, n_pumps=2)
    vm = build_voltage_map(net)
    sub = ~vm.non_substation_mask()
    assert np.all(vm.pump_sens[sub] == 0) and np.all(vm.error_sens[sub] == 0)
    Y = evaluate_voltages(vm, rng.normal(size=(2, 2)), rng.normal(size=(2, len(vm.load_points))))
    np.testing.assert_array_equal(Y[:, sub], vm.y0[:, sub])


def test_load_points_skip_absent_and_zero():
    vm = build_voltage_map(two_bus())
    assert vm.load_points == (("1", 0),)
    assert ("1", 1) not in vm.points


# ---------------------------------------------------------------- oracle


def _compare_to_oracle(net, rng, n_points=100):
    vm = build_voltage_map(net)
    T, E, nt = net.horizon, len(net.pumps), len(vm.load_points)
    rows = [(net.bus_index[b], ph) for b, ph in vm.points]
    worst = 0.0
    for _ in range(n_points):
        p = rng.uniform(0.0, 0.5, (T, E))
        dr = rng.normal(0.0, 0.05, (T, nt))
        mine = evaluate_voltages(vm, p, dr)
        ref = brute_force_voltages(net, p, dr)
        ref = np.stack([[ref[t, i, ph] for i, ph in rows] for t in range(T)])
        worst = max(worst, float(np.abs(mine - ref).max()))
    return worst


@pytest.mark.parametrize("seed", range(10))
def test_matches_recursive_oracle(seed):
    rng = np.random.default_rng(seed)
    net = random_radial_pdn(rng, int(rng.integers(2, 7)), T=2, n_pumps=int(rng.integers(0, 3)))
    assert _compare_to_oracle(net, rng) < 1e-10


def test_periods_decouple():
    rng = np.random.default_rng(11)
    net = random_radial_pdn(rng, 6, T=3, n_pumps=1)
    vm = build_voltage_map(net)
    nt = len(vm.load_points)
    base = evaluate_voltages(vm, np.zeros((3, 1)), np.zeros((3, nt)))
    dr = np.zeros((3, nt))
    dr[1] = rng.normal(size=nt)
    pert = evaluate_voltages(vm, np.zeros((3, 1)), dr)
    np.testing.assert_array_equal(pert[[0, 2]], base[[0, 2]])
    E = vm.error_matrix().toarray()
    for t in range(3):
        for s in range(3):
            if s != t:
                block = E[t * vm.n_points:(t + 1) * vm.n_points, s * nt:(s + 1) * nt]
                assert np.all(block == 0.0)


def test_dimension_mismatch():
    vm = build_voltage_map(two_bus(pump_eta=0.2))
    with pytest.raises(DimensionMismatch):
        evaluate_voltages(vm, np.zeros((1, 2)), np.zeros((1, 1)))
    with pytest.raises(DimensionMismatch):
        evaluate_voltages(vm, np.zeros((1, 1)), np.zeros((1, 4)))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    a=st.floats(-2, 2),
    b=st.floats(-2, 2),
)
def test_affine_superposition(seed, a, b):
    rng = np.random.default_rng(seed)
    net = random_radial_pdn(rng, int(rng.integers(2, 7)), T=2, n_pumps=2)
    vm = build_voltage_map(net)
    nt = len(vm.load_points)
    p1, p2 = rng.normal(size=(2, 2, 2))
    d1, d2 = rng.normal(size=(2, 2, nt))
    y0 = evaluate_voltages(vm, np.zeros((2, 2)), np.zeros((2, nt)))
    lhs = evaluate_voltages(vm, a * p1 + b * p2, a * d1 + b * d2) - y0
    rhs = a * (evaluate_voltages(vm, p1, d1) - y0) + b * (evaluate_voltages(vm, p2, d2) - y0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_zero_inputs_give_y0():
    rng = np.random.default_rng(5)
    net = random_radial_pdn(rng, 4, T=2)
    vm = build_voltage_map(net)
    np.testing.assert_array_equal(evaluate_voltages(vm, np.zeros((2, 1)), np.zeros((2, len(vm.load_points)))), vm.y0)

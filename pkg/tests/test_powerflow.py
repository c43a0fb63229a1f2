import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmtd.casefile import Branch, Bus, LoadProfile, build_case, load_case
from gridmtd.mtd import switch_line
from gridmtd.powerflow import (
    NonConvergence,
    ac_flow,
    ac_jacobian,
    ac_measurement_function,
    ac_meters,
    branch_flows,
    build_h_dc,
    dc_flow,
    dc_meters,
    measure,
    noise_scales,
    sample_loads,
)

FIXTURES = Path(__file__).parent / "fixtures"


def read_fixture(name):
    with open(FIXTURES / name) as fh:
        return {row["meter"]: float(row["value"]) for row in csv.DictReader(fh)}


@pytest.fixture(scope="module")
def case14():
    return load_case("case14")


def two_bus(x=0.1, load=1.0):
    buses = [Bus(1, "slack", 0.0, 0.0, 1.0), Bus(2, "load", load, 0.0, 1.0)]
    return build_case(100.0, buses, [Branch(1, 2, 0.0, x)])


def full_angles(case, state):
    va = np.zeros(case.n_bus)
    va[[i for i in range(case.n_bus) if i != case.slack_position]] = state.angles
    return va


# ------------------------------------------------------------ loads and noise


def test_sample_loads_zero_variation_is_exact(case14):
    base = case14.load_profile()
    out = sample_loads(base, 0.0, np.random.default_rng(0))
    assert np.array_equal(out.p, base.p) and np.array_equal(out.q, base.q)


@pytest.mark.parametrize("variation", [0.001, 0.10])
def test_sample_loads_factor_spread(variation):
    base = LoadProfile(np.ones(3), np.ones(3))
    rng = np.random.default_rng(5)
    factors = np.array([sample_loads(base, variation, rng).p for _ in range(10_000)])
    assert np.all(np.abs(factors.std(axis=0, ddof=1) / variation - 1) < 0.10)


def test_sample_loads_clamps_negative(caplog):
    base = LoadProfile(np.ones(200), np.ones(200))
    out = sample_loads(base, 2.0, np.random.default_rng(1))
    assert np.all(out.p >= 0)
    assert "clamped" in caplog.text


def test_measure_zero_noise_and_determinism(case14):
    _, truth = dc_flow(case14, case14.load_profile())
    assert np.array_equal(measure(truth, 0.0, np.random.default_rng(0)).values, truth.values)
    a = measure(truth, 0.01, np.random.default_rng(9)).values
    b = measure(truth, 0.01, np.random.default_rng(9)).values
    assert np.array_equal(a, b)


def test_measure_noise_scale(case14):
    _, truth = dc_flow(case14, case14.load_profile())
    rng = np.random.default_rng(3)
    draws = np.array([measure(truth, 0.01, rng).values[0] for _ in range(100_000)])
    expected = 0.01 * abs(truth.values[0])
    assert abs(draws.std() / expected - 1) < 0.05


def test_noise_floor_applies_to_idle_meters():
    sig = noise_scales(np.array([0.0, 0.005, -2.0]), 0.01)
    assert np.allclose(sig, [1e-4, 1e-4, 0.02])


# ------------------------------------------------------------ DC model


def test_two_bus_h_and_flow():
    case = two_bus()
    h = build_h_dc(case)
    assert abs(h.entries[0, 0]) == pytest.approx(10.0)
    state, z = dc_flow(case, case.load_profile())
    assert state.angles[0] == pytest.approx(-0.1)
    assert z.values[0] == pytest.approx(1.0)


def test_case14_dc_dimensions(case14):
    h = build_h_dc(case14)
    assert h.shape == (34, 13)
    assert len(dc_meters(case14)) == 34
    assert np.linalg.matrix_rank(h.entries) == 13


def test_switching_zeroes_flow_row_and_restamps(case14):
    line = case14.branch_index(1, 2)
    open_case = switch_line(case14, line, False)
    h0, h1 = build_h_dc(case14).entries, build_h_dc(open_case).entries
    assert np.all(h1[line] == 0)
    bus1, bus2 = 20 + 0, 20 + 1
    b = 1 / case14.branches[line].reactance_x
    # Bus 2 (state column 0) loses the line's stamp in both injection rows.
    assert h0[bus2, 0] - h1[bus2, 0] == pytest.approx(b)
    assert h0[bus1, 0] - h1[bus1, 0] == pytest.approx(-b)


def test_zero_loads_give_zero_dc_solution(case14):
    zero = LoadProfile(np.zeros(14), np.zeros(14))
    flat = build_case(
        case14.base_power, [b.__class__(b.id, b.kind, 0, 0, b.v_setpoint, 0.0) for b in case14.buses], case14.branches
    )
    state, z = dc_flow(flat, zero)
    assert np.all(state.angles == 0) and np.all(z.values == 0)


def test_dc_matches_oracle_fixture(case14):
    oracle = read_fixture("case14_dc_oracle.csv")
    state, z = dc_flow(case14, case14.load_profile())
    flows = np.array([oracle[f"p_flow:{k}"] for k in range(20)])
    assert np.max(np.abs(z.values[:20] - flows)) < 1e-8
    va = np.degrees(full_angles(case14, state))
    assert np.max(np.abs(va - [oracle[f"va:{i}"] for i in range(14)])) < 1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), variation=st.sampled_from([0.001, 0.05, 0.2]))
def test_dc_consistency_and_energy_balance(case14, seed, variation):
    loads = sample_loads(case14.load_profile(), variation, np.random.default_rng(seed))
    state, z = dc_flow(case14, loads)
    h = build_h_dc(case14).entries
    assert np.linalg.norm(z.values - h @ state.angles) <= 1e-10
    assert abs(z.values[20:].sum()) < 1e-8


# ------------------------------------------------------------ AC model


def test_identical_endpoints_carry_no_real_flow():
    case = two_bus()
    pf, qf, pt, qt = branch_flows(case, np.ones(2), np.zeros(2))
    assert pf[0] == 0.0 and pt[0] == 0.0


def test_ac_matches_oracle_within_ten_iterations(case14):
    oracle = read_fixture("case14_ac_oracle.csv")
    state, z = ac_flow(case14, case14.load_profile(), max_iter=10)
    nb = case14.n_branch
    p = np.array([oracle[f"p_flow:{k}"] for k in range(nb)])
    q = np.array([oracle[f"q_flow:{k}"] for k in range(nb)])
    vm = np.array([oracle[f"vm:{i}"] for i in range(14)])
    va = np.radians([oracle[f"va:{i}"] for i in range(14)])
    assert np.max(np.abs(z.values[:nb] - p)) < 1e-6
    assert np.max(np.abs(z.values[nb : 2 * nb] - q)) < 1e-6
    assert np.max(np.abs(state.magnitudes - vm)) < 1e-6
    assert np.max(np.abs(full_angles(case14, state) - va)) < 1e-6


def test_ac_consistency_bit_for_bit(case14):
    state, z = ac_flow(case14, case14.load_profile())
    again = ac_measurement_function(case14, state.magnitudes, full_angles(case14, state))
    assert np.array_equal(again, z.values)
    assert len(ac_meters(case14)) == z.values.size == 82


def test_ac_energy_balance_equals_losses(case14):
    state, z = ac_flow(case14, case14.load_profile())
    vm, va = state.magnitudes, full_angles(case14, state)
    pf, _, pt, _ = branch_flows(case14, vm, va)
    losses = float(np.sum(pf + pt))
    assert abs(z.values[40:54].sum() - losses) < 1e-8


def test_no_load_flat_setpoints_give_shunt_only_flows(case14):
    buses = [b.__class__(b.id, b.kind, 0.0, 0.0, 1.0, 0.0) for b in case14.buses]
    case = build_case(case14.base_power, buses, case14.branches)
    state, z = ac_flow(case, LoadProfile(np.zeros(14), np.zeros(14)))
    nb = case.n_branch
    assert np.max(np.abs(z.values[:nb])) < 1e-3
    total_charging = sum(br.shunt_b for br in case.branches)
    assert np.max(np.abs(z.values[nb : 2 * nb])) <= total_charging
    assert np.max(np.abs(state.magnitudes - 1.0)) < 0.01


def test_ac_jacobian_matches_finite_differences(case14):
    rng = np.random.default_rng(4)
    vm = 1 + rng.normal(0, 0.02, 14)
    va = rng.normal(0, 0.1, 14)
    jac = ac_jacobian(case14, vm, va)
    x = np.concatenate([va, vm])
    step = 1e-7
    numeric = np.empty_like(jac)
    for k in range(28):
        up, dn = x.copy(), x.copy()
        up[k] += step
        dn[k] -= step
        numeric[:, k] = (
            ac_measurement_function(case14, up[14:], up[:14]) - ac_measurement_function(case14, dn[14:], dn[:14])
        ) / (2 * step)
    assert np.max(np.abs(jac - numeric)) < 1e-6


def test_nonconvergence_raises_on_impossible_load(case14):
    heavy = LoadProfile(case14.load_profile().p * 40, case14.load_profile().q * 40)
    with pytest.raises(NonConvergence):
        ac_flow(case14, heavy)


def test_ac_determinism(case14):
    loads = sample_loads(case14.load_profile(), 0.01, np.random.default_rng(2))
    assert np.array_equal(ac_flow(case14, loads)[1].values, ac_flow(case14, loads)[1].values)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evmpc.errors import InvalidParameterError, SolverError
from evmpc.lp import LpSolution, LpStatus, solve
from evmpc.model import ConnectedState, PriceRecord, VirtualEv
from evmpc.stochastic import (MpcParams, Scenario, build_mpc_problem, energy_targets,
                              extract_decision, generate_scenarios)
from oracles import deterministic_mpc

H = 4
LAM = [28.0, 24.0, 35.0, 41.0]
MU = [9.0, 11.0, 6.0, 14.0]


def forecast(lam=LAM, mu_rc=MU, h=H):
    return [PriceRecord(t, lam[t], mu_rc[t], 0.0, 0.0) for t in range(h)]


def frozen_state():
    return ConnectedState(("a", "b", "c"), [6.0, 9.5, 3.0], [4.0, 6.0, 3.3], [2, 5, 3])


UPCOMING = [VirtualEv(1, 6, 4, 7.0, 5.0, ("f",))]


def one_scenario(**kw):
    return generate_scenarios(forecast(), UPCOMING, 0, 0, 1, seed=0, **kw)


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        MpcParams(horizon=1)
    with pytest.raises(InvalidParameterError):
        MpcParams(alpha=1.0)
    with pytest.raises(InvalidParameterError):
        MpcParams(phi_prime=0)
    assert MpcParams(alpha=0.2).alpha_prime == pytest.approx(1.25)


def test_zero_noise_scenarios_equal_forecast():
    scs = generate_scenarios(forecast(), UPCOMING, 0, 0, 7, seed=3)
    for sc in scs:
        assert sc.probability == pytest.approx(1 / 7)
        assert sc.lam.tolist() == LAM and sc.mu.tolist() == MU
        assert sc.ev_delta_e.tolist() == [7.0] and sc.ev_p_max.tolist() == [5.0]
        assert sc.ev_steps.tolist() == [5]


def test_single_scenario_probability():
    (sc,) = generate_scenarios(forecast(), UPCOMING, 3, 5, 1, seed=1)
    assert sc.probability == 1.0


def test_price_noise_mean_is_unbiased():
    prices = [PriceRecord(t, 50.0, 20.0, 0.0) for t in range(3)]
    scs = generate_scenarios(prices, [], 3, 0, 10_000, seed=11)
    lam = np.array([sc.lam for sc in scs])
    assert np.all(np.abs(lam.mean(axis=0) - 50.0) <= 3 * 3 / np.sqrt(10_000))


def test_scenarios_are_seeded():
    a = generate_scenarios(forecast(), UPCOMING, 3, 5, 4, seed=np.random.SeedSequence([1, 2]))
    b = generate_scenarios(forecast(), UPCOMING, 3, 5, 4, seed=np.random.SeedSequence([1, 2]))
    assert all(np.array_equal(x.lam, y.lam) and np.array_equal(x.ev_p_max, y.ev_p_max)
               for x, y in zip(a, b))


def test_mu_includes_mileage():
    prices = [PriceRecord(0, 30.0, 5.0, 0.5, 20.0), PriceRecord(1, 30.0, 5.0, 0.5, 20.0)]
    (sc,) = generate_scenarios(prices, [], 0, 0, 1, seed=0)
    assert sc.mu.tolist() == [15.0, 15.0]


def test_energy_targets():
    # share of 12 kWh over 6 h with H = 3 is 6; nothing forces more
    t, cap = energy_targets(np.array([12.0]), np.array([4.0]), np.array([6]), 3, 4)
    assert t.tolist() == [6.0] and not cap[0]
    # 20 kWh with only 2 h left after the window: at least 20 - 2 * 4 = 12
    t, _ = energy_targets(np.array([20.0]), np.array([4.0]), np.array([6]), 3, 4)
    assert t.tolist() == [12.0]
    # unreachable request is capped and flagged
    t, cap = energy_targets(np.array([20.0]), np.array([4.0]), np.array([2]), 3, 4)
    assert t.tolist() == [8.0] and cap[0]


def test_variable_count_121():
    state = ConnectedState(("a", "b"), [5.0, 8.0], [4.0, 4.0], [7, 7])
    fc = [PriceRecord(t, 30.0, 10.0, 0.0) for t in range(6)]
    scs = generate_scenarios(fc, [VirtualEv(1, 8, 3, 6.0, 4.0)], 3, 5, 3, seed=0)
    prob, idx = build_mpc_problem(state, scs, 2.0, 30.0, MpcParams(horizon=6, n_scenarios=3))
    assert prob.n_vars == 6 + 3 * 37 + 3 + 1 == 121
    dec = extract_decision(solve(prob), idx)
    assert (dec.pop_now.size, dec.reg_now.size, np.size(dec.slack_now),
            np.size(dec.bid_next)) == (2, 2, 1, 1)


@pytest.mark.parametrize("cleared", [0.0, 2.5, 20.0])
def test_single_scenario_matches_deterministic_oracle(cleared):
    state = frozen_state()
    params = MpcParams(horizon=H, n_scenarios=1)
    prob, idx = build_mpc_problem(state, one_scenario(), cleared, 31.0, params)
    sol = solve(prob)
    ref = deterministic_mpc(state.remaining_energy, state.power_cap, state.remaining_steps,
                            cleared, 31.0, LAM, MU, [7.0], [5.0], [5])
    assert sol.objective == pytest.approx(ref, abs=1e-6)


def test_single_scenario_alpha_near_zero_and_huge_penalty():
    state = frozen_state()
    params = MpcParams(horizon=H, n_scenarios=1, alpha=1e-9, phi_prime=1e6)
    prob, _ = build_mpc_problem(state, one_scenario(), 1.0, 31.0, params)
    ref = deterministic_mpc(state.remaining_energy, state.power_cap, state.remaining_steps,
                            1.0, 31.0, LAM, MU, [7.0], [5.0], [5], phi_prime=1e6)
    assert solve(prob).objective == pytest.approx(ref, abs=1e-6)


def test_rho_matches_oracle():
    state = frozen_state()
    params = MpcParams(horizon=H, n_scenarios=1, rho=2.0)
    prob, _ = build_mpc_problem(state, one_scenario(), 1.0, 31.0, params)
    ref = deterministic_mpc(state.remaining_energy, state.power_cap, state.remaining_steps,
                            1.0, 31.0, LAM, MU, [7.0], [5.0], [5], rho=2.0)
    assert solve(prob).objective == pytest.approx(ref, abs=1e-6)


def test_no_regulation_incentive():
    state = frozen_state()
    fc = forecast(mu_rc=[0.0] * H)
    scs = generate_scenarios(fc, [], 0, 0, 1, seed=0)
    prob, idx = build_mpc_problem(state, scs, 0.0, 31.0, MpcParams(horizon=H, n_scenarios=1))
    dec = extract_decision(solve(prob), idx)
    assert np.all(dec.reg_now == 0) and dec.bid_next == 0 and dec.slack_now == 0
    # pure energy cost: EV "a" (2 h left) must take 6 kWh in {K, K+1} at 31 vs 28;
    # it fills K+1 (28) to 4 kW and puts the rest at K
    assert dec.pop_now[0] == pytest.approx(2.0)


def test_cleared_capacity_is_delivered_or_slack():
    state = frozen_state()
    params = MpcParams(horizon=H, n_scenarios=5)
    scs = generate_scenarios(forecast(), UPCOMING, 3, 5, 5, seed=4)
    prob, idx = build_mpc_problem(state, scs, 4.0, 31.0, params)
    dec = extract_decision(solve(prob), idx)
    assert dec.reg_now.sum() + dec.slack_now >= 4.0 - 1e-7
    assert np.all(dec.reg_now <= dec.pop_now + 1e-9)
    assert np.all(dec.pop_now + dec.reg_now <= state.power_cap + 1e-9)
    assert len(dec.second_stage) == 5


def test_objective_non_decreasing_in_alpha():
    state = frozen_state()
    scs = generate_scenarios(forecast(), UPCOMING, 6, 20, 12, seed=8)
    vals = []
    for a in (0.05, 0.2, 0.5, 0.8, 0.95):
        prob, _ = build_mpc_problem(state, scs, 2.0, 31.0, MpcParams(horizon=H, alpha=a))
        vals.append(solve(prob).objective)
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_builder_always_feasible_and_bounded(seed, n):
    rng = np.random.default_rng(seed)
    na = int(rng.integers(0, 5))
    state = ConnectedState(tuple(f"e{i}" for i in range(na)), rng.uniform(0, 30, na),
                           rng.uniform(1, 8, na), rng.integers(1, 9, na))
    ups = [VirtualEv(1, 1 + int(rng.integers(1, 8)), 2, float(rng.uniform(0, 20)),
                     float(rng.uniform(1, 8)))]
    scs = generate_scenarios(forecast(), ups, 3, 5, n, seed=seed)
    prob, idx = build_mpc_problem(state, scs, float(rng.uniform(0, 10)), 30.0,
                                  MpcParams(horizon=H, n_scenarios=n))
    sol = solve(prob)
    assert sol.ok
    dec = extract_decision(sol, idx)
    assert np.all(dec.pop_now >= 0) and np.all(dec.reg_now >= 0) and dec.bid_next >= 0


def test_extract_rejects_failed_solve():
    prob, idx = build_mpc_problem(frozen_state(), one_scenario(), 0.0, 31.0,
                                  MpcParams(horizon=H, n_scenarios=1))
    with pytest.raises(SolverError):
        extract_decision(LpSolution(LpStatus.INFEASIBLE, None, None), idx)


def test_builder_input_checks():
    sc = Scenario(1.0, LAM[:3], MU[:3])
    with pytest.raises(InvalidParameterError):
        build_mpc_problem(frozen_state(), [sc], 0.0, 31.0, MpcParams(horizon=H))
    with pytest.raises(InvalidParameterError):
        build_mpc_problem(frozen_state(), [], 0.0, 31.0, MpcParams(horizon=H))

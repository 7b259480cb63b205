import math

import pytest

from genvc.rate_control import ControllerState, simulate_plant, target_at, update


def test_on_target_measurement_leaves_state_unchanged():
    state = ControllerState(target_bpp=0.05, total_steps=10, step=5)  # past warmup
    before = state.log2_lambda
    update(state, 0.05)
    assert state.log2_lambda == pytest.approx(before, abs=1e-12)


def test_update_value_direct_substitution():
    # log2-ratio error: 1e-3 * log2(0.10/0.05) = 1e-3
    state = ControllerState(log2_lambda=1.0, gain=1e-3, target_bpp=0.05,
                            total_steps=10, step=9)
    update(state, 0.10)
    assert state.log2_lambda == pytest.approx(1.001, abs=1e-9)


def test_below_target_decreases_lambda():
    state = ControllerState(target_bpp=0.05, total_steps=10, step=9)
    update(state, 0.01)
    assert state.log2_lambda < 1.0


def test_above_target_increases_lambda():
    state = ControllerState(target_bpp=0.05, total_steps=10, step=9)
    update(state, 0.2)
    assert state.log2_lambda > 1.0


def test_negative_bpp_rejected():
    with pytest.raises(ValueError):
        update(ControllerState(), -0.01)


def test_lambda_stays_positive_under_extreme_errors():
    state = ControllerState(target_bpp=0.05, total_steps=100, step=99)
    for _ in range(1000):
        state.step = 99
        update(state, 0.0)
    assert state.lambda_rate > 0


def test_warmup_target_schedule():
    state = ControllerState(target_bpp=0.05)
    assert target_at(0, 1000, state) == pytest.approx(0.55)
    assert target_at(199, 1000, state) == pytest.approx(0.55)
    assert target_at(200, 1000, state) == pytest.approx(0.05)
    assert target_at(1000, 1000, state) == pytest.approx(0.05)


def test_plant_already_at_target_static_trajectory():
    state = ControllerState(target_bpp=0.05, warmup_bonus=0.0)
    trajectory = simulate_plant(lambda lam: 0.05, 500, state)
    lambdas = [lam for lam, _ in trajectory]
    assert max(lambdas) - min(lambdas) <= 1e-9


@pytest.mark.parametrize("c", [0.1, 0.2, 0.4])
@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.8])
def test_power_law_plant_family_converges(c, gamma):
    state = ControllerState(target_bpp=0.05, gain=1e-3)
    trajectory = simulate_plant(lambda lam: c * lam**-gamma, 20_000, state)
    final_bpp = trajectory[-1][1]
    assert abs(final_bpp - 0.05) / 0.05 <= 0.05


def test_plants_with_different_constants_reach_same_target():
    finals = []
    for c in (0.1, 0.4):
        state = ControllerState(target_bpp=0.05, gain=1e-3)
        finals.append(simulate_plant(lambda lam: c * lam**-0.5, 20_000, state)[-1][1])
    assert finals[0] == pytest.approx(finals[1], rel=0.02)


def test_warmup_phase_tracks_raised_target():
    # Fig-6 shape: bpp sits high early, then drops when the bonus expires
    state = ControllerState(target_bpp=0.05, gain=5e-3)
    trajectory = simulate_plant(lambda lam: 0.2 * lam**-0.8, 20_000, state)
    early = trajectory[3999][1]
    late = trajectory[-1][1]
    assert early > 0.3
    assert late == pytest.approx(0.05, rel=0.05)


def test_state_round_trips_through_dict():
    state = ControllerState(log2_lambda=2.5, target_bpp=0.4, step=7, total_steps=50)
    back = ControllerState.from_dict(state.to_dict())
    assert back == state

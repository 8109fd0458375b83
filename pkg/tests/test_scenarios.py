"""Boundary-tracking scenario tests.

Oracle facts, computed independently of the builder:

* The target path starts at 1.08, descends to 1 + clearance over
  [0.2, 0.75], holds through the actuator breakpoint, then climbs to the
  finish level by 1.85. With clearance 5e-4 the graze level is 1.0005.
* The untightened margin of a state x > 1 for h(x) = 1 - |x| is x - 1, so
  the reference's worst margin must sit between 0.4 * clearance (builder
  gate) and clearance plus the feedback overshoot allowance.
* Feedback inversion is capped at |u| <= 0.45, well inside both motors'
  certified control bound of 1 and the saturating motor's validity range
  |u| < tan(1) ~ 1.557.
"""

import numpy as np
import pytest

from tightpath import (
    ConfigError,
    DomainError,
    IntegratorConfig,
    boundary_tracking_reference,
    integrate,
    motor_scenario,
    scenario_from_config,
    unit_ball_complement,
)


@pytest.fixture(params=["surge", "decline"])
def scenario(request, surge_scenario, decline_scenario):
    return surge_scenario if request.param == "surge" else decline_scenario


def test_reference_shares_the_grid(scenario):
    assert np.array_equal(scenario.grid.nodes, scenario.xbar.grid.nodes)
    assert np.array_equal(scenario.grid.nodes, scenario.ubar.grid.nodes)
    assert scenario.grid.nodes.size == 2001


def test_reference_hugs_the_boundary(scenario):
    margins = scenario.field.margin(0.0, scenario.xbar.states, 0.0)
    worst = float(np.min(margins))
    assert 0.4 * scenario.clearance <= worst <= 2.0 * scenario.clearance
    # The graze segment straddles the actuator breakpoint at t = 1.
    nodes = scenario.grid.nodes
    graze = (nodes >= 0.8) & (nodes <= 1.25)
    assert float(np.max(margins[graze])) < 5.0 * scenario.clearance


def test_reference_endpoints(scenario):
    assert scenario.xbar.states[0, 0] == pytest.approx(1.08)
    assert scenario.xbar.states[-1, 0] == pytest.approx(1.06, abs=5e-3)


def test_control_stays_capped(scenario):
    assert float(np.max(np.abs(scenario.ubar.values))) <= 0.45


def test_reference_reintegrates_bitwise(scenario):
    cfg = IntegratorConfig(step=scenario.grid.step)
    redo = integrate(
        scenario.model,
        scenario.ubar,
        scenario.x0,
        (float(scenario.grid.t0), float(scenario.grid.t1)),
        cfg,
    )
    assert np.array_equal(redo.states, scenario.xbar.states)


def test_config_round_trip(scenario):
    rebuilt = scenario_from_config(scenario.config)
    assert np.array_equal(rebuilt.xbar.states, scenario.xbar.states)
    assert np.array_equal(rebuilt.ubar.values, scenario.ubar.values)


def test_config_rejects_mismatched_model(surge_scenario):
    config = dict(surge_scenario.config)
    config["model"] = "motor_decline"
    with pytest.raises(ConfigError):
        scenario_from_config(config)


def test_config_rejects_unknown_variant():
    with pytest.raises(ConfigError):
        scenario_from_config({"reference": {"variant": "coast"}})


def test_unknown_variant_rejected():
    with pytest.raises(DomainError):
        motor_scenario("coast")


def test_negative_clearance_rejected():
    with pytest.raises(DomainError):
        motor_scenario("surge", clearance=-1e-3)


def test_infeasible_target_rejected(surge_scenario):
    # A finish level inside the unit ball forces the tracker through the
    # constraint; the builder must refuse rather than hand back an
    # infeasible reference.
    field = unit_ball_complement(dim=1, box_radius=2.0)
    with pytest.raises(DomainError):
        boundary_tracking_reference(
            surge_scenario.model,
            field,
            surge_scenario.grid,
            np.array([1.08]),
            clearance=5e-4,
            finish=0.5,
            variant="surge",
        )


def test_interior_scenario_for_identity_repairs():
    sc = motor_scenario("surge", clearance=0.5, x_start=1.5, finish=1.5)
    margins = sc.field.margin(0.0, sc.xbar.states, 0.0)
    assert float(np.min(margins)) > 0.4

"""Shared fixtures: certified bundles and repair runs for both motors.

Certification and repair are deterministic, so building them once per
session keeps the suite fast without coupling tests to each other.
"""

import pytest

from tightpath import certify_all, motor_scenario, repair


@pytest.fixture(scope="session")
def surge_scenario():
    return motor_scenario("surge")


@pytest.fixture(scope="session")
def decline_scenario():
    return motor_scenario("decline")


@pytest.fixture(scope="session")
def surge_bundle(surge_scenario):
    sc = surge_scenario
    return certify_all(sc.model, sc.field, sc.ubar, sc.xbar)


@pytest.fixture(scope="session")
def decline_bundle(decline_scenario):
    sc = decline_scenario
    return certify_all(sc.model, sc.field, sc.ubar, sc.xbar)


@pytest.fixture(scope="session")
def surge_run(surge_scenario, surge_bundle):
    sc = surge_scenario
    return repair(sc.xbar, sc.ubar, 0.1, surge_bundle, sc.field, sc.model)


@pytest.fixture(scope="session")
def decline_run(decline_scenario, decline_bundle):
    sc = decline_scenario
    return repair(sc.xbar, sc.ubar, 0.1, decline_bundle, sc.field, sc.model)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fleet_features(counts, seed, **spec_kwargs):
    """Simulate a labeled fleet and return (pairs, rows, labels, true bins) for vehicles that analyze."""
    import warnings

    from magvehicle import simgen
    from magvehicle.errors import MagVehicleError
    from magvehicle.pipeline import Pipeline, vehicle_pair
    from magvehicle.vehicles import TYPE_BIN

    pipe = Pipeline()
    pairs, rows, labels, bins = [], [], [], []
    for veh in simgen.synth_fleet(simgen.FleetSpec(counts=counts, seed=seed, **spec_kwargs)):
        pair = vehicle_pair(veh.trace)
        if pair is None:
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fv = pipe.analyze_pair(pair).features
        except MagVehicleError:
            continue
        pairs.append(pair)
        rows.append(fv)
        labels.append(veh.truth.vehicle_type)
        bins.append(TYPE_BIN[veh.truth.vehicle_type])
    return pairs, rows, labels, bins


@pytest.fixture(scope="session")
def small_fleet():
    from magvehicle.vehicles import TYPE_ORDER

    return fleet_features({t: 30 for t in TYPE_ORDER}, seed=3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)

import numpy as np
import pytest

from bikedqn.domain import NetworkInstance


def line_instance(capacities, inventory, positions=None, vehicles=((40, 0, 0),), handling_time=0.5, speed=1.0):
    """Stations on a line; transit minutes = distance / speed. vehicles: (capacity, load, station)."""
    n = len(capacities)
    x = np.arange(n, dtype=float) if positions is None else np.asarray(positions, dtype=float)
    dist = np.abs(x[:, None] - x[None, :])
    return NetworkInstance(
        capacities=capacities,
        distances=dist,
        transit_times=dist / speed,
        vehicle_capacities=[v[0] for v in vehicles],
        handling_time=handling_time,
        initial_station_inventory=inventory,
        initial_vehicle_inventory=[v[1] for v in vehicles],
        initial_vehicle_location=[v[2] for v in vehicles],
    )


def random_instance(rng, n_stations, n_vehicles, max_cap=6):
    caps = rng.integers(1, max_cap + 1, size=n_stations)
    inv = rng.integers(0, caps + 1)
    xy = rng.uniform(0, 3, size=(n_stations, 2))
    dist = np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1))
    locs = rng.choice(n_stations, size=n_vehicles, replace=False)
    vcap = rng.integers(1, 8, size=n_vehicles)
    return NetworkInstance(
        capacities=caps,
        distances=dist,
        transit_times=dist * 4.0 + 0.5 * (dist > 0),
        vehicle_capacities=vcap,
        handling_time=float(rng.choice([0.0, 0.25, 0.5])),
        initial_station_inventory=inv,
        initial_vehicle_inventory=rng.integers(0, vcap + 1),
        initial_vehicle_location=locs,
        revisit_wait=float(rng.uniform(1.0, 6.0)),
    )


def random_trips(rng, n_stations, n_trips, horizon=240.0):
    from bikedqn.domain import Trip

    dep = np.sort(rng.uniform(0, horizon, size=n_trips))
    # coarse grid so equal-time ties actually occur
    dep = np.round(dep / 2.0) * 2.0
    dep.sort()
    trips = []
    for t in dep:
        o = int(rng.integers(n_stations))
        d = int(rng.integers(n_stations))
        dur = float(np.round(rng.uniform(1.0, 40.0) / 2.0) * 2.0) or 2.0
        trips.append(Trip(float(t), o, float(t) + dur, d))
    return trips


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[name] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[name]
        num = int(name.split("_")[2])
        label = name.split("_", 3)[3].replace("_", " ")
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {verdict}  {label}" + (f": {detail}" if detail else ""))

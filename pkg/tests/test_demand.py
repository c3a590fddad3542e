import numpy as np
import pytest
from scipy import stats

from bikedqn.demand import (
    DESK,
    GT1,
    GT2,
    DemandParams,
    LayoutSpec,
    day_seeds,
    generate_dataset,
    generate_day,
    generate_network,
)


def test_gt1_dock_total():
    assert generate_network(GT1, 7).capacities.sum() == 9 * 40 + 51 * 20


def test_gt2_dock_total_and_centers():
    inst = generate_network(GT2, 7)
    assert inst.capacities.sum() == 12 * 40 + 48 * 20
    assert len(inst.center_stations) == 12


def test_network_is_deterministic():
    a, b = generate_network(GT1, 11), generate_network(GT1, 11)
    np.testing.assert_array_equal(a.distances, b.distances)
    np.testing.assert_array_equal(a.initial_vehicle_location, b.initial_vehicle_location)


def test_invalid_layout_rejected():
    with pytest.raises(ValueError, match="invalid layout"):
        generate_network(LayoutSpec("bad", 5, 2, 4, 40, 20), 0)


def test_zero_rate_gives_empty_day():
    inst = generate_network(GT1, 7)
    assert generate_day(inst, DemandParams(base_rate=0.0), 3) == []


def test_poisson_total_within_five_sigma():
    inst = generate_network(GT1, 7)
    params = DemandParams(base_rate=2.0, peak_multiplier=0.0, day_variability=0.0)
    n = len(generate_day(inst, params, 5))
    mean = 2.0 * 60 * 4
    assert abs(n - mean) <= 5 * np.sqrt(mean)


def test_day_multiplier_has_unit_mean():
    inst = generate_network(DESK, 7)
    params = DemandParams(base_rate=2.0, peak_multiplier=0.0, day_variability=0.5)
    counts = [len(generate_day(inst, params, s)) for s in range(400)]
    # 2 * 20 * 4 = 160 expected per day
    assert np.mean(counts) == pytest.approx(160, rel=0.05)


def test_full_commuter_fraction_sends_peak_outer_trips_to_centers():
    inst = generate_network(GT1, 7)
    params = DemandParams(commuter_fraction=1.0)
    peak = params.peak_hours()
    centers = set(inst.center_stations)
    trips = generate_day(inst, params, 9)
    checked = 0
    for t in trips:
        if peak[int(t.depart_time // 60)] and t.origin not in centers:
            assert t.destination in centers
            checked += 1
    assert checked > 50


def test_offpeak_destinations_uniform():
    inst = generate_network(DESK, 7)
    params = DemandParams(base_rate=10.0, peak_shape=(1.0, 1.0, 1.0, 1.0), commuter_fraction=1.0)
    counts = np.zeros(inst.station_count)
    for s in range(30):
        for t in generate_day(inst, params, s):
            if t.origin == 0:
                counts[t.destination] += 1
    obs = np.delete(counts, 0)
    assert stats.chisquare(obs).pvalue > 0.001


def test_trips_sorted_and_well_formed():
    inst = generate_network(DESK, 7)
    trips = generate_day(inst, DemandParams(base_rate=4.0), 1)
    deps = [t.depart_time for t in trips]
    assert deps == sorted(deps)
    assert all(t.arrive_time > t.depart_time and t.origin != t.destination for t in trips)
    assert all(0 <= t.depart_time < 240 for t in trips)


def test_split_sizes():
    inst = generate_network(DESK, 7)
    ds = generate_dataset(inst, DemandParams(base_rate=0.1), 150, 2 / 3, seed=0)
    assert (len(ds.train), len(ds.test)) == (100, 50)
    ds = generate_dataset(inst, DemandParams(base_rate=0.1), 2, 0.5, seed=0)
    assert (len(ds.train), len(ds.test)) == (1, 1)


def test_day_seeds_are_distinct_and_stable():
    seeds = day_seeds(3, 150)
    assert len(set(seeds)) == 150
    assert seeds == day_seeds(3, 150)

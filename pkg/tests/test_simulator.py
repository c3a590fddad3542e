import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bikedqn.baselines import no_rebalance_action
from bikedqn.domain import Action, FillLevels, SystemState, Trip
from bikedqn.simulator import (
    DROPOFF,
    PICKUP,
    RENTAL,
    RETURN,
    Event,
    EventQueue,
    MaskedActionError,
    begin_epoch,
    reference_replay,
    run_episode,
    run_epoch,
)

from conftest import line_instance, random_instance, random_trips

FILL = FillLevels()


def test_event_queue_orders_by_time_then_kind_then_seq():
    q = EventQueue([Event(5.0, RENTAL, 2, 0), Event(5.0, RETURN, 9, 1), Event(1.0, DROPOFF, 0, 0),
                    Event(5.0, RENTAL, 1, 0), Event(5.0, PICKUP, 0, 2)])
    order = [(e.time, e.kind, e.seq) for e in q.drain()]
    assert order == [(1.0, DROPOFF, 0), (5.0, RETURN, 9), (5.0, RENTAL, 1), (5.0, RENTAL, 2), (5.0, PICKUP, 0)]


def test_event_queue_remove_where():
    q = EventQueue([Event(float(t), RENTAL, t, 0) for t in range(6)])
    assert q.remove_where(lambda e: e.time >= 3) == 3
    assert [e.seq for e in q.drain()] == [0, 1, 2]


def _vehicle_state(inst, vehicle, **kw):
    s = SystemState.initial(inst)
    vs = list(s.vehicles)
    vs[vehicle] = dataclasses.replace(vs[vehicle], **kw)
    return SystemState(s.time, s.station_inventory, tuple(vs))


def test_dropoff_schedule_is_i_times_beta():
    inst = line_instance([40, 40], [4, 0], vehicles=((40, 10, 0),))
    s = begin_epoch(SystemState.initial(inst), 0, Action(1, 1), inst, FILL)
    v = s.vehicles[0]
    assert v.remaining_ops == -10
    assert v.op_times == tuple(0.5 * i for i in range(1, 11))
    assert v.eta == pytest.approx(5.0 + inst.transit_times[0, 1])


def test_no_loading_departs_immediately():
    inst = line_instance([20, 20], [10, 0], vehicles=((40, 0, 0),))
    s = begin_epoch(SystemState.initial(inst), 0, Action(1, 1), inst, FILL)
    assert s.vehicles[0].op_times == ()
    assert s.vehicles[0].eta == inst.transit_times[0, 1]


def test_claimed_station_is_rejected():
    inst = line_instance([5, 5, 5], [2, 2, 2], vehicles=((10, 0, 0), (10, 0, 1)))
    with pytest.raises(MaskedActionError):
        begin_epoch(SystemState.initial(inst), 0, Action(0, 1), inst, FILL)


def test_empty_demand_epoch_ends_at_arrival():
    inst = line_instance([20, 20], [10, 10], positions=[0.0, 7.0])
    s = begin_epoch(SystemState.initial(inst), 0, Action(1, 1), inst, FILL)
    out = run_epoch(s, [], inst)
    assert out.reward == 0
    assert out.next_state.time == 7.0
    assert out.next_decision_vehicle == 0
    assert out.next_state.vehicles[0].from_station == 1


def test_rental_at_empty_station_is_lost():
    inst = line_instance([5, 5], [0, 3], positions=[0.0, 30.0])
    s = begin_epoch(SystemState.initial(inst), 0, Action(0, 1, idle=True), inst, FILL)
    out = run_epoch(s, [Trip(1.0, 0, 5.0, 1)], inst)
    assert out.reward == -1 and out.lost_rentals == 1
    assert out.next_state.station_inventory == (0, 3)


def test_return_to_full_station_redirects_to_nearest():
    inst = line_instance([2, 2, 2], [1, 2, 0], positions=[0.0, 5.0, 6.0], vehicles=((10, 0, 2),))
    s = begin_epoch(SystemState.initial(inst), 0, Action(0, 0, idle=True), inst, FILL)
    s = SystemState(s.time, s.station_inventory, s.vehicles)
    # rent at 0, return at full station 1 before the vehicle arrives at t=6
    out = run_epoch(s, [Trip(1.0, 0, 2.0, 1)], inst)
    assert out.reward == -1 and out.lost_returns == 1
    assert out.next_state.station_inventory == (0, 2, 1)


def test_pickup_short_station_cancels_remaining_ops():
    inst = line_instance([10, 10], [1, 0], positions=[0.0, 4.0], vehicles=((10, 0, 0),))
    s = _vehicle_state(inst, 0, to_station=1, remaining_ops=3, op_times=(0.5, 1.0, 1.5), eta=5.5)
    s = SystemState(0.0, s.station_inventory, s.vehicles)
    out = run_epoch(s, [], inst)
    v = out.next_state.vehicles[0]
    assert v.load == 1
    assert out.next_state.station_inventory == (0, 0)
    # departed after the first failed pick-up at t=1.0
    assert out.next_state.time == pytest.approx(1.0 + 4.0)


def test_zero_demand_day_has_no_loss(rng):
    inst = random_instance(rng, 5, 2)
    rec = run_episode(inst, [], lambda s, k: no_rebalance_action(s, k))
    assert rec.total_lost == 0 and rec.steps > 0


def test_replay_single_station_single_rental():
    inst = line_instance([1], [0])
    assert reference_replay(inst, [Trip(1.0, 0, 2.0, 0)]).total_lost == 1


def test_replay_redirects_to_origin():
    inst = line_instance([1, 1], [1, 1])
    res = reference_replay(inst, [Trip(1.0, 0, 3.0, 1)])
    assert res.lost_returns == 1 and res.lost_rentals == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_replay_matches_idle_episode(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    inst = random_instance(rng, n, int(rng.integers(1, min(n, 2) + 1)))
    trips = random_trips(rng, n, int(rng.integers(0, 51)))
    rec = run_episode(inst, trips, no_rebalance_action, check_invariants=True)
    assert rec.total_lost == reference_replay(inst, trips).total_lost


def _random_policy(inst, rng):
    def policy(state, k):
        claimed = {v.to_station for j, v in enumerate(state.vehicles) if j != k}
        free = [s for s in range(inst.station_count) if s not in claimed]
        return Action(int(rng.integers(3)), int(rng.choice(free)))
    return policy


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_policy_conserves_bikes(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    inst = random_instance(rng, n, int(rng.integers(1, min(n, 3) + 1)))
    trips = random_trips(rng, n, int(rng.integers(0, 80)))
    rec = run_episode(inst, trips, _random_policy(inst, rng), check_invariants=True)
    assert rec.total_lost >= 0


def test_epochs_advance_in_time_per_vehicle(rng):
    inst = random_instance(rng, 6, 3)
    trips = random_trips(rng, 6, 60)
    times = {}
    policy = _random_policy(inst, rng)

    def spy(state, k):
        assert state.time >= times.get(k, -1.0)
        times[k] = state.time
        return policy(state, k)

    run_episode(inst, trips, spy, check_invariants=True)


def test_trace_log_columns(tmp_path, rng):
    from bikedqn.simulator import TRACE_COLUMNS, write_trace

    inst = random_instance(rng, 4, 2)
    rec = run_episode(inst, random_trips(rng, 4, 20), _random_policy(inst, rng), keep_log=True)
    assert len(rec.log) == rec.steps
    write_trace(rec, tmp_path / "trace.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    assert rec.log[-1]["cumulative_lost"] == rec.total_lost


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_extra_idle_vehicle_changes_nothing(seed):
    from bikedqn.domain import NetworkInstance

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    inst = random_instance(rng, n, 1)
    trips = random_trips(rng, n, int(rng.integers(0, 60)))
    spare = next(s for s in range(n) if s != inst.initial_vehicle_location[0])
    bigger = NetworkInstance(
        inst.capacities, inst.distances, inst.transit_times, [*inst.vehicle_capacities, 5], inst.handling_time,
        inst.initial_station_inventory, [*inst.initial_vehicle_inventory, 0],
        [*inst.initial_vehicle_location, spare], revisit_wait=inst.revisit_wait,
    )
    a = run_episode(inst, trips, no_rebalance_action)
    b = run_episode(bigger, trips, no_rebalance_action)
    assert (a.lost_rentals, a.lost_returns) == (b.lost_rentals, b.lost_returns)


def test_held_return_docks_at_next_freed_dock():
    # the vehicle's spare bikes fill every dock, so a redirected rider must wait
    inst = line_instance([1, 1], [1, 1], positions=[0.0, 50.0], vehicles=((5, 5, 0),))
    state = _vehicle_state(inst, 0, to_station=0, remaining_ops=-1, op_times=(1.5,), eta=6.5)
    trips = [Trip(1.0, 0, 2.0, 1), Trip(3.0, 1, 100.0, 0)]
    out = run_epoch(state, trips, inst, check_invariants=True)
    assert (out.lost_rentals, out.lost_returns) == (0, 1)
    assert out.next_state.held_returns == 0
    assert out.next_state.station_inventory == (1, 1)
    assert out.next_state.vehicles[0].load == 4
    assert len(out.next_state.pending_returns) == 1

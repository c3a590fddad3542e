"""Event-driven simulation of rentals, returns and vehicle operations.

One decision epoch runs from the moment a vehicle arrives at a station and
chooses an action until the next vehicle arrival. Within an epoch, rentals,
returns, pick-ups and drop-offs execute first-come-first-serve. Events at
equal times run returns first, then rentals, pick-ups and drop-offs; demand
events further tie-break on trip order and vehicle operations on vehicle index.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

from .domain import (
    Action,
    FillLevels,
    NetworkInstance,
    PendingReturn,
    SystemState,
    Trip,
    VehicleStatus,
    _nearest_free,
)

HORIZON = 240.0

RETURN, RENTAL, PICKUP, DROPOFF = 0, 1, 2, 3
KIND_CODES = "adpf"


class MaskedActionError(ValueError):
    """The action routes a vehicle to a station already claimed by another vehicle."""


class SimulationFault(RuntimeError):
    """An internal invariant (capacity or bike conservation) was violated."""


class Event(NamedTuple):
    time: float
    kind: int
    seq: int
    station: int
    vehicle: int = 0

    @property
    def code(self) -> str:
        return KIND_CODES[self.kind]


class EventQueue:
    """Min-heap of events ordered by (time, kind priority, sequence)."""

    def __init__(self, events: Sequence[Event] = ()):
        self._heap = list(events)
        heapq.heapify(self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def push(self, event: Event) -> None:
        heapq.heappush(self._heap, event)

    def peek(self) -> Event:
        return self._heap[0]

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def remove_where(self, predicate: Callable[[Event], bool]) -> int:
        kept = [e for e in self._heap if not predicate(e)]
        removed = len(self._heap) - len(kept)
        if removed:
            self._heap = kept
            heapq.heapify(self._heap)
        return removed

    def drain(self) -> list[Event]:
        out = sorted(self._heap)
        self._heap = []
        return out


@dataclass(frozen=True)
class EpochOutcome:
    reward: float
    next_state: SystemState
    lost_rentals: int
    lost_returns: int
    next_decision_vehicle: int | None
    events: int = 0

    @property
    def done(self) -> bool:
        return self.next_decision_vehicle is None


def loading_count(inventory: int, capacity: int, load: int, vehicle_capacity: int, mu: float) -> int:
    """Signed number of bikes to move so the station approaches ``mu * capacity``.

    Positive means pick up, negative means drop off. The target is rounded to
    the nearest integer (halves round up) before comparing with the stock.
    """
    target = math.floor(mu * capacity + 0.5)
    if target < inventory:
        return min(vehicle_capacity - load, inventory - target)
    if target > inventory:
        return max(-load, inventory - target)
    return 0


def claimed_stations(state: SystemState, vehicle: int) -> set[int]:
    return {v.to_station for k, v in enumerate(state.vehicles) if k != vehicle}


def first_decision_vehicle(state: SystemState) -> int:
    free = [(v.eta, k) for k, v in enumerate(state.vehicles) if not v.operating]
    return min(free)[1]


def begin_epoch(
    state: SystemState,
    acting_vehicle: int,
    action: Action,
    instance: NetworkInstance,
    fill_levels: FillLevels,
) -> SystemState:
    """Apply the deciding vehicle's action: schedule its loading and set its route."""
    veh = state.vehicles[acting_vehicle]
    if veh.operating or veh.eta != state.time:
        raise ValueError(f"vehicle {acting_vehicle} is not awaiting a decision at t={state.time}")
    if not 0 <= action.next_station < instance.station_count:
        raise MaskedActionError(f"station {action.next_station} out of range")
    if action.next_station in claimed_stations(state, acting_vehicle):
        raise MaskedActionError(
            f"station {action.next_station} is already the destination of another vehicle"
        )
    here = veh.to_station
    if action.idle:
        moves = 0
    else:
        moves = loading_count(
            state.station_inventory[here],
            int(instance.capacities[here]),
            veh.load,
            int(instance.vehicle_capacities[acting_vehicle]),
            fill_levels.mu[action.fill_level_index],
        )
    t = state.time
    beta = instance.handling_time
    op_times = tuple(t + i * beta for i in range(1, abs(moves) + 1))
    depart = op_times[-1] if op_times else t
    updated = VehicleStatus(
        from_station=here,
        to_station=action.next_station,
        load=veh.load,
        eta=depart + instance.travel_time(here, action.next_station),
        remaining_ops=moves,
        op_times=op_times,
    )
    vehicles = list(state.vehicles)
    vehicles[acting_vehicle] = updated
    return replace(state, vehicles=tuple(vehicles))


def run_epoch(
    state: SystemState,
    trips: Sequence[Trip],
    instance: NetworkInstance,
    horizon: float = HORIZON,
    *,
    depart_times: Sequence[float] | None = None,
    check_invariants: bool = False,
) -> EpochOutcome:
    """Simulate from ``state.time`` until the next vehicle arrival (or the horizon).

    ``depart_times`` may pass a precomputed list of trip departure times to
    avoid rebuilding it every epoch.
    """
    t_k = state.time
    caps = instance.capacities.tolist()
    vcaps = instance.vehicle_capacities.tolist()
    inv = list(state.station_inventory)
    held = state.held_returns
    n_veh = len(state.vehicles)

    from_st = [v.from_station for v in state.vehicles]
    to_st = [v.to_station for v in state.vehicles]
    loads = [v.load for v in state.vehicles]
    etas = [v.eta for v in state.vehicles]
    ops = [v.remaining_ops for v in state.vehicles]
    op_queue = [list(v.op_times) for v in state.vehicles]
    op_pos = [0] * n_veh

    e_t = horizon
    for k in range(n_veh):
        if ops[k] == 0 and etas[k] < e_t:
            e_t = etas[k]

    returns: list[tuple[float, int, int]] = []
    carried: list[PendingReturn] = []
    for p in state.pending_returns:
        if p.time < e_t:
            returns.append((p.time, p.trip, p.station))
        else:
            carried.append(p)
    heapq.heapify(returns)

    if depart_times is None:
        depart_times = [tr.depart_time for tr in trips]
    idx = bisect.bisect_left(depart_times, t_k)
    n_trips = len(trips)

    lost_rentals = lost_returns = 0
    n_events = 0
    total_bikes = state.bikes_in_system() if check_invariants else 0
    inf = math.inf

    while True:
        # pick the earliest candidate among returns, the next rental and vehicle ops
        best = (inf, 9, 0)
        src = -1
        if returns:
            r = returns[0]
            best = (r[0], RETURN, r[1])
            src = -2
        if idx < n_trips:
            cand = (depart_times[idx], RENTAL, idx)
            if cand < best:
                best = cand
                src = -3
        for k in range(n_veh):
            if ops[k] != 0:
                cand = (op_queue[k][op_pos[k]], PICKUP if ops[k] > 0 else DROPOFF, k)
                if cand < best:
                    best = cand
                    src = k
        now = best[0]
        if src == -1 or now >= e_t:
            break
        n_events += 1

        if src == -2:
            _, trip_i, s = heapq.heappop(returns)
            if inv[s] < caps[s]:
                inv[s] += 1
            else:
                lost_returns += 1
                j = _nearest_free(inv, caps, instance.neighbor_order[s])
                if j < 0:
                    held += 1
                else:
                    inv[j] += 1
        elif src == -3:
            trip = trips[idx]
            s = trip.origin
            if inv[s] > 0:
                inv[s] -= 1
                if held:
                    inv[s] += 1
                    held -= 1
                if trip.arrive_time < e_t:
                    heapq.heappush(returns, (trip.arrive_time, idx, trip.destination))
                else:
                    carried.append(PendingReturn(trip.arrive_time, trip.destination, idx))
            else:
                lost_rentals += 1
            idx += 1
        else:
            k = src
            s = from_st[k]
            depart = False
            if ops[k] > 0:
                if inv[s] > 0 and loads[k] < vcaps[k]:
                    inv[s] -= 1
                    loads[k] += 1
                    ops[k] -= 1
                    op_pos[k] += 1
                    if held:
                        inv[s] += 1
                        held -= 1
                    depart = ops[k] == 0
                else:
                    depart = True
            else:
                if loads[k] > 0 and inv[s] < caps[s]:
                    inv[s] += 1
                    loads[k] -= 1
                    ops[k] += 1
                    op_pos[k] += 1
                    depart = ops[k] == 0
                else:
                    depart = True
            if depart:
                ops[k] = 0
                op_queue[k] = []
                op_pos[k] = 0
                etas[k] = now + instance.travel_time(s, to_st[k])
                if etas[k] < e_t:
                    e_t = etas[k]

        if check_invariants:
            _check(inv, caps, loads, vcaps, len(returns) + len(carried) + held, total_bikes, now)

    # events that did not run before the next decision epoch carry over
    for t, trip_i, s in returns:
        carried.append(PendingReturn(t, s, trip_i))
    carried.sort()

    done = e_t >= horizon
    next_vehicle = None
    if not done:
        next_vehicle = min((etas[k], k) for k in range(n_veh) if ops[k] == 0)[1]

    vehicles = []
    for k in range(n_veh):
        remaining = tuple(op_queue[k][op_pos[k]:]) if ops[k] != 0 else ()
        b = to_st[k] if k == next_vehicle else from_st[k]
        vehicles.append(
            VehicleStatus(
                from_station=b,
                to_station=to_st[k],
                load=loads[k],
                eta=etas[k],
                remaining_ops=ops[k],
                op_times=remaining,
            )
        )
    next_state = SystemState(
        time=horizon if done else e_t,
        station_inventory=tuple(inv),
        vehicles=tuple(vehicles),
        pending_returns=tuple(carried),
        held_returns=held,
    )
    return EpochOutcome(
        reward=-float(lost_rentals + lost_returns),
        next_state=next_state,
        lost_rentals=lost_rentals,
        lost_returns=lost_returns,
        next_decision_vehicle=next_vehicle,
        events=n_events,
    )


def _check(inv, caps, loads, vcaps, in_flight, total, now):
    for s, (d, c) in enumerate(zip(inv, caps)):
        if not 0 <= d <= c:
            raise SimulationFault(f"t={now}: station {s} inventory {d} outside [0, {c}]")
    for k, (p, c) in enumerate(zip(loads, vcaps)):
        if not 0 <= p <= c:
            raise SimulationFault(f"t={now}: vehicle {k} load {p} outside [0, {c}]")
    if sum(inv) + sum(loads) + in_flight != total:
        raise SimulationFault(
            f"t={now}: bike count {sum(inv) + sum(loads) + in_flight} != {total}"
        )


Policy = Callable[[SystemState, int], Action]


@dataclass
class EpisodeRecord:
    lost_rentals: int = 0
    lost_returns: int = 0
    steps: int = 0
    events: int = 0
    log: list[dict] = field(default_factory=list)

    @property
    def total_lost(self) -> int:
        return self.lost_rentals + self.lost_returns

    @property
    def episodic_return(self) -> float:
        return -float(self.total_lost)


TRACE_COLUMNS = ("epoch", "time", "vehicle", "fill_level", "next_station", "loading", "reward", "cumulative_lost")


def run_episode(
    instance: NetworkInstance,
    trips: Sequence[Trip],
    policy: Policy,
    fill_levels: FillLevels = FillLevels(),
    horizon: float = HORIZON,
    initial_state: SystemState | None = None,
    *,
    keep_log: bool = False,
    check_invariants: bool = False,
    max_steps: int = 1_000_000,
) -> EpisodeRecord:
    """Alternate decisions and simulated epochs over one planning horizon."""
    state = initial_state or SystemState.initial(instance)
    depart_times = [t.depart_time for t in trips]
    vehicle = first_decision_vehicle(state)
    rec = EpisodeRecord()
    while True:
        if rec.steps >= max_steps:
            raise SimulationFault(f"episode exceeded {max_steps} decision epochs at t={state.time}")
        action = policy(state, vehicle)
        state = begin_epoch(state, vehicle, action, instance, fill_levels)
        out = run_epoch(
            state, trips, instance, horizon, depart_times=depart_times, check_invariants=check_invariants
        )
        rec.steps += 1
        rec.events += out.events
        rec.lost_rentals += out.lost_rentals
        rec.lost_returns += out.lost_returns
        if keep_log:
            rec.log.append(
                {
                    "epoch": rec.steps - 1,
                    "time": state.time,
                    "vehicle": vehicle,
                    "fill_level": -1 if action.idle else action.fill_level_index,
                    "next_station": action.next_station,
                    "loading": state.vehicles[vehicle].remaining_ops,
                    "reward": out.reward,
                    "cumulative_lost": rec.total_lost,
                }
            )
        state = out.next_state
        if out.done:
            return rec
        vehicle = out.next_decision_vehicle


def write_trace(record: EpisodeRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        w.writerows(record.log)


@dataclass(frozen=True)
class ReplayResult:
    lost_rentals: int
    lost_returns: int

    @property
    def total_lost(self) -> int:
        return self.lost_rentals + self.lost_returns


def reference_replay(
    instance: NetworkInstance,
    trips: Sequence[Trip],
    horizon: float = HORIZON,
    initial_inventory: Sequence[int] | None = None,
) -> ReplayResult:
    """Single chronological pass over the day's demand with no vehicles."""
    caps = instance.capacities.tolist()
    inv = list(instance.initial_station_inventory if initial_inventory is None else initial_inventory)
    queue = EventQueue(Event(t.depart_time, RENTAL, i, t.origin) for i, t in enumerate(trips))
    held = 0
    lost_rentals = lost_returns = 0
    while queue and queue.peek().time < horizon:
        ev = queue.pop()
        s = ev.station
        if ev.kind == RENTAL:
            if inv[s] > 0:
                inv[s] -= 1
                if held:
                    inv[s] += 1
                    held -= 1
                trip = trips[ev.seq]
                queue.push(Event(trip.arrive_time, RETURN, ev.seq, trip.destination))
            else:
                lost_rentals += 1
        else:
            if inv[s] < caps[s]:
                inv[s] += 1
            else:
                lost_returns += 1
                j = _nearest_free(inv, caps, instance.neighbor_order[s])
                if j < 0:
                    held += 1
                else:
                    inv[j] += 1
    return ReplayResult(lost_rentals, lost_returns)

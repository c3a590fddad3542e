"""Decision-process facade over the simulator: observations, masks, reset/step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import Action, FillLevels, NetworkInstance, SystemState, Trip
from .simulator import (
    HORIZON,
    MaskedActionError,
    begin_epoch,
    claimed_stations,
    first_decision_vehicle,
    loading_count,
    run_epoch,
)

N_LEVELS = 3

# router(state, vehicle, legal stations, planned signed loading) -> next station
Router = Callable[[SystemState, int, np.ndarray, int], int]


def observation_size(station_count: int, vehicle_count: int) -> int:
    return station_count + 1 + vehicle_count * (2 * station_count + 3)


def encode_observation(
    state: SystemState,
    instance: NetworkInstance,
    horizon: float = HORIZON,
    acting_vehicle: int | None = None,
) -> np.ndarray:
    """Flatten a state into the network input vector.

    Layout: inventories / capacity, time / horizon, then one block per vehicle
    (one-hot current station, one-hot next station, load, time to arrival,
    remaining operations). When ``acting_vehicle`` is given the vehicle blocks
    start with that vehicle and continue in cyclic index order, so the network
    always sees the deciding vehicle first.
    """
    n = instance.station_count
    n_veh = len(state.vehicles)
    obs = np.zeros(observation_size(n, n_veh))
    obs[:n] = np.asarray(state.station_inventory, dtype=float) / instance.capacities
    obs[n] = state.time / horizon
    start = 0 if acting_vehicle is None else acting_vehicle
    vcaps = instance.vehicle_capacities
    block = 2 * n + 3
    for slot in range(n_veh):
        k = (start + slot) % n_veh
        v = state.vehicles[k]
        off = n + 1 + slot * block
        obs[off + v.from_station] = 1.0
        obs[off + n + v.to_station] = 1.0
        obs[off + 2 * n] = v.load / vcaps[k]
        obs[off + 2 * n + 1] = (v.eta - state.time) / horizon
        obs[off + 2 * n + 2] = v.remaining_ops / vcaps[k]
    return obs


def compute_loading(
    state: SystemState,
    vehicle: int,
    station: int,
    fill_level_index: int,
    fill_levels: FillLevels,
    instance: NetworkInstance,
) -> int:
    return loading_count(
        state.station_inventory[station],
        int(instance.capacities[station]),
        state.vehicles[vehicle].load,
        int(instance.vehicle_capacities[vehicle]),
        fill_levels.mu[fill_level_index],
    )


def station_mask(state: SystemState, acting_vehicle: int, instance: NetworkInstance) -> np.ndarray:
    mask = np.ones(instance.station_count, dtype=bool)
    for s in claimed_stations(state, acting_vehicle):
        mask[s] = False
    return mask


def legal_mask(state: SystemState, acting_vehicle: int, instance: NetworkInstance) -> np.ndarray:
    """Boolean mask over flattened (fill level, station) actions; index = level * N + station."""
    return np.tile(station_mask(state, acting_vehicle, instance), N_LEVELS)


def decode_action(index: int, station_count: int) -> Action:
    level, station = divmod(int(index), station_count)
    return Action(level, station)


def encode_action(action: Action, station_count: int) -> int:
    return action.fill_level_index * station_count + action.next_station


@dataclass(frozen=True)
class StepResult:
    reward: float
    observation: np.ndarray
    mask: np.ndarray
    vehicle: int | None
    done: bool
    lost_rentals: int
    lost_returns: int
    duration: float = 0.0


class BikeEnv:
    """Reset/step environment for a fixed network.

    With ``router`` set, the action space shrinks to the three fill levels and
    the next station comes from the router, which also sees the loading the
    chosen fill level implies.
    """

    def __init__(
        self,
        instance: NetworkInstance,
        fill_levels: FillLevels = FillLevels(),
        horizon: float = HORIZON,
        router: Router | None = None,
    ):
        self.instance = instance
        self.fill_levels = fill_levels
        self.horizon = horizon
        self.router = router
        self.state: SystemState | None = None
        self.vehicle: int | None = None
        self.done = True
        self.steps = 0
        self.lost_rentals = 0
        self.lost_returns = 0

    @property
    def n_actions(self) -> int:
        return N_LEVELS if self.router else N_LEVELS * self.instance.station_count

    @property
    def obs_size(self) -> int:
        return observation_size(self.instance.station_count, self.instance.vehicle_count)

    def observe(self) -> np.ndarray:
        return encode_observation(self.state, self.instance, self.horizon, self.vehicle)

    def mask(self) -> np.ndarray:
        if self.router:
            return np.ones(N_LEVELS, dtype=bool)
        return legal_mask(self.state, self.vehicle, self.instance)

    def reset(self, trips: Sequence[Trip], initial_state: SystemState | None = None):
        self.trips = list(trips)
        self._depart_times = [t.depart_time for t in self.trips]
        self.state = initial_state or SystemState.initial(self.instance)
        self.vehicle = first_decision_vehicle(self.state)
        self.done = False
        self.steps = 0
        self.lost_rentals = self.lost_returns = 0
        return self.observe(), self.mask(), self.vehicle

    def to_action(self, action: int | Action) -> Action:
        if isinstance(action, Action):
            return action
        if self.router:
            level = int(action)
            here = self.state.vehicles[self.vehicle].to_station
            planned = compute_loading(self.state, self.vehicle, here, level, self.fill_levels, self.instance)
            legal = station_mask(self.state, self.vehicle, self.instance)
            return Action(level, int(self.router(self.state, self.vehicle, legal, planned)))
        if not 0 <= action < self.n_actions:
            raise MaskedActionError(f"action index {action} out of range")
        return decode_action(action, self.instance.station_count)

    def step(self, action: int | Action) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        act = self.to_action(action)
        t0 = self.state.time
        started = begin_epoch(self.state, self.vehicle, act, self.instance, self.fill_levels)
        out = run_epoch(started, self.trips, self.instance, self.horizon, depart_times=self._depart_times)
        self.steps += 1
        self.lost_rentals += out.lost_rentals
        self.lost_returns += out.lost_returns
        self.state = out.next_state
        self.done = out.done
        if self.done:
            self.vehicle = None
            obs = encode_observation(self.state, self.instance, self.horizon)
            mask = np.zeros(self.n_actions, dtype=bool)
        else:
            self.vehicle = out.next_decision_vehicle
            obs, mask = self.observe(), self.mask()
        return StepResult(out.reward, obs, mask, self.vehicle, self.done, out.lost_rentals, out.lost_returns,
                          self.state.time - t0)

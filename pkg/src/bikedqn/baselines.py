"""Comparison policies: idle fleet, DQN loading with scripted routing, static inventories."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .domain import Action, NetworkInstance, SystemState, Trip
from .simulator import HORIZON, claimed_stations


class PolicyKind(str, enum.Enum):
    NO_REBALANCE = "no_rebalance"
    RANDOM_ROUTING = "random_routing"
    HEURISTIC_ROUTING = "heuristic_routing"
    FULL_DQN = "full_dqn"

    @property
    def restricted(self) -> bool:
        return self in (PolicyKind.RANDOM_ROUTING, PolicyKind.HEURISTIC_ROUTING)


def no_rebalance_action(state: SystemState, vehicle: int) -> Action:
    """Stay put without loading; the vehicle re-decides after the revisit wait."""
    return Action(0, state.vehicles[vehicle].to_station, idle=True)


def no_rebalance_chooser(obs, mask, env) -> Action:
    return no_rebalance_action(env.state, env.vehicle)


def heuristic_routing(
    state: SystemState,
    acting_vehicle: int,
    instance: NetworkInstance,
    loading: int = 0,
    mask: np.ndarray | None = None,
) -> int:
    """Send a mostly-empty vehicle to the fullest station and a mostly-full one to the emptiest.

    ``loading`` is the signed number of bikes the vehicle is about to move at
    its current station; fill and load ratios are evaluated after it.
    """
    here = state.vehicles[acting_vehicle].to_station
    inv = np.asarray(state.station_inventory, dtype=float)
    inv[here] -= loading
    ratios = inv / instance.capacities
    load = state.vehicles[acting_vehicle].load + loading
    if mask is None:
        mask = np.ones(instance.station_count, dtype=bool)
        mask[list(claimed_stations(state, acting_vehicle))] = False
    if load / instance.vehicle_capacities[acting_vehicle] <= 0.5:
        return int(np.argmax(np.where(mask, ratios, -np.inf)))
    return int(np.argmin(np.where(mask, ratios, np.inf)))


def random_routing(mask: np.ndarray, rng: np.random.Generator) -> int:
    legal = np.flatnonzero(mask)
    if legal.size == 0:
        raise ValueError("no legal station")
    return int(legal[rng.integers(legal.size)])


class HeuristicRouter:
    def __init__(self, instance: NetworkInstance):
        self.instance = instance

    def __call__(self, state, vehicle, mask, loading):
        return heuristic_routing(state, vehicle, self.instance, loading, mask)


class RandomRouter:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, state, vehicle, mask, loading):
        return random_routing(mask, self.rng)


def make_router(kind: PolicyKind | str, instance: NetworkInstance, seed: int = 0):
    kind = PolicyKind(kind)
    if kind is PolicyKind.HEURISTIC_ROUTING:
        return HeuristicRouter(instance)
    if kind is PolicyKind.RANDOM_ROUTING:
        return RandomRouter(seed)
    return None


def net_outflow(instance: NetworkInstance, trips: Sequence[Trip], horizon: float = HORIZON) -> np.ndarray:
    """Rentals minus returns per station over the horizon (unconstrained demand)."""
    out = np.zeros(instance.station_count)
    for t in trips:
        if t.depart_time < horizon:
            out[t.origin] += 1
            if t.arrive_time < horizon:
                out[t.destination] -= 1
    return out


def static_initial_inventory(
    instance: NetworkInstance,
    train_days: Sequence[Sequence[Trip]],
    total_bikes: int | None = None,
    horizon: float = HORIZON,
) -> np.ndarray:
    """Morning inventories from average net outflow, summing exactly to the bike total.

    Each station scores half its capacity plus its mean net outflow (floored at
    0); bikes are split in proportion to the scores, clamped to capacity, and
    the rounding residue is settled by largest remainder (lowest index on ties).
    """
    if not train_days:
        raise ValueError("need at least one training day")
    caps = instance.capacities.astype(np.int64)
    total = instance.total_bikes if total_bikes is None else int(total_bikes)
    if total > caps.sum():
        raise ValueError(f"{total} bikes exceed {caps.sum()} docks")
    flow = np.mean([net_outflow(instance, d, horizon) for d in train_days], axis=0)
    score = np.maximum(0.0, caps / 2.0 + flow)
    if score.sum() <= 0:
        score = caps.astype(float)
    raw = score / score.sum() * total
    alloc = np.clip(np.floor(raw + 0.5), 0, caps).astype(np.int64)
    rem = raw - alloc
    while alloc.sum() < total:
        i = int(np.argmax(np.where(alloc < caps, rem, -np.inf)))
        alloc[i] += 1
        rem[i] -= 1
    while alloc.sum() > total:
        i = int(np.argmin(np.where(alloc > 0, rem, np.inf)))
        alloc[i] -= 1
        rem[i] += 1
    return alloc

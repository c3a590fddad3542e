"""Core vocabulary: network instances, trips, vehicle/system state, actions.

Stations are dense integer indices ``0..N-1``. Time is real-valued minutes
from the start of the planning horizon (7:00 maps to 0.0).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

INSTANCE_FORMAT = "bikedqn-instance"
INSTANCE_VERSION = 1
TRIP_COLUMNS = ("depart_time", "origin", "arrive_time", "destination")


class InvalidInstanceError(ValueError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid instance: " + "; ".join(self.violations))


class UnservableReturnError(RuntimeError):
    """Raised when a bike must be docked but every station in the system is full."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """Static description of a bike-sharing network and its rebalancing fleet.

    ``revisit_wait`` is the dwell time (minutes) a vehicle spends when it is
    routed back to the station it already occupies; without it such an epoch
    would have zero length.
    """

    capacities: np.ndarray
    distances: np.ndarray
    transit_times: np.ndarray
    vehicle_capacities: np.ndarray
    handling_time: float
    initial_station_inventory: np.ndarray
    initial_vehicle_inventory: np.ndarray
    initial_vehicle_location: np.ndarray
    revisit_wait: float = 5.0
    station_names: tuple[str, ...] = ()
    center_stations: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "capacities", _frozen(self.capacities, np.int64))
        object.__setattr__(self, "distances", _frozen(self.distances, np.float64))
        object.__setattr__(self, "transit_times", _frozen(self.transit_times, np.float64))
        object.__setattr__(self, "vehicle_capacities", _frozen(self.vehicle_capacities, np.int64))
        object.__setattr__(
            self, "initial_station_inventory", _frozen(self.initial_station_inventory, np.int64)
        )
        object.__setattr__(
            self, "initial_vehicle_inventory", _frozen(self.initial_vehicle_inventory, np.int64)
        )
        object.__setattr__(
            self, "initial_vehicle_location", _frozen(self.initial_vehicle_location, np.int64)
        )
        object.__setattr__(self, "handling_time", float(self.handling_time))
        object.__setattr__(self, "revisit_wait", float(self.revisit_wait))
        object.__setattr__(self, "station_names", tuple(self.station_names))
        object.__setattr__(self, "center_stations", tuple(int(c) for c in self.center_stations))

    @property
    def station_count(self) -> int:
        return int(self.capacities.shape[0])

    @property
    def vehicle_count(self) -> int:
        return int(self.vehicle_capacities.shape[0])

    @property
    def total_bikes(self) -> int:
        return int(self.initial_station_inventory.sum() + self.initial_vehicle_inventory.sum())

    @cached_property
    def neighbor_order(self) -> tuple[tuple[int, ...], ...]:
        """Per station, the other stations sorted by distance (lowest index on ties)."""
        n = self.station_count
        order = []
        for s in range(n):
            others = [j for j in range(n) if j != s]
            others.sort(key=lambda j: (self.distances[s, j], j))
            order.append(tuple(others))
        return tuple(order)

    @cached_property
    def transit_list(self) -> list[list[float]]:
        return self.transit_times.tolist()

    def travel_time(self, origin: int, destination: int) -> float:
        if origin == destination:
            return self.revisit_wait
        return self.transit_list[origin][destination]

    def with_initial_inventory(self, inventory: Sequence[int]) -> "NetworkInstance":
        return replace(self, initial_station_inventory=np.asarray(inventory))

    def to_dict(self) -> dict:
        names = self.station_names or tuple(str(i) for i in range(self.station_count))
        return {
            "format": INSTANCE_FORMAT,
            "version": INSTANCE_VERSION,
            "handling_minutes": self.handling_time,
            "revisit_wait_minutes": self.revisit_wait,
            "stations": [
                {
                    "name": names[i],
                    "capacity": int(self.capacities[i]),
                    "initial_inventory": int(self.initial_station_inventory[i]),
                    "center": i in self.center_stations,
                }
                for i in range(self.station_count)
            ],
            "vehicles": [
                {
                    "capacity": int(self.vehicle_capacities[v]),
                    "initial_load": int(self.initial_vehicle_inventory[v]),
                    "initial_station": names[int(self.initial_vehicle_location[v])],
                }
                for v in range(self.vehicle_count)
            ],
            "distances_km": self.distances.tolist(),
            "transit_minutes": self.transit_times.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkInstance":
        if doc.get("format") != INSTANCE_FORMAT:
            raise ValueError(f"not a {INSTANCE_FORMAT} document")
        if doc.get("version") != INSTANCE_VERSION:
            raise ValueError(f"unsupported instance version {doc.get('version')!r}")
        stations = doc["stations"]
        names = tuple(str(s.get("name", i)) for i, s in enumerate(stations))
        index = {name: i for i, name in enumerate(names)}
        locations = []
        for v in doc["vehicles"]:
            where = v["initial_station"]
            locations.append(index[str(where)] if str(where) in index else int(where))
        return cls(
            capacities=[s["capacity"] for s in stations],
            distances=doc["distances_km"],
            transit_times=doc["transit_minutes"],
            vehicle_capacities=[v["capacity"] for v in doc["vehicles"]],
            handling_time=doc["handling_minutes"],
            initial_station_inventory=[s["initial_inventory"] for s in stations],
            initial_vehicle_inventory=[v.get("initial_load", 0) for v in doc["vehicles"]],
            initial_vehicle_location=locations,
            revisit_wait=doc.get("revisit_wait_minutes", 5.0),
            station_names=names,
            center_stations=[i for i, s in enumerate(stations) if s.get("center", False)],
        )


def validate_instance(instance: NetworkInstance) -> list[str]:
    """Return every invariant violation in ``instance``; an empty list means valid."""
    errors = []
    n, v = instance.station_count, instance.vehicle_count
    if n == 0:
        errors.append("stations: empty network")
    if v == 0:
        errors.append("vehicles: empty fleet")
    for name, mat in (("distances", instance.distances), ("transit_times", instance.transit_times)):
        if mat.shape != (n, n):
            errors.append(f"{name}: shape {mat.shape} != ({n}, {n})")
            continue
        if not np.all(np.isfinite(mat)):
            errors.append(f"{name}: non-finite entries")
        for i, j in zip(*np.nonzero(mat < 0)):
            errors.append(f"{name}[{i},{j}]: negative")
        for i in np.nonzero(np.diag(mat) != 0)[0]:
            errors.append(f"{name}[{i},{i}]: nonzero diagonal")
    for i in np.nonzero(instance.capacities <= 0)[0]:
        errors.append(f"capacities[{i}]: not positive")
    if instance.initial_station_inventory.shape != (n,):
        errors.append("initial_station_inventory: length mismatch")
    else:
        bad = (instance.initial_station_inventory < 0) | (
            instance.initial_station_inventory > instance.capacities
        )
        for i in np.nonzero(bad)[0]:
            errors.append(f"initial_station_inventory[{i}]: outside [0, capacity]")
    if instance.initial_vehicle_inventory.shape != (v,) or instance.initial_vehicle_location.shape != (v,):
        errors.append("vehicles: initial inventory/location length mismatch")
    else:
        for k in range(v):
            if instance.vehicle_capacities[k] <= 0:
                errors.append(f"vehicle_capacities[{k}]: not positive")
            if not 0 <= instance.initial_vehicle_inventory[k] <= instance.vehicle_capacities[k]:
                errors.append(f"initial_vehicle_inventory[{k}]: outside [0, capacity]")
            if not 0 <= instance.initial_vehicle_location[k] < n:
                errors.append(f"initial_vehicle_location[{k}]: not a station index")
        seen = {}
        for k, z in enumerate(instance.initial_vehicle_location.tolist()):
            if z in seen:
                errors.append(f"initial_vehicle_location[{k}]: duplicate initial location (vehicle {seen[z]})")
            seen.setdefault(z, k)
    if instance.handling_time < 0:
        errors.append("handling_time: negative")
    if instance.revisit_wait <= 0:
        errors.append("revisit_wait: not positive")
    return errors


def require_valid(instance: NetworkInstance) -> NetworkInstance:
    errors = validate_instance(instance)
    if errors:
        raise InvalidInstanceError(errors)
    return instance


class Trip(NamedTuple):
    depart_time: float
    origin: int
    arrive_time: float
    destination: int


TripSet = list  # list[Trip], sorted by depart_time


@dataclass(frozen=True)
class VehicleStatus:
    """One vehicle's slice of the fleet status.

    ``remaining_ops`` is signed: positive pick-ups left, negative drop-offs
    left. ``op_times`` holds the scheduled times of those remaining operations.
    """

    from_station: int
    to_station: int
    load: int
    eta: float
    remaining_ops: int = 0
    op_times: tuple[float, ...] = ()

    @property
    def operating(self) -> bool:
        return self.remaining_ops != 0


class PendingReturn(NamedTuple):
    time: float
    station: int
    trip: int


@dataclass(frozen=True)
class SystemState:
    time: float
    station_inventory: tuple[int, ...]
    vehicles: tuple[VehicleStatus, ...]
    pending_returns: tuple[PendingReturn, ...] = ()
    held_returns: int = 0

    @classmethod
    def initial(cls, instance: NetworkInstance) -> "SystemState":
        vehicles = tuple(
            VehicleStatus(
                from_station=int(z),
                to_station=int(z),
                load=int(p),
                eta=0.0,
            )
            for z, p in zip(instance.initial_vehicle_location, instance.initial_vehicle_inventory)
        )
        return cls(
            time=0.0,
            station_inventory=tuple(int(x) for x in instance.initial_station_inventory),
            vehicles=vehicles,
        )

    def bikes_in_system(self) -> int:
        """Docked + on vehicles + in rides (pending) + held by users."""
        return (
            sum(self.station_inventory)
            + sum(v.load for v in self.vehicles)
            + len(self.pending_returns)
            + self.held_returns
        )


@dataclass(frozen=True)
class FillLevels:
    mu: tuple[float, float, float] = (0.10, 0.50, 0.90)

    def __post_init__(self):
        mu = tuple(float(x) for x in self.mu)
        if len(mu) != 3 or not (0.0 <= mu[0] < mu[1] < mu[2] <= 1.0):
            raise ValueError(f"fill levels must satisfy 0 <= mu1 < mu2 < mu3 <= 1, got {self.mu}")
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class Action:
    """Loading target (fill-level index) and next station for the deciding vehicle.

    ``idle`` skips loading entirely (used by the no-rebalance policy).
    """

    fill_level_index: int
    next_station: int
    idle: bool = field(default=False, compare=True)

    def __post_init__(self):
        if self.fill_level_index not in (0, 1, 2):
            raise ValueError(f"fill_level_index must be 0, 1 or 2, got {self.fill_level_index}")


def _nearest_free(inventory: Sequence[int], capacities: Sequence[int], order: Sequence[int]) -> int:
    for j in order:
        if inventory[j] < capacities[j]:
            return j
    return -1


def nearest_station_with_dock(state: SystemState, instance: NetworkInstance, station: int) -> int:
    """Closest station other than ``station`` that has a free dock."""
    j = _nearest_free(state.station_inventory, instance.capacities.tolist(), instance.neighbor_order[station])
    if j < 0:
        raise UnservableReturnError(f"no free dock anywhere for a return at station {station}")
    return j


def write_instance(instance: NetworkInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=1) + "\n")


def read_instance(path: str | Path) -> NetworkInstance:
    return require_valid(NetworkInstance.from_dict(json.loads(Path(path).read_text())))


def write_trips(trips: Iterable[Trip], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_COLUMNS)
        for t in trips:
            w.writerow([repr(float(t.depart_time)), int(t.origin), repr(float(t.arrive_time)), int(t.destination)])


def read_trips(path: str | Path) -> TripSet:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIP_COLUMNS:
            raise ValueError(f"{path}: expected columns {TRIP_COLUMNS}, got {reader.fieldnames}")
        trips = [
            Trip(float(r["depart_time"]), int(r["origin"]), float(r["arrive_time"]), int(r["destination"]))
            for r in reader
        ]
    if any(a.depart_time > b.depart_time for a, b in zip(trips, trips[1:])):
        raise ValueError(f"{path}: trips not sorted by depart_time")
    return trips

"""Synthetic networks and morning-commute trip scenarios.

Stations of a layout are indexed centers-first. Demand is a Poisson process
per station and hour whose rate follows a piecewise-constant peak shape and a
per-day log-normal multiplier (standing in for weather). During peak hours a
share of trips leaving outer stations heads into the city centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .domain import NetworkInstance, Trip, TripSet, require_valid
from .simulator import HORIZON


@dataclass(frozen=True)
class LayoutSpec:
    layout_id: str = "custom"
    total_stations: int = 60
    center_count: int = 1
    stations_per_center: int = 9
    center_dock_capacity: int = 40
    outer_dock_capacity: int = 20
    vehicle_count: int = 4
    vehicle_capacity: int = 40
    area_km: float = 6.0
    center_radius_km: float = 0.5
    vehicle_speed_kmh: float = 20.0
    handling_time: float = 0.5
    revisit_wait: float = 5.0

    @property
    def center_stations(self) -> int:
        return self.center_count * self.stations_per_center

    def violations(self) -> list[str]:
        errs = []
        if self.total_stations <= 0:
            errs.append("total_stations must be positive")
        if self.center_count < 0 or self.stations_per_center < 0:
            errs.append("center_count and stations_per_center must be nonnegative")
        if self.center_stations > self.total_stations:
            errs.append("center_count * stations_per_center exceeds total_stations")
        if self.center_dock_capacity <= 0 or self.outer_dock_capacity <= 0:
            errs.append("dock capacities must be positive")
        if not 0 < self.vehicle_count <= self.total_stations:
            errs.append("vehicle_count must be in [1, total_stations]")
        if self.vehicle_capacity <= 0:
            errs.append("vehicle_capacity must be positive")
        if self.area_km <= 0 or self.vehicle_speed_kmh <= 0:
            errs.append("area_km and vehicle_speed_kmh must be positive")
        return errs


GT1 = LayoutSpec("GT1", 60, 1, 9, 40, 20)
GT2 = LayoutSpec("GT2", 60, 2, 6, 40, 20)
DESK = LayoutSpec("DESK", 20, 1, 4, 40, 20, vehicle_count=2, area_km=4.0)
LAYOUTS = {"GT1": GT1, "GT2": GT2, "DESK": DESK}


@dataclass(frozen=True)
class DemandParams:
    """Rates are rentals per station-hour; ``peak_shape`` holds one multiplier per hour.

    ``peak_multiplier`` scales the deviation of ``peak_shape`` from 1, so 0 gives
    flat demand. Peak hours are those whose shape value exceeds 1.
    """

    base_rate: float = 2.0
    peak_multiplier: float = 1.0
    commuter_fraction: float = 0.6
    day_variability: float = 0.2
    mean_ride_speed: float = 12.0
    ride_noise: float = 2.0
    peak_shape: tuple[float, ...] = (1.0, 2.0, 1.5, 0.8)

    def __post_init__(self):
        object.__setattr__(self, "peak_shape", tuple(float(x) for x in self.peak_shape))
        for name in ("base_rate", "peak_multiplier", "day_variability", "ride_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.mean_ride_speed <= 0:
            raise ValueError("mean_ride_speed must be positive")
        if not 0.0 <= self.commuter_fraction <= 1.0:
            raise ValueError("commuter_fraction must be in [0, 1]")
        if any(x < 0 for x in self.peak_shape):
            raise ValueError("peak_shape entries must be nonnegative")

    def hourly_factors(self) -> np.ndarray:
        shape = np.asarray(self.peak_shape)
        return np.maximum(0.0, 1.0 + self.peak_multiplier * (shape - 1.0))

    def peak_hours(self) -> np.ndarray:
        return np.asarray(self.peak_shape) > 1.0


def generate_network(spec: LayoutSpec, seed: int) -> NetworkInstance:
    errs = spec.violations()
    if errs:
        raise ValueError("invalid layout: " + "; ".join(errs))
    rng = np.random.default_rng(seed)
    n, nc = spec.total_stations, spec.center_stations
    hubs = rng.uniform(0.3 * spec.area_km, 0.7 * spec.area_km, size=(spec.center_count, 2))
    coords = []
    for h in hubs:
        r = spec.center_radius_km * np.sqrt(rng.uniform(size=spec.stations_per_center))
        phi = rng.uniform(0, 2 * np.pi, size=spec.stations_per_center)
        coords.append(h + np.column_stack([r * np.cos(phi), r * np.sin(phi)]))
    coords.append(rng.uniform(0, spec.area_km, size=(n - nc, 2)))
    xy = np.vstack(coords)
    dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(dist, 0.0)
    transit = dist / spec.vehicle_speed_kmh * 60.0
    caps = np.where(np.arange(n) < nc, spec.center_dock_capacity, spec.outer_dock_capacity)
    names = [f"C{i}" if i < nc else f"S{i}" for i in range(n)]
    return require_valid(
        NetworkInstance(
            capacities=caps,
            distances=dist,
            transit_times=transit,
            vehicle_capacities=[spec.vehicle_capacity] * spec.vehicle_count,
            handling_time=spec.handling_time,
            initial_station_inventory=caps // 2,
            initial_vehicle_inventory=[0] * spec.vehicle_count,
            initial_vehicle_location=rng.choice(n, size=spec.vehicle_count, replace=False),
            revisit_wait=spec.revisit_wait,
            station_names=names,
            center_stations=range(nc),
        )
    )


def generate_day(
    instance: NetworkInstance, params: DemandParams, seed: int, horizon: float = HORIZON
) -> TripSet:
    """One day of trips, sorted by departure time.

    Arrivals may fall after ``horizon``; the simulator never executes those returns.
    """
    rng = np.random.default_rng(seed)
    n = instance.station_count
    hours = len(params.peak_shape)
    if hours * 60.0 < horizon:
        raise ValueError("peak_shape must cover the whole horizon")
    sigma = params.day_variability
    day_mult = float(np.exp(sigma * rng.standard_normal() - 0.5 * sigma * sigma))
    rates = params.base_rate * params.hourly_factors() * day_mult
    peak = params.peak_hours()
    centers = np.asarray(instance.center_stations, dtype=np.int64)
    is_center = np.zeros(n, dtype=bool)
    is_center[centers] = True

    departs, origins, dests = [], [], []
    for h in range(hours):
        start = 60.0 * h
        if start >= horizon:
            break
        width = min(60.0, horizon - start)
        counts = rng.poisson(rates[h] * width / 60.0, size=n)
        total = int(counts.sum())
        if total == 0:
            continue
        o = np.repeat(np.arange(n), counts)
        t = start + rng.uniform(0.0, width, size=total)
        # uniform over the other stations
        d = rng.integers(0, n - 1, size=total)
        d = d + (d >= o)
        if peak[h] and len(centers) and params.commuter_fraction > 0:
            commute = (~is_center[o]) & (rng.uniform(size=total) < params.commuter_fraction)
            d[commute] = rng.choice(centers, size=int(commute.sum()))
        departs.append(t)
        origins.append(o)
        dests.append(d)
    if not departs:
        return []
    t = np.concatenate(departs)
    o = np.concatenate(origins)
    d = np.concatenate(dests)
    ride = instance.distances[o, d] / params.mean_ride_speed * 60.0
    noise = rng.exponential(params.ride_noise, size=len(t)) if params.ride_noise > 0 else 0.0
    arrive = t + np.maximum(ride + noise, 1e-3)
    order = np.argsort(t, kind="stable")
    return [Trip(float(t[i]), int(o[i]), float(arrive[i]), int(d[i])) for i in order]


class DatasetSplit(NamedTuple):
    train: list[TripSet]
    test: list[TripSet]
    train_seeds: list[int]
    test_seeds: list[int]


def day_seeds(seed: int, day_count: int) -> list[int]:
    seeds = [int(x) for x in np.random.SeedSequence(seed).generate_state(day_count, dtype=np.uint64)]
    if len(set(seeds)) != day_count:
        raise RuntimeError("day seed collision; choose another master seed")
    return seeds


def split_count(day_count: int, train_fraction: float) -> int:
    # tolerate float noise such as 2/3 * 150 = 99.99999999999999
    return int(np.floor(train_fraction * day_count + 1e-9))


def generate_dataset(
    instance: NetworkInstance,
    params: DemandParams,
    day_count: int,
    train_fraction: float = 2 / 3,
    seed: int = 0,
    horizon: float = HORIZON,
) -> DatasetSplit:
    if day_count < 2:
        raise ValueError("day_count must be at least 2")
    seeds = day_seeds(seed, day_count)
    days = [generate_day(instance, params, s, horizon) for s in seeds]
    k = split_count(day_count, train_fraction)
    return DatasetSplit(days[:k], days[k:], seeds[:k], seeds[k:])

"""
Point-queue-with-storage simulator.

A vehicle entering a link becomes eligible to leave after length/free_speed
seconds. Exits from each link are throttled by a capacity token bucket and
blocked while the downstream link is at storage. Single-threaded, one-second
steps, idle stretches skipped.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from services.road_network import RoadNetwork, TravelTimes
from utils.errors import GridlockError, InvariantViolationError

logger = logging.getLogger(__name__)

TOKEN = 3600.0  # one exit, in veh/h x s units


@dataclass
class RoutedTrip:
    trip_id: int
    departure_s: int
    route: List[int]


class _Vehicle:
    __slots__ = ("trip_id", "departure_s", "route", "pos", "entered_at", "eligible_at")

    def __init__(self, trip: RoutedTrip):
        self.trip_id = trip.trip_id
        self.departure_s = trip.departure_s
        self.route = trip.route
        self.pos = 0
        self.entered_at = 0
        self.eligible_at = 0.0


@dataclass
class NetworkState:
    """Per-link, per-interval observables"""

    link_ids: List[int]
    interval_s: int
    volume: np.ndarray  # [links, intervals] exits
    speed: np.ndarray  # [links, intervals] m/s
    queue: np.ndarray  # [links, intervals] vehicles queued at interval end
    mean_traversal: np.ndarray  # [links, intervals] s, free time where no exits

    @property
    def n_intervals(self) -> int:
        return self.volume.shape[1]

    def travel_times(self) -> TravelTimes:
        return TravelTimes(self.link_ids, self.mean_traversal, self.interval_s)

    def to_frame(self) -> pd.DataFrame:
        n_links, n_intervals = self.volume.shape
        return pd.DataFrame(
            {
                "link_id": np.repeat(self.link_ids, n_intervals),
                "interval": np.tile(np.arange(n_intervals), n_links),
                "start_s": np.tile(np.arange(n_intervals) * self.interval_s, n_links),
                "volume": self.volume.ravel(),
                "speed_ms": self.speed.ravel(),
                "queue": self.queue.ravel(),
            }
        )


@dataclass
class SimulationResult:
    state: NetworkState
    experienced: Dict[int, float]  # trip_id -> seconds, finished trips only
    entered: int = 0
    exited: int = 0
    on_network: int = 0
    unfinished: List[int] = field(default_factory=list)


def simulate_day(
    trips: Sequence[RoutedTrip],
    network: RoadNetwork,
    interval_s: int = 900,
    end_time_s: int = 86400,
    gridlock_s: int = 600,
    step_s: int = 1,
) -> SimulationResult:
    """Run one day of queue dynamics over pre-routed trips"""
    link_ids = network.link_ids
    row = {lid: i for i, lid in enumerate(link_ids)}
    links = [network.links[lid] for lid in link_ids]
    n_links = len(links)
    n_intervals = int(math.ceil(end_time_s / interval_s))

    volume = np.zeros((n_links, n_intervals), dtype=np.int64)
    traversal = np.zeros((n_links, n_intervals))
    queue = np.zeros((n_links, n_intervals), dtype=np.int64)

    on_link = [deque() for _ in range(n_links)]
    link_in = np.zeros(n_links, dtype=np.int64)
    link_out = np.zeros(n_links, dtype=np.int64)
    bucket = np.array([max(TOKEN, l.capacity) for l in links])
    tokens = bucket.copy()
    refill = np.array([l.capacity for l in links]) * step_s

    experienced: Dict[int, float] = {}
    pending = deque(sorted((t for t in trips), key=lambda t: (t.departure_s, t.trip_id)))
    waiting: Dict[int, deque] = {}  # first link row -> vehicles held at the origin
    entered = exited = on_network = 0

    def snapshot(interval: int, now: int):
        for i in range(n_links):
            queue[i, interval] = sum(1 for v in on_link[i] if v.eligible_at <= now)
        if entered != exited + on_network:
            raise InvariantViolationError(
                f"Flow conservation broken at {now}s: entered {entered} != exited {exited} + on network {on_network}"
            )
        if not np.array_equal(link_in - link_out, np.array([len(q) for q in on_link])):
            raise InvariantViolationError(f"Link flow conservation broken at {now}s")

    t = 0
    next_boundary = interval_s
    stalled = 0
    while t < end_time_s:
        moved = False

        # Step 1: departures join their first link's origin buffer
        while pending and pending[0].departure_s <= t:
            trip = pending.popleft()
            if not trip.route:
                experienced[trip.trip_id] = 0.0
                continue
            waiting.setdefault(row[trip.route[0]], deque()).append(_Vehicle(trip))

        # Step 2: exits, link by link in link_id order
        blocked = []
        for i in range(n_links):
            q = on_link[i]
            while q and q[0].eligible_at <= t and tokens[i] >= TOKEN:
                vehicle = q[0]
                if vehicle.pos + 1 < len(vehicle.route):
                    j = row[vehicle.route[vehicle.pos + 1]]
                    if len(on_link[j]) >= links[j].storage:
                        blocked.append(link_ids[i])
                        break
                q.popleft()
                tokens[i] -= TOKEN
                link_out[i] += 1
                interval = min(t // interval_s, n_intervals - 1)
                volume[i, interval] += 1
                traversal[i, interval] += t - vehicle.entered_at
                moved = True
                if vehicle.pos + 1 < len(vehicle.route):
                    vehicle.pos += 1
                    _enter(vehicle, j, t, links, on_link, link_in)
                else:
                    exited += 1
                    on_network -= 1
                    experienced[vehicle.trip_id] = float(t - vehicle.departure_s)

        # Step 3: held vehicles enter when the first link has room
        for i in sorted(waiting):
            buffer = waiting[i]
            while buffer and len(on_link[i]) < links[i].storage:
                _enter(buffer.popleft(), i, t, links, on_link, link_in)
                entered += 1
                on_network += 1
                moved = True
        waiting = {i: b for i, b in waiting.items() if b}

        # Step 4: gridlock detection
        stalled = 0 if moved or not blocked else stalled + step_s
        if stalled >= gridlock_s:
            raise GridlockError(
                f"No vehicle moved for {stalled}s with blocked heads on links {sorted(set(blocked))}",
                blocked_links=sorted(set(blocked)),
                time_s=t,
            )

        # Step 5: advance, skipping idle stretches
        nxt = t + step_s
        if not moved and not blocked:
            candidates = []
            if pending:
                candidates.append(pending[0].departure_s)
            for i in range(n_links):
                if on_link[i]:
                    head = on_link[i][0]
                    ready = int(math.ceil(head.eligible_at))
                    deficit = max(0.0, TOKEN - tokens[i])
                    candidates.append(max(ready, t + int(math.ceil(deficit / refill[i])) * step_s))
            if waiting:
                candidates.append(nxt)
            nxt = max(nxt, min(candidates)) if candidates else end_time_s
        nxt = min(nxt, end_time_s)
        while next_boundary <= nxt and next_boundary <= end_time_s:
            snapshot(next_boundary // interval_s - 1, next_boundary)
            next_boundary += interval_s
        tokens = np.minimum(bucket, tokens + refill * ((nxt - t) // step_s))
        t = nxt
        if not pending and not waiting and on_network == 0:
            break

    while next_boundary <= end_time_s:
        snapshot(next_boundary // interval_s - 1, next_boundary)
        next_boundary += interval_s

    free_time = np.array([l.free_time for l in links])
    lengths = np.array([l.length for l in links])
    mean_traversal = np.where(volume > 0, traversal / np.maximum(volume, 1), free_time[:, None])
    speed = np.minimum(lengths[:, None] / mean_traversal, np.array([l.free_speed for l in links])[:, None])

    unfinished = sorted(v.trip_id for q in on_link for v in q)
    unfinished += sorted(v.trip_id for b in waiting.values() for v in b)
    unfinished += [trip.trip_id for trip in pending]
    state = NetworkState(list(link_ids), interval_s, volume, speed, queue, mean_traversal)
    if unfinished:
        logger.warning(f"⚠️ {len(unfinished)} trips still travelling at end of day")
    return SimulationResult(state, experienced, entered, exited, on_network, unfinished)


def _enter(vehicle: _Vehicle, i: int, t: int, links, on_link, link_in) -> None:
    vehicle.entered_at = t
    vehicle.eligible_at = t + links[i].free_time
    on_link[i].append(vehicle)
    link_in[i] += 1

"""
Simulation Agent - turns located plans into trips, initialises modes,
routes car trips and loads them onto the road network with iterative
re-routing, then summarises traffic observables
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.schedule import DAY_MINUTES, Household
from services.queue_engine import NetworkState, RoutedTrip, SimulationResult, simulate_day
from services.road_network import RoadNetwork, TravelTimes
from utils.config import SimulationConfig
from utils.errors import ConfigError, UnroutableTripError
from utils.io_store import write_table
from utils.rng import stream

logger = logging.getLogger(__name__)

TRIP_FIELDS = ["trip_id", "household_id", "person_id", "origin_taz", "dest_taz", "departure_s", "mode"]
CAR = "car"
NON_CAR = "non_car"


# =========================
# TRIPS AND MODES
# =========================
def extract_trips(plans: pd.DataFrame) -> Tuple[pd.DataFrame, int]:
    """Consecutive activities in different zones make a trip leaving at the earlier activity's end"""
    if plans.empty:
        return pd.DataFrame(columns=TRIP_FIELDS), 0
    ordered = plans.sort_values(["household_id", "person_id", "seq"], kind="mergesort")
    records = []
    intrazonal = 0
    for (household_id, person_id), part in ordered.groupby(["household_id", "person_id"], sort=False):
        zones = part["taz_id"].to_numpy()
        ends = part["end"].to_numpy()
        for k in range(len(part) - 1):
            if zones[k] == zones[k + 1]:
                intrazonal += 1
                continue
            departure = int(ends[k]) * 60
            if departure >= DAY_MINUTES * 60:
                continue
            records.append(
                {
                    "household_id": int(household_id),
                    "person_id": int(person_id),
                    "origin_taz": int(zones[k]),
                    "dest_taz": int(zones[k + 1]),
                    "departure_s": departure,
                    "mode": "",
                }
            )
    trips = pd.DataFrame.from_records(records, columns=[f for f in TRIP_FIELDS if f != "trip_id"])
    trips.insert(0, "trip_id", np.arange(1, len(trips) + 1, dtype=np.int64))
    return trips, intrazonal


def init_modes(households: Sequence[Household], trips: pd.DataFrame, mode_shares: Dict[str, float],
               rng_seed: int) -> pd.DataFrame:
    """Zero-vehicle households travel non-car; other trips are car with the regional car share"""
    if abs(sum(mode_shares.values()) - 1.0) > 1e-9:
        raise ConfigError("Mode shares must sum to 1", key="simulation.mode_shares")
    trips = trips.copy()
    if trips.empty:
        return trips
    vehicles = {h.household_id: h.vehicles for h in households}
    eligible = trips["household_id"].map(lambda hid: vehicles.get(int(hid), 0) > 0).to_numpy(dtype=bool)
    draws = stream(rng_seed, 0).random(len(trips))
    car = eligible & (draws < mode_shares.get(CAR, 0.0))
    trips["mode"] = np.where(car, CAR, NON_CAR)
    return trips


# =========================
# ASSIGNMENT
# =========================
@dataclass
class AssignmentResult:
    result: SimulationResult
    routes: Dict[int, List[int]]
    gap_history: List[float]
    unroutable: List[int] = field(default_factory=list)

    @property
    def state(self) -> NetworkState:
        return self.result.state


def route_trips(trips: pd.DataFrame, network: RoadNetwork, zone_nodes: Dict[int, int],
                times: Optional[TravelTimes] = None) -> Tuple[Dict[int, List[int]], List[int]]:
    """Shortest routes for car trips; unroutable trips are dropped and returned"""
    routes, unroutable = {}, []
    for trip in trips.itertuples(index=False):
        if trip.mode != CAR:
            continue
        try:
            routes[int(trip.trip_id)] = network.route(
                zone_nodes[int(trip.origin_taz)], zone_nodes[int(trip.dest_taz)], trip.departure_s, times
            )
        except UnroutableTripError:
            unroutable.append(int(trip.trip_id))
    if unroutable:
        logger.warning(f"⚠️ Dropped {len(unroutable)} unroutable trips")
    return routes, unroutable


def relative_gap(result: SimulationResult, routes: Dict[int, List[int]], departures: Dict[int, int],
                 network: RoadNetwork, endpoints: Dict[int, Tuple[int, int]]) -> float:
    """Mean experienced / shortest travel time over finished trips, minus one"""
    times = result.state.travel_times()
    ratios = []
    for trip_id, experienced in sorted(result.experienced.items()):
        if not routes.get(trip_id):
            continue
        origin, dest = endpoints[trip_id]
        shortest = network.path_time(network.route(origin, dest, departures[trip_id], times), departures[trip_id], times)
        if shortest > 0:
            ratios.append(experienced / shortest)
    return float(np.mean(ratios) - 1.0) if ratios else 0.0


def iterate_assignment(
    trips: pd.DataFrame,
    network: RoadNetwork,
    zone_nodes: Dict[int, int],
    config: SimulationConfig,
    rng_seed: int,
    n_iter: Optional[int] = None,
    reroute_fraction: Optional[float] = None,
) -> AssignmentResult:
    """Simulate, then re-route a random share of car trips against experienced times, n_iter times"""
    n_iter = config.iterations if n_iter is None else n_iter
    fraction = config.reroute_fraction if reroute_fraction is None else reroute_fraction
    if n_iter < 1:
        raise ConfigError("simulation.iterations must be >= 1", key="simulation.iterations")

    routes, unroutable = route_trips(trips, network, zone_nodes)
    car = trips[trips["trip_id"].isin(list(routes))]
    departures = {int(t.trip_id): int(t.departure_s) for t in car.itertuples(index=False)}
    endpoints = {
        int(t.trip_id): (zone_nodes[int(t.origin_taz)], zone_nodes[int(t.dest_taz)]) for t in car.itertuples(index=False)
    }
    trip_ids = sorted(routes)

    gaps: List[float] = []
    result = None
    for iteration in range(n_iter):
        routed = [RoutedTrip(tid, departures[tid], routes[tid]) for tid in trip_ids]
        result = simulate_day(routed, network, config.interval_s, config.end_time_s, config.gridlock_s, config.step_s)
        gaps.append(relative_gap(result, routes, departures, network, endpoints))
        logger.info(f"  • iteration {iteration + 1}/{n_iter}: relative gap {gaps[-1]:.4f}")
        if iteration == n_iter - 1 or fraction <= 0 or not trip_ids:
            continue

        # Step: re-route a random subset against this iteration's experienced times
        times = result.state.travel_times()
        rng = stream(rng_seed, iteration)
        n_pick = int(round(fraction * len(trip_ids)))
        picked = sorted(rng.choice(trip_ids, size=n_pick, replace=False).tolist()) if n_pick else []
        switched = 0
        for tid in picked:
            origin, dest = endpoints[tid]
            candidate = network.route(origin, dest, departures[tid], times)
            current_time = network.path_time(routes[tid], departures[tid], times)
            candidate_time = network.path_time(candidate, departures[tid], times)
            if candidate != routes[tid] and candidate_time < current_time * (1.0 - config.switch_threshold):
                routes[tid] = candidate
                switched += 1
        logger.debug(f"    switched {switched}/{len(picked)} re-routed trips")
    return AssignmentResult(result, routes, gaps, unroutable)


# =========================
# SUMMARIES
# =========================
@dataclass
class TrafficSummary:
    vmt: pd.DataFrame  # interval, start_s, vmt_km
    od_matrix: pd.DataFrame  # zones x zones trip counts
    corridor: pd.DataFrame  # link_id, interval, start_s, volume, speed_ms


def summarize(state: NetworkState, network: RoadNetwork, trips: pd.DataFrame, zone_ids: Sequence[int],
              corridor_links: Sequence[int] = ()) -> TrafficSummary:
    """VMT per interval, OD trip counts and corridor link extracts"""
    unknown = [lid for lid in corridor_links if lid not in network.links]
    if unknown:
        raise ConfigError(f"Unknown corridor links {unknown}", key="simulation.corridor_links")

    lengths_km = np.array([network.links[lid].length for lid in state.link_ids]) / 1000.0
    vmt = pd.DataFrame(
        {
            "interval": np.arange(state.n_intervals),
            "start_s": np.arange(state.n_intervals) * state.interval_s,
            "vmt_km": (state.volume * lengths_km[:, None]).sum(axis=0) if len(lengths_km) else np.zeros(state.n_intervals),
        }
    )

    zones = sorted(int(z) for z in zone_ids)
    od = pd.DataFrame(0, index=pd.Index(zones, name="origin_taz"), columns=zones, dtype=np.int64)
    if not trips.empty:
        counts = trips.groupby(["origin_taz", "dest_taz"]).size()
        for (o, d), n in counts.items():
            od.loc[int(o), int(d)] += int(n)

    frame = state.to_frame()
    corridor = frame[frame["link_id"].isin(list(corridor_links))][["link_id", "interval", "start_s", "volume", "speed_ms"]]
    return TrafficSummary(vmt, od, corridor.reset_index(drop=True))


# =========================
# AGENT
# =========================
class SimulationAgent:
    """Worker agent for the mesoscopic traffic stage"""

    def __init__(self, config: Optional[SimulationConfig] = None, agent_id: str = "simulation_agent"):
        self.agent_id = agent_id
        self.capabilities = ["extract_trips", "init_modes", "route", "iterate_assignment", "summarize"]
        self.config = config or SimulationConfig()
        logger.info(f"✅ Simulation Agent initialized: {self.agent_id}")

    def run(self, plans: pd.DataFrame, households: Sequence[Household], network: RoadNetwork, zones,
            modes_seed: int, simulation_seed: int, n_iter: Optional[int] = None) -> Dict:
        logger.info("🚗 Simulating the day...")
        trips, intrazonal = extract_trips(plans)
        logger.info(f"  • {len(trips)} trips, {intrazonal} intrazonal pairs dropped")
        trips = init_modes(households, trips, self.config.mode_shares, modes_seed)
        zone_nodes = network.map_zones(zones)
        assignment = iterate_assignment(trips, network, zone_nodes, self.config, simulation_seed, n_iter)
        summary = summarize(assignment.state, network, trips, zones.ids.tolist(), self.config.corridor_links)
        return {
            "trips": trips,
            "intrazonal": intrazonal,
            "assignment": assignment,
            "summary": summary,
        }

    def write_outputs(self, outcome: Dict, out_dir: str) -> Dict[str, str]:
        summary: TrafficSummary = outcome["summary"]
        assignment: AssignmentResult = outcome["assignment"]
        gaps = pd.DataFrame({"iteration": np.arange(1, len(assignment.gap_history) + 1),
                             "relative_gap": assignment.gap_history})
        return {
            "trips": write_table(outcome["trips"], f"{out_dir}/trips.csv"),
            "link_stats": write_table(assignment.state.to_frame(), f"{out_dir}/link_stats.csv"),
            "vmt": write_table(summary.vmt, f"{out_dir}/vmt.csv"),
            "od": write_table(summary.od_matrix.reset_index(), f"{out_dir}/od.csv"),
            "corridor": write_table(summary.corridor, f"{out_dir}/corridor.csv"),
            "gaps": write_table(gaps, f"{out_dir}/relative_gap.csv"),
        }

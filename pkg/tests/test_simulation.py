import numpy as np
import pandas as pd
import pytest

from agents.location_agent import PLAN_FIELDS, read_zones
from agents.simulation_agent import (
    CAR,
    NON_CAR,
    SimulationAgent,
    extract_trips,
    init_modes,
    iterate_assignment,
    summarize,
)
from services.queue_engine import RoutedTrip, simulate_day
from services.road_network import Link, RoadNetwork, read_network
from tests.conftest import make_household, make_person
from utils.config import SimulationConfig
from utils.errors import ConfigError

ALL_CAR = {"car": 1.0, "non_car": 0.0}


def _plans(rows):
    return pd.DataFrame.from_records(rows, columns=PLAN_FIELDS)


@pytest.fixture
def commute_plans():
    return _plans(
        [
            (1, 10, 0, "Home", 0, 480, 1, 0, 0),
            (1, 10, 1, "Work", 480, 1020, 4, 0, 0),
            (1, 10, 2, "Home", 1020, 1440, 1, 0, 0),
            (2, 20, 0, "Home", 0, 600, 2, 0, 0),
            (2, 20, 1, "BuyGoods", 600, 660, 2, 0, 0),
            (2, 20, 2, "Home", 660, 1440, 2, 0, 0),
        ]
    )


@pytest.fixture
def households():
    return [
        make_household(1, [make_person(10)], vehicles=1, home_taz=1),
        make_household(2, [make_person(20)], vehicles=0, home_taz=2),
    ]


def test_extract_trips(commute_plans):
    trips, intrazonal = extract_trips(commute_plans)
    assert intrazonal == 2
    assert trips["trip_id"].tolist() == [1, 2]
    assert trips[["origin_taz", "dest_taz"]].values.tolist() == [[1, 4], [4, 1]]
    assert trips["departure_s"].tolist() == [480 * 60, 1020 * 60]


def test_extract_trips_empty():
    trips, intrazonal = extract_trips(_plans([]))
    assert trips.empty and intrazonal == 0


def test_init_modes(households):
    trips = pd.DataFrame(
        {
            "trip_id": [1, 2, 3],
            "household_id": [1, 1, 2],
            "person_id": [10, 10, 20],
            "origin_taz": [1, 4, 2],
            "dest_taz": [4, 1, 3],
            "departure_s": [100, 200, 300],
            "mode": ["", "", ""],
        }
    )
    moded = init_modes(households, trips, ALL_CAR, 5)
    assert moded["mode"].tolist() == [CAR, CAR, NON_CAR]
    none = init_modes(households, trips, {"car": 0.0, "non_car": 1.0}, 5)
    assert set(none["mode"]) == {NON_CAR}
    assert init_modes(households, trips, {"car": 0.6, "non_car": 0.4}, 9).equals(
        init_modes(households, trips, {"car": 0.6, "non_car": 0.4}, 9)
    )
    with pytest.raises(ConfigError):
        init_modes(households, trips, {"car": 0.6, "non_car": 0.6}, 5)


def test_single_trip_assignment_and_summary(toy_world, commute_plans, households):
    network = read_network(toy_world["network"], toy_world["nodes"])
    zones = read_zones(toy_world["zones"])
    trips, _ = extract_trips(commute_plans)
    trips = init_modes(households, trips, ALL_CAR, 1)
    config = SimulationConfig(mode_shares=ALL_CAR, iterations=2, corridor_links=[5])

    assignment = iterate_assignment(trips, network, network.map_zones(zones), config, 3)
    assert assignment.routes == {1: [5], 2: [6]}
    assert len(assignment.gap_history) == 2
    # uncongested: experienced time rounds the 191 s diagonal up to the next second
    assert all(0.0 <= gap < 0.01 for gap in assignment.gap_history)
    assert assignment.result.exited == 2

    summary = summarize(assignment.state, network, trips, zones.ids.tolist(), config.corridor_links)
    diagonal_km = np.hypot(3000.0, 3000.0) / 1000.0
    assert summary.vmt["vmt_km"].sum() == pytest.approx(2 * diagonal_km)
    assert summary.vmt.loc[32, "vmt_km"] == pytest.approx(diagonal_km)
    assert summary.od_matrix.loc[1, 4] == 1 and summary.od_matrix.loc[4, 1] == 1
    assert summary.od_matrix.values.sum() == 2
    assert set(summary.corridor["link_id"]) == {5}
    assert summary.corridor["volume"].sum() == 1


def test_unknown_corridor_link(toy_world, commute_plans, households):
    network = read_network(toy_world["network"], toy_world["nodes"])
    trips, _ = extract_trips(commute_plans)
    result = iterate_assignment(init_modes(households, trips, ALL_CAR, 1), network, {1: 1, 4: 4},
                                SimulationConfig(mode_shares=ALL_CAR, iterations=1), 0)
    with pytest.raises(ConfigError):
        summarize(result.state, network, trips, [1, 2, 3, 4], [99])


def test_zero_iterations_rejected(toy_world, commute_plans, households):
    network = read_network(toy_world["network"], toy_world["nodes"])
    trips, _ = extract_trips(commute_plans)
    with pytest.raises(ConfigError):
        iterate_assignment(trips, network, {1: 1, 4: 4}, SimulationConfig(), 0, n_iter=0)


def test_agent_run_writes_outputs(tmp_path, toy_world, commute_plans, households):
    network = read_network(toy_world["network"], toy_world["nodes"])
    zones = read_zones(toy_world["zones"])
    agent = SimulationAgent(SimulationConfig(mode_shares=ALL_CAR, iterations=2, reroute_fraction=0.5))
    outcome = agent.run(commute_plans, households, network, zones, 1, 2)
    written = agent.write_outputs(outcome, str(tmp_path))
    assert set(written) == {"trips", "link_stats", "vmt", "od", "corridor", "gaps"}
    gaps = pd.read_csv(written["gaps"])
    assert gaps["iteration"].tolist() == [1, 2]
    again = agent.run(commute_plans, households, network, zones, 1, 2)
    assert again["assignment"].routes == outcome["assignment"].routes
    assert again["assignment"].gap_history == outcome["assignment"].gap_history


def _bottleneck_diamond():
    # upper path 1-2-4 starts with a 360 veh/h link; lower path 1-3-4 ties at free flow
    return RoadNetwork(
        [
            Link(1, 1, 2, 150.0, 15.0, 360),
            Link(2, 2, 4, 150.0, 15.0, 36000),
            Link(3, 1, 3, 150.0, 15.0, 36000),
            Link(4, 3, 4, 150.0, 15.0, 36000),
        ]
    )


def _corridor_trips(n, spacing_s=5):
    return pd.DataFrame(
        {
            "trip_id": list(range(1, n + 1)),
            "household_id": list(range(1, n + 1)),
            "person_id": list(range(1, n + 1)),
            "origin_taz": [1] * n,
            "dest_taz": [4] * n,
            "departure_s": [spacing_s * k for k in range(n)],
            "mode": [CAR] * n,
        }
    )


def test_rerouting_on_diamond_never_raises_the_gap():
    network = _bottleneck_diamond()
    config = SimulationConfig(mode_shares=ALL_CAR, iterations=20, reroute_fraction=0.3)
    assignment = iterate_assignment(_corridor_trips(100), network, {1: 1, 4: 4}, config, 4)

    gaps = assignment.gap_history
    assert len(gaps) == 20
    assert all(later <= earlier + 1e-12 for earlier, later in zip(gaps[5:], gaps[6:]))
    assert gaps[-1] < gaps[0]
    lower = sum(route == [3, 4] for route in assignment.routes.values())
    assert 0 < lower < 100
    assert assignment.result.exited == 100


def test_more_demand_never_speeds_up_a_trip():
    network = RoadNetwork([Link(1, 1, 2, 150.0, 15.0, 360), Link(2, 2, 3, 150.0, 15.0, 36000)])
    base = [RoutedTrip(k, 10 * k, [1, 2]) for k in range(1, 41)]
    extra = [RoutedTrip(100 + k, 10 * k + 3, [1, 2]) for k in range(1, 41)]
    light = simulate_day(base, network)
    heavy = simulate_day(base + extra, network)
    for trip in base:
        assert heavy.experienced[trip.trip_id] >= light.experienced[trip.trip_id]
    assert sum(heavy.experienced[t.trip_id] for t in base) > sum(light.experienced[t.trip_id] for t in base)
    assert heavy.state.mean_traversal[0, 0] >= light.state.mean_traversal[0, 0]

import numpy as np
import pytest

from services.queue_engine import RoutedTrip, simulate_day
from services.road_network import Link, RoadNetwork
from utils.errors import GridlockError


def test_free_flow_traversal_time():
    network = RoadNetwork([Link(1, 1, 2, 1500.0, 15.0, 1800)])
    result = simulate_day([RoutedTrip(1, 0, [1])], network)
    assert result.experienced == {1: 100.0}
    assert result.state.volume[0, 0] == 1
    assert result.state.speed[0, 0] == pytest.approx(15.0)


def test_capacity_spaces_exits():
    # 360 veh/h lets one vehicle out every 10 s
    network = RoadNetwork([Link(1, 1, 2, 1500.0, 15.0, 360)])
    trips = [RoutedTrip(i, 0, [1]) for i in range(1, 6)]
    result = simulate_day(trips, network)
    assert [result.experienced[i] for i in range(1, 6)] == [100.0, 110.0, 120.0, 130.0, 140.0]
    assert result.state.mean_traversal[0, 0] == pytest.approx(120.0)
    assert result.state.speed[0, 0] == pytest.approx(12.5)


def test_flow_is_conserved():
    network = RoadNetwork(
        [
            Link(1, 1, 2, 1000.0, 10.0, 900),
            Link(2, 2, 3, 500.0, 10.0, 900),
            Link(3, 1, 3, 3000.0, 20.0, 1800),
        ]
    )
    trips = [RoutedTrip(i, (i % 7) * 60, [1, 2] if i % 2 else [3]) for i in range(1, 41)]
    result = simulate_day(trips, network)
    assert result.entered == 40
    assert result.exited == 40
    assert result.on_network == 0
    assert result.unfinished == []
    # every two-link trip is counted once on each link
    assert result.state.volume[0].sum() == result.state.volume[1].sum() == 20
    assert result.state.volume[2].sum() == 20
    assert all(t >= 0 for t in result.experienced.values())


def test_unfinished_trips_are_reported():
    network = RoadNetwork([Link(1, 1, 2, 1500.0, 15.0, 1800)])
    result = simulate_day([RoutedTrip(1, 86350, [1])], network)
    assert result.unfinished == [1]
    assert 1 not in result.experienced


def test_empty_route_finishes_immediately():
    network = RoadNetwork([Link(1, 1, 2, 1500.0, 15.0, 1800)])
    result = simulate_day([RoutedTrip(7, 3600, [])], network)
    assert result.experienced == {7: 0.0}
    assert result.state.volume.sum() == 0


def test_storage_deadlock_raises_gridlock():
    # two one-vehicle links pointing at each other, each head waiting for the other
    network = RoadNetwork([Link(1, 1, 2, 7.5, 7.5, 3600), Link(2, 2, 1, 7.5, 7.5, 3600)])
    trips = [RoutedTrip(1, 0, [1, 2]), RoutedTrip(2, 0, [2, 1])]
    with pytest.raises(GridlockError) as info:
        simulate_day(trips, network, gridlock_s=60)
    assert info.value.exit_code == 4


def test_observables_table_shape():
    network = RoadNetwork([Link(1, 1, 2, 1500.0, 15.0, 1800), Link(2, 2, 1, 1500.0, 15.0, 1800)])
    result = simulate_day([RoutedTrip(1, 1000, [1])], network, interval_s=900)
    frame = result.state.to_frame()
    assert len(frame) == 2 * 96
    assert frame.loc[(frame["link_id"] == 1) & (frame["interval"] == 1), "volume"].item() == 1
    assert np.isclose(frame["speed_ms"], 15.0).all()

"""Location assignment: anchors, infill, event sharing and refinement"""

import numpy as np
import pytest

from agents.coordination_agent import build_event_table
from agents.location_agent import (
    DistanceSampler,
    LocationAgent,
    Placement,
    Zone,
    ZoneTable,
    assign_household,
    assign_mandatory,
    assign_nonmandatory,
    read_zones,
    refine_spatial,
    update_attraction,
)
from tests.conftest import chain, home_day, make_household, make_person, work_day
from utils.config import LocationConfig
from utils.errors import CompatibilityError


ALL_FLAGS = frozenset({"residential", "employment", "education", "commercial", "recreation"})
FLAT = LocationConfig(detour_factor=1.0)


def _zone(taz_id, x, y, *flags):
    return Zone(taz_id, float(x), float(y), frozenset(flags))


@pytest.fixture
def line_zones():
    """Home at the origin, employment zones 2, 5 and 9 km east"""
    return ZoneTable(
        [
            _zone(1, 0, 0, "residential"),
            _zone(2, 2000, 0, "employment"),
            _zone(3, 5000, 0, "employment"),
            _zone(4, 9000, 0, "employment"),
        ]
    )


# =========================
# MANDATORY
# =========================
def test_single_compatible_zone_wins_regardless_of_distance():
    zones = ZoneTable([_zone(1, 0, 0, "residential"), _zone(7, 50000, 0, "employment")])
    for distance in (100.0, 5000.0, 80000.0):
        assert assign_mandatory(1, "Work", DistanceSampler.constant(distance), zones, 0, FLAT) == 7


def test_mandatory_picks_closest_distance_match(line_zones):
    assert assign_mandatory(1, "Work", DistanceSampler.constant(4000.0), line_zones, 0, FLAT) == 3
    assert assign_mandatory(1, "Work", DistanceSampler.constant(8000.0), line_zones, 0, FLAT) == 4


def test_mandatory_tie_goes_to_lower_taz():
    zones = ZoneTable([_zone(1, 0, 0, "residential"), _zone(5, 0, 3000, "employment"), _zone(3, 3000, 0, "employment")])
    assert assign_mandatory(1, "Work", DistanceSampler.constant(3000.0), zones, 0, FLAT) == 3


def test_detour_factor_scales_distance(line_zones):
    # 1.3 x 2 km = 2.6 km and 1.3 x 5 km = 6.5 km; 4 km sits closer to the first
    config = LocationConfig(detour_factor=1.3)
    assert assign_mandatory(1, "Work", DistanceSampler.constant(4000.0), line_zones, 0, config) == 2


def test_zone_without_employment_is_excluded():
    zones = ZoneTable([_zone(1, 0, 0, "residential"), _zone(2, 4000, 0, "commercial"), _zone(3, 20000, 0, "employment")])
    assert assign_mandatory(1, "Work", DistanceSampler.constant(4000.0), zones, 0, FLAT) == 3


def test_no_compatible_zone_raises():
    zones = ZoneTable([_zone(1, 0, 0, "residential"), _zone(2, 4000, 0, "commercial")])
    with pytest.raises(CompatibilityError):
        assign_mandatory(1, "School", DistanceSampler.constant(4000.0), zones, 0, FLAT)


# =========================
# NON-MANDATORY
# =========================
@pytest.fixture
def corridor():
    """Anchors 10 km apart with shops on and off the straight line"""
    return ZoneTable(
        [
            _zone(1, 0, 0, "residential"),
            _zone(2, 10000, 0, "employment"),
            _zone(3, 3000, 0, "commercial"),
            _zone(4, 0, 3000, "commercial"),
            _zone(5, 6000, 0, "commercial"),
        ]
    )


def test_exact_match_on_the_segment_is_selected(corridor):
    taz, relaxed = assign_nonmandatory(1, 2, "Meal", DistanceSampler.constant(3000.0, 0.0), corridor, 0, FLAT)
    assert (taz, relaxed) == (3, False)


def test_zero_beta_reduces_to_distance_matching(corridor):
    config = LocationConfig(detour_factor=1.0, beta=0.0)
    # zones 3 and 4 are both 3 km away; bearing no longer matters and the lower taz wins
    taz, _ = assign_nonmandatory(1, 2, "Meal", DistanceSampler.constant(3000.0, 1.5), corridor, 0, config)
    assert taz == 3
    taz, _ = assign_nonmandatory(1, 2, "Meal", DistanceSampler.constant(5800.0, 1.5), corridor, 0, config)
    assert taz == 5


def test_bearing_term_prefers_matching_direction(corridor):
    config = LocationConfig(detour_factor=1.0, alpha=1.0, beta=1.0)
    # theta_hat = pi/2 favours the shop due north of the origin
    taz, _ = assign_nonmandatory(1, 2, "Meal", DistanceSampler.constant(3000.0, np.pi / 2), corridor, 0, config)
    assert taz == 4


def test_infeasible_travel_time_is_relaxed(corridor):
    config = LocationConfig(detour_factor=1.0, t_max_min=1.0)
    taz, relaxed = assign_nonmandatory(1, 2, "Meal", DistanceSampler.constant(3000.0), corridor, 0, config)
    assert relaxed
    # zones 3 and 5 both lie on the 10 km segment; lowest total time, first index
    assert taz == 3


# =========================
# REFINEMENT
# =========================
def test_update_attraction_hand_case():
    updated = update_attraction(np.array([0.5, 0.5]), np.array([0.7, 0.3]), np.array([0.5, 0.5]), 1.0)
    np.testing.assert_allclose(updated, [0.7, 0.3])


def test_update_attraction_clamps_and_renormalises():
    updated = update_attraction(np.array([0.1, 0.9]), np.array([0.0, 1.0]), np.array([1.0, 0.0]), 1.0)
    np.testing.assert_allclose(updated, [0.0, 1.0])


def _tied_placements(n, choice=0, n_zones=2):
    return [
        Placement("Meal", np.arange(n_zones), np.zeros(n_zones), choice, members=[(i, 1)])
        for i in range(n)
    ]


def test_refine_fixed_point_keeps_weights():
    placements = _tied_placements(2)
    placements[1].choice = 1
    result = refine_spatial(np.array([0.5, 0.5]), np.array([0.5, 0.5]), placements, 0.5, 20, 0.01,
                            np.random.default_rng(0))
    assert result.l1_history == [0.0]
    assert result.best_iteration == 0
    assert result.choices == [0, 1]
    np.testing.assert_allclose(result.attraction, [0.5, 0.5])


def test_refine_two_zone_converges_toward_target():
    placements = _tied_placements(100)
    target = np.array([0.7, 0.3])
    result = refine_spatial(np.array([0.5, 0.5]), target, placements, 0.5, 50, 0.05, np.random.default_rng(3))
    shares = np.bincount(result.choices, minlength=2) / len(result.choices)
    assert result.l1_history[0] == pytest.approx(0.6)
    assert np.abs(shares - target).sum() < 0.1
    assert min(result.l1_history) <= result.l1_history[0]


def test_refine_five_zones_reaches_target_within_fifty_iterations():
    target = np.array([0.1, 0.15, 0.2, 0.25, 0.3])
    placements = _tied_placements(500, choice=0, n_zones=5)
    result = refine_spatial(np.full(5, 0.2), target, placements, 0.5, 50, 0.05, np.random.default_rng(2))
    assert result.l1_history[0] == pytest.approx(1.8)
    assert result.best_iteration <= 50
    shares = np.bincount(result.choices, minlength=5) / len(result.choices)
    assert np.abs(shares - target).sum() < 0.05


def test_refine_never_worse_than_start_on_small_instances():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n_zones = int(rng.integers(2, 6))
        target = rng.dirichlet(np.ones(n_zones))
        placements = [
            Placement("Meal", np.arange(n_zones), rng.random(n_zones) * 0.2, int(rng.integers(n_zones)), members=[(i, 1)])
            for i in range(30)
        ]
        result = refine_spatial(np.ones(n_zones), target, placements, 0.5, 10, 0.01, rng)
        final = np.bincount(result.choices, minlength=n_zones) / 30
        assert np.abs(final - target).sum() <= result.l1_history[0] + 1e-12


def test_relaxed_placements_are_not_redrawn():
    placement = Placement("Meal", np.array([1]), np.array([0.0]), 1, relaxed=True, members=[(1, 1)])
    result = refine_spatial(np.array([0.5, 0.5]), np.array([1.0, 0.0]), [placement], 0.5, 10, 0.01,
                            np.random.default_rng(0))
    assert result.choices == [1]


# =========================
# HOUSEHOLD
# =========================
def _meal_day(pid):
    return chain(pid, ("Home", 0, 720), ("Meal", 720, 780), ("Home", 780, 1440))


def test_all_home_chain_stays_home(toy_world):
    zones = read_zones(toy_world["zones"])
    household = make_household(1, [make_person(1, relationship="Self")], home_taz=3)
    located = assign_household(household, {1: home_day(1)}, [], zones, DistanceSampler.from_config(FLAT), FLAT, 7)
    assert [r["taz_id"] for r in located.records] == [3]
    assert located.placements == []


def test_coordinated_meal_shares_one_zone(toy_world, couple):
    zones = read_zones(toy_world["zones"])
    chains = {1: _meal_day(1), 2: _meal_day(2)}
    events = build_event_table(couple, [chains[1], chains[2]])
    assert any(e.coordinated for e in events)
    located = assign_household(couple, chains, events, zones, DistanceSampler.from_config(FLAT), FLAT, 7)
    meals = [r for r in located.records if r["activity_type"] == "Meal"]
    assert len(meals) == 2
    assert meals[0]["taz_id"] == meals[1]["taz_id"]
    assert meals[0]["event_id"] == meals[1]["event_id"] != 0
    # one placement shared by both participants
    assert [sorted(p.members) for p in located.placements] == [[(1, 1), (2, 1)]]


def test_split_workday_keeps_one_workplace():
    zones = ZoneTable([_zone(1, 0, 0, "residential")] + [_zone(i, 1000 * i, 0, *ALL_FLAGS) for i in range(2, 12)])
    household = make_household(1, [make_person(1, relationship="Self")], home_taz=1)
    split = chain(1, ("Home", 0, 480), ("Work", 480, 720), ("Meal", 720, 780), ("Work", 780, 1020), ("Home", 1020, 1440))
    sampler = DistanceSampler.from_lognormal(4000.0, 0.8)
    for seed in range(50):
        located = assign_household(household, {1: split}, [], zones, sampler, FLAT, seed)
        work = [r["taz_id"] for r in located.records if r["activity_type"] == "Work"]
        assert len(work) == 2 and work[0] == work[1]
        (anchor,) = [p for p in located.placements if p.label == "Work"]
        assert anchor.members == [(1, 1), (1, 3)]


def test_single_zone_map_puts_everything_there():
    zones = ZoneTable([Zone(9, 0.0, 0.0, ALL_FLAGS)])
    household = make_household(4, [make_person(1, relationship="Self")], home_taz=9)
    located = assign_household(household, {1: work_day(1)}, [], zones, DistanceSampler.from_config(FLAT), FLAT, 1)
    assert {r["taz_id"] for r in located.records} == {9}


def test_assign_all_is_deterministic_and_land_use_compatible(toy_world):
    zones = read_zones(toy_world["zones"])
    households, chains = [], {}
    for hid in range(1, 9):
        households.append(make_household(hid, [make_person(hid * 10, relationship="Self")], home_taz=(hid % 4) + 1))
        chains[hid] = {
            hid * 10: chain(hid * 10, ("Home", 0, 480), ("Work", 480, 1020), ("BuyGoods", 1050, 1110), ("Home", 1110, 1440))
        }
    agent = LocationAgent(LocationConfig(refine_max_iter=5))
    sampler = DistanceSampler.from_config(agent.config)
    first, _ = agent.assign_all(households, chains, [], zones, sampler, 42)
    second, _ = agent.assign_all(households, chains, [], zones, sampler, 42)
    assert first.equals(second)

    assert set(first.loc[first["activity_type"] == "Work", "taz_id"]) <= {2, 4}
    assert set(first.loc[first["activity_type"] == "BuyGoods", "taz_id"]) <= {1, 2, 4}
    homes = first[first["activity_type"] == "Home"]
    for row in homes.itertuples(index=False):
        assert row.taz_id == (row.household_id % 4) + 1


def test_lognormal_sampler_median_and_theta_range():
    sampler = DistanceSampler.from_lognormal(4000.0, 0.5)
    rng = np.random.default_rng(0)
    draws = np.array([sampler.sample_km("Meal", rng) for _ in range(4000)])
    assert (draws > 0).all()
    assert np.median(draws) == pytest.approx(4.0, rel=0.1)
    thetas = [sampler.sample_theta(rng) for _ in range(200)]
    assert min(thetas) >= 0.0 and max(thetas) <= np.pi / 2

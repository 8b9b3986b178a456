import numpy as np
import pytest

from agents.coordination_agent import (
    CoordinationAgent,
    assign_roles,
    build_event_table,
    count_pairings,
    participant_distribution,
    read_events,
    role_combinations,
    write_events,
)
from models.events import Role
from models.schedule import DEFAULT_CATALOG
from tests.conftest import chain, home_day, make_household, make_person
from utils.config import CoordinationConfig
from utils.errors import ArityError

WINDOW = 15


def _single(person_id, label, start, end):
    return chain(person_id, ("Home", 0, start), (label, start, end), ("Home", end, 1440))


@pytest.fixture
def family():
    return make_household(
        1,
        [
            make_person(1, age=40, gender="male"),
            make_person(2, age=38, employed=False),
            make_person(3, age=9, employed=False, student=True, has_license=False),
        ],
    )


def _coordinated(events):
    """Coordinated events other than shared time at home"""
    return [e for e in events if e.coordinated and e.activity_type.label != "Home"]


def test_meal_within_window_is_one_event(couple):
    events = build_event_table(couple, [_single(1, "Meal", 1080, 1140), _single(2, "Meal", 1090, 1140)])
    (meal,) = _coordinated(events)
    assert meal.activity_type.label == "Meal"
    assert meal.size == 2
    assert meal.start_window == (1080, 1090)


def test_meal_outside_window_is_two_solo_events(couple):
    events = build_event_table(couple, [_single(1, "Meal", 1080, 1140), _single(2, "Meal", 1100, 1160)])
    assert not _coordinated(events)


def test_window_is_inclusive(couple):
    events = build_event_table(couple, [_single(1, "Meal", 1080, 1140), _single(2, "Meal", 1095, 1140)])
    assert len(_coordinated(events)) == 1


def test_escort_joins_school_and_keeps_school_type(family):
    chains = [home_day(1), _single(2, "Escort", 480, 495), _single(3, "School", 485, 900)]
    (event,) = _coordinated(build_event_table(family, chains))
    assert event.activity_type.label == "School"
    assert {p.activity_type.label for p in event.participants} == {"Escort", "School"}


def test_different_types_do_not_group(couple):
    events = build_event_table(couple, [_single(1, "Meal", 1080, 1140), _single(2, "BuyGoods", 1080, 1140)])
    assert not _coordinated(events)


def test_partition_and_sequential_ids(family):
    chains = [_single(1, "Work", 480, 1020), _single(2, "Escort", 480, 495), _single(3, "School", 485, 900)]
    events = build_event_table(family, chains)
    assert sum(e.size for e in events) == sum(len(c) for c in chains)
    assert [e.event_id for e in events] == list(range(1, len(events) + 1))
    assert all(e.start_window[1] - e.start_window[0] <= WINDOW for e in events)


def test_home_is_grouped_unless_configured_solo(couple):
    chains = [home_day(1), home_day(2)]
    (home,) = build_event_table(couple, chains)
    assert home.coordinated and home.activity_type.label == "Home"
    solo = build_event_table(couple, chains, CoordinationConfig(ungrouped_types=["Home"]))
    assert [e.size for e in solo] == [1, 1]


def test_arity_error(couple):
    with pytest.raises(ArityError):
        build_event_table(couple, [home_day(1)])


def test_roles_from_age_heuristics(family):
    roles = assign_roles(family)
    assert roles == {1: Role.SELF, 2: Role.SPOUSE, 3: Role.CHILD}


def test_roles_parent_and_explicit_relationship():
    household = make_household(
        1,
        [
            make_person(1, age=40),
            make_person(2, age=70, employed=False),
            make_person(3, age=35, relationship="NonRelative"),
        ],
    )
    roles = assign_roles(household)
    assert roles[1] == Role.SELF
    assert roles[2] == Role.PARENT
    assert roles[3] == Role.NON_RELATIVE


def test_participant_distribution_and_role_table(couple):
    events = build_event_table(couple, [_single(1, "Meal", 1080, 1140), _single(2, "Meal", 1085, 1140)])
    solo = build_event_table(couple, [_single(1, "Meal", 600, 660), home_day(2)])
    dist = participant_distribution(events + solo, p_max=8)["Meal"]
    assert dist.get(1) == pytest.approx(0.5)
    assert dist.get(2) == pytest.approx(0.5)
    table = role_combinations(events)
    meals = table[table["activity_type"] == "Meal"]
    assert meals.to_dict("records") == [{"activity_type": "Meal", "roles": "Self+Spouse", "count": 1}]


def test_event_file_round_trip_keeps_participants(tmp_path, family):
    chains = [home_day(1), _single(2, "Escort", 480, 495), _single(3, "School", 485, 900)]
    events = build_event_table(family, chains)
    restored = read_events(write_events(events, str(tmp_path / "events.csv")))
    assert [(e.event_id, e.activity_type.label, e.size, e.coordinated) for e in restored] == [
        (e.event_id, e.activity_type.label, e.size, e.coordinated) for e in events
    ]


def test_agent_builds_events_per_household(couple, family):
    agent = CoordinationAgent(CoordinationConfig())
    chains = {
        1: {1: _single(1, "Meal", 1080, 1140), 2: _single(2, "Meal", 1085, 1140)},
    }
    events = agent.build_events([couple], chains)
    # Home at midnight, the Meal and the Home return at 19:00
    assert count_pairings(events) == 3
    assert count_pairings(_coordinated(events)) == 1
    assert agent.summarize(events)["rates"]["joint_meal_rate"] == 1.0


# =========================
# BRUTE-FORCE ORACLE
# =========================
LABELS = ["Meal", "BuyGoods", "Escort", "School"]
# the oracle enumerates the planted activities only
HOME_SOLO = CoordinationConfig(ungrouped_types=["Home"])


def _partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in _partitions(rest):
        yield [[first]] + partition
        for i in range(len(partition)):
            yield partition[:i] + [[first] + partition[i]] + partition[i + 1:]


def _valid(group, accompanying):
    persons = [pid for pid, _, _ in group]
    if len(set(persons)) != len(persons):
        return False
    starts = [s for _, _, s in group]
    if max(starts) - min(starts) > WINDOW:
        return False
    return len({code for _, code, _ in group if code not in accompanying}) <= 1


def _best_pairings(items, accompanying):
    best = 0
    for partition in _partitions(items):
        if all(_valid(g, accompanying) for g in partition):
            best = max(best, sum(len(g) - 1 for g in partition))
    return best


def _random_case(rng):
    n_members = int(rng.integers(1, 4))
    members = [make_person(i + 1, age=int(rng.integers(8, 70))) for i in range(n_members)]
    chains, items = [], []
    for person in members:
        k = int(rng.integers(0, 3))
        starts = sorted(rng.choice(np.arange(480, 545, 5), size=k, replace=False).tolist())
        starts = [s for i, s in enumerate(starts) if i == 0 or s - starts[i - 1] >= 10]
        records, cursor = [], 0
        for start in starts:
            label = LABELS[int(rng.integers(len(LABELS)))]
            records += [("Home", cursor, start), (label, start, start + 5)]
            items.append((person.person_id, DEFAULT_CATALOG.code(label), start))
            cursor = start + 5
        records.append(("Home", cursor, 1440))
        chains.append(chain(person.person_id, *records))
    return make_household(1, members), chains, items


def test_grouping_matches_brute_force_optimum():
    rng = np.random.default_rng(0)
    accompanying = DEFAULT_CATALOG.accompanying_codes()
    for _ in range(1000):
        household, chains, items = _random_case(rng)
        events = build_event_table(household, chains, HOME_SOLO)
        assert count_pairings(events) == _best_pairings(items, accompanying)

import pandas as pd
import pytest

from tests.conftest import make_household, make_person, work_day
from utils.errors import ConfigError, InvariantViolationError, ReferentialError, SchemaError
from utils.io_store import (
    POPULATION_FIELDS,
    activities_to_chains,
    read_activities,
    read_json,
    read_population,
    write_activities,
    write_json,
    write_population,
)


def _population_rows():
    return [
        dict(household_id=1, person_id=1, age=40, employed=1, student=0, education=3, has_license=1,
             gender="female", income=5, vehicles=1, home_taz=1),
        dict(household_id=1, person_id=2, age=12, employed=0, student=1, education=0, has_license=0,
             gender="male", income=5, vehicles=1, home_taz=1),
        dict(household_id=2, person_id=3, age=70, employed="no", student="no", education=2, has_license="yes",
             gender="male", income=2, vehicles=0, home_taz=2),
    ]


def test_read_population_groups_members(tmp_path):
    path = tmp_path / "population.csv"
    pd.DataFrame(_population_rows()).to_csv(path, index=False)
    households = read_population(str(path), zone_ids=[1, 2])
    assert [h.household_id for h in households] == [1, 2]
    assert households[0].size == 2
    assert households[1].members[0].has_license is True
    assert households[1].members[0].employed is False


def test_negative_age_reports_file_row(tmp_path):
    rows = _population_rows()
    rows[1]["age"] = -3
    path = tmp_path / "population.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    with pytest.raises(InvariantViolationError) as info:
        read_population(str(path))
    assert info.value.details["rows"] == [3]


def test_unknown_home_zone_is_referential(tmp_path):
    path = tmp_path / "population.csv"
    pd.DataFrame(_population_rows()).to_csv(path, index=False)
    with pytest.raises(ReferentialError):
        read_population(str(path), zone_ids=[1])


def test_missing_column_and_missing_file(tmp_path):
    path = tmp_path / "population.csv"
    pd.DataFrame(_population_rows()).drop(columns=["income"]).to_csv(path, index=False)
    with pytest.raises(SchemaError):
        read_population(str(path))
    with pytest.raises(ConfigError):
        read_population(str(tmp_path / "absent.csv"))


def test_inconsistent_household_vehicles(tmp_path):
    rows = _population_rows()
    rows[1]["vehicles"] = 2
    path = tmp_path / "population.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    with pytest.raises(InvariantViolationError):
        read_population(str(path))


def test_written_population_is_read_back(tmp_path):
    household = make_household(7, [make_person(1, relationship="Self"), make_person(2, age=8, employed=False)],
                               day_type="weekend")
    path = write_population([household], str(tmp_path / "population.csv"))
    frame = pd.read_csv(path)
    assert list(frame.columns[: len(POPULATION_FIELDS)]) == POPULATION_FIELDS
    (restored,) = read_population(path)
    assert restored.day_type == "weekend"
    assert restored.members[0].relationship == "Self"
    assert restored.members[1].relationship is None


def test_activities_table_is_sorted_and_chained(tmp_path):
    chains = {2: {5: work_day(5)}, 1: {1: work_day(1, 420, 960)}}
    path = write_activities(chains, str(tmp_path / "activities.csv"))
    frame = read_activities(path)
    assert frame["household_id"].tolist()[:3] == [1, 1, 1]
    restored = activities_to_chains(frame)
    assert restored[1][1].activities[1].start == 420


def test_unknown_activity_label(tmp_path):
    path = tmp_path / "activities.csv"
    pd.DataFrame([dict(household_id=1, person_id=1, activity_type="Nap", start_min=0, end_min=1440)]).to_csv(
        path, index=False
    )
    with pytest.raises(InvariantViolationError):
        activities_to_chains(read_activities(str(path)))


def test_json_is_sorted_and_numpy_safe(tmp_path):
    import numpy as np

    path = write_json({"b": np.int64(2), "a": np.array([1.5])}, str(tmp_path / "x.json"))
    text = open(path).read()
    assert text.index('"a"') < text.index('"b"')
    assert read_json(path) == {"a": [1.5], "b": 2}

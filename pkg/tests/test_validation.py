import os

import pandas as pd
import pytest

from agents.coordination_agent import build_event_table, write_events
from agents.validation_agent import ArtifactSet, ValidationAgent, load_artifacts
from tests.conftest import chain, home_day, work_day
from utils.config import ValidationConfig
from utils.io_store import read_json, write_activities, write_table


def _meal_day(pid, start=720):
    return chain(pid, ("Home", 0, start), ("Meal", start, start + 60), ("Home", start + 60, 1440))


@pytest.fixture
def artifacts(couple):
    chains = [_meal_day(1), _meal_day(2)]
    return ArtifactSet(
        chains=chains,
        day_types={1: "weekday", 2: "weekday"},
        events=build_event_table(couple, chains),
        vmt=pd.DataFrame({"interval": [0, 1, 2], "vmt_km": [10.0, 20.0, 0.0]}),
        od=pd.DataFrame([[0, 3], [2, 0]], index=pd.Index([1, 2], name="origin_taz"), columns=[1, 2]),
        corridor=pd.DataFrame(
            {"link_id": [5, 5, 6], "interval": [0, 1, 0], "volume": [4, 6, 2], "speed_ms": [20.0, 18.0, 22.0]}
        ),
    )


def test_identity_report(artifacts):
    report = ValidationAgent().validate(artifacts, artifacts)
    assert all(e.status == "ok" for e in report.entries)
    for entry in report.entries:
        if entry.metric == "jsd":
            assert entry.value == pytest.approx(0.0, abs=1e-12)
        elif entry.metric == "mape":
            assert entry.value == pytest.approx(0.0)
        elif entry.metric == "cosine":
            assert entry.value == pytest.approx(1.0)
    assert report.get("jsd", "type_shares[weekday]").value == pytest.approx(0.0, abs=1e-12)
    assert report.get("mape", "vmt").details == {"included": 2, "excluded": 1}
    assert {"vmt", "od_matrix", "participants", "slot_type_shares"} <= set(report.plot_data)


def test_missing_reference_pieces_are_absent(artifacts):
    reference = ArtifactSet(chains=artifacts.chains)
    report = ValidationAgent().validate(artifacts, reference)
    assert report.get("jsd", "type_shares").status == "ok"
    for metric, name in [("jsd", "participants"), ("cosine", "od_matrix"), ("mape", "vmt"), ("mape", "corridor_speed")]:
        entry = report.get(metric, name)
        assert entry.status == "absent"
        assert entry.value is None
        assert "reference" in entry.details["reason"]


def test_different_schedules_diverge(artifacts):
    other = ArtifactSet(chains=[work_day(1), home_day(2)])
    report = ValidationAgent(ValidationConfig(slices=["type_shares", "activity_counts"])).validate(artifacts, other)
    assert 0.0 < report.get("jsd", "type_shares").value <= 1.0
    assert report.slices() == ["activity_counts", "type_shares"]


def test_zero_od_is_undefined(artifacts):
    zero = ArtifactSet(od=artifacts.od * 0)
    report = ValidationAgent(ValidationConfig(slices=["od_matrix", "bogus"])).validate(zero, zero)
    assert report.get("undefined", "od_matrix").status == "undefined"
    assert report.get("unknown", "bogus").status == "absent"


def test_vmt_mape_value(artifacts):
    generated = ArtifactSet(vmt=pd.DataFrame({"interval": [0, 1], "vmt_km": [11.0, 18.0]}))
    reference = ArtifactSet(vmt=artifacts.vmt)
    report = ValidationAgent(ValidationConfig(slices=["vmt"])).validate(generated, reference)
    # |11-10|/10 and |18-20|/20, interval 2 excluded as near zero
    assert report.get("mape", "vmt").value == pytest.approx(10.0)


def test_load_and_write_round_trip(tmp_path, artifacts):
    directory = str(tmp_path)
    write_activities({1: {c.person_id: c for c in artifacts.chains}}, os.path.join(directory, "activities.csv"))
    write_events(artifacts.events, os.path.join(directory, "events.csv"))
    write_table(artifacts.vmt, os.path.join(directory, "vmt.csv"))
    write_table(artifacts.od.reset_index(), os.path.join(directory, "od.csv"))

    loaded = load_artifacts(directory)
    assert [c.person_id for c in loaded.chains] == [1, 2]
    assert len(loaded.events) == len(artifacts.events)
    assert loaded.od.loc[1, 2] == 3
    assert loaded.corridor is None

    agent = ValidationAgent(ValidationConfig(slices=["type_shares", "od_matrix", "corridor_volume"]))
    report = agent.validate(loaded, artifacts)
    written = agent.write_report(report, str(tmp_path / "report"))
    payload = read_json(written["report"])
    statuses = {(e["metric"], e["slice"]): e["status"] for e in payload["entries"]}
    assert statuses[("jsd", "type_shares")] == "ok"
    assert statuses[("cosine", "od_matrix")] == "ok"
    assert statuses[("mape", "corridor_volume")] == "absent"
    assert os.path.basename(written["type_shares"]) == "fig4b.csv"
    assert os.path.basename(written["od_matrix"]) == "fig7a.csv"
    assert os.path.isfile(written["type_shares"])


def test_plot_files_follow_figure_map(tmp_path, artifacts):
    agent = ValidationAgent()
    written = agent.write_report(agent.validate(artifacts, artifacts), str(tmp_path))
    names = sorted(os.path.basename(path) for key, path in written.items() if key != "report")
    assert names == sorted(f"{stem}.csv" for stem in ValidationConfig().figures.values())

    renamed = ValidationAgent(ValidationConfig(slices=["vmt"], figures={"vmt": "daily_vmt"}))
    written = renamed.write_report(renamed.validate(artifacts, artifacts), str(tmp_path / "renamed"))
    assert os.path.basename(written["vmt"]) == "daily_vmt.csv"


def test_activity_types_on_one_side_are_reported(artifacts, couple):
    reference = ArtifactSet(events=build_event_table(couple, [work_day(1), home_day(2)]))
    report = ValidationAgent(ValidationConfig(slices=["participants"])).validate(artifacts, reference)
    assert report.get("jsd", "participants").status == "ok"
    assert set(report.get("jsd", "participants").details["per_type"]) == {"Home"}
    meal = report.get("jsd", "participants[Meal]")
    work = report.get("jsd", "participants[Work]")
    assert (meal.status, meal.details["reason"]) == ("absent", "missing on reference side")
    assert (work.status, work.details["reason"]) == ("absent", "missing on generated side")

import os

import pandas as pd
import pytest

from agents import master_agent
from agents.master_agent import STAGES, MasterAgent, collect_artifacts, get_master_agent
from orchestration.workflow_manager import WorkflowManager
from tests.conftest import tiny_config_dict, work_day
from utils.config import build_config
from utils.errors import DataError, StageFailure
from utils.io_store import read_json, write_activities, write_table


@pytest.fixture
def tiny(tmp_path):
    return build_config(tiny_config_dict(tmp_path / "run"))


@pytest.fixture(autouse=True)
def fresh_singleton(monkeypatch):
    monkeypatch.setattr(master_agent, "_master_agent", None)


# =========================
# WORKFLOW
# =========================
def test_workflow_resume_and_invalidation(tmp_path, tiny):
    calls = []

    def stage(directory):
        calls.append(directory)
        return {"table": write_table(pd.DataFrame({"a": [1]}), os.path.join(directory, "table.csv"))}

    workflow = WorkflowManager(tiny, str(tmp_path / "wf"))
    outputs = workflow.run_stage("demo", stage)
    assert workflow.run_stage("demo", stage) == outputs
    assert len(calls) == 1
    assert [r.status for r in workflow.records] == ["completed", "skipped"]

    sidecar = read_json(workflow.sidecar_path("demo"))
    assert sidecar["outputs"] == {"table": "table.csv"}
    assert sidecar["config_hash"] == tiny.config_hash()

    changed = build_config(tiny_config_dict(tmp_path / "run"), {"seeds.location": 99})
    WorkflowManager(changed, str(tmp_path / "wf")).run_stage("demo", stage)
    assert len(calls) == 2

    os.remove(outputs["table"])
    WorkflowManager(changed, str(tmp_path / "wf")).run_stage("demo", stage)
    assert len(calls) == 3


def test_workflow_wraps_failures(tmp_path, tiny):
    workflow = WorkflowManager(tiny, str(tmp_path / "wf"))
    workflow.run_stage("first", lambda d: {})

    def broken(directory):
        raise DataError("bad rows")

    with pytest.raises(StageFailure) as info:
        workflow.run_stage("second", broken)
    assert info.value.stage == "second"
    assert info.value.exit_code == 3
    assert info.value.last_good_artifact == workflow.sidecar_path("first")
    assert not os.path.exists(workflow.sidecar_path("second"))


# =========================
# MASTER AGENT
# =========================
def test_singleton_follows_config(tiny, tmp_path):
    with pytest.raises(ValueError):
        get_master_agent()
    first = get_master_agent(tiny)
    assert get_master_agent() is first
    assert get_master_agent(tiny) is first
    other = build_config(tiny_config_dict(tmp_path / "other"))
    assert get_master_agent(other) is not first


def test_registered_agents(tiny):
    summary = MasterAgent(tiny).get_run_summary()
    assert set(summary["agents"]) == {
        "population_agent",
        "activity_agent",
        "coordination_agent",
        "location_agent",
        "simulation_agent",
        "validation_agent",
    }
    assert summary["stages"] == []


async def test_stage_without_upstream_fails(tiny):
    with pytest.raises(StageFailure) as info:
        await MasterAgent(tiny).run_pipeline(["events"])
    assert isinstance(info.value.cause, DataError)


def test_collect_artifacts_merges_stage_directories(tmp_path, catalog):
    run = tmp_path / "run"
    write_activities({1: {1: work_day(1)}}, str(run / "generate" / "activities.csv"))
    write_table(pd.DataFrame({"interval": [0], "vmt_km": [1.5]}), str(run / "simulate" / "vmt.csv"))
    write_table(pd.DataFrame({"interval": [0], "vmt_km": [9.0]}), str(run / "vmt.csv"))

    merged = collect_artifacts(str(run), catalog)
    assert [c.person_id for c in merged.chains] == [1]
    # flat files win over stage directories
    assert merged.vmt["vmt_km"].tolist() == [9.0]
    assert merged.events is None


def _tree(root):
    """Relative path -> bytes for every file under root"""
    files = {}
    for directory, _, names in os.walk(root):
        for name in names:
            path = os.path.join(directory, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, root).replace(os.sep, "/")] = f.read()
    return files


@pytest.mark.slow
async def test_toy_pipeline_end_to_end(tmp_path):
    config = build_config(tiny_config_dict(tmp_path / "a"))
    master = MasterAgent(config)
    summary = await master.run_pipeline()
    assert [s["stage"] for s in summary["stages"]] == STAGES
    assert {s["status"] for s in summary["stages"]} == {"completed"}

    plans = pd.read_csv(os.path.join(master.out_dir, "assign", "plans.csv"))
    assert set(plans["taz_id"]) <= {1, 2, 3, 4}
    shared = plans[plans["event_id"] > 0].groupby(["household_id", "event_id"])["taz_id"].nunique()
    assert (shared == 1).all()

    report = read_json(os.path.join(master.out_dir, "validate", "report.json"))
    by_key = {(e["metric"], e["slice"]): e for e in report["entries"]}
    assert by_key[("jsd", "type_shares")]["status"] == "ok"
    assert 0.0 <= by_key[("jsd", "type_shares")]["value"] <= 1.0
    # the synthetic corpus carries no traffic observables
    assert by_key[("mape", "vmt")]["status"] == "absent"

    # a second agent on the same directory resumes every stage
    again = await MasterAgent(config).run_pipeline()
    assert {s["status"] for s in again["stages"]} == {"skipped"}

    # same seeds in a fresh directory reproduce every file of the run, validation included
    replay = MasterAgent(build_config(tiny_config_dict(tmp_path / "b")))
    await replay.run_pipeline()
    first, second = _tree(master.out_dir), _tree(replay.out_dir)
    assert sorted(first) == sorted(second)
    assert "validate/report.json" in first and "assign/plans.csv" in first
    for name in first:
        assert first[name] == second[name], name

"""
Master Agent - Main orchestrator for the travel demand pipeline
Coordinates the worker agents stage by stage through the workflow manager
"""

import asyncio
import logging
import os
from dataclasses import fields
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from agents.activity_agent import ActivityAgent
from agents.coordination_agent import CoordinationAgent, read_events, write_events
from agents.location_agent import DistanceSampler, LocationAgent, read_plans, read_spatial_targets, read_zones, write_plans
from agents.population_agent import PopulationAgent
from agents.simulation_agent import SimulationAgent
from agents.validation_agent import ArtifactSet, ValidationAgent, load_artifacts
from models.schedule import ActivityCatalog, Household
from orchestration.workflow_manager import WorkflowManager
from services.road_network import read_network
from utils.config import PipelineConfig
from utils.errors import DataError
from utils.io_store import (
    activities_to_chains,
    read_activities,
    read_population,
    write_activities,
    write_json,
    write_population,
    write_table,
)
from utils.synthetic_corpus import generate_synthetic_corpus, load_rules, write_corpus

logger = logging.getLogger(__name__)

STAGES = ["corpus", "population", "seed_chain", "train", "generate", "events", "assign", "simulate", "validate"]
GENERATED_STAGES = ("population", "generate", "events", "simulate")


def collect_artifacts(directory: str, catalog: ActivityCatalog, stages: Sequence[str] = GENERATED_STAGES) -> ArtifactSet:
    """Artifacts of a flat directory or of a run directory with one sub-directory per stage"""
    merged = load_artifacts(directory, catalog)
    for stage in stages:
        sub = os.path.join(directory, stage)
        if not os.path.isdir(sub):
            continue
        part = load_artifacts(sub, catalog)
        for f in fields(ArtifactSet):
            if getattr(merged, f.name) is None:
                setattr(merged, f.name, getattr(part, f.name))
    return merged


class MasterAgent:
    """Main orchestrator that coordinates all worker agents"""

    def __init__(self, config: PipelineConfig, out_dir: Optional[str] = None):
        self.agent_id = "master_agent"
        self.config = config
        self.catalog = ActivityCatalog.from_config(config.activities)
        self.workflow = WorkflowManager(config, out_dir)

        # Step 1: worker agents, each with its slice of the config
        gender_priority = config.activities.gender_priority
        self.population_agent = PopulationAgent(config.population, config.activities.p_max, gender_priority)
        self.activity_agent = ActivityAgent(config.model, config.training, config.generation, config.activities, self.catalog)
        self.coordination_agent = CoordinationAgent(config.coordination, self.catalog, gender_priority)
        self.location_agent = LocationAgent(config.location, self.catalog)
        self.simulation_agent = SimulationAgent(config.simulation)
        self.validation_agent = ValidationAgent(config.validation, self.catalog, config.activities.p_max)
        self.registered_agents = {
            agent.agent_id: agent.capabilities
            for agent in (
                self.population_agent,
                self.activity_agent,
                self.coordination_agent,
                self.location_agent,
                self.simulation_agent,
                self.validation_agent,
            )
        }
        logger.info(f"✅ Master Agent initialized: {self.agent_id}")

    @property
    def out_dir(self) -> str:
        return self.workflow.out_dir

    def _artifact(self, stage: str, name: str) -> str:
        path = self.workflow.outputs(stage).get(name)
        if path is None:
            raise DataError(f"Stage '{stage}' has no '{name}' artifact; run it first", stage=stage, artifact=name)
        return path

    # =========================
    # SHARED LOADERS
    # =========================
    def _households(self, stage: str, name: str) -> List[Household]:
        return read_population(self._artifact(stage, name), None, self.config.activities.p_max,
                               self.config.activities.gender_priority)

    def _chains(self, stage: str):
        return activities_to_chains(read_activities(self._artifact(stage, "activities")), self.catalog)

    # =========================
    # STAGES
    # =========================
    def stage_corpus(self, directory: str) -> Dict[str, str]:
        """Synthetic corpus, or a provided one normalised into the artifact directory"""
        if self.config.paths.corpus:
            source = self.config.paths.corpus
            households = read_population(os.path.join(source, "persons.csv"), None, self.config.activities.p_max,
                                         self.config.activities.gender_priority)
            chains = activities_to_chains(read_activities(os.path.join(source, "activities.csv")), self.catalog)
            targets = {}
        else:
            rules = load_rules(self.config.paths.synthetic_rules)
            households, chains, targets = generate_synthetic_corpus(rules, self.config.corpus.n_households,
                                                                    self.config.seeds.corpus)
        outputs = write_corpus(directory, households, chains, targets)
        events = self.coordination_agent.build_events(households, chains)
        outputs["events"] = write_events(events, os.path.join(directory, "events.csv"))
        return outputs

    def stage_population(self, directory: str) -> Dict[str, str]:
        paths = self.config.paths
        zones = read_zones(paths.zones, self.catalog)
        if paths.population:
            households = self.population_agent.import_population(paths.population, zones.ids.tolist())
        else:
            households = self.population_agent.synthesize(paths.marginals, paths.seed_sample,
                                                          self.config.population.n_households, self.config.seeds.population)
        return {"population": write_population(households, os.path.join(directory, "population.csv"))}

    def stage_seed_chain(self, directory: str) -> Dict[str, str]:
        households = self._households("corpus", "persons")
        seed_model = self.activity_agent.fit_seed_model(households, self._chains("corpus"))
        return {"seed_model": self.activity_agent.save_seed_model(seed_model, os.path.join(directory, "seed_model.json"))}

    def stage_train(self, directory: str) -> Dict[str, str]:
        if self.config.paths.checkpoint:
            self.activity_agent.load_model(self.config.paths.checkpoint)
            return {"checkpoint": self.config.paths.checkpoint}
        households = self._households("corpus", "persons")
        events = read_events(self._artifact("corpus", "events"), self.catalog)
        result, weights = self.activity_agent.train(households, self._chains("corpus"), events, self.config.seeds.training)
        history = pd.DataFrame(result.history)
        return {
            "checkpoint": self.activity_agent.save_model(result.model, os.path.join(directory, "model.json"), weights),
            "history": write_table(history, os.path.join(directory, "history.csv")),
        }

    def stage_generate(self, directory: str) -> Dict[str, str]:
        model, _ = self.activity_agent.load_model(self._artifact("train", "checkpoint"))
        seed_model = self.activity_agent.load_seed_model(self._artifact("seed_chain", "seed_model"))
        households = self._households("population", "population")
        chains = self.activity_agent.generate(model, seed_model, households, self.config.seeds.seed_chain,
                                              self.config.seeds.generation)
        return {"activities": write_activities(chains, os.path.join(directory, "activities.csv"))}

    def stage_events(self, directory: str) -> Dict[str, str]:
        households = self._households("population", "population")
        events = self.coordination_agent.build_events(households, self._chains("generate"))
        return {"events": write_events(events, os.path.join(directory, "events.csv"))}

    def stage_assign(self, directory: str) -> Dict[str, str]:
        paths = self.config.paths
        zones = read_zones(paths.zones, self.catalog)
        sampler = (
            DistanceSampler.from_csv(paths.samplers, self.config.location)
            if paths.samplers
            else DistanceSampler.from_config(self.config.location)
        )
        targets = read_spatial_targets(paths.spatial_targets, zones) if paths.spatial_targets else None
        households = self._households("population", "population")
        events = read_events(self._artifact("events", "events"), self.catalog)
        plans, refined = self.location_agent.assign_all(households, self._chains("generate"), events, zones, sampler,
                                                        self.config.seeds.location, targets)
        refine_log = {
            label: {"l1_history": r.l1_history, "best_iteration": r.best_iteration} for label, r in sorted(refined.items())
        }
        return {
            "plans": write_plans(plans, os.path.join(directory, "plans.csv")),
            "refinement": write_json(refine_log, os.path.join(directory, "refinement.json")),
        }

    def stage_simulate(self, directory: str) -> Dict[str, str]:
        paths = self.config.paths
        zones = read_zones(paths.zones, self.catalog)
        network = read_network(paths.network, paths.nodes, self.config.simulation.vehicle_length_m)
        households = self._households("population", "population")
        plans = read_plans(self._artifact("assign", "plans"))
        outcome = self.simulation_agent.run(plans, households, network, zones, self.config.seeds.modes,
                                            self.config.seeds.simulation)
        return self.simulation_agent.write_outputs(outcome, directory)

    def stage_validate(self, directory: str) -> Dict[str, str]:
        generated = self.generated_artifacts()
        reference_dir = self.config.paths.reference_dir or self.workflow.stage_dir("corpus")
        reference = collect_artifacts(reference_dir, self.catalog)
        report = self.validation_agent.validate(generated, reference)
        return self.validation_agent.write_report(report, directory)

    def generated_artifacts(self) -> ArtifactSet:
        """Generated side of validation, assembled from the stage directories"""
        return collect_artifacts(self.out_dir, self.catalog)

    # =========================
    # ORCHESTRATION
    # =========================
    def stage_inputs(self, stage: str) -> List[str]:
        paths = self.config.paths
        upstream = {
            "corpus": [p for p in (paths.corpus, paths.synthetic_rules) if p],
            "population": [p for p in (paths.population, paths.marginals, paths.seed_sample, paths.zones) if p],
            "seed_chain": list(self.workflow.outputs("corpus").values()),
            "train": list(self.workflow.outputs("corpus").values()) + ([paths.checkpoint] if paths.checkpoint else []),
            "generate": list(self.workflow.outputs("train").values()) + list(self.workflow.outputs("seed_chain").values()),
            "events": list(self.workflow.outputs("generate").values()),
            "assign": list(self.workflow.outputs("events").values()) + [paths.zones],
            "simulate": list(self.workflow.outputs("assign").values()) + [paths.network],
            "validate": list(self.workflow.outputs("simulate").values()),
        }
        return [p for p in upstream.get(stage, []) if p]

    def run_stage(self, stage: str, resume: bool = True) -> Dict[str, str]:
        func = getattr(self, f"stage_{stage}")
        return self.workflow.run_stage(stage, func, self.stage_inputs(stage), resume)

    async def run_pipeline(self, stages: Optional[Sequence[str]] = None, resume: bool = True) -> Dict[str, Any]:
        """Run the stages in order; every stage persists its artifacts before the next starts"""
        stages = list(stages or STAGES)
        logger.info(f"\n🚀 Starting travel demand pipeline: {len(stages)} stages -> {self.out_dir}")
        self.config.check_inputs_exist()
        for i, stage in enumerate(stages, start=1):
            logger.info(f"📋 Step {i}: {stage}")
            await asyncio.to_thread(self.run_stage, stage, resume)
        summary = self.get_run_summary()
        logger.info(f"🏁 Pipeline finished: {len(summary['stages'])} stages")
        return summary

    def get_run_summary(self) -> Dict[str, Any]:
        """Completed stages and their artifacts"""
        summary = self.workflow.summary()
        summary["agents"] = {agent_id: list(caps) for agent_id, caps in sorted(self.registered_agents.items())}
        return summary


# Singleton instance
_master_agent = None


def get_master_agent(config: Optional[PipelineConfig] = None, out_dir: Optional[str] = None) -> MasterAgent:
    """Get or create the master agent; a new config replaces the instance"""
    global _master_agent
    if _master_agent is None or (config is not None and (config is not _master_agent.config or
                                                          (out_dir and out_dir != _master_agent.out_dir))):
        if config is None:
            raise ValueError("The first call to get_master_agent needs a config")
        _master_agent = MasterAgent(config, out_dir)
    return _master_agent

"""
Workflow Manager - runs pipeline stages into an artifact directory.
Each stage writes its files plus a metadata sidecar naming the stage, the
config hash and its input files; a stage whose sidecar matches the current
config and whose outputs exist is skipped on resume.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from utils.config import PipelineConfig
from utils.errors import StageFailure
from utils.io_store import read_json, write_json

logger = logging.getLogger(__name__)

SIDECAR = "_stage.json"

StageFunc = Callable[[str], Dict[str, str]]


@dataclass
class StageRecord:
    stage: str
    status: str  # completed | skipped | failed
    outputs: Dict[str, str] = field(default_factory=dict)
    inputs: List[str] = field(default_factory=list)


class WorkflowManager:
    """Sequential stage runner with sidecars and resume"""

    def __init__(self, config: PipelineConfig, out_dir: Optional[str] = None):
        self.config = config
        self.out_dir = out_dir or config.paths.output_dir
        self.config_hash = config.config_hash()
        self.records: List[StageRecord] = []
        os.makedirs(self.out_dir, exist_ok=True)

    def stage_dir(self, stage: str) -> str:
        return os.path.join(self.out_dir, stage)

    def sidecar_path(self, stage: str) -> str:
        return os.path.join(self.stage_dir(stage), SIDECAR)

    def outputs(self, stage: str) -> Dict[str, str]:
        """Artifact paths of a completed stage, resolved against the stage directory"""
        path = self.sidecar_path(stage)
        if not os.path.isfile(path):
            return {}
        meta = read_json(path)
        return {name: os.path.join(self.stage_dir(stage), rel) for name, rel in meta.get("outputs", {}).items()}

    def is_complete(self, stage: str) -> bool:
        path = self.sidecar_path(stage)
        if not os.path.isfile(path):
            return False
        meta = read_json(path)
        if meta.get("config_hash") != self.config_hash:
            return False
        return all(os.path.exists(p) for p in self.outputs(stage).values())

    def last_good_artifact(self) -> Optional[str]:
        for record in reversed(self.records):
            if record.status in ("completed", "skipped"):
                return self.sidecar_path(record.stage)
        return None

    def run_stage(self, stage: str, func: StageFunc, inputs: Optional[List[str]] = None, resume: bool = True) -> Dict[str, str]:
        """Run one stage; failures are wrapped with the stage name and last good artifact"""
        inputs = inputs or []
        if resume and self.is_complete(stage):
            logger.info(f"⏭️ Stage '{stage}' is up to date, skipping")
            outputs = self.outputs(stage)
            self.records.append(StageRecord(stage, "skipped", outputs, inputs))
            return outputs

        logger.info(f"▶️ Stage '{stage}'")
        directory = self.stage_dir(stage)
        os.makedirs(directory, exist_ok=True)
        try:
            outputs = func(directory)
        except Exception as exc:
            self.records.append(StageRecord(stage, "failed", {}, inputs))
            logger.error(f"❌ Stage '{stage}' failed: {exc}")
            raise StageFailure(stage, exc, self.last_good_artifact()) from exc

        relative = {name: os.path.relpath(path, directory) for name, path in outputs.items()}
        write_json(
            {
                "stage": stage,
                "config_hash": self.config_hash,
                "inputs": sorted(os.path.basename(p) for p in inputs),
                "outputs": relative,
            },
            self.sidecar_path(stage),
        )
        self.records.append(StageRecord(stage, "completed", outputs, inputs))
        logger.info(f"✅ Stage '{stage}' completed: {', '.join(sorted(relative.values()))}")
        return outputs

    def summary(self) -> Dict:
        return {
            "out_dir": self.out_dir,
            "config_hash": self.config_hash,
            "stages": [
                {"stage": r.stage, "status": r.status, "outputs": sorted(os.path.basename(p) for p in r.outputs.values())}
                for r in self.records
            ],
        }

"""
Pipeline configuration - one declarative YAML file validated with pydantic.
CLI flags override individual keys; every stage seed is explicit.
"""

import copy
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config/pipeline_config.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PathsConfig(_Section):
    """Input and output locations"""

    output_dir: str = "artifacts"
    zones: str = "data/zones.csv"
    network: str = "data/network.csv"
    nodes: Optional[str] = None
    marginals: Optional[str] = None
    seed_sample: Optional[str] = None
    population: Optional[str] = None
    corpus: Optional[str] = None
    checkpoint: Optional[str] = None
    samplers: Optional[str] = None
    spatial_targets: Optional[str] = None
    reference_dir: Optional[str] = None
    synthetic_rules: str = "config/synthetic_rules.yaml"

    @model_validator(mode="after")
    def _population_source(self):
        if self.population is None and (self.marginals is None or self.seed_sample is None):
            raise ValueError("either paths.population or both paths.marginals and paths.seed_sample are required")
        return self


class SeedsConfig(_Section):
    """Named per-stage random seeds; no defaults on purpose"""

    population: int
    corpus: int
    seed_chain: int
    training: int
    generation: int
    location: int
    modes: int
    simulation: int

    @classmethod
    def from_base(cls, base: int) -> "SeedsConfig":
        """Distinct stage seeds derived from one base seed (the --rng-seed flag)"""
        names = list(cls.model_fields)
        return cls(**{name: int(base) * len(names) + i for i, name in enumerate(names)})


class ActivityConfig(_Section):
    extra_labels: List[str] = ["Exercise", "HealthCare", "Other"]
    accompanying: List[str] = ["Escort"]
    p_max: int = 8
    gender_priority: Optional[List[str]] = None
    adult_age: int = 18

    @field_validator("extra_labels")
    @classmethod
    def _three_extra(cls, value: List[str]) -> List[str]:
        if len(value) != 3:
            raise ValueError("exactly 3 extra activity labels are required")
        return value


class PopulationConfig(_Section):
    n_households: int = 100
    dimensions: List[str] = ["size", "income", "vehicles"]
    tol: float = 1e-4
    max_iter: int = 100


class CorpusConfig(_Section):
    n_households: int = 100


class ModelConfig(_Section):
    """DeepCAM architecture and loss weighting"""

    embed_dim: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 128
    p_max: int = 8
    diag_bias_strength: float = 2.0
    match_temperature: float = 1.0
    lambda_aor: float = 0.5
    dropout: float = 0.1
    n_features: int = 12

    @model_validator(mode="after")
    def _check(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.diag_bias_strength < 0:
            raise ValueError("diag_bias_strength must be >= 0")
        if self.match_temperature <= 0:
            raise ValueError("match_temperature must be > 0")
        if self.lambda_aor < 0:
            raise ValueError("lambda_aor must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self


class TrainingConfig(_Section):
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    min_households: int = 10


class GenerationConfig(_Section):
    temperature: float = 1.0
    batch_size: int = 256
    seed_alpha: float = 0.1
    seed_temperature: float = 1.0
    strata: List[str] = ["day_type", "employed"]


class CoordinationConfig(_Section):
    window_min: int = 15
    ungrouped_types: List[str] = []
    search_node_budget: int = 20000
    spouse_age_gap: int = 15
    generation_gap: int = 18
    n_jobs: int = 1


class LocationConfig(_Section):
    detour_factor: float = 1.3
    speed_kmh: float = 30.0
    alpha: float = 1.0
    beta: float = 1.0 / math.pi
    t_max_min: float = 90.0
    eta: float = 0.5
    refine_max_iter: int = 50
    refine_tol: float = 0.05
    tie_tolerance: float = 0.25
    land_use: Dict[str, List[str]] = {
        "Home": ["residential"],
        "Work": ["employment"],
        "School": ["education"],
        "BuyGoods": ["commercial"],
        "BuyServices": ["commercial"],
        "GeneralErrands": ["commercial", "employment"],
        "Recreation": ["recreation"],
        "Meal": ["commercial"],
        "ReligiousCommunity": ["residential", "recreation"],
        "Visit": ["residential"],
        "AttendCare": ["education", "residential"],
        "Escort": ["education", "commercial", "residential"],
        "Exercise": ["recreation"],
        "HealthCare": ["commercial", "employment"],
        "Other": ["residential", "commercial", "employment", "education", "recreation"],
    }
    distance_medians_km: Dict[str, float] = {"Work": 12.0, "School": 5.0, "default": 4.0}
    distance_sigma: float = 0.8
    theta_max: float = math.pi / 2
    n_jobs: int = 1

    @field_validator("alpha", "beta")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("alpha and beta must be >= 0")
        return value

    @field_validator("eta")
    @classmethod
    def _eta_range(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        return value


class SimulationConfig(_Section):
    mode_shares: Dict[str, float] = {"car": 0.8, "non_car": 0.2}
    iterations: int = 20
    reroute_fraction: float = 0.1
    switch_threshold: float = 0.05
    step_s: int = 1
    interval_s: int = 900
    end_time_s: int = 86400
    gridlock_s: int = 600
    vehicle_length_m: float = 7.5
    corridor_links: List[int] = []

    @field_validator("mode_shares")
    @classmethod
    def _shares_sum(cls, value: Dict[str, float]) -> Dict[str, float]:
        if abs(sum(value.values()) - 1.0) > 1e-9 or "car" not in value:
            raise ValueError("mode_shares must include 'car' and sum to 1")
        return value


PLOT_FIGURES = {
    "slot_type_shares": "fig4a",
    "type_shares": "fig4b",
    "start_times": "fig4c",
    "durations": "fig4d",
    "activity_counts": "fig4e",
    "participants": "fig5",
    "role_combinations": "fig6",
    "od_matrix": "fig7a",
    "vmt": "fig7b",
    "corridor_volume": "fig8c",
    "corridor_speed": "fig8d",
}


class ValidationConfig(_Section):
    slices: List[str] = list(PLOT_FIGURES)
    figures: Dict[str, str] = Field(default_factory=lambda: dict(PLOT_FIGURES))  # slice -> plot-data file stem
    mape_epsilon: float = 1e-9
    jsd_bound: float = 0.05

    @field_validator("figures")
    @classmethod
    def _unique_figures(cls, value: Dict[str, str]) -> Dict[str, str]:
        if len(set(value.values())) != len(value):
            raise ValueError("figure file names must be unique")
        return value


class LoggingConfig(_Section):
    level: str = "INFO"
    file: Optional[str] = None
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    max_size_mb: int = 10
    backup_count: int = 5


class PipelineConfig(_Section):
    """Complete configuration of one pipeline run"""

    paths: PathsConfig
    seeds: SeedsConfig
    activities: ActivityConfig = ActivityConfig()
    population: PopulationConfig = PopulationConfig()
    corpus: CorpusConfig = CorpusConfig()
    model: ModelConfig = ModelConfig()
    training: TrainingConfig = TrainingConfig()
    generation: GenerationConfig = GenerationConfig()
    coordination: CoordinationConfig = CoordinationConfig()
    location: LocationConfig = LocationConfig()
    simulation: SimulationConfig = SimulationConfig()
    validation: ValidationConfig = ValidationConfig()
    logging: LoggingConfig = LoggingConfig()

    def config_hash(self) -> str:
        """SHA-256 of the canonical config, excluding the output location"""
        payload = self.model_dump(mode="json")
        payload["paths"].pop("output_dir", None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def required_inputs(self) -> Dict[str, str]:
        """Paths that must exist before any computation starts"""
        required = {"paths.zones": self.paths.zones, "paths.network": self.paths.network}
        optional = {
            "paths.nodes": self.paths.nodes,
            "paths.population": self.paths.population,
            "paths.marginals": self.paths.marginals,
            "paths.seed_sample": self.paths.seed_sample,
            "paths.corpus": self.paths.corpus,
            "paths.checkpoint": self.paths.checkpoint,
            "paths.samplers": self.paths.samplers,
            "paths.spatial_targets": self.paths.spatial_targets,
            "paths.reference_dir": self.paths.reference_dir,
        }
        required.update({k: v for k, v in optional.items() if v is not None})
        return required

    def check_inputs_exist(self) -> None:
        for key, path in self.required_inputs().items():
            if not Path(path).exists():
                raise ConfigError(f"Configured input {key} does not exist: {path}", key=key, path=path)


def _set_dotted(data: Dict[str, Any], dotted_key: str, value: Any) -> None:
    node = data
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def parse_override(item: str) -> tuple:
    """Parse a 'section.key=value' override; the value is read as YAML"""
    if "=" not in item:
        raise ConfigError(f"Override must look like key=value: {item}")
    key, raw = item.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_raw_config(config_path: str = DEFAULT_CONFIG_PATH) -> Dict[str, Any]:
    """Load configuration from YAML file"""
    try:
        with open(config_path, "r") as f:
            return yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {config_path}", path=config_path)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config file is not valid YAML: {config_path}: {exc}", path=config_path)


def build_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Validate a raw mapping (plus dotted overrides) into a PipelineConfig"""
    data = copy.deepcopy(raw)
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}")


def load_config(config_path: str = DEFAULT_CONFIG_PATH, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    return build_config(load_raw_config(config_path), overrides)

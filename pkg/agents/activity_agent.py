"""
Activity Agent - drafts each household head's day with the seed chain model,
trains DeepCAM on a corpus and generates coordinated member schedules
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.deepcam import DeepCAM
from models.events import Event
from models.losses import compute_activity_weights
from models.schedule import (
    ActivityCatalog,
    ActivityChain,
    DEFAULT_CATALOG,
    Household,
    Person,
    encode_chain,
    select_household_head,
)
from models.seed_chain import SeedChainModel, generate_seed_chains
from models.training import (
    HouseholdSample,
    TrainResult,
    encode_household,
    generate_households,
    load_checkpoint,
    save_checkpoint,
    schema_hash,
    train,
)
from utils.config import ActivityConfig, GenerationConfig, ModelConfig, TrainingConfig
from utils.errors import ArityError
from utils.io_store import read_json, write_json

logger = logging.getLogger(__name__)


def household_heads(households: Sequence[Household], gender_priority: Optional[Sequence[str]] = None) -> List[Tuple[Household, Person]]:
    return [(h, h.members[select_household_head(h, gender_priority)]) for h in households]


class ActivityAgent:
    """Worker agent for schedule generation"""

    def __init__(
        self,
        model_config: Optional[ModelConfig] = None,
        training_config: Optional[TrainingConfig] = None,
        generation_config: Optional[GenerationConfig] = None,
        activity_config: Optional[ActivityConfig] = None,
        catalog: Optional[ActivityCatalog] = None,
        agent_id: str = "activity_agent",
    ):
        self.agent_id = agent_id
        self.capabilities = [
            "select_household_head",
            "fit_seed_model",
            "generate_seed_chain",
            "train_deepcam",
            "generate_households",
        ]
        self.model_config = model_config or ModelConfig()
        self.training_config = training_config or TrainingConfig()
        self.generation_config = generation_config or GenerationConfig()
        self.activity_config = activity_config or ActivityConfig()
        self.catalog = catalog or ActivityCatalog.from_config(self.activity_config)
        logger.info(f"✅ Activity Agent initialized: {self.agent_id}")

    @property
    def gender_priority(self) -> Optional[List[str]]:
        return self.activity_config.gender_priority

    # =========================
    # SEED CHAINS
    # =========================
    def fit_seed_model(self, households: Sequence[Household],
                       chains_by_household: Dict[int, Dict[int, ActivityChain]]) -> SeedChainModel:
        """Seed model estimated on the corpus heads' days"""
        samples = []
        for household, head in household_heads(households, self.gender_priority):
            chain = chains_by_household.get(household.household_id, {}).get(head.person_id)
            if chain is None:
                raise ArityError(f"No chain for head {head.person_id} of household {household.household_id}")
            samples.append((household, head, encode_chain(chain)))
        return SeedChainModel.fit(samples, self.generation_config.strata, self.generation_config.seed_alpha)

    def draft_heads(self, seed_model: SeedChainModel, households: Sequence[Household], rng_seed: int) -> Dict[int, np.ndarray]:
        heads = household_heads(households, self.gender_priority)
        rows = generate_seed_chains(seed_model, heads, rng_seed, self.generation_config.seed_temperature)
        return {household.household_id: row for (household, _), row in zip(heads, rows)}

    @staticmethod
    def save_seed_model(seed_model: SeedChainModel, path: str) -> str:
        return write_json(seed_model.to_dict(), path)

    @staticmethod
    def load_seed_model(path: str) -> SeedChainModel:
        return SeedChainModel.from_dict(read_json(path))

    # =========================
    # TRAINING
    # =========================
    def encode_corpus(self, households: Sequence[Household],
                      chains_by_household: Dict[int, Dict[int, ActivityChain]]) -> List[HouseholdSample]:
        return [
            encode_household(h, chains_by_household.get(h.household_id, {}), self.model_config.p_max, self.gender_priority)
            for h in households
        ]

    def train(self, households: Sequence[Household], chains_by_household: Dict[int, Dict[int, ActivityChain]],
              corpus_events: Sequence[Event], rng_seed: int, epochs: Optional[int] = None) -> Tuple[TrainResult, np.ndarray]:
        """Train DeepCAM; activity weights come from the corpus event table"""
        logger.info(f"🧠 Encoding {len(households)} corpus households...")
        samples = self.encode_corpus(households, chains_by_household)
        weights = compute_activity_weights(corpus_events)
        result = train(samples, self.model_config, self.training_config, weights, rng_seed, epochs)
        if result.aborted:
            logger.warning("⚠️ Training stopped early after a numeric fault")
        return result, weights

    def save_model(self, model: DeepCAM, path: str, weights: Optional[np.ndarray] = None) -> str:
        extra = {"activity_weights": [] if weights is None else np.asarray(weights).tolist()}
        return save_checkpoint(model, path, schema_hash(self.catalog), extra)

    def load_model(self, path: str) -> Tuple[DeepCAM, Dict]:
        return load_checkpoint(path, schema_hash(self.catalog))

    # =========================
    # GENERATION
    # =========================
    def generate(self, model: DeepCAM, seed_model: SeedChainModel, households: Sequence[Household],
                 seed_chain_seed: int, generation_seed: int) -> Dict[int, Dict[int, ActivityChain]]:
        """Head drafts from the seed model, members from DeepCAM; {household_id: {person_id: chain}}"""
        logger.info(f"🗓️ Generating schedules for {len(households)} households...")
        head_rows = self.draft_heads(seed_model, households, seed_chain_seed)
        generated = generate_households(
            model,
            households,
            head_rows,
            generation_seed,
            self.generation_config.temperature,
            self.generation_config.batch_size,
            self.gender_priority,
        )
        chains: Dict[int, Dict[int, ActivityChain]] = {}
        for household in households:
            person_ids, grid = generated[household.household_id]
            grid.validate(len(person_ids))
            chains[household.household_id] = {
                chain.person_id: chain for chain in grid.to_chains(person_ids, self.catalog)
            }
        return chains

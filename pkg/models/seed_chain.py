"""
Seed chain model - stratified first-order Markov chain over the 96 slots,
used to draft the household head's day before member generation.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models.schedule import N_CODES, N_SLOTS, PAD_CODE, Household, Person
from utils.rng import draw_uniforms

logger = logging.getLogger(__name__)

POOLED = ("*",)
N_ACTIVITY_CODES = N_CODES - 1


def stratum_key(household: Household, person: Person, strata: Sequence[str]) -> Tuple:
    """Stratum of a head, e.g. ('weekday', True) for strata [day_type, employed]"""
    key = []
    for name in strata:
        if name == "day_type":
            key.append(household.day_type)
        elif hasattr(person, name):
            key.append(getattr(person, name))
        elif hasattr(household, name):
            key.append(getattr(household, name))
        else:
            raise KeyError(f"Unknown stratum attribute: {name}")
    return tuple(key)


def _smoothed(counts: np.ndarray, alpha: float) -> np.ndarray:
    """Add-alpha smoothing over the 15 activity codes; PAD keeps zero mass"""
    probs = np.zeros(counts.shape, dtype=np.float64)
    smoothed = counts[..., :N_ACTIVITY_CODES] + alpha
    probs[..., :N_ACTIVITY_CODES] = smoothed / smoothed.sum(axis=-1, keepdims=True)
    return probs


@dataclass
class SeedChainModel:
    """Per-stratum slot transition tensors [96 x 16 x 16] and initial distributions [16]"""

    strata: List[str]
    transitions: Dict[Tuple, np.ndarray]
    initial: Dict[Tuple, np.ndarray]
    alpha: float = 0.1
    _warned: set = field(default_factory=set, repr=False)

    def __post_init__(self):
        for key, tensor in self.transitions.items():
            if tensor.shape != (N_SLOTS, N_CODES, N_CODES):
                raise ValueError(f"Transition tensor of stratum {key} has shape {tensor.shape}")
            if not np.allclose(tensor.sum(axis=-1), 1.0, atol=1e-9):
                raise ValueError(f"Transition rows of stratum {key} do not sum to 1")
            if (tensor[..., PAD_CODE] != 0).any():
                raise ValueError(f"Stratum {key} emits PAD")
        for key, probs in self.initial.items():
            if abs(probs.sum() - 1.0) > 1e-9 or probs[PAD_CODE] != 0:
                raise ValueError(f"Initial distribution of stratum {key} is invalid")

    # =========================
    # ESTIMATION
    # =========================
    @classmethod
    def fit(
        cls,
        samples: Iterable[Tuple[Household, Person, np.ndarray]],
        strata: Sequence[str] = ("day_type", "employed"),
        alpha: float = 0.1,
    ) -> "SeedChainModel":
        """Laplace-smoothed transition frequencies per stratum plus a pooled model"""
        trans_counts: Dict[Tuple, np.ndarray] = {}
        init_counts: Dict[Tuple, np.ndarray] = {}
        slots = np.arange(N_SLOTS - 1)
        n_rows = 0

        for household, person, row in samples:
            row = np.asarray(row, dtype=np.int64)
            for key in (POOLED, stratum_key(household, person, strata)):
                if key not in trans_counts:
                    trans_counts[key] = np.zeros((N_SLOTS, N_CODES, N_CODES))
                    init_counts[key] = np.zeros(N_CODES)
                np.add.at(trans_counts[key], (slots, row[:-1], row[1:]), 1.0)
                init_counts[key][row[0]] += 1.0
            n_rows += 1

        if n_rows == 0:
            raise ValueError("Cannot fit a seed chain model on an empty corpus")

        transitions = {key: _smoothed(counts, alpha) for key, counts in trans_counts.items()}
        initial = {key: _smoothed(counts, alpha) for key, counts in init_counts.items()}
        logger.info(f"Seed chain model fitted on {n_rows} heads across {len(transitions) - 1} strata")
        return cls(list(strata), transitions, initial, alpha)

    def resolve(self, key: Tuple) -> Tuple:
        """Stratum to sample from; unseen strata fall back to the pooled estimate"""
        if key in self.transitions:
            return key
        if key not in self._warned:
            logger.warning(f"Seed chain stratum {key} has no data, using pooled estimate")
            self._warned.add(key)
        return POOLED

    # =========================
    # SAMPLING
    # =========================
    def sample_rows(
        self, key: Tuple, uniforms: np.ndarray, temperature: float = 1.0
    ) -> np.ndarray:
        """Ancestral sampling of len(uniforms) rows of one stratum from pre-drawn uniforms [n x 96]"""
        key = self.resolve(key)
        transitions = self.transitions[key]
        initial = self.initial[key]
        n = uniforms.shape[0]
        rows = np.empty((n, N_SLOTS), dtype=np.int64)
        if n == 0:
            return rows

        rows[:, 0] = _draw(np.broadcast_to(initial, (n, N_CODES)), uniforms[:, 0], temperature)
        for t in range(1, N_SLOTS):
            probs = transitions[t - 1, rows[:, t - 1]]
            rows[:, t] = _draw(probs, uniforms[:, t], temperature)
        return rows

    # =========================
    # PERSISTENCE
    # =========================
    def to_dict(self) -> Dict:
        return {
            "strata": list(self.strata),
            "alpha": self.alpha,
            "keys": [list(k) for k in self.transitions],
            "transitions": [self.transitions[k].tolist() for k in self.transitions],
            "initial": [self.initial[k].tolist() for k in self.transitions],
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "SeedChainModel":
        keys = [tuple(k) for k in payload["keys"]]
        return cls(
            strata=list(payload["strata"]),
            transitions={k: np.array(t, dtype=np.float64) for k, t in zip(keys, payload["transitions"])},
            initial={k: np.array(p, dtype=np.float64) for k, p in zip(keys, payload["initial"])},
            alpha=float(payload["alpha"]),
        )


def _draw(probs: np.ndarray, uniforms: np.ndarray, temperature: float) -> np.ndarray:
    """Inverse-CDF draw per row; temperature 0 is argmax"""
    if temperature == 0:
        return probs.argmax(axis=-1)
    if temperature != 1.0:
        probs = np.where(probs > 0, probs ** (1.0 / temperature), 0.0)
        probs = probs / probs.sum(axis=-1, keepdims=True)
    cdf = np.cumsum(probs, axis=-1)
    codes = (uniforms[:, None] >= cdf).sum(axis=-1)
    # guard against cdf rounding just below 1
    return np.minimum(codes, N_ACTIVITY_CODES - 1)


def fit_seed_model(
    samples: Iterable[Tuple[Household, Person, np.ndarray]],
    strata: Sequence[str] = ("day_type", "employed"),
    alpha: float = 0.1,
) -> SeedChainModel:
    return SeedChainModel.fit(samples, strata, alpha)


def generate_seed_chain(
    model: SeedChainModel,
    household: Household,
    head: Person,
    rng_seed: int,
    temperature: float = 1.0,
) -> np.ndarray:
    """96-code head row, reproducible from (rng_seed, household_id)"""
    return generate_seed_chains(model, [(household, head)], rng_seed, temperature)[0]


def generate_seed_chains(
    model: SeedChainModel,
    heads: Sequence[Tuple[Household, Person]],
    rng_seed: int,
    temperature: float = 1.0,
) -> List[np.ndarray]:
    """Vectorised seed chains for many heads; each household keeps its own stream"""
    uniforms = draw_uniforms(rng_seed, [h.household_id for h, _ in heads], (N_SLOTS,))
    by_key: Dict[Tuple, List[int]] = {}
    for i, (household, head) in enumerate(heads):
        by_key.setdefault(stratum_key(household, head, model.strata), []).append(i)

    out: List[Optional[np.ndarray]] = [None] * len(heads)
    for key, indices in by_key.items():
        rows = model.sample_rows(key, uniforms[indices], temperature)
        for i, row in zip(indices, rows):
            out[i] = row
    return out

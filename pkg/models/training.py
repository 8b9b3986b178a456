"""
DeepCAM training, gradient checking, checkpoints and batched generation
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.model_selection import train_test_split

from models.deepcam import Batch, DeepCAM, build_model
from models.losses import compute_loss
from models.schedule import (
    ActivityCatalog,
    ActivityChain,
    DEFAULT_CATALOG,
    FEATURE_NAMES,
    Household,
    N_SLOTS,
    PAD_CODE,
    SlotGrid,
    encode_chain,
    order_members,
    person_features,
)
from utils.config import ModelConfig, TrainingConfig
from utils.errors import ArityError, CheckpointMismatchError, DataError, NumericFaultError
from utils.rng import draw_uniforms, stream

logger = logging.getLogger(__name__)


@dataclass
class HouseholdSample:
    """One household encoded for the network; row 0 is the head"""

    household_id: int
    person_ids: Tuple[int, ...]
    features: np.ndarray  # [P_max, F]
    grid: np.ndarray  # [P_max, 96]
    mask: np.ndarray  # [P_max]


def schema_hash(catalog: ActivityCatalog = DEFAULT_CATALOG) -> str:
    """Identity of the corpus encoding a checkpoint was trained on"""
    signature = f"{catalog.schema_signature()}#{','.join(FEATURE_NAMES)}#{N_SLOTS}"
    return hashlib.sha256(signature.encode("utf-8")).hexdigest()


# =========================
# ENCODING AND BATCHING
# =========================
def encode_features(household: Household, p_max: int, gender_priority=None) -> Tuple[List, np.ndarray, np.ndarray]:
    members = order_members(household, gender_priority)[:p_max]
    features = np.zeros((p_max, len(FEATURE_NAMES)))
    mask = np.zeros(p_max, dtype=bool)
    for i, person in enumerate(members):
        features[i] = person_features(person, household, is_head=(i == 0))
        mask[i] = True
    return members, features, mask


def encode_household(
    household: Household,
    chains: Dict[int, ActivityChain],
    p_max: int,
    gender_priority: Optional[Sequence[str]] = None,
) -> HouseholdSample:
    if len(chains) != household.size:
        raise ArityError(
            f"Household {household.household_id} has {household.size} members but {len(chains)} chains"
        )
    members, features, mask = encode_features(household, p_max, gender_priority)
    grid = np.full((p_max, N_SLOTS), PAD_CODE, dtype=np.int64)
    for i, person in enumerate(members):
        if person.person_id not in chains:
            raise ArityError(f"No chain for person {person.person_id} of household {household.household_id}")
        grid[i] = encode_chain(chains[person.person_id])
    return HouseholdSample(household.household_id, tuple(p.person_id for p in members), features, grid, mask)


def collate(samples: Sequence[HouseholdSample], dtype: torch.dtype = torch.float32, n_persons: Optional[int] = None) -> Batch:
    """Stack samples into a Batch, optionally cropping to the first n_persons rows"""
    n_persons = n_persons or samples[0].grid.shape[0]
    grids = torch.as_tensor(np.stack([s.grid[:n_persons] for s in samples]), dtype=torch.long)
    return Batch(
        head_grid=grids[:, 0, :].clone(),
        member_grids=grids,
        person_features=torch.as_tensor(np.stack([s.features[:n_persons] for s in samples]), dtype=dtype),
        valid_mask=torch.as_tensor(np.stack([s.mask[:n_persons] for s in samples]), dtype=torch.bool),
    )


def split_samples(
    samples: Sequence[HouseholdSample], config: TrainingConfig, seed: int
) -> Tuple[List[HouseholdSample], List[HouseholdSample], List[HouseholdSample]]:
    """Train / validation / test split of households"""
    indices = np.arange(len(samples))
    held_out = config.val_fraction + config.test_fraction
    train_idx, rest_idx = train_test_split(indices, test_size=held_out, random_state=seed, shuffle=True)
    test_share = config.test_fraction / held_out
    val_idx, test_idx = train_test_split(rest_idx, test_size=test_share, random_state=seed, shuffle=True)
    pick = lambda idx: [samples[i] for i in sorted(idx)]  # noqa: E731
    return pick(train_idx), pick(val_idx), pick(test_idx)


# =========================
# TRAINING
# =========================
@dataclass
class TrainResult:
    model: DeepCAM
    history: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1
    aborted: bool = False
    test_samples: List[HouseholdSample] = field(default_factory=list)


def evaluate(model: DeepCAM, samples: Sequence[HouseholdSample], weights, lambda_aor: float, batch_size: int) -> Dict[str, float]:
    """Mean loss components over samples, weighted by batch size"""
    if not samples:
        return {}
    model.eval()
    totals: Dict[str, float] = {}
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            batch = collate(chunk, dtype)
            components = compute_loss(model(batch), batch, weights, lambda_aor)
            for key, value in components.as_floats().items():
                totals[key] = totals.get(key, 0.0) + value * len(chunk)
    return {key: value / len(samples) for key, value in totals.items()}


def train(
    samples: Sequence[HouseholdSample],
    model_config: ModelConfig,
    training_config: TrainingConfig,
    weights,
    seed: int,
    epochs: Optional[int] = None,
) -> TrainResult:
    """Adam over a deterministic batch order; keeps the best-validation weights"""
    if len(samples) < training_config.min_households:
        raise DataError(
            f"Training needs at least {training_config.min_households} households, got {len(samples)}"
        )
    epochs = epochs if epochs is not None else training_config.epochs

    # Step 1: split and build
    train_set, val_set, test_set = split_samples(samples, training_config, seed)
    model = build_model(model_config, seed)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=training_config.learning_rate,
        betas=(training_config.beta1, training_config.beta2),
    )
    logger.info(f"🧠 Training DeepCAM on {len(train_set)} households ({len(val_set)} validation, {len(test_set)} test)")

    result = TrainResult(model=model, test_samples=test_set)
    best_state = copy.deepcopy(model.state_dict())
    best_val = float("inf")

    # Step 2: epochs
    for epoch in range(epochs):
        model.train()
        order = stream(seed, epoch).permutation(len(train_set))
        epoch_totals = {"total": 0.0, "cross_entropy": 0.0, "r_individual": 0.0, "r_household": 0.0}
        try:
            for start in range(0, len(order), training_config.batch_size):
                chunk = [train_set[i] for i in order[start:start + training_config.batch_size]]
                batch = collate(chunk)
                components = compute_loss(model(batch), batch, weights, model_config.lambda_aor)
                if not torch.isfinite(components.total):
                    raise NumericFaultError("Training loss is not finite", layer="loss")
                optimizer.zero_grad()
                components.total.backward()
                optimizer.step()
                for key, value in components.as_floats().items():
                    epoch_totals[key] += value * len(chunk)
        except NumericFaultError as exc:
            logger.error(f"❌ Training diverged in epoch {epoch + 1}: {exc}; restoring last finite checkpoint")
            model.load_state_dict(best_state)
            result.aborted = True
            break

        record = {f"train_{k}": v / len(train_set) for k, v in epoch_totals.items()}
        record["epoch"] = epoch + 1
        val_metrics = evaluate(model, val_set, weights, model_config.lambda_aor, training_config.batch_size)
        record.update({f"val_{k}": v for k, v in val_metrics.items()})
        result.history.append(record)

        # Step 3: keep the best validation checkpoint
        score = val_metrics.get("total", record["train_total"])
        if score < best_val:
            best_val = score
            best_state = copy.deepcopy(model.state_dict())
            result.best_epoch = epoch + 1
        logger.info(
            f"  • epoch {epoch + 1}/{epochs}: train {record['train_total']:.4f} "
            f"val {val_metrics.get('total', float('nan')):.4f}"
        )

    model.load_state_dict(best_state)
    model.eval()
    return result


# =========================
# GRADIENT CHECK
# =========================
def gradient_check(model: DeepCAM, batch: Batch, weights, lambda_aor: float, eps: float = 1e-4, floor: float = 1e-3) -> float:
    """Max relative error between autograd and central differences over every parameter coordinate"""
    checked = copy.deepcopy(model).double()
    for module in checked.modules():
        if isinstance(module, torch.nn.Dropout):
            module.p = 0.0
        elif isinstance(module, torch.nn.MultiheadAttention):
            module.dropout = 0.0
    checked.train()
    batch = batch.to(torch.float64)

    def objective() -> torch.Tensor:
        return compute_loss(checked(batch), batch, weights, lambda_aor).total

    checked.zero_grad()
    objective().backward()

    worst = 0.0
    for name, param in checked.named_parameters():
        analytic = param.grad.detach().clone().reshape(-1)
        flat = param.data.reshape(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            plus = objective().item()
            flat[i] = original - eps
            minus = objective().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            a = analytic[i].item()
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel > worst:
                worst = rel
                logger.debug(f"gradient check {name}[{i}]: analytic {a:.6e} numeric {numeric:.6e}")
    return worst


# =========================
# CHECKPOINTS
# =========================
def save_checkpoint(model: DeepCAM, path: str, corpus_schema: str, extra: Optional[Dict] = None) -> str:
    """Structured-text checkpoint: config, schema hash and named tensors"""
    payload = {
        "format": "deepcam-checkpoint/1",
        "config": model.config.model_dump(mode="json"),
        "schema_hash": corpus_schema,
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
        "tensors": {name: tensor.detach().cpu().tolist() for name, tensor in model.state_dict().items()},
        "extra": extra or {},
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    return path


def load_checkpoint(path: str, corpus_schema: Optional[str] = None) -> Tuple[DeepCAM, Dict]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if corpus_schema is not None and payload["schema_hash"] != corpus_schema:
        raise CheckpointMismatchError(
            f"Checkpoint {path} was trained on schema {payload['schema_hash'][:12]}, expected {corpus_schema[:12]}",
            path=path,
        )
    config = ModelConfig(**payload["config"])
    dtype = getattr(torch, payload.get("dtype", "float32"))
    model = DeepCAM(config).to(dtype)
    state = {name: torch.tensor(values, dtype=model.state_dict()[name].dtype) for name, values in payload["tensors"].items()}
    model.load_state_dict(state)
    model.eval()
    return model, payload.get("extra", {})


# =========================
# GENERATION
# =========================
def _sample_codes(logits: torch.Tensor, uniforms: np.ndarray, temperature: float) -> np.ndarray:
    """Inverse-CDF sampling of [B, P, 16] logits with uniforms [B, P]"""
    if temperature == 0:
        return logits.argmax(dim=-1).cpu().numpy()
    probs = torch.softmax(logits.double() / temperature, dim=-1).cpu().numpy()
    cdf = np.cumsum(probs, axis=-1)
    codes = (uniforms[..., None] >= cdf).sum(axis=-1)
    last_valid = probs.shape[-1] - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    return np.minimum(codes, last_valid)


def generate_batch(
    model: DeepCAM,
    samples: Sequence[HouseholdSample],
    head_rows: np.ndarray,
    rng_seed: int,
    temperature: float = 1.0,
) -> np.ndarray:
    """Autoregressive generation for households of one size; returns grids [B, P_max, 96]"""
    p_max = samples[0].grid.shape[0]
    n_persons = int(samples[0].mask.sum())
    grids = np.full((len(samples), p_max, N_SLOTS), PAD_CODE, dtype=np.int64)
    grids[:, 0, :] = head_rows
    if n_persons == 1:
        return grids

    dtype = next(model.parameters()).dtype
    uniforms = draw_uniforms(rng_seed, [s.household_id for s in samples], (N_SLOTS, p_max))
    features = torch.as_tensor(np.stack([s.features[:n_persons] for s in samples]), dtype=dtype)
    mask = torch.as_tensor(np.stack([s.mask[:n_persons] for s in samples]), dtype=torch.bool)
    head = torch.as_tensor(head_rows, dtype=torch.long)

    model.eval()
    with torch.no_grad():
        # one cached decoder step per slot
        state = model.start_decoding(Batch(head, torch.as_tensor(grids[:, :n_persons]), features, mask))
        previous = None
        for t in range(N_SLOTS):
            logits = model.decode_step(state, previous)[:, 1:, :]
            grids[:, 1:n_persons, t] = _sample_codes(logits, uniforms[:, t, 1:n_persons], temperature)
            previous = torch.as_tensor(grids[:, :n_persons, t])
    return grids


def generate_members(
    model: DeepCAM,
    household: Household,
    head_grid: np.ndarray,
    rng_seed: int,
    temperature: float = 1.0,
    gender_priority: Optional[Sequence[str]] = None,
) -> SlotGrid:
    """Coordinated grid for one household; the head row is copied"""
    members, features, mask = encode_features(household, model.config.p_max, gender_priority)
    grid = np.full((model.config.p_max, N_SLOTS), PAD_CODE, dtype=np.int64)
    sample = HouseholdSample(household.household_id, tuple(p.person_id for p in members), features, grid, mask)
    grids = generate_batch(model, [sample], np.asarray(head_grid)[None, :], rng_seed, temperature)
    return SlotGrid(grids[0])


def generate_households(
    model: DeepCAM,
    households: Sequence[Household],
    head_rows: Dict[int, np.ndarray],
    rng_seed: int,
    temperature: float = 1.0,
    batch_size: int = 256,
    gender_priority: Optional[Sequence[str]] = None,
) -> Dict[int, Tuple[Tuple[int, ...], SlotGrid]]:
    """Generate every household, batching equal sizes; returns {household_id: (person_ids, grid)}"""
    p_max = model.config.p_max
    by_size: Dict[int, List[HouseholdSample]] = {}
    for household in households:
        members, features, mask = encode_features(household, p_max, gender_priority)
        grid = np.full((p_max, N_SLOTS), PAD_CODE, dtype=np.int64)
        sample = HouseholdSample(household.household_id, tuple(p.person_id for p in members), features, grid, mask)
        by_size.setdefault(int(mask.sum()), []).append(sample)

    out: Dict[int, Tuple[Tuple[int, ...], SlotGrid]] = {}
    for size in sorted(by_size):
        group = by_size[size]
        for start in range(0, len(group), batch_size):
            chunk = group[start:start + batch_size]
            heads = np.stack([head_rows[s.household_id] for s in chunk])
            grids = generate_batch(model, chunk, heads, rng_seed, temperature)
            for sample, grid in zip(chunk, grids):
                out[sample.household_id] = (sample.person_ids, SlotGrid(grid))
        logger.info(f"  • generated {len(group)} households of size {size}")
    return out

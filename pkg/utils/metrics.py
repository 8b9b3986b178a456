"""
Evaluation metrics - JSD, MAPE, cosine similarity - and the distribution
builders used to compare generated schedules against reference data.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Hashable, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import rel_entr

from models.schedule import (
    ActivityCatalog,
    ActivityChain,
    DEFAULT_CATALOG,
    N_SLOTS,
    SLOT_MINUTES,
    encode_chain,
)
from utils.errors import NormalizationError, UndefinedMetricError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class Distribution:
    """Discrete distribution over labelled support"""

    labels: Tuple[Hashable, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "labels", tuple(self.labels))
        if probs.shape != (len(self.labels),):
            raise NormalizationError(f"{len(self.labels)} labels but {probs.shape} probabilities")
        if len(set(self.labels)) != len(self.labels):
            raise NormalizationError("Distribution labels must be unique")
        if (probs < 0).any():
            raise NormalizationError("Distribution has negative mass")
        total = probs.sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise NormalizationError(f"Distribution sums to {total:.12f}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)

    @property
    def support_size(self) -> int:
        return int((self.probabilities > 0).sum())

    @classmethod
    def from_counts(cls, counts: Mapping[Hashable, float]) -> "Distribution":
        labels = list(counts.keys())
        values = np.array([float(counts[k]) for k in labels])
        total = values.sum()
        if total <= 0:
            raise UndefinedMetricError("Cannot normalise an empty histogram")
        return cls(tuple(labels), values / total)

    def get(self, label: Hashable) -> float:
        try:
            return float(self.probabilities[self.labels.index(label)])
        except ValueError:
            return 0.0

    def as_series(self) -> pd.Series:
        return pd.Series(self.probabilities, index=list(self.labels), dtype=np.float64)


def _align(p: Distribution, q: Distribution) -> Tuple[np.ndarray, np.ndarray]:
    """Union support in a canonical order, zero-filled"""
    labels = sorted(set(p.labels) | set(q.labels), key=lambda x: (str(type(x)), str(x)))
    return (
        np.array([p.get(label) for label in labels]),
        np.array([q.get(label) for label in labels]),
    )


def jsd(p: Distribution, q: Distribution) -> float:
    """Base-2 Jensen-Shannon divergence, bounded in [0, 1]"""
    pa, qa = _align(p, q)
    m = (pa + qa) / 2.0
    kl_p = float(rel_entr(pa, m).sum())
    kl_q = float(rel_entr(qa, m).sum())
    value = 0.5 * (kl_p + kl_q) / math.log(2.0)
    return float(min(max(value, 0.0), 1.0))


@dataclass(frozen=True)
class MapeResult:
    value: float
    included: int
    excluded: int


def mape(pred: Sequence[float], obs: Sequence[float], epsilon: float = 1e-9) -> MapeResult:
    """Mean absolute percentage error; near-zero observations are excluded"""
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise UndefinedMetricError(f"MAPE needs equal lengths, got {pred.shape} and {obs.shape}")

    keep = np.abs(obs) >= epsilon
    excluded = int((~keep).sum())
    if not keep.any():
        raise UndefinedMetricError("All observed entries are below epsilon", excluded=excluded)
    if excluded:
        logger.warning(f"MAPE excluded {excluded} near-zero observations")
    value = float(np.mean(np.abs(pred[keep] - obs[keep]) / np.abs(obs[keep])) * 100.0)
    return MapeResult(value=value, included=int(keep.sum()), excluded=excluded)


def cosine_similarity(a, b) -> float:
    """Cosine of two equally-shaped matrices, flattened"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UndefinedMetricError(f"Matrices differ in shape: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.ravel())
    nb = np.linalg.norm(b.ravel())
    if na == 0.0 or nb == 0.0:
        raise UndefinedMetricError("Cosine similarity is undefined for a zero matrix")
    value = float(np.dot(a.ravel(), b.ravel()) / (na * nb))
    return float(min(max(value, -1.0), 1.0))


# =========================
# DISTRIBUTION BUILDERS
# =========================
def slot_type_shares(chains: Iterable[ActivityChain], catalog: ActivityCatalog = DEFAULT_CATALOG) -> pd.DataFrame:
    """Share of persons in each activity type per 15-minute slot"""
    rows = [encode_chain(chain) for chain in chains]
    counts = np.zeros((N_SLOTS, len(catalog.types)), dtype=np.float64)
    if rows:
        grid = np.stack(rows)
        for code in range(len(catalog.types)):
            counts[:, code] = (grid == code).sum(axis=0)
    totals = counts.sum(axis=1, keepdims=True)
    shares = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    frame = pd.DataFrame(shares, columns=catalog.labels)
    frame.index.name = "slot"
    return frame


def type_distribution(chains: Iterable[ActivityChain]) -> Distribution:
    counts: Dict[str, int] = {}
    for chain in chains:
        for activity in chain.activities:
            counts[activity.type.label] = counts.get(activity.type.label, 0) + 1
    return Distribution.from_counts(counts)


def start_time_distribution(chains: Iterable[ActivityChain]) -> Distribution:
    """Activity start times in 15-minute bins"""
    counts = np.zeros(N_SLOTS)
    for chain in chains:
        for activity in chain.activities:
            counts[min(activity.start // SLOT_MINUTES, N_SLOTS - 1)] += 1
    return Distribution.from_counts({int(i): counts[i] for i in range(N_SLOTS) if counts[i] > 0})


def duration_distribution(chains: Iterable[ActivityChain]) -> Distribution:
    """Pooled activity durations in 15-minute bins"""
    counts: Dict[int, int] = {}
    for chain in chains:
        for activity in chain.activities:
            key = int(math.ceil(activity.duration / SLOT_MINUTES))
            counts[key] = counts.get(key, 0) + 1
    return Distribution.from_counts(counts)


def duration_quartiles(chains: Iterable[ActivityChain]) -> pd.DataFrame:
    """Per-type duration quartiles in minutes"""
    records = [(a.type.label, a.duration) for chain in chains for a in chain.activities]
    frame = pd.DataFrame.from_records(records, columns=["activity_type", "duration_min"])
    if frame.empty:
        return pd.DataFrame(columns=["activity_type", "q1", "median", "q3", "count"])
    grouped = frame.groupby("activity_type")["duration_min"]
    summary = pd.DataFrame(
        {
            "q1": grouped.quantile(0.25),
            "median": grouped.quantile(0.5),
            "q3": grouped.quantile(0.75),
            "count": grouped.size(),
        }
    )
    return summary.reset_index()


def activity_count_distribution(chains: Iterable[ActivityChain]) -> Distribution:
    """Activities per person"""
    counts: Dict[int, int] = {}
    for chain in chains:
        counts[len(chain)] = counts.get(len(chain), 0) + 1
    return Distribution.from_counts(counts)


@dataclass
class ActivityDistributions:
    slot_type_shares: pd.DataFrame
    type_shares: Distribution
    start_times: Distribution
    durations: Distribution
    duration_quartiles: pd.DataFrame
    activity_counts: Distribution

    def slot_distribution(self, slot: int) -> Distribution:
        row = self.slot_type_shares.iloc[slot]
        row = row[row > 0]
        return Distribution.from_counts(row.to_dict())


def build_distributions(chains: Iterable[ActivityChain], catalog: ActivityCatalog = DEFAULT_CATALOG) -> ActivityDistributions:
    """Every schedule-level distribution used by validation"""
    chains: List[ActivityChain] = list(chains)
    if not chains:
        raise UndefinedMetricError("No activity chains to build distributions from")
    return ActivityDistributions(
        slot_type_shares=slot_type_shares(chains, catalog),
        type_shares=type_distribution(chains),
        start_times=start_time_distribution(chains),
        durations=duration_distribution(chains),
        duration_quartiles=duration_quartiles(chains),
        activity_counts=activity_count_distribution(chains),
    )

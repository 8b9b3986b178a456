"""
Population Agent - synthesizes households matching zonal marginal totals
with iterative proportional fitting, or imports an external population
"""

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence

from ipfn import ipfn
import numpy as np
import pandas as pd

from models.schedule import Household, P_MAX
from utils.config import PopulationConfig
from utils.errors import InfeasibleMarginalError, InvariantViolationError
from utils.io_store import (
    POPULATION_FIELDS,
    POPULATION_OPTIONAL,
    file_row,
    population_frame_to_households,
    read_marginals,
    read_population,
    read_table,
    write_population,
)
from utils.rng import split_streams

logger = logging.getLogger(__name__)

DRAW_CHUNK = 10000
_OPEN_ENDED = re.compile(r"^\s*(-?\d+)\s*\+\s*$")


@dataclass
class MarginalTable:
    """Target counts of one dimension, per zone and category"""

    dimension: str
    categories: List[str]
    targets: Dict[int, np.ndarray]  # zone -> counts aligned with categories

    def __post_init__(self):
        for zone, counts in self.targets.items():
            if (np.asarray(counts) < 0).any():
                raise InvariantViolationError(f"Negative target in {self.dimension} for zone {zone}")

    @property
    def zones(self) -> List[int]:
        return sorted(self.targets)


@dataclass
class SeedSample:
    """Template households with positive initial weights"""

    households: List[Household]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.households) != len(self.weights):
            raise InvariantViolationError("Seed sample needs one weight per household")
        if (self.weights <= 0).any():
            raise InvariantViolationError("Seed weights must be positive")


@dataclass
class IPFResult:
    """Fitted weights per zone [zone -> template weights] and per-sweep max relative gaps"""

    seed: SeedSample
    weights: Dict[int, np.ndarray]
    gap_history: Dict[int, List[float]] = field(default_factory=dict)
    converged: Dict[int, bool] = field(default_factory=dict)

    @property
    def all_converged(self) -> bool:
        return all(self.converged.values())


def category_matches(value: int, category: str) -> bool:
    """'3' matches 3, '3+' matches every value >= 3"""
    open_ended = _OPEN_ENDED.match(category)
    if open_ended:
        return value >= int(open_ended.group(1))
    try:
        return value == int(float(category))
    except ValueError:
        return str(value) == category


def household_attribute(household: Household, dimension: str) -> int:
    if dimension == "size":
        return household.size
    return getattr(household, dimension)


def incidence_matrix(households: Sequence[Household], table: MarginalTable) -> np.ndarray:
    """[n_templates x n_categories] membership of each template in each category"""
    matrix = np.zeros((len(households), len(table.categories)))
    for i, household in enumerate(households):
        value = household_attribute(household, table.dimension)
        for j, category in enumerate(table.categories):
            if category_matches(value, category):
                matrix[i, j] = 1.0
                break
        else:
            raise InvariantViolationError(
                f"Household {household.household_id} has {table.dimension}={value}, "
                f"not covered by categories {table.categories}"
            )
    return matrix


# =========================
# IPF
# =========================
def _max_relative_gap(table: np.ndarray, targets: List[np.ndarray]) -> float:
    """Largest relative miss of the joint table's margins against positive targets"""
    gap = 0.0
    axes = range(table.ndim)
    for axis, target in zip(axes, targets):
        totals = table.sum(axis=tuple(a for a in axes if a != axis))
        positive = target > 0
        if positive.any():
            gap = max(gap, float(np.max(np.abs(totals[positive] - target[positive]) / target[positive])))
    return gap


def _cell_index(incidences: List[np.ndarray]) -> List[tuple]:
    """Category cell of each template across all dimensions"""
    columns = [incidence.argmax(axis=1) for incidence in incidences]
    return [tuple(int(c[i]) for c in columns) for i in range(len(columns[0]))]


def ipf_fit(seed: SeedSample, marginals: Sequence[MarginalTable], tol: float = 1e-4, max_iter: int = 100) -> IPFResult:
    """Fit the seed's joint category table to each zone's marginals with ipfn, then spread cells over templates"""
    incidences = [incidence_matrix(seed.households, table) for table in marginals]
    zones = sorted(set().union(*[set(t.zones) for t in marginals])) if marginals else []
    result = IPFResult(seed=seed, weights={})
    if not zones:
        return result

    cells = _cell_index(incidences)
    shape = tuple(len(t.categories) for t in marginals)
    seed_table = np.zeros(shape)
    for cell, weight in zip(cells, seed.weights):
        seed_table[cell] += weight
    dimensions = [[axis] for axis in range(len(marginals))]

    for zone in zones:
        targets = [np.asarray(t.targets.get(zone, np.zeros(len(t.categories))), dtype=np.float64) for t in marginals]

        # Step 1: every positive target needs seed support
        for table, incidence, target in zip(marginals, incidences, targets):
            support = incidence.sum(axis=0)
            for j, category in enumerate(table.categories):
                if target[j] > 0 and support[j] == 0:
                    raise InfeasibleMarginalError(
                        f"Category {table.dimension}={category} has target {target[j]:g} in zone {zone} "
                        f"but no seed household",
                        dimension=table.dimension,
                        category=category,
                        zone=zone,
                    )

        # Step 2: fit the joint table (ipfn scales its input in place)
        fitter = ipfn.ipfn(
            seed_table.copy(), targets, dimensions,
            convergence_rate=tol, max_iteration=max_iter, rate_tolerance=0.0, verbose=2,
        )
        fitted, _, progress = fitter.iteration()
        history = [float(g) for g in progress["conv"].tolist()]
        gap = _max_relative_gap(fitted, targets)
        converged = gap <= tol

        # Step 3: templates share their cell's scaling factor
        weights = np.array([w * fitted[c] / seed_table[c] for c, w in zip(cells, seed.weights)])

        if not converged:
            logger.warning(f"⚠️ IPF for zone {zone} stopped after {len(history)} sweeps with max gap {gap:.3e}")
        result.weights[zone] = weights
        result.gap_history[zone] = history
        result.converged[zone] = converged
    return result


# =========================
# INTEGERIZATION
# =========================
def draw_population(fitted: IPFResult, n_households: int, rng_seed: int) -> List[Household]:
    """Weighted sampling with replacement of (template, zone) pairs; home_taz = zone"""
    if n_households == 0:
        return []
    zones = sorted(fitted.weights)
    templates = fitted.seed.households
    flat = np.concatenate([fitted.weights[z] for z in zones])
    if flat.sum() <= 0:
        raise InvariantViolationError("Fitted weights have no mass to draw from")
    probs = flat / flat.sum()

    # fixed-size chunks, each with its own stream, so results do not depend on how chunks are scheduled
    n_chunks = (n_households + DRAW_CHUNK - 1) // DRAW_CHUNK
    streams = split_streams(rng_seed, n_chunks)
    picks = []
    for c, rng in enumerate(streams):
        size = min(DRAW_CHUNK, n_households - c * DRAW_CHUNK)
        picks.append(rng.choice(len(probs), size=size, p=probs))
    picks = np.concatenate(picks)

    households: List[Household] = []
    next_person = 1
    for household_id, pick in enumerate(picks, start=1):
        template = templates[pick % len(templates)]
        zone = zones[pick // len(templates)]
        members = []
        for person in template.members:
            members.append(replace(person, person_id=next_person))
            next_person += 1
        households.append(replace(template, household_id=household_id, members=tuple(members), home_taz=int(zone)))
    return households


# =========================
# FILE INPUTS
# =========================
def marginals_from_frame(df: pd.DataFrame, dimensions: Optional[Sequence[str]] = None) -> List[MarginalTable]:
    tables = []
    wanted = list(dimensions) if dimensions else list(dict.fromkeys(df["dimension"]))
    for dimension in wanted:
        part = df[df["dimension"] == dimension]
        if part.empty:
            logger.warning(f"No marginals for dimension '{dimension}'")
            continue
        categories = list(dict.fromkeys(part["category"]))
        targets = {}
        for zone, zone_part in part.groupby("zone", sort=True):
            counts = zone_part.groupby("category")["count"].sum()
            targets[int(zone)] = np.array([float(counts.get(c, 0.0)) for c in categories])
        tables.append(MarginalTable(dimension, categories, targets))
    return tables


def read_seed_sample(path: str, p_max: int = P_MAX) -> SeedSample:
    df = read_table(path, POPULATION_FIELDS, POPULATION_OPTIONAL)
    households = population_frame_to_households(df.copy(), None, p_max)
    if "weight" in df.columns:
        per_household = df.groupby("household_id")["weight"].first()
        weights = np.array([float(per_household[h.household_id]) for h in households])
        bad = [h.household_id for h, w in zip(households, weights) if not w > 0]
        if bad:
            rows = [file_row(i) for i in df.index[df["household_id"].isin(bad)]]
            raise InvariantViolationError(f"Seed households {bad} have non-positive weight", rows=rows)
    else:
        weights = np.ones(len(households))
    return SeedSample(households, weights)


# =========================
# AGENT
# =========================
class PopulationAgent:
    """Worker agent for population synthesis and import"""

    def __init__(self, config: Optional[PopulationConfig] = None, p_max: int = P_MAX,
                 gender_priority: Optional[Sequence[str]] = None, agent_id: str = "population_agent"):
        self.agent_id = agent_id
        self.capabilities = ["ipf_fit", "draw_population", "import_population", "write_population"]
        self.config = config or PopulationConfig()
        self.p_max = p_max
        self.gender_priority = gender_priority
        logger.info(f"✅ Population Agent initialized: {self.agent_id}")

    def synthesize(self, marginals_path: str, seed_path: str, n_households: int, rng_seed: int) -> List[Household]:
        """Fit the seed sample to the marginals and draw n_households"""
        logger.info(f"👥 Synthesizing {n_households} households from {marginals_path}...")
        seed = read_seed_sample(seed_path, self.p_max)
        marginals = marginals_from_frame(read_marginals(marginals_path), self.config.dimensions)
        fitted = ipf_fit(seed, marginals, self.config.tol, self.config.max_iter)
        for zone, history in fitted.gap_history.items():
            logger.debug(f"  • zone {zone}: {len(history)} sweeps, final gap {history[-1]:.2e}")
        households = draw_population(fitted, n_households, rng_seed)
        logger.info(f"  • drew {len(households)} households, {sum(h.size for h in households)} persons")
        return households

    def import_population(self, path: str, zone_ids: Optional[Iterable[int]] = None) -> List[Household]:
        return read_population(path, zone_ids, self.p_max, self.gender_priority)

    def write_population(self, households: Sequence[Household], path: str) -> str:
        return write_population(households, path)

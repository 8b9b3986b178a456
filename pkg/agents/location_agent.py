"""
Location Agent - places every activity in a traffic analysis zone:
mandatory anchors by commute distance, non-mandatory infill by distance and
bearing between anchors, then attraction-weight refinement toward targets
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import lognorm

from models.events import Event, Role
from models.schedule import (
    ActivityCatalog,
    ActivityChain,
    DEFAULT_CATALOG,
    Household,
    MANDATORY_LABELS,
    order_members,
)
from utils.config import LocationConfig
from utils.errors import CompatibilityError, InvariantViolationError
from utils.io_store import file_row, read_table, write_table
from utils.rng import household_stream

logger = logging.getLogger(__name__)

LAND_USE_FLAGS = ("residential", "employment", "education", "commercial", "recreation")
ANCHOR_LABELS = ("Home", "Work", "School")
PLAN_FIELDS = ["household_id", "person_id", "seq", "activity_type", "start", "end", "taz_id", "event_id", "relaxed"]
EPS = 1e-6


# =========================
# ZONES
# =========================
@dataclass(frozen=True)
class Zone:
    taz_id: int
    x: float
    y: float
    land_use: frozenset
    attraction: Dict[str, float] = field(default_factory=dict, hash=False, compare=False)
    node: Optional[int] = None


class ZoneTable:
    """Zones sorted by taz_id with vectorised centroid geometry (meters)"""

    def __init__(self, zones: Sequence[Zone]):
        self.zones: List[Zone] = sorted(zones, key=lambda z: z.taz_id)
        if not self.zones:
            raise InvariantViolationError("Zone table is empty")
        self.ids = np.array([z.taz_id for z in self.zones], dtype=np.int64)
        self.xy = np.array([[z.x, z.y] for z in self.zones], dtype=np.float64)
        if not np.isfinite(self.xy).all():
            raise InvariantViolationError("Zone centroids must be finite")
        self._index = {int(z): i for i, z in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.zones)

    def index(self, taz_id: int) -> int:
        return self._index[int(taz_id)]

    def compatible(self, label: str, land_use: Dict[str, List[str]]) -> np.ndarray:
        """Indices of zones whose land use admits the activity type"""
        flags = set(land_use.get(label, LAND_USE_FLAGS))
        return np.array([i for i, z in enumerate(self.zones) if z.land_use & flags], dtype=np.int64)

    def distance_km(self, origin: int, targets: np.ndarray, detour: float) -> np.ndarray:
        """Detour-scaled Euclidean distance from zone index origin to target indices"""
        delta = self.xy[targets] - self.xy[origin]
        return detour * np.hypot(delta[:, 0], delta[:, 1]) / 1000.0

    def attraction_vector(self, label: str) -> Optional[np.ndarray]:
        if not any(label in z.attraction for z in self.zones):
            return None
        return np.array([z.attraction.get(label, 0.0) for z in self.zones], dtype=np.float64)


def read_zones(path: str, catalog: ActivityCatalog = DEFAULT_CATALOG) -> ZoneTable:
    """Zones CSV: taz_id, x, y, land-use flag columns, optional D_<type> and node columns"""
    df = read_table(path, ["taz_id", "x", "y"], list(LAND_USE_FLAGS) + ["node"] + [f"D_{l}" for l in catalog.labels])
    zones = []
    for idx, row in df.iterrows():
        land_use = frozenset(flag for flag in LAND_USE_FLAGS if flag in df.columns and int(row[flag]) == 1)
        attraction = {}
        for label in catalog.labels:
            column = f"D_{label}"
            if column in df.columns and not pd.isna(row[column]):
                if float(row[column]) < 0:
                    raise InvariantViolationError(f"Negative attraction {column}", rows=[file_row(idx)])
                attraction[label] = float(row[column])
        node = int(row["node"]) if "node" in df.columns and not pd.isna(row["node"]) else None
        if not (math.isfinite(float(row["x"])) and math.isfinite(float(row["y"]))):
            raise InvariantViolationError("Zone centroid must be finite", rows=[file_row(idx)])
        zones.append(Zone(int(row["taz_id"]), float(row["x"]), float(row["y"]), land_use, attraction, node))
    table = ZoneTable(zones)
    if len(set(table.ids.tolist())) != len(table):
        raise InvariantViolationError(f"Duplicate taz_id in {path}")
    return table


# =========================
# SAMPLERS
# =========================
class DistanceSampler:
    """Trip distance (meters) per activity class and bearing deviation (radians)"""

    def __init__(
        self,
        cdfs: Optional[Dict[str, Tuple[np.ndarray, np.ndarray]]] = None,
        lognormals: Optional[Dict[str, Tuple[float, float]]] = None,
        theta_max: float = math.pi / 2,
        theta_values: Optional[Sequence[float]] = None,
    ):
        self.cdfs = {}
        for label, (distances, cdf) in (cdfs or {}).items():
            distances = np.asarray(distances, dtype=np.float64)
            cdf = np.asarray(cdf, dtype=np.float64)
            if (distances <= 0).any() or (np.diff(distances) < 0).any() or (np.diff(cdf) < 0).any():
                raise InvariantViolationError(f"Distance CDF for {label} must be monotone with positive support")
            self.cdfs[label] = (distances, cdf)
        self.lognormals = {label: lognorm(s=sigma, scale=median) for label, (median, sigma) in (lognormals or {}).items()}
        self.theta_max = theta_max
        self.theta_values = None if theta_values is None else np.asarray(theta_values, dtype=np.float64)

    @classmethod
    def from_lognormal(cls, median_m: float, sigma: float, theta_max: float = math.pi / 2) -> "DistanceSampler":
        """One regional distribution for every activity class"""
        return cls(lognormals={"default": (median_m, sigma)}, theta_max=theta_max)

    @classmethod
    def from_config(cls, config: LocationConfig) -> "DistanceSampler":
        lognormals = {label: (km * 1000.0, config.distance_sigma) for label, km in config.distance_medians_km.items()}
        return cls(lognormals=lognormals, theta_max=config.theta_max)

    @classmethod
    def from_csv(cls, path: str, config: LocationConfig) -> "DistanceSampler":
        """Empirical CDFs from (activity_class, distance_m, cdf); classes not listed keep the config lognormal"""
        df = read_table(path, ["activity_class", "distance_m", "cdf"])
        cdfs = {}
        for label, part in df.groupby("activity_class", sort=True):
            part = part.sort_values("distance_m", kind="mergesort")
            cdfs[str(label)] = (part["distance_m"].to_numpy(), part["cdf"].to_numpy())
        base = cls.from_config(config)
        return cls(cdfs=cdfs, lognormals={k: (v.median(), v.kwds["s"]) for k, v in base.lognormals.items()},
                   theta_max=config.theta_max)

    @classmethod
    def constant(cls, distance_m: float, theta: float = 0.0) -> "DistanceSampler":
        return cls(cdfs={"default": (np.array([distance_m]), np.array([1.0]))}, theta_values=[theta])

    def sample_km(self, label: str, rng: np.random.Generator) -> float:
        u = rng.random()
        key = label if label in self.cdfs or label in self.lognormals else "default"
        if key in self.cdfs:
            distances, cdf = self.cdfs[key]
            if len(distances) == 1:
                return float(distances[0]) / 1000.0
            return float(np.interp(u, cdf, distances)) / 1000.0
        if key in self.lognormals:
            return float(self.lognormals[key].ppf(u)) / 1000.0
        raise InvariantViolationError(f"No distance distribution for {label} and no default")

    def sample_theta(self, rng: np.random.Generator) -> float:
        u = rng.random()
        if self.theta_values is not None:
            return float(self.theta_values[min(int(u * len(self.theta_values)), len(self.theta_values) - 1)])
        return float(u * self.theta_max)


# =========================
# PLACEMENT
# =========================
@dataclass
class Placement:
    """A location decision: candidate zone indices, their costs and the chosen zone"""

    label: str
    candidates: np.ndarray
    costs: np.ndarray
    choice: int
    relaxed: bool = False
    members: List[Tuple[int, int]] = field(default_factory=list)  # (person_id, seq)

    def tied(self, tolerance: float) -> np.ndarray:
        if self.relaxed:
            return np.array([], dtype=np.int64)
        return np.flatnonzero(self.costs <= self.costs.min() + tolerance)


def _compatible_or_fail(zones: ZoneTable, label: str, config: LocationConfig) -> np.ndarray:
    candidates = zones.compatible(label, config.land_use)
    if len(candidates) == 0:
        raise CompatibilityError(f"No land-use compatible zone for {label}", activity_type=label)
    return candidates


def place_mandatory(home: int, label: str, sampler: DistanceSampler, zones: ZoneTable,
                    rng: np.random.Generator, config: LocationConfig) -> Placement:
    candidates = _compatible_or_fail(zones, label, config)
    d_hat = sampler.sample_km(label, rng)
    costs = np.abs(zones.distance_km(home, candidates, config.detour_factor) - d_hat)
    return Placement(label, candidates, costs, int(candidates[np.argmin(costs)]))


def assign_mandatory(home_taz: int, label: str, sampler: DistanceSampler, zones: ZoneTable,
                     rng_seed: int, config: Optional[LocationConfig] = None) -> int:
    """Compatible zone whose distance from home best matches a sampled commute distance"""
    config = config or LocationConfig()
    rng = np.random.default_rng(rng_seed)
    placement = place_mandatory(zones.index(home_taz), label, sampler, zones, rng, config)
    return int(zones.ids[placement.choice])


def _bearing_deviation(zones: ZoneTable, prev: int, candidates: np.ndarray, nxt: int) -> np.ndarray:
    """Angle at prev between the direction to each candidate and the direction to nxt"""
    to_next = zones.xy[nxt] - zones.xy[prev]
    to_cand = zones.xy[candidates] - zones.xy[prev]
    norm_next = np.hypot(*to_next)
    norm_cand = np.hypot(to_cand[:, 0], to_cand[:, 1])
    theta = np.zeros(len(candidates))
    ok = (norm_cand > 0) & (norm_next > 0)
    cos = (to_cand[ok] @ to_next) / (norm_cand[ok] * norm_next)
    theta[ok] = np.arccos(np.clip(cos, -1.0, 1.0))
    return theta


def place_nonmandatory(prev: int, nxt: int, label: str, sampler: DistanceSampler, zones: ZoneTable,
                       rng: np.random.Generator, config: LocationConfig) -> Placement:
    candidates = _compatible_or_fail(zones, label, config)
    d_hat = sampler.sample_km(label, rng)
    theta_hat = sampler.sample_theta(rng)

    d_prev = zones.distance_km(prev, candidates, config.detour_factor)
    d_next = np.array([zones.distance_km(int(c), np.array([nxt]), config.detour_factor)[0] for c in candidates])
    theta = _bearing_deviation(zones, prev, candidates, nxt)
    costs = config.alpha * np.abs(d_prev - d_hat) + config.beta * np.abs(theta - theta_hat)

    travel_min = (d_prev + d_next) / config.speed_kmh * 60.0
    feasible = travel_min <= config.t_max_min
    if not feasible.any():
        choice = int(candidates[np.argmin(travel_min)])
        logger.debug(f"T_max relaxed for {label}: no zone within {config.t_max_min} min")
        return Placement(label, np.array([choice]), np.array([0.0]), choice, relaxed=True)
    return Placement(label, candidates[feasible], costs[feasible], int(candidates[feasible][np.argmin(costs[feasible])]))


def assign_nonmandatory(z_prev: int, z_next: int, label: str, sampler: DistanceSampler, zones: ZoneTable,
                        rng_seed: int, config: Optional[LocationConfig] = None) -> Tuple[int, bool]:
    """Zone minimising alpha|d - d_hat| + beta|theta - theta_hat| under the travel-time bound; (taz_id, relaxed)"""
    config = config or LocationConfig()
    rng = np.random.default_rng(rng_seed)
    placement = place_nonmandatory(zones.index(z_prev), zones.index(z_next), label, sampler, zones, rng, config)
    return int(zones.ids[placement.choice]), placement.relaxed


# =========================
# HOUSEHOLD ASSIGNMENT
# =========================
@dataclass
class HouseholdLocations:
    household_id: int
    records: List[Dict]
    placements: List[Placement]


def _anchor_zone(chain: ActivityChain, seq: int, zone_of: Dict[int, int], step: int, home: int) -> int:
    i = seq + step
    while 0 <= i < len(chain.activities):
        if chain.activities[i].type.label in ANCHOR_LABELS and i in zone_of:
            return zone_of[i]
        i += step
    return home


def assign_household(
    household: Household,
    chains: Dict[int, ActivityChain],
    events: Sequence[Event],
    zones: ZoneTable,
    sampler: DistanceSampler,
    config: LocationConfig,
    rng_seed: int,
) -> HouseholdLocations:
    """Locate every activity; coordinated events share one zone chosen with the head participant's anchors"""
    rng = household_stream(rng_seed, household.household_id)
    home = zones.index(household.home_taz)
    members = [p for p in order_members(household) if p.person_id in chains]

    event_of: Dict[Tuple[int, int], Event] = {}
    for event in events:
        if event.coordinated:
            for p in event.participants:
                event_of[(p.person_id, p.seq)] = event
    zone_of: Dict[int, Dict[int, int]] = {p.person_id: {} for p in members}
    relaxed: Dict[Tuple[int, int], bool] = {}
    placements: List[Placement] = []
    event_zone: Dict[int, int] = {}
    anchors: Dict[Tuple[int, str], Placement] = {}  # one Work/School zone per person

    def lead(event: Event):
        selves = [p for p in event.participants if p.role == Role.SELF]
        if selves:
            return selves[0]
        rank = {p.person_id: i for i, p in enumerate(members)}
        return min(event.participants, key=lambda p: rank.get(p.person_id, len(rank)))

    def place(person_id: int, seq: int, label: str, mandatory_pass: bool) -> Union[int, Placement, None]:
        if label == "Home":
            return home
        if label in MANDATORY_LABELS:
            if not mandatory_pass:
                return None
            if (person_id, label) in anchors:
                return anchors[(person_id, label)]
            placement = place_mandatory(home, label, sampler, zones, rng, config)
            anchors[(person_id, label)] = placement
        else:
            if mandatory_pass:
                return None
            chain = chains[person_id]
            prev = _anchor_zone(chain, seq, zone_of[person_id], -1, home)
            nxt = _anchor_zone(chain, seq, zone_of[person_id], +1, home)
            placement = place_nonmandatory(prev, nxt, label, sampler, zones, rng, config)
        placements.append(placement)
        return placement

    # Step 1: Home and mandatory anchors, Step 2: non-mandatory infill
    for mandatory_pass in (True, False):
        for person in members:
            chain = chains[person.person_id]
            for seq, activity in enumerate(chain.activities):
                if seq in zone_of[person.person_id]:
                    continue
                key = (person.person_id, seq)
                event = event_of.get(key)
                if event is not None:
                    if event.event_id not in event_zone:
                        head = lead(event)
                        result = place(head.person_id, head.seq, event.activity_type.label, mandatory_pass)
                        if result is None:
                            continue
                        if isinstance(result, Placement):
                            result.members.extend((p.person_id, p.seq) for p in event.participants)
                            event_zone[event.event_id] = result.choice
                            for p in event.participants:
                                relaxed[(p.person_id, p.seq)] = result.relaxed
                        else:
                            event_zone[event.event_id] = result
                    for p in event.participants:
                        zone_of.setdefault(p.person_id, {})[p.seq] = event_zone[event.event_id]
                    continue
                result = place(person.person_id, seq, activity.type.label, mandatory_pass)
                if result is None:
                    continue
                if isinstance(result, Placement):
                    result.members.append(key)
                    relaxed[key] = result.relaxed
                    zone_of[person.person_id][seq] = result.choice
                else:
                    zone_of[person.person_id][seq] = result

    event_ids = {key: e.event_id for key, e in event_of.items()}
    records = []
    for person in members:
        for seq, activity in enumerate(chains[person.person_id].activities):
            records.append(
                {
                    "household_id": household.household_id,
                    "person_id": person.person_id,
                    "seq": seq,
                    "activity_type": activity.type.label,
                    "start": activity.start,
                    "end": activity.end,
                    "taz_id": int(zones.ids[zone_of[person.person_id][seq]]),
                    "event_id": event_ids.get((person.person_id, seq), 0),
                    "relaxed": int(relaxed.get((person.person_id, seq), False)),
                }
            )
    return HouseholdLocations(household.household_id, records, placements)


# =========================
# SPATIAL REFINEMENT
# =========================
@dataclass
class RefineResult:
    attraction: np.ndarray
    choices: List[int]
    l1_history: List[float]
    best_iteration: int


def _frequencies(placements: Sequence[Placement], choices: Sequence[int], n_zones: int) -> np.ndarray:
    counts = np.zeros(n_zones)
    for placement, choice in zip(placements, choices):
        counts[choice] += max(len(placement.members), 1)
    total = counts.sum()
    return counts / total if total > 0 else counts


def update_attraction(attraction: np.ndarray, target: np.ndarray, current: np.ndarray, eta: float) -> np.ndarray:
    """D <- D + eta (F_target - F_current), clamped at zero and renormalised"""
    updated = np.clip(attraction + eta * (target - current), 0.0, None)
    total = updated.sum()
    return updated / total if total > 0 else np.full_like(updated, 1.0 / len(updated))


def refine_spatial(
    attraction: np.ndarray,
    target: np.ndarray,
    placements: Sequence[Placement],
    eta: float,
    max_iter: int,
    tol: float,
    rng: np.random.Generator,
    tie_tolerance: float = 0.25,
) -> RefineResult:
    """
    Nudge attraction weights toward the target zone shares and redraw tied
    placements with probability proportional to (D + eps) / (cost - min + 1).
    Returns the iteration with the lowest L1 gap.
    """
    n_zones = len(target)
    attraction = np.asarray(attraction, dtype=np.float64)
    attraction = attraction / attraction.sum() if attraction.sum() > 0 else np.full(n_zones, 1.0 / n_zones)
    choices = [p.choice for p in placements]
    tied = [p.tied(tie_tolerance) for p in placements]
    redrawable = [i for i, t in enumerate(tied) if len(t) > 1]

    history: List[float] = []
    best = (float("inf"), attraction.copy(), list(choices), 0)
    for iteration in range(max_iter + 1):
        current = _frequencies(placements, choices, n_zones)
        gap = float(np.abs(current - target).sum())
        history.append(gap)
        if gap < best[0]:
            best = (gap, attraction.copy(), list(choices), iteration)
        if gap < tol or iteration == max_iter or not redrawable:
            break

        attraction = update_attraction(attraction, target, current, eta)

        # systematic draw: placement k uses position (u0 + k) / n
        u0 = rng.random()
        n = len(redrawable)
        for k, i in enumerate(redrawable):
            placement = placements[i]
            local = tied[i]
            zones_idx = placement.candidates[local]
            cost_eff = placement.costs[local] - placement.costs[local].min() + 1.0
            weights = (attraction[zones_idx] + EPS) / cost_eff
            cdf = np.cumsum(weights / weights.sum())
            position = (u0 + k) / n
            choices[i] = int(zones_idx[min(int(np.searchsorted(cdf, position, side="right")), len(cdf) - 1)])

    return RefineResult(attraction=best[1], choices=best[2], l1_history=history, best_iteration=best[3])


# =========================
# AGENT
# =========================
def read_spatial_targets(path: str, zones: ZoneTable) -> Dict[str, np.ndarray]:
    """Target zone shares per activity type from (activity_type, taz_id, share)"""
    df = read_table(path, ["activity_type", "taz_id", "share"])
    targets = {}
    for label, part in df.groupby("activity_type", sort=True):
        vector = np.zeros(len(zones))
        for row in part.itertuples(index=False):
            vector[zones.index(int(row.taz_id))] = float(row.share)
        if vector.sum() <= 0:
            continue
        targets[str(label)] = vector / vector.sum()
    return targets


class LocationAgent:
    """Worker agent for activity location assignment"""

    def __init__(self, config: Optional[LocationConfig] = None, catalog: ActivityCatalog = DEFAULT_CATALOG,
                 agent_id: str = "location_agent"):
        self.agent_id = agent_id
        self.capabilities = ["assign_mandatory", "assign_nonmandatory", "refine_spatial", "assign_household"]
        self.config = config or LocationConfig()
        self.catalog = catalog
        logger.info(f"✅ Location Agent initialized: {self.agent_id}")

    def assign_all(
        self,
        households: Sequence[Household],
        chains_by_household: Dict[int, Dict[int, ActivityChain]],
        events: Sequence[Event],
        zones: ZoneTable,
        sampler: DistanceSampler,
        rng_seed: int,
        targets: Optional[Dict[str, np.ndarray]] = None,
    ) -> Tuple[pd.DataFrame, Dict[str, RefineResult]]:
        """Located plans for every household plus per-type refinement results"""
        logger.info(f"📍 Assigning locations for {len(households)} households...")
        events_by_household: Dict[int, List[Event]] = {}
        for event in events:
            events_by_household.setdefault(event.household_id, []).append(event)

        work = [
            (h, chains_by_household.get(h.household_id, {}), events_by_household.get(h.household_id, []))
            for h in households
        ]
        if self.config.n_jobs == 1:
            located = [assign_household(h, c, e, zones, sampler, self.config, rng_seed) for h, c, e in work]
        else:
            located = Parallel(n_jobs=self.config.n_jobs)(
                delayed(assign_household)(h, c, e, zones, sampler, self.config, rng_seed) for h, c, e in work
            )

        plans = pd.DataFrame.from_records([r for hl in located for r in hl.records], columns=PLAN_FIELDS)
        results = self._refine(located, zones, rng_seed, targets or {}, plans)
        relaxed = int(plans["relaxed"].sum()) if not plans.empty else 0
        if relaxed:
            logger.warning(f"⚠️ {relaxed} activities placed with a relaxed travel-time bound")
        return plans, results

    def _refine(self, located: List[HouseholdLocations], zones: ZoneTable, rng_seed: int,
                targets: Dict[str, np.ndarray], plans: pd.DataFrame) -> Dict[str, RefineResult]:
        """Per-type refinement; redrawn zones are written back into plans"""
        by_label: Dict[str, List[Tuple[int, Placement]]] = {}
        for hl in located:
            for placement in hl.placements:
                by_label.setdefault(placement.label, []).append((hl.household_id, placement))

        results = {}
        if plans.empty:
            return results
        key_index = {
            (int(r.household_id), int(r.person_id), int(r.seq)): i
            for i, r in enumerate(plans[["household_id", "person_id", "seq"]].itertuples(index=False))
        }
        for code, label in enumerate(self.catalog.labels):
            entries = by_label.get(label, [])
            target = targets.get(label)
            if target is None:
                target = zones.attraction_vector(label)
                target = target / target.sum() if target is not None and target.sum() > 0 else None
            if not entries or target is None:
                continue

            placements = [p for _, p in entries]
            initial = zones.attraction_vector(label)
            if initial is None:
                initial = np.ones(len(zones))
            rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 1_000_003, code]))
            result = refine_spatial(
                initial, target, placements, self.config.eta, self.config.refine_max_iter,
                self.config.refine_tol, rng, self.config.tie_tolerance,
            )
            for (household_id, placement), choice in zip(entries, result.choices):
                for person_id, seq in placement.members:
                    plans.iat[key_index[(household_id, person_id, seq)], PLAN_FIELDS.index("taz_id")] = int(zones.ids[choice])
            results[label] = result
            logger.info(f"  • refined {label}: L1 {result.l1_history[0]:.3f} -> {min(result.l1_history):.3f}")
        return results


def write_plans(plans: pd.DataFrame, path: str) -> str:
    return write_table(plans, path)


def read_plans(path: str) -> pd.DataFrame:
    return read_table(path, PLAN_FIELDS)

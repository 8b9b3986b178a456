"""
Synthetic ground-truth corpus: households with rule-based daily schedules and
planted coordination (spouse joins the head's Meal, adults escort children to
School, optional joint BuyGoods), plus the toy zone/network fixtures
"""

import logging
import os
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.schedule import (
    ActivityChain,
    DAY_MINUTES,
    DEFAULT_CATALOG,
    Household,
    Person,
    chain_from_records,
    select_household_head,
    validate_chain,
)
from utils.errors import ConfigError
from utils.io_store import households_to_frame, write_activities, write_json, write_table
from utils.metrics import type_distribution
from utils.rng import stream

logger = logging.getLogger(__name__)

HOUSEHOLD_KINDS = ("single", "couple", "couple_children", "single_parent")
Segment = Tuple[str, int, int]


class SyntheticRuleSet(BaseModel):
    """Schedule templates per segment and planted coordination rules"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    household_mix: Dict[str, float] = {"single": 0.3, "couple": 0.3, "couple_children": 0.3, "single_parent": 0.1}
    zone_ids: List[int] = [1, 2, 3, 4]
    adult_age: Tuple[int, int] = (25, 64)
    child_age: Tuple[int, int] = (5, 17)
    max_children: int = Field(3, ge=1)
    worker_rate: float = Field(0.6, ge=0, le=1)
    license_rate: float = Field(0.9, ge=0, le=1)
    vehicle_choices: List[int] = [0, 1, 1, 2, 2]

    work_starts: List[int] = list(range(420, 541, 15))
    work_durations: List[int] = list(range(480, 541, 15))
    daytime_prob: float = Field(0.7, ge=0, le=1)
    daytime_labels: List[str] = ["BuyGoods", "Recreation", "GeneralErrands", "Visit", "BuyServices"]
    daytime_starts: List[int] = list(range(540, 901, 15))
    daytime_durations: List[int] = list(range(60, 121, 15))
    school_starts: List[int] = [480, 510]
    school_ends: List[int] = [900, 930]

    meal_prob: float = Field(0.6, ge=0, le=1)
    meal_starts: List[int] = [1080, 1110, 1140]
    meal_duration: int = 60
    spouse_meal_p: float = Field(0.8, ge=0, le=1)
    escort_q: float = Field(0.7, ge=0, le=1)
    escort_duration: int = 15
    shop_prob: float = Field(0.0, ge=0, le=1)
    shop_start: int = 1200
    shop_duration: int = 60
    spouse_shop_p: float = Field(0.0, ge=0, le=1)

    @field_validator("household_mix")
    @classmethod
    def _mix(cls, value: Dict[str, float]) -> Dict[str, float]:
        unknown = set(value) - set(HOUSEHOLD_KINDS)
        if unknown:
            raise ValueError(f"unknown household kinds {sorted(unknown)}")
        if any(v < 0 for v in value.values()) or sum(value.values()) <= 0:
            raise ValueError("household_mix weights must be non-negative with positive total")
        return value

    @field_validator("work_starts", "daytime_starts", "school_starts", "school_ends", "meal_starts")
    @classmethod
    def _on_slot_grid(cls, value: List[int]) -> List[int]:
        if not value or any(v % 15 or not 0 < v < DAY_MINUTES for v in value):
            raise ValueError("template times must be non-empty multiples of 15 inside the day")
        return value


def load_rules(path: Optional[str] = None, overrides: Optional[Dict] = None) -> SyntheticRuleSet:
    """Rules from YAML (missing file -> built-in defaults) plus keyword overrides"""
    data: Dict = {}
    if path:
        if os.path.isfile(path):
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        else:
            logger.warning(f"Synthetic rules {path} not found, using defaults")
    data.update(overrides or {})
    try:
        return SyntheticRuleSet.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid synthetic rules: {exc}")


# =========================
# DAY CONSTRUCTION
# =========================
def fill_day(segments: Sequence[Segment]) -> List[Segment]:
    """Sorted non-overlapping segments with Home filling every gap"""
    out: List[Segment] = []
    clock = 0
    for label, start, end in sorted(segments, key=lambda s: s[1]):
        if start > clock:
            out.append(("Home", clock, start))
        out.append((label, start, end))
        clock = end
    if clock < DAY_MINUTES:
        out.append(("Home", clock, DAY_MINUTES))
    merged: List[Segment] = []
    for seg in out:
        if merged and merged[-1][0] == seg[0] == "Home" and merged[-1][2] == seg[1]:
            merged[-1] = ("Home", merged[-1][1], seg[2])
        else:
            merged.append(seg)
    return merged


def _people(kind: str, rules: SyntheticRuleSet, rng: np.random.Generator, next_id: int) -> List[Person]:
    n_adults = 2 if kind in ("couple", "couple_children") else 1
    n_children = int(rng.integers(1, rules.max_children + 1)) if kind in ("couple_children", "single_parent") else 0
    genders = ["female", "male"] if rng.random() < 0.5 else ["male", "female"]
    people = []
    for i in range(n_adults):
        people.append(
            Person(
                person_id=next_id + i,
                age=int(rng.integers(rules.adult_age[0], rules.adult_age[1] + 1)),
                employed=bool(rng.random() < rules.worker_rate),
                student=False,
                education=int(rng.integers(1, 6)),
                has_license=bool(rng.random() < rules.license_rate),
                gender=genders[i],
            )
        )
    for j in range(n_children):
        people.append(
            Person(
                person_id=next_id + n_adults + j,
                age=int(rng.integers(rules.child_age[0], rules.child_age[1] + 1)),
                employed=False,
                student=True,
                education=0,
                has_license=False,
                gender="female" if rng.random() < 0.5 else "male",
            )
        )
    return people


def _with_relationships(household: Household) -> Household:
    head = household.members[select_household_head(household)]
    members = []
    for person in household.members:
        if person.person_id == head.person_id:
            relationship = "Self"
        elif person.is_adult:
            relationship = "Spouse"
        else:
            relationship = "Child"
        members.append(replace(person, relationship=relationship))
    return replace(household, members=tuple(members))


def _schedule_household(household: Household, rules: SyntheticRuleSet, rng: np.random.Generator,
                        tally: Dict[str, int]) -> Dict[int, List[Segment]]:
    """Planted schedules; tally counts the rule outcomes for target statistics"""
    by_rel = {p.relationship: p for p in household.members if p.relationship != "Child"}
    head = by_rel["Self"]
    spouse = by_rel.get("Spouse")
    adults = [head] + ([spouse] if spouse else [])
    children = [p for p in household.members if p.relationship == "Child"]
    days: Dict[int, List[Segment]] = {p.person_id: [] for p in household.members}

    # Step 1: children's School
    school_start = {}
    for child in children:
        start = int(rng.choice(rules.school_starts))
        end = int(rng.choice(rules.school_ends))
        school_start[child.person_id] = start
        days[child.person_id].append(("School", start, end))

    # Step 2: escort coin flip per distinct School start; non-workers escort first
    escort_after: Dict[int, int] = {}
    escorter = next((a for a in adults if not a.employed), head)
    for start in sorted(set(school_start.values())):
        n_kids = sum(1 for s in school_start.values() if s == start)
        tally["school_activities"] += n_kids
        if rng.random() < rules.escort_q:
            tally["escorted_school"] += n_kids
            days[escorter.person_id].append(("Escort", start, start + rules.escort_duration))
            escort_after[escorter.person_id] = max(escort_after.get(escorter.person_id, 0), start + rules.escort_duration)

    # Step 3: adult daytime templates
    for adult in adults:
        if adult.employed:
            start = int(rng.choice(rules.work_starts))
            duration = int(rng.choice(rules.work_durations))
            start = max(start, escort_after.get(adult.person_id, 0))
            end = min(start + duration, min(rules.meal_starts))
            days[adult.person_id].append(("Work", start, end))
        elif rng.random() < rules.daytime_prob:
            label = str(rng.choice(rules.daytime_labels))
            start = max(int(rng.choice(rules.daytime_starts)), escort_after.get(adult.person_id, 0))
            duration = int(rng.choice(rules.daytime_durations))
            days[adult.person_id].append((label, start, start + duration))

    # Step 4: evening Meal, spouse joins with probability p
    if rng.random() < rules.meal_prob:
        start = int(rng.choice(rules.meal_starts))
        days[head.person_id].append(("Meal", start, start + rules.meal_duration))
        if spouse is not None:
            tally["meal_households"] += 1
            if rng.random() < rules.spouse_meal_p:
                tally["joint_meals"] += 1
                days[spouse.person_id].append(("Meal", start, start + rules.meal_duration))

    # Step 5: late BuyGoods, spouse joins with its own probability
    if rng.random() < rules.shop_prob:
        segment = ("BuyGoods", rules.shop_start, rules.shop_start + rules.shop_duration)
        days[head.person_id].append(segment)
        if spouse is not None and rng.random() < rules.spouse_shop_p:
            days[spouse.person_id].append(segment)

    return {pid: fill_day(segments) for pid, segments in days.items()}


# =========================
# CORPUS
# =========================
def generate_synthetic_corpus(
    rules: SyntheticRuleSet, n_households: int, rng_seed: int
) -> Tuple[List[Household], Dict[int, Dict[int, ActivityChain]], Dict]:
    """Households, their chains and the realised target statistics"""
    kinds = [k for k in HOUSEHOLD_KINDS if rules.household_mix.get(k, 0) > 0]
    weights = np.array([rules.household_mix[k] for k in kinds])
    weights = weights / weights.sum()

    tally = {"school_activities": 0, "escorted_school": 0, "meal_households": 0, "joint_meals": 0}
    households: List[Household] = []
    chains: Dict[int, Dict[int, ActivityChain]] = {}
    next_person = 1
    for household_id in range(1, n_households + 1):
        rng = stream(rng_seed, household_id)
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        people = _people(kind, rules, rng, next_person)
        next_person += len(people)
        household = Household(
            household_id=household_id,
            members=tuple(people),
            income=int(rng.integers(1, 11)),
            vehicles=int(rng.choice(rules.vehicle_choices)),
            home_taz=int(rng.choice(rules.zone_ids)),
        )
        household = _with_relationships(household)
        days = _schedule_household(household, rules, rng, tally)
        chains[household_id] = {}
        for pid, segments in days.items():
            chain = chain_from_records(pid, segments, DEFAULT_CATALOG)
            validate_chain(chain)
            chains[household_id][pid] = chain
        households.append(household)

    all_chains = [c for by_person in chains.values() for c in by_person.values()]
    shares = type_distribution(all_chains) if all_chains else None
    targets = {
        "spouse_meal_p": rules.spouse_meal_p,
        "escort_q": rules.escort_q,
        "joint_meal_rate": tally["joint_meals"] / tally["meal_households"] if tally["meal_households"] else None,
        "escort_rate": tally["escorted_school"] / tally["school_activities"] if tally["school_activities"] else None,
        "type_shares": dict(zip(shares.labels, shares.probabilities.tolist())) if shares else {},
        "n_households": n_households,
        "n_persons": next_person - 1,
    }
    logger.info(f"🧪 Synthetic corpus: {n_households} households, {next_person - 1} persons")
    return households, chains, targets


def write_corpus(out_dir: str, households: Sequence[Household], chains: Dict[int, Dict[int, ActivityChain]],
                 targets: Dict) -> Dict[str, str]:
    """persons.csv, activities.csv and targets.json"""
    return {
        "persons": write_table(households_to_frame(households), os.path.join(out_dir, "persons.csv")),
        "activities": write_activities(chains, os.path.join(out_dir, "activities.csv")),
        "targets": write_json(targets, os.path.join(out_dir, "targets.json")),
    }


def marginals_from_households(households: Sequence[Household], zone_ids: Sequence[int],
                              dimensions: Sequence[str] = ("size", "income", "vehicles"),
                              n_households: Optional[int] = None) -> pd.DataFrame:
    """Marginal table spreading the sample's category counts evenly over zones"""
    n_households = n_households or len(households)
    scale = n_households / max(len(households), 1) / len(zone_ids)
    records = []
    for dimension in dimensions:
        values = pd.Series([h.size if dimension == "size" else getattr(h, dimension) for h in households])
        for category, count in values.value_counts().sort_index().items():
            for zone in zone_ids:
                records.append({"zone": int(zone), "dimension": dimension, "category": str(category),
                                "count": float(count) * scale})
    return pd.DataFrame.from_records(records, columns=["zone", "dimension", "category", "count"])


# =========================
# TOY WORLD
# =========================
def build_toy_zones(path: str) -> str:
    """Four zones on a 3 km square, each mapped to its own network node"""
    zones = pd.DataFrame(
        {
            "taz_id": [1, 2, 3, 4],
            "x": [0.0, 3000.0, 0.0, 3000.0],
            "y": [0.0, 0.0, 3000.0, 3000.0],
            "residential": [1, 1, 1, 1],
            "employment": [0, 1, 0, 1],
            "education": [0, 0, 1, 1],
            "commercial": [1, 1, 0, 1],
            "recreation": [0, 0, 1, 1],
            "node": [1, 2, 3, 4],
        }
    )
    return write_table(zones, path)


def build_toy_network(path: str, nodes_path: Optional[str] = None) -> str:
    """Ring 1-2-4-3-1 plus the 1-4 diagonal in both directions: six links"""
    diagonal = float(np.hypot(3000.0, 3000.0))
    network = pd.DataFrame(
        {
            "link_id": [1, 2, 3, 4, 5, 6],
            "from": [1, 2, 4, 3, 1, 4],
            "to": [2, 4, 3, 1, 4, 1],
            "length_m": [3000.0, 3000.0, 3000.0, 3000.0, diagonal, diagonal],
            "free_speed_ms": [13.9, 13.9, 13.9, 13.9, 22.2, 22.2],
            "capacity_vph": [900, 900, 900, 900, 1800, 1800],
            "lanes": [1, 1, 1, 1, 2, 2],
        }
    )
    if nodes_path:
        write_table(pd.DataFrame({"node_id": [1, 2, 3, 4], "x": [0.0, 3000.0, 0.0, 3000.0],
                                  "y": [0.0, 0.0, 3000.0, 3000.0]}), nodes_path)
    return write_table(network, path)

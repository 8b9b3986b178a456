"""
Schedule core - households, persons, activity chains and the 96-slot grid.
All types are frozen after construction and safe to share across threads.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import IllFormedChainError, InvariantViolationError, MaskedPersonError

N_SLOTS = 96
SLOT_MINUTES = 15
DAY_MINUTES = N_SLOTS * SLOT_MINUTES
PAD_CODE = 15
N_CODES = 16
P_MAX = 8

BASE_LABELS = (
    "Home",
    "Work",
    "School",
    "BuyGoods",
    "BuyServices",
    "GeneralErrands",
    "Recreation",
    "Meal",
    "ReligiousCommunity",
    "Visit",
    "AttendCare",
    "Escort",
)
DEFAULT_EXTRA_LABELS = ("Exercise", "HealthCare", "Other")
MANDATORY_LABELS = ("Home", "Work", "School")


@dataclass(frozen=True)
class ActivityType:
    """One of the 15 activity categories, or the PAD sentinel"""

    code: int
    label: str
    accompanying: bool = False

    @property
    def is_pad(self) -> bool:
        return self.code == PAD_CODE


PAD = ActivityType(PAD_CODE, "PAD")


class ActivityCatalog:
    """Resolves codes and labels for the 15 categories"""

    def __init__(self, extra_labels: Sequence[str] = DEFAULT_EXTRA_LABELS, accompanying: Sequence[str] = ("Escort",)):
        labels = list(BASE_LABELS) + list(extra_labels)
        if len(labels) != 15 or len(set(labels)) != 15:
            raise InvariantViolationError(f"Activity catalog needs 15 distinct labels, got {labels}")
        unknown = set(accompanying) - set(labels)
        if unknown:
            raise InvariantViolationError(f"Unknown accompanying labels: {sorted(unknown)}")
        self.types: Tuple[ActivityType, ...] = tuple(
            ActivityType(code, label, label in accompanying) for code, label in enumerate(labels)
        )
        self._by_label: Dict[str, ActivityType] = {t.label: t for t in self.types}
        self._by_label[PAD.label] = PAD

    @classmethod
    def from_config(cls, activity_config) -> "ActivityCatalog":
        return cls(activity_config.extra_labels, activity_config.accompanying)

    @property
    def labels(self) -> List[str]:
        return [t.label for t in self.types]

    def by_code(self, code: int) -> ActivityType:
        if code == PAD_CODE:
            return PAD
        return self.types[int(code)]

    def by_label(self, label: str) -> ActivityType:
        try:
            return self._by_label[label]
        except KeyError:
            raise InvariantViolationError(f"Unknown activity type: {label}")

    def code(self, label: str) -> int:
        return self.by_label(label).code

    def accompanying_codes(self) -> frozenset:
        return frozenset(t.code for t in self.types if t.accompanying)

    def schema_signature(self) -> str:
        return "|".join(f"{t.code}:{t.label}:{int(t.accompanying)}" for t in self.types)


DEFAULT_CATALOG = ActivityCatalog()


@dataclass(frozen=True)
class Person:
    person_id: int
    age: int
    employed: bool
    student: bool
    education: int
    has_license: bool
    gender: str
    relationship: Optional[str] = None

    def __post_init__(self):
        if self.age < 0:
            raise InvariantViolationError(f"Person {self.person_id} has negative age {self.age}")
        if self.education < 0:
            raise InvariantViolationError(f"Person {self.person_id} has negative education level")

    @property
    def is_adult(self) -> bool:
        return self.age >= 18


@dataclass(frozen=True)
class Household:
    household_id: int
    members: Tuple[Person, ...]
    income: int
    vehicles: int
    home_taz: int
    day_type: str = "weekday"

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise InvariantViolationError(f"Household {self.household_id} has no members")
        if self.vehicles < 0:
            raise InvariantViolationError(f"Household {self.household_id} has negative vehicles")
        ids = [p.person_id for p in self.members]
        if len(set(ids)) != len(ids):
            raise InvariantViolationError(f"Household {self.household_id} has duplicate person ids")

    @property
    def size(self) -> int:
        return len(self.members)

    def member(self, person_id: int) -> Person:
        for person in self.members:
            if person.person_id == person_id:
                return person
        raise KeyError(person_id)


@dataclass(frozen=True)
class Activity:
    type: ActivityType
    start: int
    end: int

    def __post_init__(self):
        if self.type.is_pad:
            raise InvariantViolationError("PAD is not a valid activity type")
        if not (0 <= self.start < self.end <= DAY_MINUTES):
            raise InvariantViolationError(f"Activity {self.type.label} has invalid window [{self.start}, {self.end})")

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ActivityChain:
    """Time-ordered activities of one person"""

    person_id: int
    activities: Tuple[Activity, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "activities", tuple(self.activities))

    def __len__(self) -> int:
        return len(self.activities)

    def __iter__(self):
        return iter(self.activities)


@dataclass(frozen=True)
class SlotGrid:
    """Household day as [P_max x 96] activity codes, PAD beyond household size"""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != N_SLOTS:
            raise InvariantViolationError(f"SlotGrid must be [P x {N_SLOTS}], got {codes.shape}")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def from_rows(cls, rows: Sequence[np.ndarray], p_max: int = P_MAX) -> "SlotGrid":
        codes = np.full((p_max, N_SLOTS), PAD_CODE, dtype=np.int64)
        for i, row in enumerate(rows):
            codes[i] = row
        return cls(codes)

    @property
    def n_valid(self) -> int:
        return int((self.codes != PAD_CODE).all(axis=1).sum())

    def validate(self, size: int) -> None:
        if size < 1 or size > self.codes.shape[0]:
            raise InvariantViolationError(f"Household size {size} does not fit a grid of {self.codes.shape[0]} rows")
        if (self.codes[:size] == PAD_CODE).any():
            raise MaskedPersonError("PAD code inside a valid member row")
        if (self.codes[size:] != PAD_CODE).any():
            raise InvariantViolationError("Rows beyond household size must be PAD")

    def to_chains(self, person_ids: Sequence[int], catalog: ActivityCatalog = DEFAULT_CATALOG) -> List[ActivityChain]:
        return [decode_grid(self.codes[i], person_id, catalog) for i, person_id in enumerate(person_ids)]


# =========================
# CHAIN <-> GRID ENCODING
# =========================
def validate_chain(chain: ActivityChain) -> None:
    """Full-day coverage: starts at 0, ends at 1440, no gaps or overlaps"""
    acts = chain.activities
    if not acts:
        raise IllFormedChainError(f"Chain of person {chain.person_id} is empty")
    if acts[0].start != 0 or acts[-1].end != DAY_MINUTES:
        raise IllFormedChainError(
            f"Chain of person {chain.person_id} must span [0, {DAY_MINUTES}], got [{acts[0].start}, {acts[-1].end}]"
        )
    for prev, nxt in zip(acts, acts[1:]):
        if nxt.start > prev.end:
            raise IllFormedChainError(f"Chain of person {chain.person_id} has a gap {prev.end}-{nxt.start}")
        if nxt.start < prev.end:
            raise IllFormedChainError(f"Chain of person {chain.person_id} has an overlap at minute {nxt.start}")


def encode_chain(chain: ActivityChain) -> np.ndarray:
    """96 codes; a slot belongs to the activity covering its start minute"""
    validate_chain(chain)
    starts = np.array([a.start for a in chain.activities])
    codes = np.array([a.type.code for a in chain.activities], dtype=np.int64)
    slot_starts = np.arange(N_SLOTS) * SLOT_MINUTES
    owner = np.searchsorted(starts, slot_starts, side="right") - 1
    return codes[owner]


def decode_grid(row: Sequence[int], person_id: int = 0, catalog: ActivityCatalog = DEFAULT_CATALOG) -> ActivityChain:
    """Maximal runs of identical codes become activities"""
    row = np.asarray(row, dtype=np.int64)
    if row.shape != (N_SLOTS,):
        raise IllFormedChainError(f"Grid row must have {N_SLOTS} slots, got {row.shape}")
    if (row == PAD_CODE).any():
        raise MaskedPersonError(f"Row of person {person_id} contains PAD codes")

    boundaries = np.flatnonzero(np.diff(row)) + 1
    run_starts = np.concatenate(([0], boundaries))
    run_ends = np.concatenate((boundaries, [N_SLOTS]))
    activities = [
        Activity(catalog.by_code(int(row[s])), int(s) * SLOT_MINUTES, int(e) * SLOT_MINUTES)
        for s, e in zip(run_starts, run_ends)
    ]
    return ActivityChain(person_id, tuple(activities))


def chain_from_records(
    person_id: int, records: Iterable[Tuple[str, int, int]], catalog: ActivityCatalog = DEFAULT_CATALOG
) -> ActivityChain:
    """Build a chain from (label, start_min, end_min) records"""
    activities = sorted(
        (Activity(catalog.by_label(label), int(start), int(end)) for label, start, end in records),
        key=lambda a: a.start,
    )
    return ActivityChain(person_id, tuple(activities))


# =========================
# HOUSEHOLD HEAD
# =========================
def head_priority_key(person: Person, household: Household, gender_priority: Optional[Sequence[str]] = None) -> tuple:
    """Lexicographic ranking key; larger is higher priority"""
    vehicle_access = household.vehicles > 0 and person.has_license
    gender_rank = 0
    if gender_priority:
        order = list(gender_priority)
        gender_rank = len(order) - order.index(person.gender) if person.gender in order else 0
    return (
        person.is_adult,
        person.employed,
        person.has_license,
        vehicle_access,
        gender_rank,
        person.age,
        -person.person_id,
    )


def select_household_head(household: Household, gender_priority: Optional[Sequence[str]] = None) -> int:
    """Index of the household head within household.members"""
    keys = [head_priority_key(p, household, gender_priority) for p in household.members]
    return max(range(len(keys)), key=keys.__getitem__)


def order_members(household: Household, gender_priority: Optional[Sequence[str]] = None) -> List[Person]:
    """Members sorted by head priority, head first"""
    return sorted(household.members, key=lambda p: head_priority_key(p, household, gender_priority), reverse=True)


def truncate_household(household: Household, p_max: int = P_MAX, gender_priority: Optional[Sequence[str]] = None) -> Household:
    """Keep the p_max highest-priority members, preserving their original order"""
    if household.size <= p_max:
        return household
    keep = {p.person_id for p in order_members(household, gender_priority)[:p_max]}
    return replace(household, members=tuple(p for p in household.members if p.person_id in keep))


# =========================
# PERSON FEATURES
# =========================
FEATURE_NAMES = (
    "age",
    "adult",
    "employed",
    "student",
    "education",
    "license",
    "female",
    "male",
    "hh_size",
    "income",
    "vehicles",
    "head",
)


def person_features(person: Person, household: Household, is_head: bool) -> np.ndarray:
    return np.array(
        [
            person.age / 100.0,
            float(person.is_adult),
            float(person.employed),
            float(person.student),
            person.education / 5.0,
            float(person.has_license),
            float(person.gender == "female"),
            float(person.gender == "male"),
            household.size / 8.0,
            household.income / 10.0,
            min(household.vehicles, 4) / 4.0,
            float(is_head),
        ],
        dtype=np.float64,
    )

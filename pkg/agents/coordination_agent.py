"""
Coordination Agent - builds household event tables from activity chains,
infers member roles and reports participation statistics
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import pandas as pd
from joblib import Parallel, delayed

from models.events import Event, Participant, Role
from models.schedule import (
    ActivityCatalog,
    ActivityChain,
    DEFAULT_CATALOG,
    Household,
    P_MAX,
    select_household_head,
)
from utils.config import CoordinationConfig
from utils.errors import ArityError
from utils.io_store import read_table, write_table
from utils.metrics import Distribution

logger = logging.getLogger(__name__)

EVENT_FIELDS = [
    "household_id",
    "event_id",
    "activity_type",
    "person_id",
    "role",
    "start_min",
    "coordinated",
    "participant_type",
    "end_min",
    "seq",
]


@dataclass(frozen=True)
class _Item:
    """Activity waiting to be grouped"""

    person_id: int
    seq: int
    code: int
    start: int
    end: int


# =========================
# ROLES
# =========================
def assign_roles(
    household: Household,
    config: Optional[CoordinationConfig] = None,
    gender_priority: Optional[Sequence[str]] = None,
) -> Dict[int, Role]:
    """Self for the head; relationship fields win, age heuristics fill the rest"""
    config = config or CoordinationConfig()
    head = household.members[select_household_head(household, gender_priority)]
    roles: Dict[int, Role] = {head.person_id: Role.SELF}

    others = [p for p in household.members if p.person_id != head.person_id]
    explicit = {p.person_id: Role.parse(p.relationship) for p in others if p.relationship}
    explicit = {pid: role for pid, role in explicit.items() if role != Role.SELF}

    spouse_id = None
    if Role.SPOUSE not in explicit.values():
        candidates = [
            p for p in others
            if p.person_id not in explicit and p.is_adult and abs(p.age - head.age) <= config.spouse_age_gap
        ]
        if candidates:
            spouse_id = min(candidates, key=lambda p: (abs(p.age - head.age), p.person_id)).person_id

    for person in others:
        if person.person_id in explicit:
            roles[person.person_id] = explicit[person.person_id]
        elif person.person_id == spouse_id:
            roles[person.person_id] = Role.SPOUSE
        elif not person.is_adult or head.age - person.age >= config.generation_gap:
            roles[person.person_id] = Role.CHILD
        elif person.age - head.age >= config.generation_gap:
            roles[person.person_id] = Role.PARENT
        else:
            roles[person.person_id] = Role.NON_RELATIVE
    return roles


# =========================
# GROUPING
# =========================
class _GroupingProblem:
    """Groups one window component; groups are lists of item indices"""

    def __init__(self, items: List[_Item], window: int, accompanying: frozenset, node_budget: int):
        self.items = items
        self.window = window
        self.accompanying = accompanying
        self.node_budget = node_budget
        self.nodes = 0

    def can_join(self, group: List[int], index: int) -> bool:
        item = self.items[index]
        first = self.items[group[0]]
        if item.start - first.start > self.window:
            return False
        if any(self.items[g].person_id == item.person_id for g in group):
            return False
        if item.code in self.accompanying:
            return True
        types = {self.items[g].code for g in group if self.items[g].code not in self.accompanying}
        return not types or types == {item.code}

    def candidates(self, groups: List[List[int]], index: int) -> List[int]:
        """Joinable groups, greedy preference first: nearest earliest start, then lower id"""
        eligible = [g for g, group in enumerate(groups) if self.can_join(group, index)]
        return sorted(eligible, key=lambda g: (-self.items[groups[g][0]].start, g))

    def greedy(self) -> List[List[int]]:
        groups: List[List[int]] = []
        for index in range(len(self.items)):
            options = self.candidates(groups, index)
            if options:
                groups[options[0]].append(index)
            else:
                groups.append([index])
        return groups

    def solve(self) -> List[List[int]]:
        """Fewest groups (most pairings); keeps the greedy grouping unless strictly beaten"""
        best = self.greedy()
        if len(self.items) <= 1 or len(best) == 1:
            return best
        best_holder = [best]

        def search(index: int, groups: List[List[int]]) -> None:
            self.nodes += 1
            if self.nodes > self.node_budget or len(groups) >= len(best_holder[0]):
                return
            if index == len(self.items):
                best_holder[0] = [list(g) for g in groups]
                return
            for g in self.candidates(groups, index):
                groups[g].append(index)
                search(index + 1, groups)
                groups[g].pop()
            groups.append([index])
            search(index + 1, groups)
            groups.pop()

        search(0, [])
        if self.nodes > self.node_budget:
            logger.debug(f"Grouping search hit its node budget on {len(self.items)} activities")
        return best_holder[0]


def _components(items: List[_Item], window: int) -> List[List[_Item]]:
    """Maximal runs whose consecutive starts are within the window"""
    components: List[List[_Item]] = []
    for item in items:
        if components and item.start - components[-1][-1].start <= window:
            components[-1].append(item)
        else:
            components.append([item])
    return components


def _consensus_type(codes: List[int], accompanying: frozenset) -> int:
    core = [c for c in codes if c not in accompanying]
    pool = core or codes
    counts = Counter(pool)
    return min(counts, key=lambda c: (-counts[c], c))


def build_event_table(
    household: Household,
    chains: Sequence[ActivityChain],
    config: Optional[CoordinationConfig] = None,
    catalog: ActivityCatalog = DEFAULT_CATALOG,
    roles: Optional[Dict[int, Role]] = None,
) -> List[Event]:
    """Group a household's activities into events"""
    config = config or CoordinationConfig()
    if len(chains) != household.size:
        raise ArityError(
            f"Household {household.household_id} has {household.size} members but {len(chains)} chains"
        )
    roles = roles or assign_roles(household, config)
    accompanying = catalog.accompanying_codes()
    ungrouped = {catalog.code(label) for label in config.ungrouped_types}

    # Step 1: flatten and sort activities by start
    items = sorted(
        (
            _Item(chain.person_id, seq, a.type.code, a.start, a.end)
            for chain in chains
            for seq, a in enumerate(chain.activities)
        ),
        key=lambda it: (it.start, it.person_id, it.seq),
    )

    # Step 2: solo events for ungrouped types, exact grouping per window component for the rest
    groups: List[List[_Item]] = [[it] for it in items if it.code in ungrouped]
    groupable = [it for it in items if it.code not in ungrouped]
    for component in _components(groupable, config.window_min):
        problem = _GroupingProblem(component, config.window_min, accompanying, config.search_node_budget)
        groups.extend([[component[i] for i in group] for group in problem.solve()])

    # Step 3: number events by earliest start
    groups.sort(key=lambda g: (g[0].start, g[0].person_id, g[0].seq))
    events = []
    for event_id, group in enumerate(groups, start=1):
        participants = tuple(
            Participant(it.person_id, roles[it.person_id], catalog.by_code(it.code), it.start, it.end, it.seq)
            for it in group
        )
        starts = [it.start for it in group]
        events.append(
            Event(
                household_id=household.household_id,
                event_id=event_id,
                activity_type=catalog.by_code(_consensus_type([it.code for it in group], accompanying)),
                participants=participants,
                start_window=(min(starts), max(starts)),
                coordinated=len(group) > 1,
            )
        )
    return events


def count_pairings(events: Sequence[Event]) -> int:
    """Coordinated pairings: activities minus events"""
    return sum(event.size - 1 for event in events)


# =========================
# STATISTICS
# =========================
def participant_distribution(events: Sequence[Event], p_max: int = P_MAX) -> Dict[str, Distribution]:
    """Per activity type, share of events by participant count 1..p_max"""
    counts: Dict[str, Counter] = {}
    for event in events:
        counts.setdefault(event.activity_type.label, Counter())[min(event.size, p_max)] += 1
    return {
        label: Distribution.from_counts({k: float(c.get(k, 0)) for k in range(1, p_max + 1)})
        for label, c in sorted(counts.items())
    }


def solo_share(events: Sequence[Event]) -> float:
    if not events:
        return 0.0
    return sum(1 for e in events if e.size == 1) / len(events)


def role_combinations(events: Sequence[Event]) -> pd.DataFrame:
    """Ranked role multisets of coordinated events per activity type"""
    counts = Counter((e.activity_type.label, e.role_key) for e in events if e.coordinated)
    frame = pd.DataFrame(
        [(label, roles, n) for (label, roles), n in counts.items()],
        columns=["activity_type", "roles", "count"],
    )
    if frame.empty:
        return frame
    frame = frame.sort_values(["activity_type", "count", "roles"], ascending=[True, False, True], kind="mergesort")
    return frame.reset_index(drop=True)


def coordination_rates(events: Sequence[Event], catalog: ActivityCatalog = DEFAULT_CATALOG) -> Dict[str, float]:
    """
    joint_meal_rate: share of households with a Spouse, whose head has a Meal,
    where head and spouse share a Meal event.
    escort_rate: share of Child School activities whose event includes an accompanying activity.
    """
    meal = catalog.by_label("Meal")
    school = catalog.by_label("School")
    by_household: Dict[int, List[Event]] = {}
    for event in events:
        by_household.setdefault(event.household_id, []).append(event)

    eligible = joint = 0
    school_total = escorted = 0
    for household_events in by_household.values():
        roles = {p.role for e in household_events for p in e.participants}
        head_meals = [
            e for e in household_events
            if any(p.role == Role.SELF and p.activity_type == meal for p in e.participants)
        ]
        if Role.SPOUSE in roles and head_meals:
            eligible += 1
            if any(
                any(p.role == Role.SPOUSE and p.activity_type == meal for p in e.participants) for e in head_meals
            ):
                joint += 1
        for e in household_events:
            has_escort = any(p.activity_type.accompanying for p in e.participants)
            for p in e.participants:
                if p.role == Role.CHILD and p.activity_type == school:
                    school_total += 1
                    escorted += int(has_escort)
    return {
        "joint_meal_rate": joint / eligible if eligible else float("nan"),
        "joint_meal_households": eligible,
        "escort_rate": escorted / school_total if school_total else float("nan"),
        "child_school_activities": school_total,
        "solo_share": solo_share(events),
    }


# =========================
# EVENT TABLE FILES
# =========================
def events_to_frame(events: Sequence[Event]) -> pd.DataFrame:
    records = [
        {
            "household_id": e.household_id,
            "event_id": e.event_id,
            "activity_type": e.activity_type.label,
            "person_id": p.person_id,
            "role": p.role.value,
            "start_min": p.start,
            "coordinated": int(e.coordinated),
            "participant_type": p.activity_type.label,
            "end_min": p.end,
            "seq": p.seq,
        }
        for e in events
        for p in e.participants
    ]
    return pd.DataFrame.from_records(records, columns=EVENT_FIELDS)


def write_events(events: Sequence[Event], path: str) -> str:
    return write_table(events_to_frame(events), path)


def read_events(path: str, catalog: ActivityCatalog = DEFAULT_CATALOG) -> List[Event]:
    df = read_table(path, EVENT_FIELDS)
    events = []
    for (household_id, event_id), group in df.groupby(["household_id", "event_id"], sort=True):
        participants = tuple(
            Participant(
                int(row.person_id),
                Role.parse(row.role),
                catalog.by_label(row.participant_type),
                int(row.start_min),
                int(row.end_min),
                int(row.seq),
            )
            for row in group.itertuples(index=False)
        )
        starts = [p.start for p in participants]
        events.append(
            Event(
                household_id=int(household_id),
                event_id=int(event_id),
                activity_type=catalog.by_label(group["activity_type"].iloc[0]),
                participants=participants,
                start_window=(min(starts), max(starts)),
                coordinated=bool(group["coordinated"].iloc[0]),
            )
        )
    return events


# =========================
# AGENT
# =========================
class CoordinationAgent:
    """Worker agent for the event table and household coordination statistics"""

    def __init__(self, config: Optional[CoordinationConfig] = None, catalog: ActivityCatalog = DEFAULT_CATALOG,
                 gender_priority: Optional[Sequence[str]] = None, agent_id: str = "coordination_agent"):
        self.agent_id = agent_id
        self.capabilities = [
            "build_event_table",
            "assign_roles",
            "participant_distribution",
            "role_combinations",
            "coordination_rates",
        ]
        self.config = config or CoordinationConfig()
        self.catalog = catalog
        self.gender_priority = gender_priority
        logger.info(f"✅ Coordination Agent initialized: {self.agent_id}")

    def _household_events(self, household: Household, chains: Dict[int, ActivityChain]) -> List[Event]:
        roles = assign_roles(household, self.config, self.gender_priority)
        ordered = [chains[pid] for pid in sorted(chains)]
        return build_event_table(household, ordered, self.config, self.catalog, roles)

    def build_events(
        self, households: Sequence[Household], chains_by_household: Dict[int, Dict[int, ActivityChain]]
    ) -> List[Event]:
        """Event tables of every household, in household order"""
        logger.info(f"🔗 Building event tables for {len(households)} households...")
        work = [(h, chains_by_household.get(h.household_id, {})) for h in households]
        if self.config.n_jobs == 1:
            per_household = [self._household_events(h, c) for h, c in work]
        else:
            per_household = Parallel(n_jobs=self.config.n_jobs)(
                delayed(self._household_events)(h, c) for h, c in work
            )
        events = [event for household_events in per_household for event in household_events]
        logger.info(f"  • {len(events)} events, solo share {solo_share(events):.3f}")
        return events

    def summarize(self, events: Sequence[Event], p_max: int = P_MAX) -> Dict:
        return {
            "participants": participant_distribution(events, p_max),
            "role_combinations": role_combinations(events),
            "rates": coordination_rates(events, self.catalog),
        }

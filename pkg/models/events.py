"""
Event table types - coordinated household activities with participant roles
"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from models.schedule import ActivityType
from utils.errors import InvariantViolationError


class Role(str, Enum):
    SELF = "Self"
    SPOUSE = "Spouse"
    CHILD = "Child"
    PARENT = "Parent"
    NON_RELATIVE = "NonRelative"

    @classmethod
    def parse(cls, value: str) -> "Role":
        for role in cls:
            if role.value.lower() == str(value).strip().lower():
                return role
        raise InvariantViolationError(f"Unknown role: {value}")


@dataclass(frozen=True)
class Participant:
    """One member's activity inside an event"""

    person_id: int
    role: Role
    activity_type: ActivityType
    start: int
    end: int
    seq: int


@dataclass(frozen=True)
class Event:
    household_id: int
    event_id: int
    activity_type: ActivityType
    participants: Tuple[Participant, ...]
    start_window: Tuple[int, int]
    coordinated: bool

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        if not self.participants:
            raise InvariantViolationError(f"Event {self.event_id} has no participants")
        if self.start_window[1] < self.start_window[0]:
            raise InvariantViolationError(f"Event {self.event_id} has an inverted start window")
        if self.coordinated and len(self.participants) < 2:
            raise InvariantViolationError(f"Coordinated event {self.event_id} needs at least 2 participants")

    @property
    def size(self) -> int:
        return len(self.participants)

    @property
    def role_key(self) -> str:
        """Sorted role multiset, e.g. 'Self+Spouse'"""
        return "+".join(sorted(p.role.value for p in self.participants))

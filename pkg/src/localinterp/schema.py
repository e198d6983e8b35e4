"""Model schemas (named, typed slots) and slot assignments."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import IncompleteAssignment, InvalidArgument
from .geometry import PRIMITIVE_TYPES, Primitive, primitive_type_name

RELATION_TIERS = ("FULL", "REDUCED")


@dataclass(frozen=True)
class Slot:
    slot_id: str
    name: str
    primitive_type: str  # "point" | "contour" | "region"

    def __post_init__(self):
        if self.primitive_type not in PRIMITIVE_TYPES:
            raise InvalidArgument(f"unknown primitive type {self.primitive_type!r}")


@dataclass(frozen=True)
class ModelSchema:
    class_name: str
    slots: tuple[Slot, ...]
    relation_tier: str = "FULL"

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if len(self.slots) < 1:
            raise InvalidArgument("schema needs at least one slot")
        ids = [s.slot_id for s in self.slots]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("slot ids must be unique")
        if self.relation_tier not in RELATION_TIERS:
            raise InvalidArgument(f"unknown relation tier {self.relation_tier!r}")

    def slot_ids(self) -> list[str]:
        return [s.slot_id for s in self.slots]

    def slot(self, slot_id: str) -> Slot:
        for s in self.slots:
            if s.slot_id == slot_id:
                return s
        raise InvalidArgument(f"no slot {slot_id!r} in schema {self.class_name!r}")


@dataclass
class Assignment:
    """A (possibly partial) binding of primitives to schema slots."""

    bindings: dict[str, Primitive] = field(default_factory=dict)
    score: float | None = None

    def bind(self, slot_id: str, primitive: Primitive) -> "Assignment":
        new = dict(self.bindings)
        new[slot_id] = primitive
        return Assignment(bindings=new, score=None)

    def is_complete(self, schema: ModelSchema) -> bool:
        return all(s.slot_id in self.bindings for s in schema.slots)


def check_assignment(assignment: Assignment, schema: ModelSchema, require_complete=True):
    """Validate binding types against the schema; raise on mismatch."""
    for slot_id, prim in assignment.bindings.items():
        slot = schema.slot(slot_id)
        if primitive_type_name(prim) != slot.primitive_type:
            raise InvalidArgument(
                f"slot {slot_id!r} expects {slot.primitive_type}, got {primitive_type_name(prim)}"
            )
    if require_complete:
        for s in schema.slots:
            if s.slot_id not in assignment.bindings:
                raise IncompleteAssignment(f"slot {s.slot_id!r} unbound")

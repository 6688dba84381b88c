from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

from .geometry import GeoPoint


class ModelError(ValueError):
    pass


class Endpoint(enum.IntEnum):
    ORIGIN = 0
    DESTINATION = 1

    @property
    def tag(self) -> str:
        return "o" if self is Endpoint.ORIGIN else "d"


class Semantics(enum.Enum):
    EXISTS = "exists"
    FORALL = "forall"


@dataclass(frozen=True)
class Route:
    id: int
    points: tuple[GeoPoint, ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise ModelError(f"route {self.id} has {len(self.points)} point(s), need at least 2")


@dataclass(frozen=True)
class Transition:
    id: int
    origin: GeoPoint
    destination: GeoPoint

    def endpoint(self, kind: Endpoint) -> GeoPoint:
        return self.origin if kind is Endpoint.ORIGIN else self.destination

    def refs(self) -> tuple["TransitionPointRef", "TransitionPointRef"]:
        return (TransitionPointRef(self.id, Endpoint.ORIGIN, self.origin),
                TransitionPointRef(self.id, Endpoint.DESTINATION, self.destination))


@dataclass(frozen=True, order=True)
class TransitionPointRef:
    transition_id: int
    kind: Endpoint
    location: GeoPoint = field(compare=False)

    def __str__(self):
        return f"T{self.transition_id}{self.kind.tag}"


@dataclass(frozen=True)
class QueryRoute:
    points: tuple[GeoPoint, ...]

    def __post_init__(self):
        if not self.points:
            raise ModelError("query route needs at least one point")

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @classmethod
    def of(cls, points: Iterable) -> "QueryRoute":
        return cls(tuple(p if isinstance(p, GeoPoint) else GeoPoint(*p) for p in points))


@dataclass(frozen=True)
class RknntResult:
    semantics: Semantics
    k: int
    transitions: frozenset[int]
    endpoint_hits: frozenset[TransitionPointRef]

    def sorted_ids(self) -> list[int]:
        return sorted(self.transitions)


def transitions_hit(hits: Iterable[TransitionPointRef], semantics: Semantics) -> set[int]:
    """Transition ids qualifying under ``semantics`` given the endpoint hits."""
    seen: dict[int, int] = {}
    for h in hits:
        seen[h.transition_id] = seen.get(h.transition_id, 0) | (1 << int(h.kind))
    if semantics is Semantics.EXISTS:
        return set(seen)
    return {tid for tid, mask in seen.items() if mask == 0b11}


def assemble_result(hits: Iterable[TransitionPointRef], semantics: Semantics, k: int) -> RknntResult:
    hits = frozenset(hits)
    return RknntResult(semantics, k, frozenset(transitions_hit(hits, semantics)), hits)

"""Value types: coordinates, trips, entities and datasets.

Every type here is an immutable dataclass.  Constructors validate their
invariants and normalize ordering, so two values built from the same data
in a different order compare equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DuplicateEntityError, InvalidValueError, UnknownEntityError

N_FEATURES = 4


@dataclass(frozen=True, order=True)
class Coordinate:
    lon: float
    lat: float

    def __post_init__(self):
        lon, lat = float(self.lon), float(self.lat)
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise InvalidValueError(f"non-finite coordinate ({self.lon}, {self.lat})")
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)


@dataclass(frozen=True)
class Trip:
    """One realized journey.  ``via`` holds intermediate stops of multi-leg trips."""

    origin: Coordinate
    destination: Coordinate
    yday: int
    via: tuple[Coordinate, ...] = ()

    def __post_init__(self):
        if not isinstance(self.yday, (int, np.integer)) or isinstance(self.yday, bool):
            raise InvalidValueError(f"yday must be an integer, got {self.yday!r}")
        if self.yday < 1:
            raise InvalidValueError(f"yday must be >= 1, got {self.yday}")
        object.__setattr__(self, "yday", int(self.yday))
        object.__setattr__(self, "via", tuple(self.via))

    @classmethod
    def from_values(cls, o_lon, o_lat, d_lon, d_lat, yday: int) -> Trip:
        return cls(Coordinate(o_lon, o_lat), Coordinate(d_lon, d_lat), yday)

    @property
    def features(self) -> tuple[float, float, float, float]:
        """(o-lon, o-lat, d-lon, d-lat), the identity of the trip for pooling."""
        return (self.origin.lon, self.origin.lat, self.destination.lon, self.destination.lat)

    @property
    def single_leg(self) -> bool:
        return not self.via


@dataclass(frozen=True, order=True)
class EntityKey:
    """A user at one weekly time slot.  Ordered by (ticket_id, wday, dhour)."""

    ticket_id: str
    wday: int
    dhour: int

    def __post_init__(self):
        if not 1 <= self.wday <= 7:
            raise InvalidValueError(f"wday must be in 1..7, got {self.wday}")
        if not 0 <= self.dhour <= 23:
            raise InvalidValueError(f"dhour must be in 0..23, got {self.dhour}")
        object.__setattr__(self, "ticket_id", str(self.ticket_id))
        object.__setattr__(self, "wday", int(self.wday))
        object.__setattr__(self, "dhour", int(self.dhour))

    def __str__(self):
        return f"<{self.ticket_id}, w{self.wday}, h{self.dhour}>"


@dataclass(frozen=True)
class Entity:
    key: EntityKey
    history: tuple[Trip, ...]
    test_trip: Trip | None = None

    def __post_init__(self):
        history = tuple(sorted(self.history, key=lambda t: t.yday))
        if not history:
            raise InvalidValueError(f"entity {self.key} has an empty history")
        ydays = [t.yday for t in history]
        for a, b in zip(ydays, ydays[1:]):
            if a == b:
                raise InvalidValueError(f"entity {self.key} has duplicate yday {a}")
        if self.test_trip is not None and self.test_trip.yday <= ydays[-1]:
            raise InvalidValueError(
                f"entity {self.key}: test trip yday {self.test_trip.yday} "
                f"does not follow history (last yday {ydays[-1]})"
            )
        object.__setattr__(self, "history", history)

    def __len__(self):
        return len(self.history)


def entity_length(e: Entity) -> int:
    """History length L of an entity."""
    return len(e.history)


def _freeze(meta: Mapping[str, Any] | None) -> Mapping[str, Any]:
    return MappingProxyType(dict(meta or {}))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Entities sorted by key, plus a provenance record.

    ``meta`` is a read-only mapping; typical keys are ``source``,
    ``L``, ``policy``, ``seed`` and ``report``.
    """

    entities: tuple[Entity, ...]
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        entities = tuple(sorted(self.entities, key=lambda e: e.key))
        for a, b in zip(entities, entities[1:]):
            if a.key == b.key:
                raise DuplicateEntityError(a.key)
        object.__setattr__(self, "entities", entities)
        object.__setattr__(self, "meta", _freeze(self.meta))
        object.__setattr__(self, "_index", {e.key: e for e in entities})

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.entities == other.entities and dict(self.meta) == dict(other.meta)

    __hash__ = None

    def __len__(self):
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    @property
    def keys(self) -> tuple[EntityKey, ...]:
        return tuple(e.key for e in self.entities)

    def get(self, key: EntityKey) -> Entity:
        try:
            return self._index[key]
        except KeyError:
            raise UnknownEntityError(key) from None

    def __contains__(self, key):
        return key in self._index

    def lengths(self) -> dict[int, int]:
        """Number of entities per history length."""
        counts: dict[int, int] = {}
        for e in self.entities:
            counts[len(e.history)] = counts.get(len(e.history), 0) + 1
        return dict(sorted(counts.items()))

    def filter(self, keys: Iterable[EntityKey] | None = None, *, length: int | None = None,
               meta: Mapping[str, Any] | None = None) -> Dataset:
        wanted = None if keys is None else set(keys)
        kept = [
            e for e in self.entities
            if (wanted is None or e.key in wanted) and (length is None or len(e.history) == length)
        ]
        return Dataset(tuple(kept), meta if meta is not None else self.meta)


def trips_to_array(trips: Sequence[Trip]) -> np.ndarray:
    """Stack trip features into an ``(n, 4)`` float array."""
    if not trips:
        return np.empty((0, N_FEATURES))
    return np.array([t.features for t in trips], dtype=np.float64)

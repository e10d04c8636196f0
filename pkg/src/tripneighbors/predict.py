"""Trip pooling and the frequency-weighted medoid used as the prediction.

For a pool of trips with distinct members ``x`` occurring ``f_x`` times the
score of a candidate is::

    score(x) = f_x * sum_y f_y * (const - seuc(x, y))

with ``y`` running over the distinct members in coordinate order and
``const`` the largest pairwise ``seuc`` in the pool.  The highest score
wins; ties go to the coordinate-lexicographically smallest trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import EntityKey, Trip
from .errors import EmptyPoolError, UnknownEntityError
from .metrics import pairwise_seuc
from .selection import NeighborList, SplitHistory


@dataclass(frozen=True)
class TripPool:
    """Multiset of trips; identity is exact equality of the four coordinates.

    ``distinct`` lists one representative per identity class (its first
    occurrence in ``trips``) with its frequency, sorted by
    (o-lon, o-lat, d-lon, d-lat).  ``features`` holds the matching rows the
    distances are computed on.
    """

    trips: tuple[Trip, ...]
    distinct: tuple[tuple[Trip, int], ...]
    features: np.ndarray = field(compare=False, repr=False)

    def __len__(self):
        return len(self.trips)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for _, f in self.distinct], dtype=np.float64)


def _distinct_rows(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First-occurrence index and count of each distinct row, rows in lexicographic order."""
    order = np.lexsort(coords.T[::-1])
    ordered = coords[order]
    starts = np.ones(len(order), dtype=bool)
    starts[1:] = np.any(ordered[1:] != ordered[:-1], axis=1)
    begin = np.flatnonzero(starts)
    counts = np.diff(np.append(begin, len(order)))
    # lexsort is stable, so the head of each run is its first occurrence
    return order[begin], counts


def make_pool(trips: Sequence[Trip], features: np.ndarray | None = None) -> TripPool:
    trips = tuple(trips)
    coords = np.array([t.features for t in trips], dtype=np.float64).reshape(len(trips), 4)
    if features is None:
        features = coords
    if not trips:
        return TripPool((), (), np.empty((0, features.shape[1])))
    first, counts = _distinct_rows(coords)
    distinct = tuple((trips[i], int(c)) for i, c in zip(first, counts))
    return TripPool(trips, distinct, np.array(features[first], dtype=np.float64))


def pool_trips(neighbors: Sequence[EntityKey], splits: Mapping[EntityKey, SplitHistory]) -> TripPool:
    """Multiset union of the training and validation trips of ``neighbors``."""
    trips: list[Trip] = []
    rows = []
    for key in neighbors:
        try:
            s = splits[key]
        except KeyError:
            raise UnknownEntityError(key) from None
        trips.extend(s.trips)
        rows.append(s.features)
    features = np.concatenate(rows) if rows else None
    return make_pool(trips, features)


def medoid_const(pool: TripPool) -> float:
    """Smallest offset making every pairwise similarity in the pool nonnegative."""
    if not pool.distinct:
        raise EmptyPoolError("cannot compute const of an empty pool")
    return float(pairwise_seuc(pool.features).max())


def medoid_scores(features: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Score of every distinct row; see the module docstring for the formula."""
    dists = pairwise_seuc(features)
    const = dists.max()
    weighted = freqs[:, None] * (const - dists)
    # cumsum accumulates strictly in row order, unlike the pairwise np.sum
    return freqs * np.cumsum(weighted, axis=0)[-1]


def medoid_index(features: np.ndarray, freqs: np.ndarray) -> int:
    scores = medoid_scores(features, freqs)
    return int(np.flatnonzero(scores == scores.max())[0])


def representative_trip(pool: TripPool) -> Trip:
    """The frequency-weighted medoid of the pool (always one of its trips)."""
    if not pool.distinct:
        raise EmptyPoolError("cannot pick a representative of an empty pool")
    return pool.distinct[medoid_index(pool.features, pool.frequencies)][0]


@dataclass(frozen=True)
class Prediction:
    trip: Trip
    used_k: int
    # feature row of the chosen trip, for errors measured in embedding space
    row: np.ndarray = field(compare=False, repr=False)


def _predict_pool(members: Sequence[EntityKey], splits, used_k: int) -> Prediction:
    pool = pool_trips(members, splits)
    i = medoid_index(pool.features, pool.frequencies)
    return Prediction(pool.distinct[i][0], used_k, pool.features[i])


def predict_trip(target: EntityKey, k: int, neighbor_lists: Mapping[EntityKey, NeighborList],
                 splits: Mapping[EntityKey, SplitHistory]) -> tuple[Trip, int]:
    """Predict the next trip of ``target`` from itself and its ``k`` nearest neighbors.

    Returns the trip and the number of non-self neighbors actually used,
    which is below ``k`` when the neighbor list is shorter.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    try:
        nl = neighbor_lists[target]
    except KeyError:
        raise UnknownEntityError(target) from None
    members, used = nl.nearest(k)
    p = _predict_pool(members, splits, used)
    return p.trip, p.used_k


def predict_sweep(target: EntityKey, k_max: int, neighbor_lists: Mapping[EntityKey, NeighborList],
                  splits: Mapping[EntityKey, SplitHistory]) -> list[Prediction]:
    """Predictions for k = 0..k_max; once k exceeds the available neighbors the result repeats."""
    try:
        nl = neighbor_lists[target]
    except KeyError:
        raise UnknownEntityError(target) from None
    out: list[Prediction] = []
    for k in range(k_max + 1):
        members, used = nl.nearest(k)
        if out and used == out[-1].used_k:
            out.append(out[-1])
            continue
        out.append(_predict_pool(members, splits, used))
    return out

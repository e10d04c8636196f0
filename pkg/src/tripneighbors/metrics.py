"""Trip and trip-history distances.

``seuc`` is the squared Euclidean distance between two trips in the
(o-lon, o-lat, d-lon, d-lat) space.  Two history distances build on it:

* ``ordered`` -- mean of ``seuc`` over positionally aligned trips;
* ``all2all`` -- mean of ``seuc`` over the full cross product.

All sums run in a fixed order (feature column, then ``i``, then ``j``) and
the mean is taken by a single final division, so the batched array kernels
below give bit-identical results to the scalar functions and to a plain
Python loop over the same terms.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .domain import Trip, trips_to_array
from .errors import (
    AlignmentError,
    EmptyHistoryError,
    NegativeSimilarityError,
    UnsupportedTripError,
)


class MetricVariant(str, enum.Enum):
    ORDERED = "ordered"
    ALL2ALL = "all2all"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, value: str | MetricVariant) -> MetricVariant:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown metric variant {value!r}; expected ordered or all2all") from None


def _check_single_leg(trips: Sequence[Trip]):
    for t in trips:
        if t.via:
            raise UnsupportedTripError(
                f"trip on yday {t.yday} has {len(t.via)} via-points; only single-leg trips are supported"
            )


# -- array kernels -----------------------------------------------------------

def seuc_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance along the last axis, summed column by column.

    Broadcasts like ``a - b``.  Accepts any number of feature columns, so it
    serves both raw 4-d trips and NMF embeddings.
    """
    diff = np.subtract(a, b)
    out = np.square(diff[..., 0])
    for c in range(1, diff.shape[-1]):
        out = out + np.square(diff[..., c])
    return out


def pairwise_seuc(x: np.ndarray) -> np.ndarray:
    """``(n, n)`` matrix of ``seuc`` between the rows of ``x``."""
    return seuc_rows(x[:, None, :], x[None, :, :])


def batched_distance(stack: np.ndarray, q: np.ndarray, variant: MetricVariant) -> np.ndarray:
    """Distance from each history in ``stack`` (shape ``(n, lp, d)``) to ``q`` (``(lq, d)``)."""
    n, lp = stack.shape[0], stack.shape[1]
    lq = q.shape[0]
    if lp == 0 or lq == 0:
        raise EmptyHistoryError("history distance needs non-empty histories")
    total = np.zeros(n)
    if variant is MetricVariant.ORDERED:
        if lp != lq:
            raise AlignmentError(f"ordered distance requires aligned histories, got lengths {lp} and {lq}")
        for i in range(lp):
            total += seuc_rows(stack[:, i, :], q[i])
        return total / lp
    for i in range(lp):
        for j in range(lq):
            total += seuc_rows(stack[:, i, :], q[j])
    return total / (lp * lq)


def history_distance(p: np.ndarray, q: np.ndarray, variant: MetricVariant) -> float:
    return float(batched_distance(p[None, :, :], q, variant)[0])


# -- trip-level API ------------------------------------------------------------

def seuc(a: Trip, b: Trip) -> float:
    """Squared Euclidean distance between two single-leg trips (squared degrees)."""
    _check_single_leg((a, b))
    return float(seuc_rows(np.array(a.features), np.array(b.features)))


def dist_ordered(p: Sequence[Trip], q: Sequence[Trip]) -> float:
    if len(p) != len(q):
        raise AlignmentError(f"ordered distance requires aligned histories, got lengths {len(p)} and {len(q)}")
    if not p:
        raise EmptyHistoryError("history distance needs non-empty histories")
    _check_single_leg(p)
    _check_single_leg(q)
    return history_distance(trips_to_array(p), trips_to_array(q), MetricVariant.ORDERED)


def dist_all2all(p: Sequence[Trip], q: Sequence[Trip]) -> float:
    if not p or not q:
        raise EmptyHistoryError("history distance needs non-empty histories")
    _check_single_leg(p)
    _check_single_leg(q)
    return history_distance(trips_to_array(p), trips_to_array(q), MetricVariant.ALL2ALL)


def dist(p: Sequence[Trip], q: Sequence[Trip], variant: MetricVariant | str) -> float:
    variant = MetricVariant.parse(variant)
    if variant is MetricVariant.ORDERED:
        return dist_ordered(p, q)
    return dist_all2all(p, q)


def sim(x: Trip, y: Trip, const: float) -> float:
    """Similarity ``const - seuc(x, y)``; ``const`` must dominate the distance."""
    s = seuc(x, y)
    if const < s:
        raise NegativeSimilarityError(f"const {const!r} is below seuc {s!r}")
    return const - s

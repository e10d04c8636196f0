"""Train/validation splitting and validation-driven neighbor selection.

An entity ``b`` is admitted as a neighbor of ``a`` when the training
history of ``b`` is at least as close to the validation history of ``a``
as the training history of ``a`` itself.  The relation is not symmetric
and is never symmetrized here.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .domain import Dataset, Entity, EntityKey, Trip, trips_to_array
from .errors import AlignmentError, CannotSplitError, TripPredictionError, UnknownEntityError, UnsupportedTripError
from .metrics import MetricVariant, batched_distance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitHistory:
    """An entity history cut into a training prefix and a validation suffix.

    ``trn_x`` / ``vld_x`` hold the feature rows used by the metrics.  They
    default to the raw trip coordinates and are replaced by embeddings when
    NMF preprocessing is active.
    """

    key: EntityKey
    trn: tuple[Trip, ...]
    vld: tuple[Trip, ...]
    trn_x: np.ndarray = field(default=None, compare=False, repr=False)
    vld_x: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name, trips in (("trn_x", self.trn), ("vld_x", self.vld)):
            arr = getattr(self, name)
            arr = trips_to_array(trips) if arr is None else np.array(arr, dtype=np.float64)
            if arr.shape[0] != len(trips):
                raise ValueError(f"{name} has {arr.shape[0]} rows for {len(trips)} trips")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def trips(self) -> tuple[Trip, ...]:
        return self.trn + self.vld

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.trn_x, self.vld_x])


@dataclass(frozen=True)
class NeighborList:
    """Admitted neighbors of ``owner``, nearest first, ties in key order.

    The owner is always present.  ``skipped`` counts candidates the ordered
    variant could not compare because of a length mismatch.
    """

    owner: EntityKey
    self_dist: float
    neighbors: tuple[tuple[EntityKey, float], ...]
    skipped: int = 0

    def __len__(self):
        return len(self.neighbors)

    @property
    def keys(self) -> tuple[EntityKey, ...]:
        return tuple(k for k, _ in self.neighbors)

    def nearest(self, k: int) -> tuple[tuple[EntityKey, ...], int]:
        """Owner plus up to ``k`` nearest non-owner members, and the realized count."""
        others = [key for key, _ in self.neighbors if key != self.owner]
        chosen = others[:max(k, 0)]
        return (self.owner, *chosen), len(chosen)


def split_entity(e: Entity, features: np.ndarray | None = None) -> SplitHistory:
    """First ceil(L/2) trips train, the remaining floor(L/2) validate."""
    n = len(e.history)
    if n < 2:
        raise CannotSplitError(f"entity {e.key} has L={n}; at least 2 trips are needed to split")
    for t in e.history:
        if t.via:
            raise UnsupportedTripError(f"entity {e.key} has a multi-leg trip on yday {t.yday}")
    cut = (n + 1) // 2
    if features is None:
        return SplitHistory(e.key, e.history[:cut], e.history[cut:])
    features = np.asarray(features, dtype=np.float64)
    return SplitHistory(e.key, e.history[:cut], e.history[cut:], features[:cut], features[cut:])


def split_dataset(dataset: Dataset, features: Mapping[EntityKey, np.ndarray] | None = None) -> dict[EntityKey, SplitHistory]:
    out = {}
    for e in dataset.entities:
        try:
            out[e.key] = split_entity(e, None if features is None else features[e.key])
        except TripPredictionError as exc:
            exc.entity_key = e.key
            raise
    return out


class CandidateIndex:
    """Training histories grouped by length and stacked for batched distances."""

    def __init__(self, splits: Mapping[EntityKey, SplitHistory]):
        self.splits = splits
        keys = sorted(splits)
        self.rank = {k: i for i, k in enumerate(keys)}
        by_len: dict[int, list[EntityKey]] = {}
        for k in keys:
            by_len.setdefault(len(splits[k].trn), []).append(k)
        self.groups = []
        for length in sorted(by_len):
            members = by_len[length]
            stack = np.stack([splits[k].trn_x for k in members])
            ranks = np.array([self.rank[k] for k in members], dtype=np.int64)
            self.groups.append((length, members, stack, ranks))
        self.position = {
            k: (gi, mi) for gi, (_, members, _, _) in enumerate(self.groups) for mi, k in enumerate(members)
        }

    def __len__(self):
        return len(self.rank)

    def neighbors(self, target: EntityKey, variant: MetricVariant) -> NeighborList:
        if target not in self.position:
            raise UnknownEntityError(target)
        own = self.splits[target]
        q = own.vld_x
        if variant is MetricVariant.ORDERED and len(own.trn) != len(own.vld):
            raise AlignmentError(
                f"ordered distance requires aligned histories; {target} splits into "
                f"{len(own.trn)} training and {len(own.vld)} validation trips"
            )
        tgt_group, tgt_member = self.position[target]
        dists, ranks, members_all = [], [], []
        skipped = 0
        self_dist = None
        for gi, (length, members, stack, group_ranks) in enumerate(self.groups):
            if variant is MetricVariant.ORDERED and length != len(q):
                skipped += len(members)
                continue
            d = batched_distance(stack, q, variant)
            if gi == tgt_group:
                self_dist = d[tgt_member]
            dists.append(d)
            ranks.append(group_ranks)
            members_all.append(members)
        d = np.concatenate(dists)
        r = np.concatenate(ranks)
        keys = [k for members in members_all for k in members]
        admitted = np.flatnonzero(d <= self_dist)
        order = admitted[np.lexsort((r[admitted], d[admitted]))]
        neighbors = tuple((keys[i], float(d[i])) for i in order)
        return NeighborList(target, float(self_dist), neighbors, skipped)


def neighbor_set(target: EntityKey, splits: Mapping[EntityKey, SplitHistory],
                 variant: MetricVariant | str, index: CandidateIndex | None = None) -> NeighborList:
    """Neighbor list of ``target`` over every entity in ``splits`` (itself included)."""
    variant = MetricVariant.parse(variant)
    if target not in splits:
        raise UnknownEntityError(target)
    if index is None:
        index = CandidateIndex(splits)
    return index.neighbors(target, variant)


def all_neighbor_sets(data: Dataset | Mapping[EntityKey, SplitHistory], variant: MetricVariant | str,
                      targets: Iterable[EntityKey] | None = None, threads: int = 1) -> dict[EntityKey, NeighborList]:
    """Neighbor lists for ``targets`` (default: every entity), in key order.

    Each target is computed independently, so the result does not depend on
    ``threads``.
    """
    variant = MetricVariant.parse(variant)
    splits = split_dataset(data) if isinstance(data, Dataset) else data
    index = CandidateIndex(splits)
    targets = sorted(splits) if targets is None else sorted(targets)

    def one(key):
        try:
            return index.neighbors(key, variant)
        except TripPredictionError as exc:
            exc.entity_key = key
            raise

    if threads > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            lists = list(pool.map(one, targets))
    else:
        lists = [one(k) for k in targets]
    skipped = sum(nl.skipped for nl in lists)
    if skipped:
        log.warning("ordered variant skipped %d length-mismatched candidate comparisons", skipped)
    return dict(zip(targets, lists))

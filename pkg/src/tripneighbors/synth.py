"""Seeded synthetic trip populations.

A handful of archetype OD pairs is drawn in a bounding box; every entity
follows one archetype, each of its trips being the archetype plus Gaussian
noise, occasionally replaced by a uniformly random OD pair.  The output
uses the same schema as ingested data.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .domain import Dataset, Entity, EntityKey, Trip
from .errors import InvalidValueError

DEFAULT_BBOX = (6.14, 6.20, 48.64, 48.70)


@dataclass(frozen=True)
class SynthParams:
    seed: int
    L_values: tuple[int, ...] = (6,)
    n_entities: int = 200
    counts: Mapping[int, int] | None = None
    n_archetypes: int = 4
    bbox: tuple[float, float, float, float] = DEFAULT_BBOX
    noise_sigma: float = 0.002
    outlier_rate: float = 0.1
    max_resample: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "L_values", tuple(int(v) for v in self.L_values))
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.counts is not None:
            object.__setattr__(self, "counts", {int(k): int(v) for k, v in dict(self.counts).items()})
        self.validate()

    def validate(self):
        if self.seed is None:
            raise InvalidValueError("a seed is required")
        if not self.L_values and not self.counts:
            raise InvalidValueError("at least one history length is required")
        for L, n in self.length_counts().items():
            if L < 1:
                raise InvalidValueError(f"history length must be >= 1, got {L}")
            if n < 1:
                raise InvalidValueError(f"entity count for L={L} must be >= 1, got {n}")
        if self.n_archetypes < 1:
            raise InvalidValueError("n_archetypes must be >= 1")
        if not 0 <= self.outlier_rate <= 1:
            raise InvalidValueError(f"outlier_rate must be in [0, 1], got {self.outlier_rate}")
        if not self.noise_sigma >= 0:
            raise InvalidValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        lon0, lon1, lat0, lat1 = self.bbox
        if not (lon0 < lon1 and lat0 < lat1):
            raise InvalidValueError(f"empty bounding box {self.bbox}")

    def length_counts(self) -> dict[int, int]:
        if self.counts:
            return dict(sorted(self.counts.items()))
        return {L: self.n_entities for L in sorted(set(self.L_values))}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["L_values"] = list(self.L_values)
        d["bbox"] = list(self.bbox)
        d["counts"] = {str(k): v for k, v in self.length_counts().items()}
        return d


def _uniform_od(rng: np.random.Generator, bbox) -> np.ndarray:
    lon0, lon1, lat0, lat1 = bbox
    return np.array([
        rng.uniform(lon0, lon1), rng.uniform(lat0, lat1),
        rng.uniform(lon0, lon1), rng.uniform(lat0, lat1),
    ])


def _archetypes(rng: np.random.Generator, params: SynthParams) -> np.ndarray:
    min_sep = (10 * params.noise_sigma) ** 2
    for _ in range(params.max_resample):
        ods = np.array([_uniform_od(rng, params.bbox) for _ in range(params.n_archetypes)])
        d = ((ods[:, None, :] - ods[None, :, :]) ** 2).sum(axis=-1)
        off = d[~np.eye(len(ods), dtype=bool)]
        if off.size == 0 or off.min() >= min_sep:
            return ods
    raise InvalidValueError(
        f"could not place {params.n_archetypes} archetypes {10 * params.noise_sigma:g} degrees apart "
        f"in {params.bbox}"
    )


def generate(params: SynthParams) -> tuple[Dataset, dict[EntityKey, int]]:
    """Generate a dataset and the archetype label of every entity."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    ods = _archetypes(rng, params)
    lengths = [L for L, n in params.length_counts().items() for _ in range(n)]
    n_total = len(lengths)
    order = rng.permutation(n_total)
    archetype = np.empty(n_total, dtype=np.int64)
    archetype[order] = np.arange(n_total) % params.n_archetypes

    entities, labels = [], {}
    for i, L in enumerate(lengths):
        key = EntityKey(f"syn{i:06d}", 1 + i % 7, 7 + i % 12)
        base = ods[archetype[i]]
        trips = []
        for yday in range(1, L + 2):
            if rng.random() < params.outlier_rate:
                od = _uniform_od(rng, params.bbox)
            else:
                od = base + rng.normal(0.0, params.noise_sigma, size=4) if params.noise_sigma > 0 else base
            trips.append(Trip.from_values(*od, yday=yday))
        entities.append(Entity(key, tuple(trips[:L]), trips[L]))
        labels[key] = int(archetype[i])
    meta = {"source": "synthetic", "seed": params.seed, "params": params.to_dict()}
    return Dataset(tuple(entities), meta), labels


def write_labels(labels: Mapping[EntityKey, int], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["TicketId", "w-day", "d-hour", "archetype"])
        for key in sorted(labels):
            w.writerow([key.ticket_id, key.wday, key.dhour, labels[key]])


def read_labels(path: str | Path) -> dict[EntityKey, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {EntityKey(r["TicketId"], int(r["w-day"]), int(r["d-hour"])): int(r["archetype"]) for r in rows}

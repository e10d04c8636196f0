"""Neighbor-based next-trip prediction from (user, time-slot) trip histories."""

from .domain import Coordinate, Dataset, Entity, EntityKey, Trip, entity_length
from .evaluate import NMFConfig, SweepResult, mse, sweep_neighbors
from .ingest import group_entities, load_dataset, parse_csv, save_dataset
from .metrics import MetricVariant, dist_all2all, dist_ordered, seuc, sim
from .predict import TripPool, pool_trips, predict_trip, representative_trip
from .selection import NeighborList, SplitHistory, all_neighbor_sets, neighbor_set, split_entity
from .synth import SynthParams, generate

__version__ = "0.1.0"

__all__ = [
    "Coordinate",
    "Dataset",
    "Entity",
    "EntityKey",
    "MetricVariant",
    "NMFConfig",
    "NeighborList",
    "SplitHistory",
    "SweepResult",
    "SynthParams",
    "Trip",
    "TripPool",
    "all_neighbor_sets",
    "dist_all2all",
    "dist_ordered",
    "entity_length",
    "generate",
    "group_entities",
    "load_dataset",
    "mse",
    "neighbor_set",
    "parse_csv",
    "pool_trips",
    "predict_trip",
    "representative_trip",
    "save_dataset",
    "seuc",
    "sim",
    "split_entity",
    "sweep_neighbors",
]

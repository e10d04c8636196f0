"""Prediction error, neighbor-count sweeps and the experiment families.

A sweep predicts every evaluated entity from itself plus its ``k`` nearest
admitted neighbors for ``k = 0..k_max`` and records the mean squared error
against the held-out test trips.  ``k = 0`` is the self-history baseline,
``k = 1`` the nearest-neighbor baseline, and the best ``k`` on the test
set is reported as ``oracle_k``.  Entities with fewer neighbors than ``k``
use all they have; ``mean_used_k`` makes that capping visible.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .domain import Dataset, EntityKey, Trip
from .errors import EvaluationIncompleteError, TripPredictionError
from .ingest import group_entities, merge_datasets
from .metrics import MetricVariant, seuc, seuc_rows
from .nmf import build_feature_matrix, entity_embeddings, factorize_cached, transform
from .predict import Prediction, predict_sweep
from .selection import all_neighbor_sets, split_dataset
from .synth import SynthParams, generate

log = logging.getLogger(__name__)

ERROR_SPACES = ("original", "embedding")


@dataclass(frozen=True)
class NMFConfig:
    """NMF preprocessing settings.

    ``error_space`` selects where test errors are measured: ``original``
    compares the chosen trip's raw coordinates with the test trip, which
    keeps errors comparable with runs without NMF; ``embedding`` compares
    embeddings, with the test trip embedded against the fitted components.
    """

    r: int = 4
    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0
    error_space: str = "original"
    min_shift: bool = False
    cache_dir: str | None = None

    def __post_init__(self):
        if self.error_space not in ERROR_SPACES:
            raise ValueError(f"error_space must be one of {ERROR_SPACES}, got {self.error_space!r}")


@dataclass(frozen=True)
class CurvePoint:
    k: int
    n_entities: int
    mean_used_k: float
    mse: float


@dataclass(frozen=True)
class Summary:
    self_only_mse: float
    nearest_neighbor_mse: float | None
    oracle_k: int
    oracle_mse: float

    @property
    def improvement(self) -> float:
        """Relative error reduction of the oracle over the self-only baseline."""
        if self.self_only_mse == 0:
            return 0.0
        return 1.0 - self.oracle_mse / self.self_only_mse


@dataclass(frozen=True)
class SweepResult:
    config: Mapping[str, Any]
    curve: tuple[CurvePoint, ...]
    summary: Summary = field(init=False)

    def __post_init__(self):
        ks = [p.k for p in self.curve]
        if ks != list(range(len(ks))) or not ks:
            raise ValueError(f"curve must cover k = 0..k_max contiguously, got {ks}")
        errs = [p.mse for p in self.curve]
        best = min(errs)
        summary = Summary(
            self_only_mse=errs[0],
            nearest_neighbor_mse=errs[1] if len(errs) > 1 else None,
            oracle_k=errs.index(best),
            oracle_mse=best,
        )
        object.__setattr__(self, "summary", summary)

    @property
    def experiment_id(self) -> str:
        return str(self.config.get("experiment_id", ""))

    @property
    def variant(self) -> str:
        return str(self.config.get("variant", ""))


# -- error -------------------------------------------------------------------------

def mse(predictions: Mapping[EntityKey, Trip], dataset: Dataset,
        subset: Iterable[EntityKey] | None = None) -> float:
    """Mean ``seuc`` between predictions and test trips, summed in key order."""
    keys = sorted(dataset.keys if subset is None else subset)
    if not keys:
        raise ValueError("no entities to evaluate")
    total = 0.0
    for key in keys:
        test = dataset.get(key).test_trip
        if test is None:
            raise EvaluationIncompleteError(key, "test trip")
        if key not in predictions:
            raise EvaluationIncompleteError(key, "prediction")
        total += seuc(predictions[key], test)
    return total / len(keys)


def _mse_rows(rows: Mapping[EntityKey, np.ndarray], tests: Mapping[EntityKey, np.ndarray],
              keys: Sequence[EntityKey]) -> float:
    total = 0.0
    for key in keys:
        total += float(seuc_rows(rows[key], tests[key]))
    return total / len(keys)


# -- sweep -------------------------------------------------------------------------

def _dataset_label(dataset: Dataset) -> dict:
    meta = dict(dataset.meta)
    out = {k: meta[k] for k in ("source", "seed", "L", "policy") if k in meta}
    out["n_entities"] = len(dataset)
    return out


def _length_label(dataset: Dataset, keys: Sequence[EntityKey]) -> str:
    lengths = sorted({len(dataset.get(k).history) for k in keys})
    return str(lengths[0]) if len(lengths) == 1 else "mixed"


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def sweep_neighbors(dataset: Dataset, variant: MetricVariant | str = "all2all", k_max: int = 30,
                    nmf: NMFConfig | None = None, subset: Iterable[EntityKey] | None = None,
                    threads: int = 1, experiment_id: str = "sweep") -> SweepResult:
    """Error-vs-neighbor-count curve for one configuration.

    Neighbor lists are computed against every entity of ``dataset``; only
    the entities in ``subset`` (default: all) are predicted and scored.
    """
    variant = MetricVariant.parse(variant)
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    keys = sorted(dataset.keys if subset is None else set(subset))
    if not keys:
        raise ValueError("no entities to evaluate")
    for key in keys:
        if dataset.get(key).test_trip is None:
            raise EvaluationIncompleteError(key, "test trip")
    if variant is MetricVariant.ORDERED:
        lengths = {len(dataset.get(k).history) for k in keys}
        if len(lengths) > 1:
            raise TripPredictionError(
                f"ordered variant needs one history length among evaluated entities, got {sorted(lengths)}"
            )

    fact = None
    if nmf is not None:
        fm = build_feature_matrix(dataset, min_shift=nmf.min_shift)
        fact = factorize_cached(fm, nmf.r, nmf.max_iters, nmf.tol, nmf.seed, nmf.cache_dir)
        splits = split_dataset(dataset, entity_embeddings(fact))
    else:
        splits = split_dataset(dataset)
    neighbor_lists = all_neighbor_sets(splits, variant, targets=keys, threads=threads)
    sweeps: list[list[Prediction]] = _map(
        lambda key: predict_sweep(key, k_max, neighbor_lists, splits), keys, threads
    )

    test_rows = None
    if fact is not None and nmf.error_space == "embedding":
        tests = np.array([dataset.get(k).test_trip.features for k in keys])
        test_rows = dict(zip(keys, transform(fact, tests, nmf.max_iters, nmf.tol)))

    curve = []
    for k in range(k_max + 1):
        preds = {key: s[k] for key, s in zip(keys, sweeps)}
        if test_rows is None:
            err = mse({key: p.trip for key, p in preds.items()}, dataset, keys)
        else:
            err = _mse_rows({key: p.row for key, p in preds.items()}, test_rows, keys)
        used = 0
        for key in keys:
            used += preds[key].used_k
        curve.append(CurvePoint(k, len(keys), used / len(keys), err))

    config = {
        "experiment_id": experiment_id,
        "variant": variant.value,
        "L": _length_label(dataset, keys),
        "nmf_r": nmf.r if nmf is not None else 0,
        "error_space": nmf.error_space if nmf is not None else "original",
        "k_max": k_max,
        "n_evaluated": len(keys),
        "dataset": _dataset_label(dataset),
    }
    if fact is not None:
        config["nmf_iterations"] = fact.n_iter
        config["nmf_objective"] = fact.objective_trace[-1]
    return SweepResult(config, tuple(curve))


def self_only_predictions(dataset: Dataset, keys: Iterable[EntityKey] | None = None) -> dict[EntityKey, Trip]:
    """Medoid of each entity's own history, computed without any neighbor machinery."""
    from .predict import make_pool, representative_trip

    keys = dataset.keys if keys is None else keys
    return {k: representative_trip(make_pool(dataset.get(k).history)) for k in keys}


# -- data sources --------------------------------------------------------------------

DatasetSource = Callable[[int], Dataset]


class SyntheticSource:
    """Generates a fresh synthetic population for each requested history length."""

    def __init__(self, params: SynthParams):
        self.params = params

    def __call__(self, L: int) -> Dataset:
        return self.counts({L: self.params.n_entities})

    def counts(self, counts: Mapping[int, int]) -> Dataset:
        p = SynthParams(**{**self.params.__dict__, "counts": dict(counts), "L_values": tuple(counts)})
        return generate(p)[0]


class RecordsSource:
    """Groups raw validation records into entities of the requested length."""

    def __init__(self, records, policy: str = "earliest", limit: int | None = None,
                 seed: int | None = None, source: str = "records"):
        self.records = list(records)
        self.policy, self.limit, self.seed, self.source = policy, limit, seed, source

    def __call__(self, L: int) -> Dataset:
        return group_entities(self.records, L, self.policy, self.source, self.limit, self.seed)


class FixedSource:
    """Selects entities of one history length from an existing dataset."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    def __call__(self, L: int) -> Dataset:
        return self.dataset.filter(length=L, meta={**self.dataset.meta, "L": L})


# -- experiment families -----------------------------------------------------------

def experiment_per_L(source: DatasetSource, L_list: Iterable[int],
                     variants: Iterable[MetricVariant | str] = ("ordered", "all2all"),
                     k_max: int = 30, nmf: NMFConfig | None = None, threads: int = 1) -> list[SweepResult]:
    """One sweep per (L, variant); ``ordered`` is skipped for odd L."""
    variants = [MetricVariant.parse(v) for v in variants]
    results = []
    for L in L_list:
        dataset = None
        for variant in variants:
            if variant is MetricVariant.ORDERED and L % 2:
                log.warning("skipping ordered variant for L=%d: odd histories cannot be aligned", L)
                continue
            if dataset is None:
                dataset = source(L)
            if not len(dataset):
                log.warning("no entities with L=%d; skipping", L)
                break
            results.append(sweep_neighbors(
                dataset, variant, k_max, nmf, threads=threads, experiment_id=f"per_L-L{L}-{variant.value}",
            ))
    return results


def experiment_augment(short: Dataset, long: Dataset, counts: Iterable[int], k_max: int = 30,
                       seed: int = 0, threads: int = 1) -> list[SweepResult]:
    """Merge seeded subsamples of ``short`` with all of ``long``; score only the short entities."""
    results = []
    pool = short.keys
    for count in counts:
        if count <= 0:
            log.warning("skipping augmentation with %d short entities: nothing to evaluate", count)
            continue
        if count > len(pool):
            log.warning("requested %d short entities but only %d are available; capping", count, len(pool))
            count = len(pool)
        rng = np.random.default_rng(seed)
        chosen = [pool[i] for i in np.sort(rng.choice(len(pool), size=count, replace=False))]
        sub = short.filter(chosen)
        merged = merge_datasets(sub, long, eval_subset=chosen)
        res = sweep_neighbors(merged, MetricVariant.ALL2ALL, k_max, subset=chosen, threads=threads,
                              experiment_id=f"augment-{count}")
        config = {**res.config, "n_short": count, "n_long": len(long)}
        results.append(SweepResult(config, res.curve))
    return results


def mixed_dataset(dataset: Dataset, counts: Mapping[int, int] | None = None, seed: int = 0) -> Dataset:
    """Seeded per-length subsample of a mixed-length dataset."""
    if not counts:
        return dataset
    keep: list[EntityKey] = []
    for L, n in sorted(counts.items()):
        keys = dataset.filter(length=L).keys
        if n < len(keys):
            rng = np.random.default_rng([seed, L])
            keys = tuple(keys[i] for i in np.sort(rng.choice(len(keys), size=n, replace=False)))
        elif n > len(keys):
            log.warning("requested %d entities with L=%d but only %d are available", n, L, len(keys))
        keep.extend(keys)
    return dataset.filter(keep)


def experiment_mixed(dataset: Dataset, counts: Mapping[int, int] | None = None, k_max: int = 30,
                     seed: int = 0, threads: int = 1) -> SweepResult:
    """A single all2all sweep over a pool of entities with different history lengths."""
    data = mixed_dataset(dataset, counts, seed)
    lengths = sorted(data.lengths())
    label = ",".join(map(str, lengths))
    res = sweep_neighbors(data, MetricVariant.ALL2ALL, k_max, threads=threads, experiment_id=f"mixed-L{label}")
    return SweepResult({**res.config, "lengths": label}, res.curve)


def experiment_nmf_ablation(dataset: Dataset, variant: MetricVariant | str = "all2all", k_max: int = 30,
                            nmf: NMFConfig | None = None, threads: int = 1) -> tuple[SweepResult, SweepResult]:
    """Paired sweeps on the same data, without and with NMF embeddings."""
    nmf = nmf or NMFConfig()
    variant = MetricVariant.parse(variant)
    raw = sweep_neighbors(dataset, variant, k_max, threads=threads, experiment_id=f"nmf_ablation-raw-{variant.value}")
    emb = sweep_neighbors(dataset, variant, k_max, nmf, threads=threads,
                          experiment_id=f"nmf_ablation-nmf{nmf.r}-{variant.value}")
    return raw, emb


# -- output ---------------------------------------------------------------------------

CURVE_HEADER = ("experiment_id", "variant", "L", "nmf_r", "k", "n_entities", "mean_used_k", "mse")
SUMMARY_HEADER = ("experiment_id", "variant", "L", "nmf_r", "row", "k", "mse", "improvement")


def _sci(x: float) -> str:
    return f"{x:.12e}"


def write_results(results: Sequence[SweepResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for res in results:
            c = res.config
            for p in res.curve:
                w.writerow([c["experiment_id"], c["variant"], c["L"], c["nmf_r"], p.k, p.n_entities,
                            f"{p.mean_used_k:.6f}", _sci(p.mse)])


def write_summary(results: Sequence[SweepResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for res in results:
            c, s = res.config, res.summary
            head = [c["experiment_id"], c["variant"], c["L"], c["nmf_r"]]
            w.writerow(head + ["self_only", 0, _sci(s.self_only_mse), f"{0.0:.6f}"])
            if s.nearest_neighbor_mse is not None:
                nn_gain = 1 - s.nearest_neighbor_mse / s.self_only_mse if s.self_only_mse else 0.0
                w.writerow(head + ["nearest", 1, _sci(s.nearest_neighbor_mse), f"{nn_gain:.6f}"])
            w.writerow(head + ["oracle", s.oracle_k, _sci(s.oracle_mse), f"{s.improvement:.6f}"])


def plot_sweep(result: SweepResult, path: str | Path, others: Sequence[SweepResult] = ()) -> None:
    """Static SVG of mse against k, one line per result."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tripneighbors"
    fig, ax = plt.subplots(figsize=(6, 4))
    for res in (result, *others):
        ks = [p.k for p in res.curve]
        ax.plot(ks, [p.mse for p in res.curve], marker="o", markersize=3, label=res.experiment_id)
    ax.set_xlabel("no. of neighbors")
    ax.set_ylabel("mean squared error (deg$^2$)")
    ax.ticklabel_format(axis="y", style="sci", scilimits=(0, 0))
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

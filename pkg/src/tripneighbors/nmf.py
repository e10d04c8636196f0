"""Non-negative matrix factorization of the trip feature matrix.

Trips are re-embedded as the rows of ``W`` in ``X ~= W H`` where ``X`` has
one row per history trip and the columns (o-lon, o-lat, d-lon, d-lat).
The factorization uses Lee-Seung multiplicative updates on the squared
Frobenius loss.

Identical trips share one embedding: the updates run on the distinct rows
of ``X``, each weighted by its multiplicity, which minimizes exactly the
same loss as the full matrix while tying duplicate rows together.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .domain import Dataset, EntityKey
from .errors import DegenerateInputError, NonNegativityError, RankError

log = logging.getLogger(__name__)

EPS = 1e-12
COLUMNS = ("o-longitude", "o-latitude", "d-longitude", "d-latitude")


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray = field(repr=False)
    row_index: Mapping[tuple[EntityKey, int], int] = field(repr=False)
    shift: float = 0.0

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(COLUMNS):
            raise ValueError(f"feature matrix must be n x {len(COLUMNS)}, got {rows.shape}")
        negative = np.flatnonzero((rows < 0).any(axis=1))
        if negative.size:
            raise NonNegativityError(f"row {negative[0]} has a negative entry: {rows[negative[0]].tolist()}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def shape(self):
        return self.rows.shape


@dataclass(frozen=True)
class Factorization:
    W: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    objective_trace: tuple[float, ...]
    row_index: Mapping[tuple[EntityKey, int], int] = field(default_factory=dict, repr=False)
    shift: float = 0.0

    @property
    def rank(self) -> int:
        return self.H.shape[0]

    @property
    def n_iter(self) -> int:
        return len(self.objective_trace) - 1


def build_feature_matrix(dataset: Dataset, min_shift: bool = False) -> FeatureMatrix:
    """One row per history trip, in entity-key then yday order."""
    rows, index = [], {}
    for e in dataset.entities:
        for pos, t in enumerate(e.history):
            index[(e.key, pos)] = len(rows)
            rows.append(t.features)
    x = np.array(rows, dtype=np.float64).reshape(len(rows), len(COLUMNS))
    shift = 0.0
    if x.size and x.min() < 0:
        if not min_shift:
            bad = int(np.flatnonzero((x < 0).any(axis=1))[0])
            key, pos = next(kp for kp, i in index.items() if i == bad)
            raise NonNegativityError(
                f"row {bad} ({key}, trip {pos}) has a negative coordinate; enable min-shift to offset it"
            )
        shift = -float(x.min())
        x = x + shift
    return FeatureMatrix(x, index, shift)


def _objective(x, w, h, counts) -> float:
    resid = x - w @ h
    return float(np.sqrt(np.sum(counts[:, None] * resid * resid)))


def nmf_factorize(X: FeatureMatrix | np.ndarray, r: int = 4, max_iters: int = 500,
                  tol: float = 1e-6, seed: int = 0) -> Factorization:
    """Multiplicative-update NMF.

    Stops after ``max_iters`` iterations or when the relative decrease of
    the Frobenius error drops below ``tol``.  ``objective_trace[0]`` is the
    error at the seeded initialization.
    """
    fm = X if isinstance(X, FeatureMatrix) else None
    x = np.asarray(fm.rows if fm is not None else X, dtype=np.float64)
    n_cols = x.shape[1]
    if r < 1 or r > n_cols:
        raise RankError(f"rank {r} must be between 1 and the number of features ({n_cols})")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if x.size == 0 or not np.any(x > 0):
        raise DegenerateInputError("cannot factorize an empty or all-zero matrix")
    if np.any(x < 0):
        raise NonNegativityError("input matrix has negative entries")

    uniq, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    c = counts.astype(np.float64)

    rng = np.random.default_rng(seed)
    scale = np.sqrt(x.mean() / r)
    w = scale * rng.uniform(0.1, 1.0, size=(uniq.shape[0], r))
    h = scale * rng.uniform(0.1, 1.0, size=(r, n_cols))

    trace = [_objective(uniq, w, h, c)]
    for _ in range(max_iters):
        cw = c[:, None] * w
        h *= (cw.T @ uniq) / (cw.T @ w @ h + EPS)
        # W rows are independent of the weights: each row solves its own NNLS
        w *= (uniq @ h.T) / (w @ (h @ h.T) + EPS)
        trace.append(_objective(uniq, w, h, c))
        prev, cur = trace[-2], trace[-1]
        if cur == 0 or (prev - cur) / prev < tol:
            break
    return Factorization(
        W=w[inverse],
        H=h,
        objective_trace=tuple(trace),
        row_index=dict(fm.row_index) if fm is not None else {},
        shift=fm.shift if fm is not None else 0.0,
    )


def embed_trips(fact: Factorization) -> dict[tuple[EntityKey, int], np.ndarray]:
    """Embedding (row of ``W``) of every history trip, keyed by (entity, position)."""
    return {kp: fact.W[i] for kp, i in fact.row_index.items()}


def entity_embeddings(fact: Factorization) -> dict[EntityKey, np.ndarray]:
    """Per-entity ``(L, r)`` embedding arrays in history order."""
    per: dict[EntityKey, dict[int, int]] = {}
    for (key, pos), i in fact.row_index.items():
        per.setdefault(key, {})[pos] = i
    return {key: fact.W[[rows[p] for p in sorted(rows)]] for key, rows in per.items()}


def transform(fact: Factorization, rows: np.ndarray, max_iters: int = 500, tol: float = 1e-6) -> np.ndarray:
    """Embed new feature rows against the fixed components ``H``.

    Runs the ``W`` half of the multiplicative updates only.  Used for test
    trips, which are not part of the fitted matrix.
    """
    x = np.asarray(rows, dtype=np.float64) + fact.shift
    if np.any(x < 0):
        raise NonNegativityError("rows to transform have negative entries")
    h = fact.H
    w = np.full((x.shape[0], h.shape[0]), np.sqrt(max(x.mean(), EPS) / h.shape[0]))
    hht = h @ h.T
    prev = np.inf
    for _ in range(max_iters):
        w *= (x @ h.T) / (w @ hht + EPS)
        cur = float(np.linalg.norm(x - w @ h))
        if cur == 0 or (np.isfinite(prev) and (prev - cur) / prev < tol):
            break
        prev = cur
    return w


# -- on-disk cache ---------------------------------------------------------------

def cache_key(X: FeatureMatrix, r: int, max_iters: int, tol: float, seed: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X.rows).tobytes())
    h.update(json.dumps([r, max_iters, repr(tol), seed, repr(X.shift)]).encode())
    return h.hexdigest()[:24]


def save_factorization(path: str | Path, fact: Factorization) -> None:
    """Write W, H and the objective trace to a ``.npz`` archive."""
    keys = sorted(fact.row_index, key=lambda kp: fact.row_index[kp])
    np.savez(
        Path(path),
        W=fact.W,
        H=fact.H,
        trace=np.array(fact.objective_trace),
        shift=np.array(fact.shift),
        index=np.array(
            [[k.ticket_id, str(k.wday), str(k.dhour), str(pos)] for k, pos in keys], dtype=str
        ).reshape(len(keys), 4),
    )


def load_factorization(path: str | Path) -> Factorization:
    with np.load(Path(path)) as z:
        index = {
            (EntityKey(t, int(wd), int(dh)), int(pos)): i
            for i, (t, wd, dh, pos) in enumerate(z["index"].tolist())
        }
        return Factorization(
            W=z["W"], H=z["H"], objective_trace=tuple(float(v) for v in z["trace"]),
            row_index=index, shift=float(z["shift"]),
        )


def factorize_cached(X: FeatureMatrix, r: int = 4, max_iters: int = 500, tol: float = 1e-6,
                     seed: int = 0, cache_dir: str | Path | None = None) -> Factorization:
    if cache_dir is None:
        return nmf_factorize(X, r, max_iters, tol, seed)
    path = Path(cache_dir) / f"nmf-{cache_key(X, r, max_iters, tol, seed)}.npz"
    if path.exists():
        log.info("loading cached factorization %s", path)
        return load_factorization(path)
    fact = nmf_factorize(X, r, max_iters, tol, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_factorization(path, fact)
    return fact

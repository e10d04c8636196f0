"""Reading e-ticket validation records and grouping them into entities.

The CSV layout is one validation per row::

    TicketId,w-day,d-hour,y-day,o-longitude,o-latitude,d-longitude,d-latitude

Headers match case-insensitively and the id column may be spelled
``TicketId``, ``TickedId`` or ``TicketID``.  Dataset exports add an
``is-test`` column marking the held-out trip of each entity.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .domain import Dataset, Entity, EntityKey, Trip
from .errors import DuplicateEntityError, InvalidValueError, SchemaError

log = logging.getLogger(__name__)

ID_ALIASES = ("ticketid", "tickedid")
COLUMNS = ("w-day", "d-hour", "y-day", "o-longitude", "o-latitude", "d-longitude", "d-latitude")
EXPORT_HEADER = ("TicketId",) + COLUMNS + ("is-test",)
POLICIES = ("exact", "earliest")


@dataclass(frozen=True)
class RawRecord:
    ticket_id: str
    wday: int
    dhour: int
    yday: int
    o_lon: float
    o_lat: float
    d_lon: float
    d_lat: float
    is_test: bool = False

    def __post_init__(self):
        if not self.ticket_id:
            raise InvalidValueError("empty ticket id")
        if not 1 <= self.wday <= 7:
            raise InvalidValueError(f"w-day {self.wday} outside 1..7")
        if not 0 <= self.dhour <= 23:
            raise InvalidValueError(f"d-hour {self.dhour} outside 0..23")
        if not 1 <= self.yday <= 366:
            raise InvalidValueError(f"y-day {self.yday} outside 1..366")
        for name in ("o_lon", "o_lat", "d_lon", "d_lat"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidValueError(f"{name} is not finite")

    @property
    def key(self) -> EntityKey:
        return EntityKey(self.ticket_id, self.wday, self.dhour)

    def trip(self) -> Trip:
        return Trip.from_values(self.o_lon, self.o_lat, self.d_lon, self.d_lat, self.yday)


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    """Records in file order plus the rows that could not be parsed."""

    records: list[RawRecord] = field(default_factory=list)
    errors: list[RowError] = field(default_factory=list)

    def __iter__(self) -> Iterator[RawRecord]:
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no", ""):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _open(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def parse_csv(source: str | Path | IO[str]) -> ParseResult:
    """Parse validation records from a path or text stream.

    Malformed rows are skipped and reported with their 1-based line number.
    A missing required column raises ``SchemaError``.
    """
    fh, owned = _open(source)
    try:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("missing header row") from None
        names = [h.strip().lower() for h in header]
        idx = {}
        for alias in ID_ALIASES:
            if alias in names:
                idx["id"] = names.index(alias)
                break
        for col in COLUMNS:
            if col in names:
                idx[col] = names.index(col)
        missing = [c for c in ("id",) + COLUMNS if c not in idx]
        if missing:
            raise SchemaError(
                f"missing column(s) {', '.join('TicketId' if m == 'id' else m for m in missing)}; "
                f"expected headers: TicketId (or TickedId), {', '.join(COLUMNS)}"
            )
        test_col = names.index("is-test") if "is-test" in names else None

        result = ParseResult()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                cells = [c.strip() for c in row]
                if len(cells) < len(names):
                    raise ValueError(f"expected {len(names)} fields, got {len(cells)}")
                rec = RawRecord(
                    ticket_id=cells[idx["id"]],
                    wday=_int(cells[idx["w-day"]]),
                    dhour=_int(cells[idx["d-hour"]]),
                    yday=_int(cells[idx["y-day"]]),
                    o_lon=float(cells[idx["o-longitude"]]),
                    o_lat=float(cells[idx["o-latitude"]]),
                    d_lon=float(cells[idx["d-longitude"]]),
                    d_lat=float(cells[idx["d-latitude"]]),
                    is_test=_bool(cells[test_col]) if test_col is not None else False,
                )
            except (ValueError, InvalidValueError) as exc:
                result.errors.append(RowError(line, str(exc)))
                continue
            result.records.append(rec)
        return result
    finally:
        if owned:
            fh.close()


def _group(records: Iterable[RawRecord]) -> dict[EntityKey, list[RawRecord]]:
    groups: dict[EntityKey, list[RawRecord]] = {}
    for r in records:
        groups.setdefault(r.key, []).append(r)
    for g in groups.values():
        g.sort(key=lambda r: r.yday)
    return dict(sorted(groups.items()))


def group_entities(records: Iterable[RawRecord], L: int, policy: str = "earliest",
                   source: str = "records", limit: int | None = None, seed: int | None = None) -> Dataset:
    """Build entities of history length ``L`` plus one test trip.

    Records sharing (ticket, w-day, d-hour) form a group, ordered by y-day.
    Groups need at least ``L + 1`` records; ``exact`` keeps only groups with
    exactly ``L + 1``, ``earliest`` keeps the earliest ``L + 1`` of larger
    groups.  The last kept record is the test trip.  Groups that fail are
    counted in ``meta["report"]``.  ``limit`` draws a seeded subsample of the
    eligible entities.
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    groups = _group(records)
    entities, excluded = [], []
    truncated = 0
    for key, recs in groups.items():
        ydays = [r.yday for r in recs]
        dup = next((a for a, b in zip(ydays, ydays[1:]) if a == b), None)
        if dup is not None:
            excluded.append({"key": str(key), "reason": f"duplicate y-day {dup}"})
            continue
        if len(recs) < L + 1:
            excluded.append({"key": str(key), "reason": f"{len(recs)} records, needs {L + 1}"})
            continue
        if len(recs) > L + 1:
            if policy == "exact":
                excluded.append({"key": str(key), "reason": f"{len(recs)} records, exact policy needs {L + 1}"})
                continue
            truncated += 1
        kept = recs[: L + 1]
        entities.append(Entity(key, tuple(r.trip() for r in kept[:L]), kept[L].trip()))
    eligible = len(entities)
    if limit is not None and limit < len(entities):
        if seed is None:
            raise ValueError("a seed is required to subsample entities")
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(len(entities), size=limit, replace=False))
        entities = [entities[i] for i in chosen]
    report = {
        "groups": len(groups),
        "eligible": eligible,
        "kept": len(entities),
        "truncated": truncated,
        "excluded": len(excluded),
        "excluded_groups": excluded,
    }
    meta = {"source": source, "L": L, "policy": policy, "report": report}
    if limit is not None:
        meta.update(limit=limit, seed=seed)
    return Dataset(tuple(entities), meta)


def merge_datasets(a: Dataset, b: Dataset, eval_subset: Iterable[EntityKey] | None = None) -> Dataset:
    """Union of two datasets with disjoint keys."""
    if eval_subset is None:
        if not b.entities:
            return a
        if not a.entities:
            return b
    overlap = sorted(set(a.keys) & set(b.keys))
    if overlap:
        raise DuplicateEntityError(overlap[0])
    meta = {"source": "merge", "parts": [dict(a.meta), dict(b.meta)]}
    if eval_subset is not None:
        meta["eval_subset"] = [str(k) for k in sorted(eval_subset)]
    return Dataset(a.entities + b.entities, meta)


# -- dataset files -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def export_csv(dataset: Dataset, dest: str | Path | IO[str]) -> None:
    """Write a dataset in the record schema, test rows flagged in ``is-test``."""
    fh, owned = (open(dest, "w", newline="", encoding="utf-8"), True) if isinstance(dest, (str, Path)) else (dest, False)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXPORT_HEADER)
        for e in dataset.entities:
            k = e.key
            rows = [(t, 0) for t in e.history]
            if e.test_trip is not None:
                rows.append((e.test_trip, 1))
            for t, is_test in rows:
                w.writerow([k.ticket_id, k.wday, k.dhour, t.yday, *map(_fmt, t.features), is_test])
    finally:
        if owned:
            fh.close()


def records_to_dataset(records: Sequence[RawRecord], meta=None) -> Dataset:
    """Rebuild entities from exported records, trusting the ``is-test`` flags."""
    entities = []
    for key, recs in _group(records).items():
        tests = [r for r in recs if r.is_test]
        if len(tests) > 1:
            raise InvalidValueError(f"entity {key} has {len(tests)} test rows")
        history = tuple(r.trip() for r in recs if not r.is_test)
        entities.append(Entity(key, history, tests[0].trip() if tests else None))
    return Dataset(tuple(entities), meta or {})


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Export the dataset CSV and a ``<name>.meta.json`` provenance sidecar."""
    path = Path(path)
    export_csv(dataset, path)
    meta_path(path).write_text(json.dumps(dict(dataset.meta), indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    parsed = parse_csv(path)
    if parsed.errors:
        first = parsed.errors[0]
        raise InvalidValueError(f"{path}: {len(parsed.errors)} malformed row(s); line {first.line}: {first.message}")
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {"source": path.name}
    return records_to_dataset(parsed.records, meta)


def dataset_to_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    export_csv(dataset, buf)
    return buf.getvalue()

import math

import pytest

from tripneighbors.domain import Coordinate, Dataset, Entity, EntityKey, Trip, entity_length
from tripneighbors.errors import DuplicateEntityError, InvalidValueError
from tripneighbors.ingest import group_entities, load_dataset, parse_csv, save_dataset

from conftest import entity, trip


def test_entity_length_counts_history():
    assert entity_length(entity("a", [0, 1, 2, 3, 4, 5])) == 6
    assert entity_length(entity("a", [0])) == 1


def test_entity_length_sample_tid000003(sample_stream):
    # seven records, the last one held out as the test trip
    ds = group_entities(parse_csv(sample_stream), L=6, policy="exact")
    (e,) = ds.entities
    assert e.key.ticket_id == "tid000003"
    assert entity_length(e) == 6
    assert e.test_trip.yday == 128


@pytest.mark.parametrize("lon", [math.nan, math.inf, -math.inf])
def test_coordinate_rejects_non_finite(lon):
    with pytest.raises(InvalidValueError):
        Coordinate(lon, 48.0)


def test_entity_normalizes_order():
    key = EntityKey("u", 2, 13)
    trips = [trip(1.0, yday=72), trip(2.0, yday=65), trip(3.0, yday=93)]
    assert Entity(key, tuple(trips)) == Entity(key, tuple(sorted(trips, key=lambda t: t.yday)))
    assert [t.yday for t in Entity(key, tuple(trips)).history] == [65, 72, 93]


def test_entity_rejects_duplicate_yday():
    with pytest.raises(InvalidValueError, match="duplicate yday 4"):
        Entity(EntityKey("u", 1, 1), (trip(1.0, yday=4), trip(2.0, yday=4)))


def test_entity_rejects_test_before_history():
    with pytest.raises(InvalidValueError):
        Entity(EntityKey("u", 1, 1), (trip(1.0, yday=4),), trip(2.0, yday=3))


def test_entity_rejects_empty_history():
    with pytest.raises(InvalidValueError):
        Entity(EntityKey("u", 1, 1), ())


@pytest.mark.parametrize("wday,dhour", [(0, 1), (8, 1), (1, -1), (1, 24)])
def test_entity_key_ranges(wday, dhour):
    with pytest.raises(InvalidValueError):
        EntityKey("u", wday, dhour)


def test_entity_key_order():
    keys = [EntityKey("b", 1, 0), EntityKey("a", 2, 0), EntityKey("a", 1, 5), EntityKey("a", 1, 3)]
    assert sorted(keys) == [EntityKey("a", 1, 3), EntityKey("a", 1, 5), EntityKey("a", 2, 0), EntityKey("b", 1, 0)]


def test_dataset_sorted_and_rejects_duplicates():
    a, b = entity("a", [0, 1]), entity("b", [0, 1])
    assert Dataset((b, a)).keys == (a.key, b.key)
    with pytest.raises(DuplicateEntityError) as err:
        Dataset((a, b, entity("a", [5, 6])))
    assert err.value.key == a.key
    assert "a" in str(err.value)


def test_dataset_is_frozen():
    ds = Dataset((entity("a", [0, 1]),), {"source": "x"})
    with pytest.raises(Exception):
        ds.entities = ()
    with pytest.raises(TypeError):
        ds.meta["source"] = "y"


def test_dataset_round_trip(tmp_path):
    ents = (
        Entity(EntityKey("t1", 3, 9), (Trip.from_values(6.1, 48.6, 6.2, 48.7, 3),
                                       Trip.from_values(0.1 + 0.2, 1 / 3, 2 ** 0.5, 48.0, 10)),
               Trip.from_values(6.15, 48.65, 6.17, 48.69, 17)),
        entity("t2", [1.0, 2.0, 3.0]),
    )
    ds = Dataset(ents, {"source": "unit", "L": 2, "nested": {"a": [1, 2]}})
    save_dataset(ds, tmp_path / "d.csv")
    assert load_dataset(tmp_path / "d.csv") == ds

import io

import pytest

from tripneighbors.domain import Coordinate, Entity, EntityKey, Trip

# A small fragment of e-ticket validation records; the id column uses the TickedId spelling.
SAMPLE_CSV = """\
TickedId,w-day,d-hour,y-day,o-longitude,o-latitude,d-longitude,d-latitude
tid000001,2,13,65,6.160129,48.698788,6.178392,48.693237
tid000001,2,13,72,6.162016,48.698792,6.178392,48.693237
tid000001,2,13,93,6.160129,48.698788,6.178392,48.693237
tid000001,2,13,107,6.162016,48.698792,6.178392,48.693237
tid000002,4,12,74,6.152813,48.654213,6.195424,48.69561
tid000002,4,12,81,6.152813,48.654213,6.16601,48.666126
tid000002,4,12,88,6.152813,48.654213,6.195424,48.69561
tid000003,2,8,65,6.177089,48.688473,6.165807,48.682377
tid000003,2,8,72,6.177089,48.688473,6.16719,48.679199
tid000003,2,8,79,6.177089,48.688473,6.165807,48.682377
tid000003,2,8,93,6.177089,48.688473,6.165807,48.682377
tid000003,2,8,114,6.177089,48.688473,6.165807,48.682377
tid000003,2,8,121,6.177089,48.688473,6.165807,48.682377
tid000003,2,8,128,6.177089,48.688473,6.165807,48.682377
"""


@pytest.fixture
def sample_csv(tmp_path):
    path = tmp_path / "sample.csv"
    path.write_text(SAMPLE_CSV)
    return path


@pytest.fixture
def sample_stream():
    return io.StringIO(SAMPLE_CSV)


def trip(olon, olat=0.0, dlon=0.0, dlat=0.0, yday=1):
    return Trip(Coordinate(olon, olat), Coordinate(dlon, dlat), yday)


def entity(name, points, test=None, wday=1, dhour=8):
    """Entity whose i-th trip sits at origin longitude points[i]."""
    history = tuple(trip(p, yday=i + 1) for i, p in enumerate(points))
    test_trip = None if test is None else trip(test, yday=len(points) + 1)
    return Entity(EntityKey(name, wday, dhour), history, test_trip)

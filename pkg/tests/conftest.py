import itertools

import pytest

from tourrec.ingest import CheckIn, PoiRecord, Trajectory, Visit

THEMES = ["museum", "park"]


def make_catalog(n_pois: int, themes=THEMES) -> dict[int, PoiRecord]:
    return {
        p: PoiRecord(p, f"poi{p}", themes[(p - 1) % len(themes)], 51.0 + p * 0.01, -0.1)
        for p in range(1, n_pois + 1)
    }


def make_trajectory(
    user: str,
    pois: list[int],
    seq_id: str = "t1",
    t0: int = 0,
    dwell: int = 600,
    gap: int = 300,
    photos: int = 2,
    city: str = "city",
) -> Trajectory:
    visits = []
    t = t0
    for p in pois:
        visits.append(Visit(poi_id=p, arrival=t, departure=t + dwell, photo_count=photos))
        t += dwell + gap
    return Trajectory(seq_id=seq_id, user_id=user, city=city, visits=tuple(visits))


def make_checkins(user: str, events: list[tuple[int, int]], prefix: str = "ph") -> list[CheckIn]:
    """events: (timestamp, poi_id) pairs."""
    return [
        CheckIn(photo_id=f"{prefix}{i}", user_id=user, timestamp=t, poi_id=p)
        for i, (t, p) in enumerate(events)
    ]


@pytest.fixture
def catalog3():
    return make_catalog(3)


@pytest.fixture
def catalog5():
    return make_catalog(5)


_seq = itertools.count()


def next_seq_id() -> str:
    return f"seq{next(_seq)}"

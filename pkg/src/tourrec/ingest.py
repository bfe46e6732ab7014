"""Check-in parsing, trajectory reconstruction and chronological splitting.

Input files are semicolon-delimited UTF-8:
  check-ins: header ``photoID;userID;dateTaken;poiID`` (dateTaken = UTC seconds)
  POIs:      header ``poiID;poiName;theme;lat;lon``
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_GAP_SECONDS = 8 * 3600  # splits same-day tours from overnight breaks
MIN_DISTINCT_POIS = 3

CHECKIN_HEADER = ["photoID", "userID", "dateTaken", "poiID"]
POI_HEADER = ["poiID", "poiName", "theme", "lat", "lon"]


class IngestError(ValueError):
    """Malformed input file or violated ingest precondition."""


@dataclass(frozen=True)
class CheckIn:
    photo_id: str
    user_id: str
    timestamp: int  # UTC seconds
    poi_id: int


@dataclass(frozen=True)
class PoiRecord:
    poi_id: int
    name: str
    theme: str
    lat: float
    lon: float


@dataclass(frozen=True)
class Visit:
    poi_id: int
    arrival: int
    departure: int
    photo_count: int

    @property
    def duration(self) -> int:
        return self.departure - self.arrival


@dataclass(frozen=True)
class Trajectory:
    seq_id: str
    user_id: str
    city: str
    visits: tuple[Visit, ...]

    @property
    def last_checkin(self) -> int:
        return self.visits[-1].departure

    @property
    def poi_ids(self) -> list[int]:
        return [v.poi_id for v in self.visits]


@dataclass
class DatasetSplit:
    train: list[Trajectory] = field(default_factory=list)
    validation: list[Trajectory] = field(default_factory=list)
    test: list[Trajectory] = field(default_factory=list)


def _read_rows(path, expected_header):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=";")
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, expected header {';'.join(expected_header)}")
        if [h.strip() for h in header] != expected_header:
            missing = [h for h in expected_header if h not in header]
            raise IngestError(
                f"{path}: bad header {header!r}, missing columns {missing or expected_header}"
            )
        yield from enumerate(reader, start=2)  # 1-based file lines, header is line 1


def parse_checkins(path) -> list[CheckIn]:
    """Parse a check-in file, preserving file order. Malformed rows raise."""
    out = []
    for lineno, row in _read_rows(path, CHECKIN_HEADER):
        if len(row) != 4:
            raise IngestError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
        photo_id, user_id, ts_raw, poi_raw = (f.strip() for f in row)
        try:
            ts = int(ts_raw)
        except ValueError:
            raise IngestError(f"{path}: row {lineno}: unparsable dateTaken {ts_raw!r}")
        try:
            poi_id = int(poi_raw)
        except ValueError:
            raise IngestError(f"{path}: row {lineno}: unparsable poiID {poi_raw!r}")
        if ts <= 0:
            raise IngestError(f"{path}: row {lineno}: dateTaken must be positive, got {ts}")
        if poi_id <= 0:
            raise IngestError(f"{path}: row {lineno}: poiID must be positive, got {poi_id}")
        out.append(CheckIn(photo_id, user_id, ts, poi_id))
    return out


def parse_pois(path) -> dict[int, PoiRecord]:
    """Parse a POI catalog file into a poi_id -> PoiRecord map."""
    catalog: dict[int, PoiRecord] = {}
    for lineno, row in _read_rows(path, POI_HEADER):
        if len(row) != 5:
            raise IngestError(f"{path}: row {lineno}: expected 5 fields, got {len(row)}")
        poi_raw, name, theme, lat_raw, lon_raw = (f.strip() for f in row)
        try:
            poi_id = int(poi_raw)
            lat = float(lat_raw)
            lon = float(lon_raw)
        except ValueError as exc:
            raise IngestError(f"{path}: row {lineno}: {exc}")
        if not theme:
            raise IngestError(f"{path}: row {lineno}: empty theme")
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise IngestError(f"{path}: row {lineno}: coordinates out of range ({lat}, {lon})")
        if poi_id in catalog:
            raise IngestError(f"{path}: row {lineno}: duplicate poiID {poi_id}")
        catalog[poi_id] = PoiRecord(poi_id, name, theme, lat, lon)
    return catalog


def reconstruct_trajectories(
    checkins: list[CheckIn],
    pois: dict[int, PoiRecord],
    gap_threshold: int = DEFAULT_GAP_SECONDS,
    city: str = "city",
) -> list[Trajectory]:
    """Rebuild per-user visit sequences from raw check-ins.

    Consecutive check-ins at the same POI collapse into one Visit; a gap
    larger than ``gap_threshold`` starts a new trajectory; trajectories with
    fewer than 3 distinct POIs are dropped.  Deterministic and independent
    of input ordering (check-ins are sorted per user first).
    """
    if gap_threshold <= 0:
        raise IngestError(f"gap_threshold must be positive, got {gap_threshold}")
    unknown = sorted({c.poi_id for c in checkins} - set(pois))
    if unknown:
        raise IngestError(f"check-ins reference unknown poiIDs: {unknown}")

    by_user: dict[str, list[CheckIn]] = {}
    for c in checkins:
        by_user.setdefault(c.user_id, []).append(c)

    trajectories = []
    for user_id in sorted(by_user):
        # photo_id as final tie-break keeps the sort total and order-independent
        stream = sorted(by_user[user_id], key=lambda c: (c.timestamp, c.poi_id, c.photo_id))
        fragments: list[list[CheckIn]] = [[stream[0]]]
        for prev, cur in zip(stream, stream[1:]):
            if cur.timestamp - prev.timestamp > gap_threshold:
                fragments.append([cur])
            else:
                fragments[-1].append(cur)
        for frag in fragments:
            visits: list[Visit] = []
            for c in frag:
                if visits and visits[-1].poi_id == c.poi_id:
                    last = visits[-1]
                    visits[-1] = Visit(last.poi_id, last.arrival, c.timestamp, last.photo_count + 1)
                else:
                    visits.append(Visit(c.poi_id, c.timestamp, c.timestamp, 1))
            if len({v.poi_id for v in visits}) < MIN_DISTINCT_POIS:
                continue
            seq_id = f"{user_id}-{visits[0].arrival}"
            trajectories.append(Trajectory(seq_id, user_id, city, tuple(visits)))
    trajectories.sort(key=lambda t: (t.last_checkin, t.seq_id))
    return trajectories


def split_dataset(
    trajectories: list[Trajectory],
    fractions: tuple[float, float, float] = (0.70, 0.20, 0.10),
) -> DatasetSplit:
    """Chronological train/validation/test split by last check-in time."""
    if not trajectories:
        raise IngestError("cannot split an empty trajectory list")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise IngestError(f"split fractions must sum to 1, got {fractions}")
    ordered = sorted(trajectories, key=lambda t: (t.last_checkin, t.seq_id))
    n = len(ordered)
    n_train = int(fractions[0] * n)
    n_val = int(fractions[1] * n)
    return DatasetSplit(
        train=ordered[:n_train],
        validation=ordered[n_train : n_train + n_val],
        test=ordered[n_train + n_val :],
    )


def trajectory_to_dict(t: Trajectory) -> dict:
    return {
        "seq_id": t.seq_id,
        "user_id": t.user_id,
        "city": t.city,
        "visits": [
            {"poi_id": v.poi_id, "arrival": v.arrival, "departure": v.departure,
             "photo_count": v.photo_count}
            for v in t.visits
        ],
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    visits = tuple(
        Visit(v["poi_id"], v["arrival"], v["departure"], v["photo_count"]) for v in d["visits"]
    )
    return Trajectory(d["seq_id"], d["user_id"], d["city"], visits)


def write_trajectories(trajectories: list[Trajectory], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(json.dumps(trajectory_to_dict(t), sort_keys=True) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"trajectory file not found: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(trajectory_from_dict(json.loads(line)))
    return out

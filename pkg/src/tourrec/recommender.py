"""Itinerary prediction: gated greedy insertion under a time budget.

The engine first picks the reference user whose masked start/end query the
trained model explains best, then repeatedly scores every (insertion
position, unvisited POI) pair with the gate

    score = p_mlm / ((epsilon + sentiment_distance)^beta * (1 + photo_count)^gamma)

and inserts the global best until the next insertion would overshoot the
time budget.  Popularity and first-order Markov baselines share the same
stopping contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary, encode_next_poi_query, encode_prediction_query
from .ingest import PoiRecord, Trajectory, Visit
from .model import MaskedPoiModel, mlm_predict_batch
from .sentiment import EmbeddingStore, poi_sentiment_distance
from .stats import PoiEstimates

EARTH_RADIUS_KM = 6371.0
DEFAULT_SPEED_KMH = 4.0


class RecommenderError(ValueError):
    pass


@dataclass(frozen=True)
class ItineraryQuery:
    city: str
    start_poi: int
    end_poi: int
    time_budget: float  # seconds
    include_travel_time: bool = False
    travel_speed: float = DEFAULT_SPEED_KMH

    def __post_init__(self):
        if self.start_poi == self.end_poi:
            raise RecommenderError("start and end POIs must differ")
        if self.time_budget <= 0:
            raise RecommenderError(f"time budget must be positive, got {self.time_budget}")


@dataclass(frozen=True)
class GateConfig:
    epsilon: float = 0.1
    beta: float = 1.0
    gamma: float = 1.0
    conservative_budget: bool = False  # use the CI upper bound for durations

    def __post_init__(self):
        if self.epsilon <= 0:
            raise RecommenderError(f"epsilon must be positive, got {self.epsilon}")
        if self.beta < 0 or self.gamma < 0:
            raise RecommenderError("beta and gamma must be >= 0")


@dataclass(frozen=True)
class Insertion:
    position: int
    poi_id: int
    mlm_probability: float
    sentiment_distance: float
    photo_count: float
    gate_score: float


@dataclass
class PredictedItinerary:
    pois: list[int]
    insertions: list[Insertion] = field(default_factory=list)
    estimated_time: float = 0.0
    reference_user: str | None = None
    budget_warning: bool = False

    def to_dict(self) -> dict:
        return {
            "pois": self.pois,
            "insertions": [vars(i) for i in self.insertions],
            "estimated_time": self.estimated_time,
            "reference_user": self.reference_user,
            "budget_warning": self.budget_warning,
        }


def travel_time(a: PoiRecord, b: PoiRecord, speed_kmh: float = DEFAULT_SPEED_KMH) -> float:
    """Great-circle walking time in seconds."""
    if speed_kmh <= 0:
        raise RecommenderError(f"travel speed must be positive, got {speed_kmh}")
    if a is None or b is None:
        raise RecommenderError("both POIs need coordinates")
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat, dlon = lat2 - lat1, lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    dist_km = 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))
    return dist_km / speed_kmh * 3600.0


def next_pop_gate(
    p_mlm: float, sentiment_dist: float, photo_count: float, gate: GateConfig
) -> float:
    """Gate score: MLM probability discounted by incoherent comments and
    photo-count popularity bias."""
    return p_mlm / (
        (gate.epsilon + sentiment_dist) ** gate.beta * (1.0 + photo_count) ** gate.gamma
    )


def _pseudo_visit(poi_id: int) -> Visit:
    return Visit(poi_id, 0, 0, 1)


def select_reference_user(
    model: MaskedPoiModel,
    catalog: dict[int, PoiRecord],
    query: ItineraryQuery,
    repeat_user_tokens: bool = False,
) -> str:
    """Training-set user whose masked start/end template scores highest.

    Each user's template is scored by the maximum POI probability at the
    mask; ties break lexicographically by user id.
    """
    vocab = model.vocab
    users = sorted(
        t.split(":", 1)[1] for t in vocab.id_to_token if t.startswith("USER:")
    )
    if not users:
        raise RecommenderError("vocabulary contains no users")
    prefix = [_pseudo_visit(query.start_poi)]
    suffix = [_pseudo_visit(query.end_poi)]
    queries = [
        encode_prediction_query(u, query.city, prefix, suffix, vocab, catalog,
                                model.config.max_len, repeat_user_tokens)
        for u in users
    ]
    probs = mlm_predict_batch(model, queries)
    scores = probs.max(axis=1)
    return users[int(np.argmax(scores))]  # argmax returns the first (lexicographic) max


class _BudgetClock:
    def __init__(self, estimates: PoiEstimates, query: ItineraryQuery, gate: GateConfig):
        self.estimates = estimates
        self.query = query
        self.conservative = gate.conservative_budget

    def estimated_time(self, pois: list[int]) -> float:
        total = sum(
            self.estimates.expected_duration(p).point(self.conservative) for p in pois
        )
        if self.query.include_travel_time:
            cat = self.estimates.catalog
            total += sum(
                travel_time(cat[a], cat[b], self.query.travel_speed)
                for a, b in zip(pois, pois[1:])
            )
        return total


def _finish(itin: PredictedItinerary, clock: _BudgetClock) -> PredictedItinerary:
    itin.estimated_time = clock.estimated_time(itin.pois)
    return itin


def predict_itinerary(
    model: MaskedPoiModel,
    estimates: PoiEstimates,
    store: EmbeddingStore,
    query: ItineraryQuery,
    gate: GateConfig = GateConfig(),
    context_mode: str = "prefix",
    repeat_user_tokens: bool = False,
) -> PredictedItinerary:
    """Greedy gated insertion between fixed endpoints."""
    vocab = model.vocab
    catalog = estimates.catalog
    for p in (query.start_poi, query.end_poi):
        if p not in catalog:
            raise RecommenderError(f"POI {p} not in catalog")
    clock = _BudgetClock(estimates, query, gate)
    itin = PredictedItinerary(pois=[query.start_poi, query.end_poi])
    if clock.estimated_time(itin.pois) > query.time_budget:
        itin.budget_warning = True
        return _finish(itin, clock)

    ref_user = select_reference_user(model, catalog, query, repeat_user_tokens)
    itin.reference_user = ref_user

    # candidates the model can actually score: cataloged POIs with a vocab token
    known_pois = {vocab.poi_of_token(t) for t in vocab.poi_ids}
    candidates = sorted(known_pois & set(catalog))
    poi_row = {vocab.poi_of_token(t): i for i, t in enumerate(vocab.poi_ids)}
    sent_dist = {p: poi_sentiment_distance(store, p) for p in candidates}
    photo_est = {p: estimates.expected_photo_count(p).mean for p in candidates}

    while True:
        open_candidates = [p for p in candidates if p not in itin.pois]
        if not open_candidates:
            break
        positions = list(range(1, len(itin.pois)))
        # flanking POIs only: mirrors the reference-user template the model
        # was probed with, instead of a long unseen suffix after the mask
        if context_mode == "flanking":
            contexts = [([itin.pois[j - 1]], [itin.pois[j]]) for j in positions]
        elif context_mode == "full":
            contexts = [(itin.pois[:j], itin.pois[j:]) for j in positions]
        elif context_mode == "prefix":
            # left context only: mirrors the training samples, where the mask
            # always terminates the sentence
            contexts = [(itin.pois[:j], []) for j in positions]
        else:
            raise RecommenderError(f"unknown context_mode {context_mode!r}")
        queries = [
            encode_next_poi_query(
                ref_user,
                query.city,
                [_pseudo_visit(p) for p in pre],
                vocab,
                catalog,
                model.config.max_len,
            )
            if not post
            else encode_prediction_query(
                ref_user,
                query.city,
                [_pseudo_visit(p) for p in pre],
                [_pseudo_visit(p) for p in post],
                vocab,
                catalog,
                model.config.max_len,
                repeat_user_tokens,
            )
            for pre, post in contexts
        ]
        probs = mlm_predict_batch(model, queries)
        best = None  # (score, poi_id, position, p_mlm)
        for row, j in enumerate(positions):
            for cand in open_candidates:
                p_mlm = float(probs[row, poi_row[cand]])
                score = next_pop_gate(p_mlm, sent_dist[cand], photo_est[cand], gate)
                key = (-score, cand, j)
                if best is None or key < best[0]:
                    best = (key, cand, j, p_mlm, score)
        _, cand, j, p_mlm, score = best
        tentative = itin.pois[:j] + [cand] + itin.pois[j:]
        if clock.estimated_time(tentative) > query.time_budget:
            break  # overshooting candidate is not inserted
        itin.pois = tentative
        itin.insertions.append(
            Insertion(j, cand, p_mlm, sent_dist[cand], photo_est[cand], score)
        )
    return _finish(itin, clock)


def _visit_counts(train: list[Trajectory]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for t in train:
        for v in t.visits:
            counts[v.poi_id] = counts.get(v.poi_id, 0) + 1
    return counts


def popularity_baseline(
    train: list[Trajectory],
    estimates: PoiEstimates,
    query: ItineraryQuery,
    gate: GateConfig = GateConfig(),
) -> PredictedItinerary:
    """Insert globally most-visited POIs before the endpoint until the budget
    is exhausted."""
    clock = _BudgetClock(estimates, query, gate)
    itin = PredictedItinerary(pois=[query.start_poi, query.end_poi])
    if clock.estimated_time(itin.pois) > query.time_budget:
        itin.budget_warning = True
        return _finish(itin, clock)
    counts = _visit_counts(train)
    ranked = sorted(counts, key=lambda p: (-counts[p], p))
    for cand in ranked:
        if cand in itin.pois:
            continue
        tentative = itin.pois[:-1] + [cand, itin.pois[-1]]
        if clock.estimated_time(tentative) > query.time_budget:
            break
        itin.pois = tentative
    return _finish(itin, clock)


def markov_baseline(
    train: list[Trajectory],
    estimates: PoiEstimates,
    query: ItineraryQuery,
    gate: GateConfig = GateConfig(),
) -> PredictedItinerary:
    """First-order transitions with add-one smoothing, greedy extension from
    the start POI; the end POI is forced as the final element."""
    clock = _BudgetClock(estimates, query, gate)
    itin = PredictedItinerary(pois=[query.start_poi, query.end_poi])
    if clock.estimated_time(itin.pois) > query.time_budget:
        itin.budget_warning = True
        return _finish(itin, clock)
    pois = sorted(estimates.catalog)
    trans: dict[int, dict[int, int]] = {p: {q: 1 for q in pois} for p in pois}  # add-one
    for t in train:
        for a, b in zip(t.poi_ids, t.poi_ids[1:]):
            if a in trans and b in trans[a]:
                trans[a][b] += 1
    seq = [query.start_poi]
    while True:
        cur = seq[-1]
        row = trans.get(cur)
        if row is None:
            break
        nxt = None
        for cand in sorted(row, key=lambda q: (-row[q], q)):
            if cand not in seq and cand != query.end_poi:
                nxt = cand
                break
        if nxt is None:
            break
        tentative = seq + [nxt, query.end_poi]
        if clock.estimated_time(tentative) > query.time_budget:
            break
        seq.append(nxt)
    itin.pois = seq + [query.end_poi]
    return _finish(itin, clock)

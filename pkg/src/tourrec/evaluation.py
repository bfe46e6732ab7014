"""Scoring, the epoch-sweep protocol, and synthetic-city generation.

Metric note: the recall/precision denominators follow the source protocol
exactly even though the naming is swapped relative to convention — recall
divides the intersection by the *predicted* set size and precision by the
actual set size.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus, model as model_mod, recommender, sentiment, stats
from .ingest import PoiRecord, Trajectory
from .recommender import GateConfig, ItineraryQuery, PredictedItinerary


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalScores:
    recall: float
    precision: float
    f1: float


@dataclass
class ExperimentReport:
    name: str
    per_trajectory: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    mean_recall: float = 0.0
    mean_precision: float = 0.0
    mean_f1: float = 0.0
    chosen_epoch: int | None = None
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return dict(vars(self))

    def summary_row(self) -> str:
        return (
            f"{self.name};{self.mean_recall:.4f};{self.mean_f1:.4f};"
            f"{self.mean_precision:.4f};{len(self.per_trajectory)};{len(self.skipped)}"
        )


def score(actual: list[int], predicted: list[int]) -> EvalScores:
    """Set-intersection recall/precision/F1 over distinct POI ids."""
    if not actual or not predicted:
        raise EvalError("cannot score an empty sequence")
    s_h, s_p = set(actual), set(predicted)
    inter = len(s_h & s_p)
    recall = inter / len(s_p)
    precision = inter / len(s_h)
    f1 = 0.0 if recall + precision == 0 else 2 * recall * precision / (recall + precision)
    return EvalScores(recall, precision, f1)


def trajectory_to_query(trajectory: Trajectory, **kwargs) -> ItineraryQuery:
    """Endpoints become the query; budget = first-to-last photo time span."""
    visits = trajectory.visits
    budget = visits[-1].departure - visits[0].arrival
    return ItineraryQuery(
        city=trajectory.city,
        start_poi=visits[0].poi_id,
        end_poi=visits[-1].poi_id,
        time_budget=float(budget),
        **kwargs,
    )


def evaluate_with(predict_fn, testset: list[Trajectory], name: str) -> ExperimentReport:
    """Run ``predict_fn(query)`` on every test trajectory and aggregate.

    Trajectories whose endpoints coincide violate the query invariant and
    are skipped (but counted).
    """
    t0 = time.perf_counter()
    report = ExperimentReport(name=name)
    recalls, precisions, f1s = [], [], []
    for traj in sorted(testset, key=lambda t: t.seq_id):
        if traj.visits[0].poi_id == traj.visits[-1].poi_id:
            report.skipped.append(traj.seq_id)
            continue
        query = trajectory_to_query(traj)
        itin: PredictedItinerary = predict_fn(query)
        sc = score(traj.poi_ids, itin.pois)
        report.per_trajectory.append(
            {"seq_id": traj.seq_id, "recall": sc.recall, "precision": sc.precision,
             "f1": sc.f1, "predicted": itin.pois, "actual": traj.poi_ids}
        )
        recalls.append(sc.recall)
        precisions.append(sc.precision)
        f1s.append(sc.f1)
    if f1s:
        report.mean_recall = float(np.mean(recalls))
        report.mean_precision = float(np.mean(precisions))
        report.mean_f1 = float(np.mean(f1s))
    report.wall_clock = time.perf_counter() - t0
    return report


def evaluate(
    model: model_mod.MaskedPoiModel,
    estimates: stats.PoiEstimates,
    store: sentiment.EmbeddingStore,
    testset: list[Trajectory],
    gate: GateConfig = GateConfig(),
    name: str = "sbtrec",
) -> ExperimentReport:
    report = evaluate_with(
        lambda q: recommender.predict_itinerary(model, estimates, store, q, gate),
        testset,
        name,
    )
    report.config = {"gate": vars(gate), "model": vars(model.config)}
    return report


def evaluate_baseline(
    kind: str,
    train: list[Trajectory],
    estimates: stats.PoiEstimates,
    testset: list[Trajectory],
    gate: GateConfig = GateConfig(),
) -> ExperimentReport:
    fns = {
        "popularity": recommender.popularity_baseline,
        "markov": recommender.markov_baseline,
    }
    if kind not in fns:
        raise EvalError(f"unknown baseline {kind!r}")
    return evaluate_with(lambda q: fns[kind](train, estimates, q, gate), testset, kind)


def sweep_epochs(
    train: list[Trajectory],
    validation: list[Trajectory],
    catalog: dict[int, PoiRecord],
    store: sentiment.EmbeddingStore,
    epoch_list: list[int],
    config: model_mod.ModelConfig,
    gate: GateConfig = GateConfig(),
) -> tuple[int, dict[int, float]]:
    """Train incrementally, evaluate on validation after each listed epoch
    count; returns (argmax-F1 epoch with ties to the smaller, F1 by epoch)."""
    if not epoch_list or sorted(epoch_list) != epoch_list or epoch_list[0] < 1:
        raise EvalError(f"epoch list must be ascending and >= 1, got {epoch_list}")
    vocab = corpus.build_vocabulary(train, catalog)
    samples = [
        s for t in train
        for s in corpus.generate_training_samples(t, vocab, catalog, config.max_len)
    ]
    estimates = stats.PoiEstimates(train, catalog, seed=config.seed)
    net = model_mod.init_model(config, vocab)
    f1_by_epoch: dict[int, float] = {}
    done = 0
    optimizer = None
    for target in epoch_list:
        _, optimizer = model_mod.train(
            net, samples, target - done, config, start_epoch=done, optimizer=optimizer
        )
        done = target
        report = evaluate(net, estimates, store, validation, gate)
        f1_by_epoch[target] = report.mean_f1
    best = min(f1_by_epoch, key=lambda e: (-f1_by_epoch[e], e))
    return best, f1_by_epoch


def generate_synthetic_city(
    out_dir,
    n_pois: int = 20,
    n_users: int = 50,
    n_trajectories: int = 300,
    n_themes: int = 4,
    preference_sharpness: float = 0.9,
    polarity_mix: float = 0.5,
    seed: int = 42,
    city: str = "synthville",
    embedding_dim: int = 384,
    comments_per_poi: int = 10,
) -> dict[str, Path]:
    """Write a deterministic synthetic dataset: check-ins, POI catalog, and a
    comment-embedding file.

    Users carry a sharply preferred pair of themes (``preference_sharpness``
    is the probability mass split across the pair), trajectories are
    preference-weighted walks with
    plausible dwell times and photo counts, and a ``polarity_mix`` fraction
    of POIs gets tightly clustered (coherent) comment embeddings.
    """
    if n_pois < 3 or n_themes < 1 or n_users < 1:
        raise EvalError("need at least 3 POIs, 1 theme and 1 user")
    if not 0.0 <= preference_sharpness <= 1.0 or not 0.0 <= polarity_mix <= 1.0:
        raise EvalError("preference_sharpness and polarity_mix must be in [0,1]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    themes = [f"theme{k}" for k in range(n_themes)]
    poi_ids = list(range(1, n_pois + 1))
    poi_theme = {p: themes[(p - 1) % n_themes] for p in poi_ids}
    lat0, lon0 = -31.95, 115.86
    poi_lat = {p: lat0 + rng.uniform(-0.05, 0.05) for p in poi_ids}
    poi_lon = {p: lon0 + rng.uniform(-0.05, 0.05) for p in poi_ids}
    dwell_mean = {p: rng.uniform(900, 3600) for p in poi_ids}
    # a few hotspots accumulate far more photos than the rest
    photo_rate = {p: (rng.uniform(6, 10) if rng.random() < 0.2 else rng.uniform(0.5, 2)) for p in poi_ids}

    pois_path = out_dir / "pois.csv"
    with pois_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("poiID;poiName;theme;lat;lon\n")
        for p in poi_ids:
            fh.write(f"{p};poi{p};{poi_theme[p]};{poi_lat[p]:.6f};{poi_lon[p]:.6f}\n")

    # each user prefers a pair of themes (a persona); the pair is what a
    # first-order chain cannot recover from the current POI alone
    if n_themes >= 2:
        fav_themes = {
            u: tuple(sorted(rng.choice(n_themes, size=2, replace=False))) for u in range(n_users)
        }
    else:
        fav_themes = {u: (0, 0) for u in range(n_users)}
    rows = []
    photo_counter = 0
    base_time = 1_600_000_000
    for ti in range(n_trajectories):
        # round-robin keeps users equally represented, so no user embedding
        # dominates purely by data volume
        u = ti % n_users
        user_id = f"user{u:03d}"
        weights = np.array(
            [
                preference_sharpness / 2 + (1 - preference_sharpness) / n_themes
                if themes.index(poi_theme[p]) in fav_themes[u]
                else (1 - preference_sharpness) / n_themes
                for p in poi_ids
            ]
        )
        weights /= weights.sum()
        length = int(rng.integers(3, 7))
        chosen = rng.choice(poi_ids, size=min(length, n_pois), replace=False, p=weights)
        t = base_time + ti * 3 * 86400 + int(rng.integers(0, 7200))
        for p in chosen:
            p = int(p)
            dwell = max(0.0, rng.normal(dwell_mean[p], 0.15 * dwell_mean[p]))
            # at least two photos per visit so the reconstructed duration
            # (last minus first photo) reflects the dwell time
            n_photos = 2 + int(rng.poisson(photo_rate[p]))
            if n_photos == 1:
                times = [t]
            else:
                times = [t + round(k * dwell / (n_photos - 1)) for k in range(n_photos)]
            for ts in times:
                photo_counter += 1
                rows.append((int(ts), f"p{photo_counter:07d}", user_id, p))
            t = int(times[-1]) + int(rng.integers(300, 1800))  # walk to the next stop

    rows.sort(key=lambda r: (r[0], r[1]))
    checkins_path = out_dir / "checkins.csv"
    with checkins_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("photoID;userID;dateTaken;poiID\n")
        for ts, photo_id, user_id, p in rows:
            fh.write(f"{photo_id};{user_id};{ts};{p}\n")

    store = sentiment.EmbeddingStore(embedding_dim)
    coherent = {p: rng.random() < polarity_mix for p in poi_ids}
    for p in poi_ids:
        center = rng.normal(size=embedding_dim)
        center /= np.linalg.norm(center)
        spread = 0.05 if coherent[p] else 1.0
        for _ in range(comments_per_poi):
            vec = center + spread * rng.normal(size=embedding_dim)
            store.add(p, vec.astype(np.float32))
    pemb_path = out_dir / "comments.pemb"
    sentiment.save_embeddings(store, pemb_path)

    meta_path = out_dir / "meta.json"
    meta = {
        "seed": seed, "city": city, "n_pois": n_pois, "n_users": n_users,
        "n_trajectories": n_trajectories, "n_themes": n_themes,
        "preference_sharpness": preference_sharpness, "polarity_mix": polarity_mix,
        "coherent_pois": sorted(p for p in poi_ids if coherent[p]),
    }
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return {"checkins": checkins_path, "pois": pois_path, "embeddings": pemb_path,
            "meta": meta_path}

"""Acceptance suite: one test per top-level criterion, one PASS line each.

The heavyweight fixtures (synthetic city, trained model) are shared at module
scope so the suite stays well inside the stated time limits.
"""

import time
from pathlib import Path

import numpy as np
import pytest
import torch

from tourrec import corpus, evaluation, ingest, model, recommender, sentiment, stats
from tourrec.model import ModelConfig
from tourrec.recommender import GateConfig, ItineraryQuery

from conftest import make_catalog, make_trajectory
from test_eval import SCORE_CASES

FIXTURES = Path(__file__).parent / "fixtures"


def report(name, detail=""):
    print(f"\nACCEPTANCE {name}: PASS {detail}")


# --- shared synthetic-city pipeline -----------------------------------------


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    """Full pipeline on the seeded benchmark city, with wall-clock timing."""
    out = tmp_path_factory.mktemp("city42")
    t0 = time.perf_counter()
    paths = evaluation.generate_synthetic_city(
        out, n_pois=20, n_users=50, n_trajectories=300, n_themes=4,
        preference_sharpness=0.9, seed=42,
    )
    checkins = ingest.parse_checkins(paths["checkins"])
    catalog = ingest.parse_pois(paths["pois"])
    trajectories = ingest.reconstruct_trajectories(checkins, catalog, city="synthville")
    split = ingest.split_dataset(trajectories)
    vocab = corpus.build_vocabulary(split.train, catalog)
    samples = [
        s for t in split.train for s in corpus.generate_training_samples(t, vocab, catalog)
    ]
    config = ModelConfig(seed=42)
    net = model.init_model(config, vocab)
    model.train(net, samples, 10, config)
    estimates = stats.PoiEstimates(split.train, catalog, seed=42)
    store = sentiment.load_embeddings(paths["embeddings"])

    sbt = evaluation.evaluate(net, estimates, store, split.test)
    pop = evaluation.evaluate_baseline("popularity", split.train, estimates, split.test)
    mkv = evaluation.evaluate_baseline("markov", split.train, estimates, split.test)
    elapsed = time.perf_counter() - t0
    return {
        "catalog": catalog, "split": split, "vocab": vocab, "model": net,
        "estimates": estimates, "store": store, "elapsed": elapsed,
        "sbt": sbt, "pop": pop, "mkv": mkv,
    }


# --- criteria ----------------------------------------------------------------


def test_metric_oracle():
    for actual, predicted, recall, precision, f1 in SCORE_CASES:
        sc = evaluation.score(actual, predicted)
        assert abs(sc.recall - recall) <= 1e-12
        assert abs(sc.precision - precision) <= 1e-12
        assert abs(sc.f1 - f1) <= 1e-12
    report("metric-oracle", f"({len(SCORE_CASES)} hand-computed cases, tol 1e-12)")


def test_corpus_count_law():
    for n in range(3, 11):
        catalog = make_catalog(n)
        t = make_trajectory("u1", list(range(1, n + 1)))
        vocab = corpus.build_vocabulary([t], catalog)
        got = len(corpus.generate_training_samples(t, vocab, catalog))
        assert got == n * (n - 1) // 2, f"n={n}: {got} samples"
    report("corpus-count-law", "(n in 3..10 -> n(n-1)/2)")


def test_bootstrap_coverage():
    t0 = time.perf_counter()
    mu, sigma, n, trials = 3.0, 2.0, 30, 1000
    hits = 0
    for trial in range(trials):
        data = np.random.default_rng(10_000 + trial).normal(mu, sigma, size=n).tolist()
        ci = stats.bootstrap_ci(data, level=0.90, resamples=1000, seed=trial)
        hits += ci.lo <= mu <= ci.hi
    elapsed = time.perf_counter() - t0
    coverage = hits / trials
    assert 0.87 <= coverage <= 0.93, f"coverage {coverage}"
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    report("bootstrap-coverage", f"(coverage {coverage:.3f} in [0.87, 0.93], {elapsed:.1f}s)")


def test_gradient_check():
    catalog = make_catalog(3)
    trajs = [make_trajectory("u1", [1, 2, 3], seq_id=f"t{i}") for i in range(3)]
    vocab = corpus.build_vocabulary(trajs, catalog)
    samples = [s for t in trajs for s in corpus.generate_training_samples(t, vocab, catalog)][:5]
    assert len(samples) == 5
    cfg = ModelConfig(d_model=8, n_layers=1, n_heads=2, ffn_dim=16, dropout=0.0, seed=0)
    net = model.init_model(cfg, vocab).double()
    net.eval()

    loss = model.batch_loss(net, samples)
    loss.backward()
    h = 1e-4
    worst = 0.0
    for name, p in net.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        fd = torch.empty_like(analytic)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = model.batch_loss(net, samples).item()
            flat[i] = orig - h
            down = model.batch_loss(net, samples).item()
            flat[i] = orig
            fd[i] = (up - down) / (2 * h)
        denom = max(analytic.norm().item(), fd.norm().item(), 1e-12)
        rel = (analytic - fd).norm().item() / denom
        worst = max(worst, rel)
        assert rel < 1e-4, f"{name}: relative error {rel}"
    report("gradient-check", f"(worst tensor relative error {worst:.2e} < 1e-4)")


def test_convergence_and_frequency_oracle():
    catalog = make_catalog(3)
    trajs = [
        make_trajectory("u1", [1, 2, 3], seq_id=f"t{i}", t0=i * 10_000) for i in range(50)
    ]
    vocab = corpus.build_vocabulary(trajs, catalog)
    samples = [s for t in trajs for s in corpus.generate_training_samples(t, vocab, catalog)]
    cfg = ModelConfig(d_model=16, n_layers=1, n_heads=2, ffn_dim=32, dropout=0.0, seed=1)
    net = model.init_model(cfg, vocab)
    losses, _ = model.train(net, samples, 5, cfg)
    assert losses[4] < 0.8 * losses[0], f"epoch-5 loss {losses[4]} vs epoch-1 {losses[0]}"

    # empirical-frequency oracle: most common label for each distinct context
    from collections import Counter

    by_context: dict[tuple, Counter] = {}
    for s in samples:
        by_context.setdefault(s.input_ids, Counter())[s.label_id] += 1
    oracle_hits = sum(
        by_context[s.input_ids].most_common(1)[0][0] == s.label_id for s in samples
    )
    probs = model.mlm_predict_batch(net, [s.input_ids for s in samples])
    poi_token_ids = np.array(vocab.poi_ids)
    model_hits = sum(
        int(poi_token_ids[int(np.argmax(row))] == s.label_id)
        for row, s in zip(probs, samples)
    )
    oracle_acc = oracle_hits / len(samples)
    model_acc = model_hits / len(samples)
    assert model_acc >= oracle_acc - 0.01, f"model {model_acc} vs oracle {oracle_acc}"
    report(
        "convergence",
        f"(loss {losses[0]:.3f}->{losses[4]:.3f}, model acc {model_acc:.3f} "
        f">= oracle {oracle_acc:.3f} - 0.01)",
    )


def test_end_to_end_benchmark(city):
    sbt, pop, mkv = city["sbt"].mean_f1, city["pop"].mean_f1, city["mkv"].mean_f1
    assert city["elapsed"] < 600.0, f"pipeline took {city['elapsed']:.0f}s"
    assert sbt >= pop + 0.05, f"engine {sbt:.4f} vs popularity {pop:.4f}"
    assert sbt >= mkv, f"engine {sbt:.4f} vs markov {mkv:.4f}"
    report(
        "end-to-end",
        f"(F1 {sbt:.4f} >= popularity {pop:.4f}+0.05 and >= markov {mkv:.4f}, "
        f"{city['elapsed']:.0f}s < 600s)",
    )


def test_itinerary_fuzz(city):
    net, estimates, store = city["model"], city["estimates"], city["store"]
    poi_ids = sorted(city["catalog"])
    rng = np.random.default_rng(777)
    violations = 0
    for _ in range(1000):
        start, end = rng.choice(poi_ids, size=2, replace=False)
        budget = float(rng.uniform(600, 8 * 3600))
        q = ItineraryQuery(city="synthville", start_poi=int(start), end_poi=int(end),
                           time_budget=budget)
        itin = recommender.predict_itinerary(net, estimates, store, q)
        ok = (
            len(itin.pois) == len(set(itin.pois))
            and itin.pois[0] == q.start_poi
            and itin.pois[-1] == q.end_poi
        )
        # estimated time before the final insertion never exceeds the budget
        if itin.insertions and not itin.budget_warning:
            last = itin.insertions[-1]
            without_last = [p for p in itin.pois if p != last.poi_id]
            pre_final = sum(estimates.expected_duration(p).point() for p in without_last)
            ok = ok and pre_final <= budget
        violations += not ok
    assert violations == 0
    report("itinerary-fuzz", "(1000 queries, 0 violations)")


def test_gate_ablation_direction(city):
    net, estimates, store = city["model"], city["estimates"], city["store"]
    catalog, vocab = city["catalog"], city["vocab"]
    candidates = sorted(catalog)
    photo_means = {p: estimates.expected_photo_count(p).mean for p in candidates}
    hotspot = max(candidates, key=lambda p: photo_means[p])
    dist = {p: sentiment.poi_sentiment_distance(store, p) for p in candidates}

    def rank_of_hotspot(gate):
        ranks = []
        for traj in city["split"].test:
            q = corpus.encode_next_poi_query(
                traj.user_id, "synthville", [traj.visits[0]], vocab, catalog
            )
            probs = model.poi_distribution(net, q)
            scores = {
                p: recommender.next_pop_gate(probs[p], dist[p], photo_means[p], gate)
                for p in candidates
            }
            ranks.append(1 + sum(scores[p] > scores[hotspot] for p in candidates))
        return float(np.mean(ranks))

    rank_off = rank_of_hotspot(GateConfig(gamma=0.0))
    rank_on = rank_of_hotspot(GateConfig(gamma=1.0))
    assert rank_on > rank_off, f"gamma=1 rank {rank_on} vs gamma=0 rank {rank_off}"
    report(
        "gate-ablation",
        f"(most-photographed POI mean rank {rank_off:.2f} -> {rank_on:.2f} with gamma=1)",
    )


def test_checkpoint_round_trip(city, tmp_path):
    net, vocab, catalog = city["model"], city["vocab"], city["catalog"]
    path = tmp_path / "city.sbtc"
    model.save_checkpoint(net, path, epochs_completed=10)
    loaded, _meta = model.load_checkpoint(path, expected_vocab=vocab)

    rng = np.random.default_rng(123)
    poi_ids = sorted(catalog)
    users = sorted({t.user_id for t in city["split"].train})
    queries = []
    for _ in range(100):
        pois = rng.choice(poi_ids, size=rng.integers(1, 6), replace=False)
        visits = make_trajectory("u", [int(p) for p in pois]).visits
        queries.append(
            corpus.encode_next_poi_query(
                str(rng.choice(users)), "synthville", list(visits), vocab, catalog
            )
        )
    a = model.mlm_predict_batch(net, queries)
    b = model.mlm_predict_batch(loaded, queries)
    assert np.array_equal(a, b)  # bit-identical
    report("checkpoint-round-trip", "(100 random queries, bit-identical distributions)")


def test_secondary_stub_fixture_loads():
    pemb = FIXTURES / "stub_comments.pemb"
    assert pemb.exists(), "committed stub embedding fixture missing"
    store = sentiment.load_embeddings(pemb)
    assert store.dim == 384
    assert store.poi_ids()
    assert all(store.n_comments(p) <= 20 for p in store.poi_ids())
    for p in store.poi_ids():
        for v in store.vectors(p):
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)
    report("secondary-stub-fixture", f"(loads cleanly, {len(store.poi_ids())} POIs, dim 384)")

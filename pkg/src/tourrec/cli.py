"""Command-line pipeline: ingest, train, sweep, predict, evaluate, synth.

Machine-readable output (one JSON document per command) goes to stdout,
logs to stderr.  Exit codes: 0 success, 2 usage/input error, 3 internal
invariant violation.  Seed priority: flag > config file > SBT_SEED env >
default 42.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys
from pathlib import Path

import click

from . import corpus, evaluation, ingest, model as model_mod, recommender, sentiment, stats

DOMAIN_ERRORS = (
    ingest.IngestError,
    corpus.CorpusError,
    stats.StatsError,
    sentiment.EmbeddingError,
    model_mod.ModelError,
    recommender.RecommenderError,
    evaluation.EvalError,
    OSError,
)


def log(msg: str) -> None:
    click.echo(msg, err=True)


def emit(doc: dict) -> None:
    click.echo(json.dumps(doc, sort_keys=True))


def pipeline_command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except DOMAIN_ERRORS as exc:
            log(f"error: {exc}")
            sys.exit(2)
        except Exception as exc:  # invariant violation / bug
            log(f"internal error: {exc}")
            sys.exit(3)

    return wrapper


def read_config_file(path) -> dict[str, str]:
    """UTF-8 ``key = value`` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ingest.IngestError(f"config file {path}: bad line {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def resolve_seed(flag_seed, config_values: dict[str, str]) -> int:
    if flag_seed is not None:
        return flag_seed
    if "seed" in config_values:
        return int(config_values["seed"])
    env = os.environ.get("SBT_SEED")
    if env is not None:
        return int(env)
    return 42


def build_model_config(config_values: dict[str, str], seed: int) -> model_mod.ModelConfig:
    cfg = model_mod.ModelConfig(seed=seed)
    for f in dataclasses.fields(model_mod.ModelConfig):
        if f.name in config_values and f.name != "seed":
            setattr(cfg, f.name, type(getattr(cfg, f.name))(config_values[f.name]))
    cfg.validate()
    return cfg


@click.group()
def main():
    """Tour-itinerary recommendation pipeline."""


@main.command("ingest")
@click.option("--checkins", required=True, type=click.Path())
@click.option("--pois", required=True, type=click.Path())
@click.option("--gap-hours", default=8.0, show_default=True)
@click.option("--city", default="city", show_default=True)
@click.option("--out", required=True, type=click.Path())
@pipeline_command
def cmd_ingest(checkins, pois, gap_hours, city, out):
    """Reconstruct trajectories from check-ins and write them as JSON lines."""
    if gap_hours <= 0:
        raise ingest.IngestError(f"--gap-hours must be positive, got {gap_hours}")
    records = ingest.parse_checkins(checkins)
    catalog = ingest.parse_pois(pois)
    trajectories = ingest.reconstruct_trajectories(
        records, catalog, gap_threshold=int(gap_hours * 3600), city=city
    )
    ingest.write_trajectories(trajectories, out)
    users = {t.user_id for t in trajectories}
    emit({
        "checkins": len(records),
        "users": len(users),
        "trajectories": len(trajectories),
        "out": str(out),
    })


@main.command("train")
@click.option("--trajectories", "traj_path", required=True, type=click.Path())
@click.option("--pois", required=True, type=click.Path())
@click.option("--epochs", default=10, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--checkpoint-out", required=True, type=click.Path())
@pipeline_command
def cmd_train(traj_path, pois, epochs, config_path, seed, checkpoint_out):
    """Train the masked-POI model and write a checkpoint."""
    config_values = read_config_file(config_path) if config_path else {}
    cfg = build_model_config(config_values, resolve_seed(seed, config_values))
    train_set = ingest.read_trajectories(traj_path)
    catalog = ingest.parse_pois(pois)
    vocab = corpus.build_vocabulary(train_set, catalog)
    samples = [
        s for t in train_set
        for s in corpus.generate_training_samples(t, vocab, catalog, cfg.max_len)
    ]
    log(f"training on {len(samples)} samples, vocab {len(vocab)}, {epochs} epochs")
    net = model_mod.init_model(cfg, vocab)
    losses, _ = model_mod.train(net, samples, epochs, cfg)
    model_mod.save_checkpoint(net, checkpoint_out, epochs_completed=epochs,
                              final_loss=losses[-1])
    emit({"checkpoint": str(checkpoint_out), "loss_history": losses,
          "samples": len(samples), "vocab_size": len(vocab)})


@main.command("sweep")
@click.option("--train", "train_path", required=True, type=click.Path())
@click.option("--val", "val_path", required=True, type=click.Path())
@click.option("--pois", required=True, type=click.Path())
@click.option("--embeddings", required=True, type=click.Path())
@click.option("--epoch-list", default="1,5,10", show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@pipeline_command
def cmd_sweep(train_path, val_path, pois, embeddings, epoch_list, config_path, seed):
    """Epoch sweep: pick the epoch count with the best validation F1."""
    config_values = read_config_file(config_path) if config_path else {}
    cfg = build_model_config(config_values, resolve_seed(seed, config_values))
    epochs = [int(e) for e in epoch_list.split(",") if e.strip()]
    train_set = ingest.read_trajectories(train_path)
    val_set = ingest.read_trajectories(val_path)
    catalog = ingest.parse_pois(pois)
    store = sentiment.load_embeddings(embeddings)
    best, by_epoch = evaluation.sweep_epochs(train_set, val_set, catalog, store, epochs, cfg)
    emit({"best_epoch": best, "f1_by_epoch": {str(k): v for k, v in by_epoch.items()}})


def _load_prediction_context(checkpoint, pois, traj_path, embeddings, seed):
    net, _meta = model_mod.load_checkpoint(checkpoint)
    catalog = ingest.parse_pois(pois)
    train_set = ingest.read_trajectories(traj_path)
    estimates = stats.PoiEstimates(train_set, catalog, seed=seed)
    store = sentiment.load_embeddings(embeddings)
    return net, catalog, train_set, estimates, store


@main.command("predict")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--pois", required=True, type=click.Path())
@click.option("--trajectories", "traj_path", required=True, type=click.Path(),
              help="Training trajectories (JSONL) for duration/photo estimates.")
@click.option("--embeddings", required=True, type=click.Path())
@click.option("--city", default="city", show_default=True)
@click.option("--start", required=True, type=int)
@click.option("--end", required=True, type=int)
@click.option("--budget-min", required=True, type=float)
@click.option("--gate-epsilon", default=0.1, show_default=True)
@click.option("--gate-beta", default=1.0, show_default=True)
@click.option("--gate-gamma", default=1.0, show_default=True)
@click.option("--travel-time", is_flag=True, default=False)
@click.option("--seed", type=int, default=None)
@pipeline_command
def cmd_predict(checkpoint, pois, traj_path, embeddings, city, start, end,
                budget_min, gate_epsilon, gate_beta, gate_gamma, travel_time, seed):
    """Predict one itinerary and print it as JSON."""
    seed = resolve_seed(seed, {})
    net, catalog, _train, estimates, store = _load_prediction_context(
        checkpoint, pois, traj_path, embeddings, seed
    )
    query = recommender.ItineraryQuery(
        city=city, start_poi=start, end_poi=end, time_budget=budget_min * 60.0,
        include_travel_time=travel_time,
    )
    gate = recommender.GateConfig(epsilon=gate_epsilon, beta=gate_beta, gamma=gate_gamma)
    itin = recommender.predict_itinerary(net, estimates, store, query, gate)
    doc = itin.to_dict()
    doc["query"] = vars(query)
    emit(doc)


@main.command("evaluate")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--pois", required=True, type=click.Path())
@click.option("--train", "train_path", required=True, type=click.Path())
@click.option("--test", "test_path", required=True, type=click.Path())
@click.option("--embeddings", required=True, type=click.Path())
@click.option("--baselines", is_flag=True, default=False)
@click.option("--gate-beta", default=1.0, show_default=True)
@click.option("--gate-gamma", default=1.0, show_default=True)
@click.option("--seed", type=int, default=None)
@pipeline_command
def cmd_evaluate(checkpoint, pois, train_path, test_path, embeddings, baselines,
                 gate_beta, gate_gamma, seed):
    """Score predictions against held-out trajectories."""
    seed = resolve_seed(seed, {})
    net, catalog, train_set, estimates, store = _load_prediction_context(
        checkpoint, pois, train_path, embeddings, seed
    )
    test_set = ingest.read_trajectories(test_path)
    gate = recommender.GateConfig(beta=gate_beta, gamma=gate_gamma)
    reports = [evaluation.evaluate(net, estimates, store, test_set, gate)]
    if baselines:
        for kind in ("popularity", "markov"):
            reports.append(evaluation.evaluate_baseline(kind, train_set, estimates,
                                                        test_set, gate))
    emit({
        "reports": [r.to_dict() for r in reports],
        "summary": [r.summary_row() for r in reports],
    })


@main.command("synth")
@click.option("--out", required=True, type=click.Path())
@click.option("--n-pois", default=20, show_default=True)
@click.option("--n-users", default=50, show_default=True)
@click.option("--n-trajectories", default=300, show_default=True)
@click.option("--n-themes", default=4, show_default=True)
@click.option("--preference-sharpness", default=0.9, show_default=True)
@click.option("--polarity-mix", default=0.5, show_default=True)
@click.option("--seed", type=int, default=None)
@pipeline_command
def cmd_synth(out, n_pois, n_users, n_trajectories, n_themes, preference_sharpness,
              polarity_mix, seed):
    """Generate a deterministic synthetic city dataset."""
    seed = resolve_seed(seed, {})
    paths = evaluation.generate_synthetic_city(
        out, n_pois=n_pois, n_users=n_users, n_trajectories=n_trajectories,
        n_themes=n_themes, preference_sharpness=preference_sharpness,
        polarity_mix=polarity_mix, seed=seed,
    )
    emit({k: str(v) for k, v in paths.items()})


if __name__ == "__main__":
    main()

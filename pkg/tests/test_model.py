import numpy as np
import pytest
import torch

from tourrec import corpus, model
from tourrec.corpus import MASK, SEP
from tourrec.model import ModelConfig, ModelError

from conftest import make_catalog, make_trajectory

TINY = ModelConfig(d_model=16, n_layers=1, n_heads=2, ffn_dim=32, dropout=0.0, seed=0)


@pytest.fixture(scope="module")
def toy():
    """One-rule corpus: B(=2) always follows A(=1); C(=3) always follows B."""
    cat = make_catalog(3)
    trajs = [
        make_trajectory("u1", [1, 2, 3], seq_id=f"t{i}", t0=i * 10_000) for i in range(20)
    ]
    vocab = corpus.build_vocabulary(trajs, cat)
    samples = [s for t in trajs for s in corpus.generate_training_samples(t, vocab, cat)]
    return cat, trajs, vocab, samples


class TestInit:
    def test_determinism(self, toy):
        _, _, vocab, _ = toy
        a = model.init_model(TINY, vocab)
        b = model.init_model(TINY, vocab)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_head_divisibility(self, toy):
        _, _, vocab, _ = toy
        with pytest.raises(ModelError):
            model.init_model(ModelConfig(d_model=64, n_heads=3), vocab)

    def test_embedding_shape(self, toy):
        _, _, vocab, _ = toy
        net = model.init_model(ModelConfig(d_model=64, n_heads=4), vocab)
        assert net.token_emb.weight.shape == (len(vocab), 64)


class TestTrain:
    def test_loss_decreases_on_one_rule_corpus(self, toy):
        _, _, vocab, samples = toy
        net = model.init_model(TINY, vocab)
        losses, _ = model.train(net, samples, 5, TINY)
        assert losses[-1] < losses[0]

    def test_epochs_zero_rejected(self, toy):
        _, _, vocab, samples = toy
        net = model.init_model(TINY, vocab)
        with pytest.raises(ModelError):
            model.train(net, samples, 0, TINY)

    def test_empty_samples_rejected(self, toy):
        _, _, vocab, _ = toy
        net = model.init_model(TINY, vocab)
        with pytest.raises(ModelError):
            model.train(net, [], 1, TINY)

    def test_loss_history_determinism(self, toy):
        _, _, vocab, samples = toy
        l1, _ = model.train(model.init_model(TINY, vocab), samples, 3, TINY)
        l2, _ = model.train(model.init_model(TINY, vocab), samples, 3, TINY)
        assert l1 == l2

    def test_incremental_equals_monolithic(self, toy):
        _, _, vocab, samples = toy
        mono = model.init_model(TINY, vocab)
        mono_losses, _ = model.train(mono, samples, 4, TINY)

        inc = model.init_model(TINY, vocab)
        l_a, opt = model.train(inc, samples, 2, TINY)
        l_b, _ = model.train(inc, samples, 2, TINY, start_epoch=2, optimizer=opt)
        assert l_a + l_b == mono_losses
        for pa, pb in zip(mono.parameters(), inc.parameters()):
            assert torch.equal(pa, pb)


class TestPredict:
    def query_after(self, vocab, cat, pois):
        t = make_trajectory("u1", pois)
        return corpus.encode_next_poi_query("u1", "city", list(t.visits), vocab, cat)

    def test_untrained_distribution_sums_to_one(self, toy):
        cat, _, vocab, _ = toy
        net = model.init_model(TINY, vocab)
        probs = model.mlm_predict(net, self.query_after(vocab, cat, [1]))
        assert probs.shape == (len(vocab.poi_ids),)
        assert probs.sum() == pytest.approx(1.0, abs=1e-5)

    def test_learned_rule(self, toy):
        cat, _, vocab, samples = toy
        net = model.init_model(TINY, vocab)
        model.train(net, samples, 10, TINY)
        dist = model.poi_distribution(net, self.query_after(vocab, cat, [1]))
        assert max(dist, key=dist.get) == 2  # B always follows A

    def test_query_without_mask_rejected(self, toy):
        cat, _, vocab, _ = toy
        net = model.init_model(TINY, vocab)
        q = tuple(t for t in self.query_after(vocab, cat, [1]) if t != MASK)
        with pytest.raises(ModelError):
            model.mlm_predict(net, q)

    def test_only_poi_tokens_get_probability(self, toy):
        cat, _, vocab, _ = toy
        net = model.init_model(TINY, vocab)
        dist = model.poi_distribution(net, self.query_after(vocab, cat, [1]))
        assert set(dist) == {1, 2, 3}
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-5)

    def test_poi_relabeling_equivariance(self, toy):
        # permuting the vocabulary's POI entries (and the model's embedding
        # rows to match) permutes the predicted distribution identically
        cat, _, vocab, samples = toy
        net = model.init_model(TINY, vocab)
        model.train(net, samples, 3, TINY)
        q = self.query_after(vocab, cat, [1, 2])
        base = model.poi_distribution(net, q)

        perm = list(range(len(vocab)))
        a, b = vocab.poi_token_id(2), vocab.poi_token_id(3)
        perm[a], perm[b] = perm[b], perm[a]
        vocab2 = corpus.Vocabulary([vocab.id_to_token[i] for i in perm])
        net2 = model.MaskedPoiModel(net.config, vocab2)
        net2.load_state_dict(
            {
                **{k: v for k, v in net.state_dict().items() if "token_emb" not in k},
                "token_emb.weight": net.token_emb.weight.data[perm],
            },
            strict=False,
        )
        inv = {new: old for old, new in enumerate(perm)}
        q2 = tuple(inv[t] for t in q)
        permuted = model.poi_distribution(net2, q2)
        for poi in (1, 2, 3):
            assert permuted[poi] == pytest.approx(base[poi], abs=1e-6)


class TestCheckpoint:
    def test_round_trip_distribution(self, toy, tmp_path):
        cat, _, vocab, samples = toy
        net = model.init_model(TINY, vocab)
        model.train(net, samples, 3, TINY)
        path = tmp_path / "m.sbtc"
        model.save_checkpoint(net, path, epochs_completed=3)
        loaded, meta = model.load_checkpoint(path)
        assert meta["epochs_completed"] == 3
        t = make_trajectory("u1", [1, 2])
        q = corpus.encode_next_poi_query("u1", "city", list(t.visits), vocab, cat)
        assert np.array_equal(model.mlm_predict(net, q), model.mlm_predict(loaded, q))

    def test_bad_magic(self, toy, tmp_path):
        _, _, vocab, _ = toy
        path = tmp_path / "m.sbtc"
        model.save_checkpoint(model.init_model(TINY, vocab), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(ModelError):
            model.load_checkpoint(path)

    def test_vocab_mismatch(self, toy, tmp_path):
        cat, _, vocab, _ = toy
        path = tmp_path / "m.sbtc"
        model.save_checkpoint(model.init_model(TINY, vocab), path)
        other_cat = make_catalog(5)
        other_vocab = corpus.build_vocabulary(
            [make_trajectory("u1", [1, 2, 3, 4, 5])], other_cat
        )
        with pytest.raises(ModelError):
            model.load_checkpoint(path, expected_vocab=other_vocab)

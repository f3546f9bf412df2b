import numpy as np
import pytest

import dwl.trainer as trainer_mod
from dwl.corpus import generate_synthetic, split_corpus
from dwl.embedding import write_embedding_table
from dwl.errors import (
    CorruptCheckpointError,
    NumericalError,
    ParameterError,
    ShapeError,
    VersionMismatchError,
)
from dwl.evaluation import knn_classify
from dwl.topic import softmax_columns
from dwl.trainer import (
    TrainConfig,
    TrainingDiverged,
    closest_topic,
    initialize,
    load_checkpoint,
    save_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def small_corpus():
    corpus, _ = generate_synthetic(12, 3, 24, doc_length=30, seed=3)
    return corpus


def small_config(**kw):
    base = dict(topics=3, embed_dim=4, batch_size=8, epochs=2, inner_iters=10, epsilon=0.05, seed=1)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.beta, c.epsilon, c.topics, c.embed_dim) == (256, 0.01, 0.01, 8, 50)
        assert (c.learning_rate, c.epochs, c.tau, c.inner_iters) == (0.05, 50, 0.5, 50)

    @pytest.mark.parametrize(
        "bad",
        [dict(batch_size=0), dict(epsilon=0.0), dict(tau=1.5), dict(tau=0.0), dict(learning_rate=-1.0), dict(topics=1)],
    )
    def test_invalid(self, bad):
        with pytest.raises(ParameterError):
            TrainConfig(**bad).validate()

    def test_small_tau_warns(self):
        with pytest.warns(UserWarning, match="tau"):
            TrainConfig(tau=0.2).validate()

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# scratch run\ntopics = 4\ntau=0.75\nepsilon=0.02  # smoother\nsupervised=\n")
        c = TrainConfig.from_file(path, topics=6, seed=None)
        assert c.topics == 6
        assert c.tau == 0.75 and c.epsilon == 0.02
        assert c.supervised is None and c.seed == 0

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("topicz=4\n")
        with pytest.raises(ParameterError, match="topicz"):
            TrainConfig.from_file(path)

    def test_dict_round_trip(self):
        c = small_config(supervised="cluster")
        assert TrainConfig.from_dict(c.to_dict()) == c


class TestClosestTopic:
    def test_argmax(self):
        assert closest_topic(np.array([0.1, 0.7, 0.2])) == 1

    def test_tie_lowest_index(self):
        assert closest_topic(np.full(4, 0.25)) == 0

    def test_supervised_override(self):
        assert closest_topic(np.array([0.9, 0.05, 0.03, 0.02]), supervised_label=3) == 3


class TestTrain:
    def test_zero_epochs_is_initialization(self, small_corpus):
        config = small_config(epochs=0)
        result = train(small_corpus, config)
        model, logits = initialize(small_corpus, config)
        np.testing.assert_array_equal(result.model.theta, model.theta)
        np.testing.assert_array_equal(result.logits.R, logits.R)
        np.testing.assert_array_equal(result.logits.A, logits.A)
        assert len(result.telemetry) == 0

    def test_telemetry(self, small_corpus):
        result = train(small_corpus, small_config(epochs=3))
        assert [s.epoch for s in result.telemetry.epochs] == [1, 2, 3]
        for s in result.telemetry.epochs:
            assert np.isfinite(s.mean_loss) and s.grad_norm > 0 and s.wall_time >= 0

    def test_bitwise_determinism(self, small_corpus, tmp_path):
        for name in ("a", "b"):
            save_checkpoint(tmp_path / f"{name}.json", train(small_corpus, small_config()).checkpoint)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_worker_count_irrelevant(self, small_corpus, tmp_path):
        for workers in (1, 4):
            result = train(small_corpus, small_config(), workers=workers)
            save_checkpoint(tmp_path / f"w{workers}.json", result.checkpoint)
        assert (tmp_path / "w1.json").read_bytes() == (tmp_path / "w4.json").read_bytes()

    def test_resume_matches_uninterrupted(self, small_corpus, tmp_path):
        full = train(small_corpus, small_config(epochs=3))
        first = train(small_corpus, small_config(epochs=1))
        save_checkpoint(tmp_path / "c.json", first.checkpoint)
        resumed = train(small_corpus, small_config(epochs=3), resume=load_checkpoint(tmp_path / "c.json"))
        np.testing.assert_array_equal(resumed.model.theta, full.model.theta)
        np.testing.assert_array_equal(resumed.logits.A, full.logits.A)

    def test_seed_matters(self, small_corpus):
        a = train(small_corpus, small_config(seed=1, epochs=1))
        b = train(small_corpus, small_config(seed=2, epochs=1))
        assert not np.array_equal(a.model.theta, b.model.theta)

    def test_batch_size_clipped(self, small_corpus):
        result = train(small_corpus, small_config(batch_size=10_000, epochs=1))
        assert len(result.telemetry) == 1

    def test_loss_decreases_on_average(self, small_corpus):
        result = train(small_corpus, small_config(epochs=6, learning_rate=5.0, batch_size=4))
        losses = [s.mean_loss for s in result.telemetry.epochs]
        assert losses[-1] < losses[0]

    def test_supervised_mode(self, small_corpus):
        result = train(small_corpus, small_config(supervised="cluster", epochs=1))
        assert np.all(np.isfinite(result.model.theta))
        with pytest.raises(ParameterError):
            train(small_corpus, small_config(supervised="cluster", topics=2))

    def test_imported_embeddings(self, small_corpus, tmp_path):
        theta = np.random.default_rng(0).standard_normal((4, small_corpus.n_words))
        write_embedding_table(tmp_path / "e.txt", theta, small_corpus.vocab.tokens)
        result = train(small_corpus, small_config(epochs=0, init_embeddings=str(tmp_path / "e.txt")))
        np.testing.assert_array_equal(result.model.theta, theta)
        with pytest.raises(ShapeError):
            train(small_corpus, small_config(epochs=0, embed_dim=3, init_embeddings=str(tmp_path / "e.txt")))

    def test_divergence_keeps_last_good_state(self, small_corpus, monkeypatch):
        calls = {"n": 0}
        real = trainer_mod.document_gradient

        def flaky(*args, **kw):
            calls["n"] += 1
            if calls["n"] > small_corpus.n_docs:
                raise NumericalError("overflow", iteration=3)
            return real(*args, **kw)

        monkeypatch.setattr(trainer_mod, "document_gradient", flaky)
        with pytest.raises(TrainingDiverged) as info:
            train(small_corpus, small_config(epochs=3))
        assert info.value.checkpoint.epoch == 1
        assert np.all(np.isfinite(info.value.checkpoint.theta))


class TestCheckpoint:
    def test_round_trip_exact(self, small_corpus, tmp_path):
        ckpt = train(small_corpus, small_config(epochs=1)).checkpoint
        save_checkpoint(tmp_path / "c.json", ckpt)
        back = load_checkpoint(tmp_path / "c.json", small_corpus)
        for name in ("theta", "R", "A"):
            assert np.array_equal(getattr(back, name), getattr(ckpt, name))
        assert back.config == ckpt.config
        assert back.epoch == 1 and back.vocab == small_corpus.vocab

    def test_truncated(self, small_corpus, tmp_path):
        save_checkpoint(tmp_path / "c.json", train(small_corpus, small_config(epochs=0)).checkpoint)
        text = (tmp_path / "c.json").read_text()
        (tmp_path / "c.json").write_text(text[: len(text) // 2])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "c.json")

    def test_payload_shape_disagreement(self, small_corpus, tmp_path):
        save_checkpoint(tmp_path / "c.json", train(small_corpus, small_config(epochs=0)).checkpoint)
        text = (tmp_path / "c.json").read_text().replace('"shape": [\n   4,', '"shape": [\n   5,', 1)
        (tmp_path / "c.json").write_text(text)
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "c.json")

    def test_version_mismatch(self, small_corpus, tmp_path):
        save_checkpoint(tmp_path / "c.json", train(small_corpus, small_config(epochs=0)).checkpoint)
        text = (tmp_path / "c.json").read_text().replace("dwl-ckpt-1", "dwl-ckpt-9")
        (tmp_path / "c.json").write_text(text)
        with pytest.raises(VersionMismatchError):
            load_checkpoint(tmp_path / "c.json")

    def test_corpus_mismatch(self, small_corpus, tmp_path):
        save_checkpoint(tmp_path / "c.json", train(small_corpus, small_config(epochs=0)).checkpoint)
        other, _ = generate_synthetic(15, 3, 10, seed=0)
        with pytest.raises(ShapeError):
            load_checkpoint(tmp_path / "c.json", other)

    def test_resume_shape_mismatch(self, small_corpus):
        ckpt = train(small_corpus, small_config(epochs=0)).checkpoint
        other, _ = generate_synthetic(15, 3, 10, seed=0)
        with pytest.raises(ShapeError):
            train(other, small_config(), resume=ckpt)


@pytest.mark.slow
class TestRecoveryWithLargerSteps:
    """The training machinery recovers planted clusters once the weight
    logits can actually move: a larger learning rate and smaller batches
    than the default configuration."""

    def test_cluster_recovery(self):
        corpus, truth = generate_synthetic(30, 4, 500, doc_length=100, concentration=0.1, seed=0)
        config = TrainConfig(topics=4, learning_rate=50.0, batch_size=16, epochs=20, seed=0)
        result = train(corpus, config)
        corpus = split_corpus(corpus, seed=0)
        Lambda = softmax_columns(result.logits.A).T
        tr, te = corpus.split("train"), corpus.split("test")
        _, acc = knn_classify(Lambda[tr], truth.true_cluster[tr], Lambda[te], k=1,
                              test_labels=truth.true_cluster[te])
        assert acc >= 0.9

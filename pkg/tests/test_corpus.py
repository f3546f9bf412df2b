import json

import numpy as np
import pytest

from dwl.corpus import (
    Corpus,
    Vocabulary,
    generate_synthetic,
    load_corpus,
    read_vocabulary,
    sample_simplex,
    save_corpus,
    split_corpus,
    write_vocabulary,
)
from dwl.errors import CorpusFormatError, EmptyCorpusError, ParameterError


def write_records(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def tiny_corpus(m=8, labels=None):
    vocab = Vocabulary.from_tokens(["a", "b", "c"])
    counts = np.tile(np.array([[1], [2], [0]]), (1, m))
    labels = labels or [{"y": i % 2} for i in range(m)]
    return Corpus(vocab, [f"r{i}" for i in range(m)], counts, labels)


class TestVocabulary:
    def test_kind_inference(self):
        vocab = Vocabulary.from_tokens(["d_1", "p_2", "x"])
        assert vocab.kinds == ("disease", "procedure", "generic")
        assert vocab.index("p_2") == 1
        np.testing.assert_array_equal(vocab.indices_of_kind("procedure"), [1])

    def test_duplicates_rejected(self):
        with pytest.raises(CorpusFormatError):
            Vocabulary.from_tokens(["a", "a"])

    def test_file_round_trip(self, tmp_path):
        vocab = Vocabulary.from_tokens(["d_1", "p_2", "z"])
        write_vocabulary(tmp_path / "v.tsv", vocab)
        assert read_vocabulary(tmp_path / "v.tsv") == vocab

    def test_file_without_kinds(self, tmp_path):
        (tmp_path / "v.txt").write_text("p_9\nd_3\n")
        vocab = read_vocabulary(tmp_path / "v.txt")
        assert vocab.tokens == ("p_9", "d_3")
        assert vocab.kinds == ("procedure", "disease")


class TestLoadCorpus:
    def test_counts_normalized(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\nc\n")
        path = write_records(tmp_path / "r.jsonl", [{"id": "x", "tokens": ["a", "a", "b"]}])
        corpus = load_corpus(path, tmp_path / "v.txt")
        np.testing.assert_allclose(corpus.Y[:, 0], [2 / 3, 1 / 3, 0])

    def test_vocabulary_inferred_sorted(self, tmp_path):
        path = write_records(tmp_path / "r.jsonl", [{"id": "1", "tokens": ["z", "b"]}, {"id": "2", "tokens": ["m"]}])
        assert load_corpus(path).vocab.tokens == ("b", "m", "z")

    def test_token_order_ignored(self, tmp_path):
        a = load_corpus(write_records(tmp_path / "a.jsonl", [{"id": "1", "tokens": ["x", "y", "x"]}]))
        b = load_corpus(write_records(tmp_path / "b.jsonl", [{"id": "1", "tokens": ["x", "x", "y"]}]))
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_duplicate_id(self, tmp_path):
        path = write_records(tmp_path / "r.jsonl", [{"id": "dup", "tokens": ["a"]}, {"id": "dup", "tokens": ["b"]}])
        with pytest.raises(CorpusFormatError, match="dup"):
            load_corpus(path)

    def test_empty_file(self, tmp_path):
        (tmp_path / "r.jsonl").write_text("")
        with pytest.raises(EmptyCorpusError):
            load_corpus(tmp_path / "r.jsonl")

    def test_bad_json(self, tmp_path):
        (tmp_path / "r.jsonl").write_text('{"id": "1", "tokens": ["a"]}\nnot json\n')
        with pytest.raises(CorpusFormatError, match=":2:"):
            load_corpus(tmp_path / "r.jsonl")

    def test_unknown_tokens_reported(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\n")
        path = write_records(
            tmp_path / "r.jsonl",
            [{"id": "1", "tokens": ["a", "q"]}, {"id": "2", "tokens": ["q"]}, {"id": "3", "tokens": ["b"]}],
        )
        with pytest.warns(UserWarning, match="'2'"):
            corpus = load_corpus(path, tmp_path / "v.txt")
        assert corpus.ids == ["1", "3"]
        assert corpus.rejected == [("1", "q"), ("2", "q")]

    def test_labels_kept(self, tmp_path):
        path = write_records(
            tmp_path / "r.jsonl",
            [{"id": "1", "tokens": ["a"], "labels": {"t": "urgent"}}, {"id": "2", "tokens": ["a"], "labels": {"t": "elective"}}],
        )
        corpus = load_corpus(path)
        np.testing.assert_array_equal(corpus.label_array("t"), [1, 0])

    def test_save_load_round_trip(self, tmp_path):
        corpus, _ = generate_synthetic(12, 3, 20, doc_length=15, seed=4)
        save_corpus(corpus, tmp_path / "r.jsonl", tmp_path / "v.tsv")
        back = load_corpus(tmp_path / "r.jsonl", tmp_path / "v.tsv")
        assert back.vocab == corpus.vocab
        assert back.ids == corpus.ids
        assert back.labels == corpus.labels
        np.testing.assert_array_equal(back.counts, corpus.counts)
        np.testing.assert_array_equal(back.Y, corpus.Y)
        save_corpus(back, tmp_path / "r2.jsonl")
        assert (tmp_path / "r2.jsonl").read_bytes() == (tmp_path / "r.jsonl").read_bytes()


class TestSplits:
    def test_sizes(self):
        corpus = split_corpus(tiny_corpus(8), seed=0)
        assert [len(corpus.split(s)) for s in ("train", "validation", "test")] == [4, 2, 2]

    def test_deterministic(self):
        a = split_corpus(tiny_corpus(20), seed=3)
        b = split_corpus(tiny_corpus(20), seed=3)
        for s in ("train", "validation", "test"):
            np.testing.assert_array_equal(a.split(s), b.split(s))

    def test_seed_changes_permutation(self):
        a = split_corpus(tiny_corpus(40), seed=1)
        b = split_corpus(tiny_corpus(40), seed=2)
        assert len(a.split("train")) == len(b.split("train"))
        assert not np.array_equal(a.split("train"), b.split("train"))

    @pytest.mark.parametrize("m", [1, 2, 3, 7, 10, 33, 101])
    @pytest.mark.parametrize("ratios", [(0.5, 0.25, 0.25), (0.6, 0.2, 0.2), (1 / 3, 1 / 3, 1 / 3)])
    def test_disjoint_cover_and_near_ratio(self, m, ratios):
        corpus = split_corpus(tiny_corpus(m), ratios=ratios, seed=m)
        parts = [corpus.split(s) for s in ("train", "validation", "test")]
        joined = np.sort(np.concatenate(parts))
        np.testing.assert_array_equal(joined, np.arange(m))
        for part, r in zip(parts, ratios):
            assert abs(len(part) - r * m) <= 1

    def test_stratified(self):
        labels = [{"y": int(i < 30)} for i in range(120)]
        corpus = split_corpus(tiny_corpus(120, labels), seed=5, stratify="y")
        classes = corpus.label_array("y")
        for s, share in (("train", 0.5), ("validation", 0.25), ("test", 0.25)):
            positives = int(classes[corpus.split(s)].sum())
            assert abs(positives - share * 30) <= 1

    def test_bad_ratios(self):
        with pytest.raises(ParameterError):
            split_corpus(tiny_corpus(), ratios=(0.5, 0.5, 0.5))

    def test_missing_split(self):
        with pytest.raises(KeyError):
            tiny_corpus().split("train")


class TestSynthetic:
    def test_shapes_and_truth(self):
        corpus, truth = generate_synthetic(30, 4, 50, seed=1)
        assert corpus.counts.shape == (30, 50)
        np.testing.assert_array_equal(corpus.counts.sum(axis=0), 100)
        np.testing.assert_allclose(truth.true_topics.sum(axis=0), 1.0)
        np.testing.assert_allclose(truth.true_weights.sum(axis=0), 1.0)
        np.testing.assert_array_equal(truth.true_cluster, truth.true_weights.argmax(axis=0))
        np.testing.assert_array_equal(corpus.label_array("cluster"), truth.true_cluster)

    def test_disjoint_dominant_blocks(self):
        _, truth = generate_synthetic(30, 3, 5, seed=2, dominant_mass=0.9)
        dominant = truth.true_topics.argmax(axis=1)
        for k in range(3):
            assert truth.true_topics[dominant == k, k].sum() == pytest.approx(0.9)

    def test_seed_determinism(self, tmp_path):
        for name in ("a", "b"):
            corpus, _ = generate_synthetic(20, 4, 30, seed=9)
            save_corpus(corpus, tmp_path / f"{name}.jsonl", tmp_path / f"{name}.tsv")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_vocab_sorted_with_kinds(self):
        corpus, _ = generate_synthetic(30, 4, 5, seed=0)
        assert list(corpus.vocab.tokens) == sorted(corpus.vocab.tokens)
        assert set(corpus.vocab.kinds) == {"disease", "procedure"}

    def test_tiny_concentration_one_hot(self):
        w = sample_simplex(np.random.default_rng(0), 1e-4, 4, 500)
        assert np.all(np.isfinite(w))
        assert np.mean(w.max(axis=1) > 1 - 1e-6) > 0.99

    def test_law_of_large_numbers(self):
        # frozen from a run at doc_length 1e4: TV about 0.006 and 0.002
        corpus, truth = generate_synthetic(10, 2, 100, doc_length=10**4, concentration=0.01, seed=0)
        for c in range(2):
            mean = corpus.Y[:, truth.true_cluster == c].mean(axis=1)
            assert 0.5 * np.abs(mean - truth.true_topics[:, c]).sum() <= 0.05

    def test_law_of_large_numbers_mixture(self):
        corpus, truth = generate_synthetic(10, 2, 100, doc_length=10**4, concentration=0.1, seed=0)
        for c in range(2):
            sel = truth.true_cluster == c
            expected = truth.true_topics @ truth.true_weights[:, sel].mean(axis=1)
            assert 0.5 * np.abs(corpus.Y[:, sel].mean(axis=1) - expected).sum() <= 0.01

    def test_invalid_sizes(self):
        with pytest.raises(ParameterError):
            generate_synthetic(3, 4, 10)

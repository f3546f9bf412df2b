"""Bag-of-words corpora: ingestion, vocabularies, splits, synthetic data.

Records are JSON lines::

    {"id": "adm-1", "tokens": ["d_4019", "p_3615", "d_4019"], "labels": {"mortality": 0}}

and an optional vocabulary file holds one token per line, optionally
followed by a tab and its kind (``disease`` or ``procedure``).
"""

import json
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CorpusFormatError, EmptyCorpusError, ParameterError

log = logging.getLogger(__name__)

KINDS = ("disease", "procedure", "generic")
SPLITS = ("train", "validation", "test")


def _infer_kind(token):
    if token.startswith("d_"):
        return "disease"
    if token.startswith("p_"):
        return "procedure"
    return "generic"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    kinds: tuple

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusFormatError("vocabulary tokens must be unique")
        if len(self.kinds) != len(self.tokens):
            raise CorpusFormatError("one kind per token is required")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise CorpusFormatError(f"unknown token kinds {sorted(bad)}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_tokens(cls, tokens, kinds=None):
        tokens = tuple(tokens)
        if kinds is None:
            kinds = tuple(_infer_kind(t) for t in tokens)
        return cls(tokens, tuple(kinds))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token):
        return self._index[token]

    def indices_of_kind(self, kind):
        return np.array([i for i, k in enumerate(self.kinds) if k == kind], dtype=int)


def read_vocabulary(path):
    tokens, kinds = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            token, _, kind = line.partition("\t")
            tokens.append(token)
            kinds.append(kind or _infer_kind(token))
    return Vocabulary(tuple(tokens), tuple(kinds))


def write_vocabulary(path, vocab):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token, kind in zip(vocab.tokens, vocab.kinds):
            fh.write(f"{token}\t{kind}\n")


@dataclass
class Corpus:
    """Documents as token counts over a fixed vocabulary.

    ``counts`` is N x M (one column per document); ``labels`` holds one dict
    per document; ``splits`` maps split names to document index arrays.
    """

    vocab: Vocabulary
    ids: list
    counts: np.ndarray
    labels: list
    splits: dict = field(default_factory=dict)
    rejected: list = field(default_factory=list)

    @property
    def n_words(self):
        return self.counts.shape[0]

    @property
    def n_docs(self):
        return self.counts.shape[1]

    @property
    def Y(self):
        """Word distributions, one column per document."""
        return self.counts / self.counts.sum(axis=0, keepdims=True)

    def label_values(self, name):
        return [lab.get(name) for lab in self.labels]

    def label_array(self, name):
        """Class ids for label ``name``: integers kept, strings ranked lexicographically."""
        values = self.label_values(name)
        if any(v is None for v in values):
            raise CorpusFormatError(f"label {name!r} missing for some documents")
        if all(isinstance(v, (int, np.integer)) for v in values):
            return np.array(values, dtype=int)
        classes = sorted({str(v) for v in values})
        lookup = {c: i for i, c in enumerate(classes)}
        return np.array([lookup[str(v)] for v in values], dtype=int)

    def split(self, name):
        if name not in self.splits:
            raise KeyError(f"corpus has no {name!r} split")
        return self.splits[name]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return Corpus(
            vocab=self.vocab,
            ids=[self.ids[i] for i in indices],
            counts=self.counts[:, indices],
            labels=[self.labels[i] for i in indices],
        )


def _parse_records(path):
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            if not isinstance(rec, dict) or "id" not in rec or "tokens" not in rec:
                raise CorpusFormatError(f"{path}:{lineno}: record needs 'id' and 'tokens'")
            rid = str(rec["id"])
            if rid in seen:
                raise CorpusFormatError(f"duplicate record id {rid!r}")
            seen.add(rid)
            records.append((rid, list(rec["tokens"]), dict(rec.get("labels", {}))))
    return records


def load_corpus(records_path, vocab_path=None, vocab=None):
    """Read a JSON-lines corpus.

    Without a vocabulary the sorted set of tokens is used.  With a fixed
    vocabulary, unknown tokens are dropped and listed in
    ``corpus.rejected`` as ``(id, token)`` pairs; documents left empty are
    skipped with a warning.
    """
    records = _parse_records(records_path)
    if not records:
        raise EmptyCorpusError(f"no records in {records_path}")
    if vocab is None and vocab_path is not None:
        vocab = read_vocabulary(vocab_path)
    if vocab is None:
        vocab = Vocabulary.from_tokens(sorted({t for _, toks, _ in records for t in toks}))

    ids, columns, labels, rejected = [], [], [], []
    for rid, tokens, labs in records:
        col = np.zeros(len(vocab), dtype=np.int64)
        for t in tokens:
            if t in vocab:
                col[vocab.index(t)] += 1
            else:
                rejected.append((rid, t))
        if col.sum() == 0:
            warnings.warn(f"skipping empty document {rid!r}", stacklevel=2)
            continue
        ids.append(rid)
        columns.append(col)
        labels.append(labs)
    if not ids:
        hint = f" ({len(rejected)} unknown tokens, e.g. {rejected[0][1]!r})" if rejected else ""
        raise EmptyCorpusError(f"no non-empty documents in {records_path}{hint}")
    if rejected:
        log.warning("%d unknown tokens rejected", len(rejected))
    return Corpus(vocab, ids, np.stack(columns, axis=1), labels, rejected=rejected)


def save_corpus(corpus, records_path, vocab_path=None):
    """Write ``corpus`` as JSON lines (tokens in vocabulary order)."""
    with open(records_path, "w", encoding="utf-8", newline="\n") as fh:
        for m, rid in enumerate(corpus.ids):
            tokens = []
            for n in np.flatnonzero(corpus.counts[:, m]):
                tokens.extend([corpus.vocab.tokens[n]] * int(corpus.counts[n, m]))
            rec = {"id": rid, "tokens": tokens, "labels": corpus.labels[m]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if vocab_path is not None:
        write_vocabulary(vocab_path, corpus.vocab)


def _apportion(n_items, ratios):
    # sequential apportionment: every prefix stays within one item of its
    # proportional share, so contiguous blocks (strata) are split evenly too
    counts = np.zeros(len(ratios))
    out = np.empty(n_items, dtype=int)
    for i in range(n_items):
        s = int(np.argmax(ratios * (i + 1) - counts))
        out[i] = s
        counts[s] += 1
    return out


def split_corpus(corpus, ratios=(0.5, 0.25, 0.25), seed=0, stratify=None):
    """Seeded train/validation/test split.

    With ``stratify`` naming a label, documents are grouped by class
    before allocation so every split keeps the class proportions.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three nonnegative numbers summing to 1, got {tuple(ratios)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(corpus.n_docs)
    if stratify is not None:
        classes = corpus.label_array(stratify)[order]
        order = order[np.argsort(classes, kind="stable")]
    assign = _apportion(corpus.n_docs, ratios)
    splits = {name: np.sort(order[assign == s]) for s, name in enumerate(SPLITS)}
    return replace(corpus, splits=splits)


@dataclass
class SyntheticGroundTruth:
    true_topics: np.ndarray
    true_weights: np.ndarray
    true_cluster: np.ndarray
    generator_seed: int


def sample_simplex(rng, concentration, k, size):
    """Symmetric Dirichlet draws (``size`` x ``k``), stable for tiny concentrations.

    Uses ``log Gamma(a) = log Gamma(a + 1) + log(U) / a`` so that the
    concentration -> 0 limit yields one-hot vectors instead of NaNs.
    """
    if concentration <= 0:
        raise ParameterError("concentration must be positive")
    log_g = np.log(rng.gamma(concentration + 1.0, size=(size, k)))
    log_g += np.log(rng.uniform(size=(size, k))) / concentration
    log_g -= log_g.max(axis=1, keepdims=True)
    w = np.exp(log_g)
    return w / w.sum(axis=1, keepdims=True)


def generate_synthetic(n_words, n_topics, n_docs, doc_length=100, concentration=0.1,
                       seed=0, dominant_mass=0.9):
    """Plant topics on disjoint vocabulary blocks and sample documents from them.

    Topic ``k`` puts ``dominant_mass`` on its own block of about
    ``n_words / n_topics`` words and spreads the rest over the other
    words.  Document weights are symmetric Dirichlet draws; each document
    is a multinomial sample of ``doc_length`` tokens.  Roughly the first
    two thirds of every block are tagged as diseases (``d_``) and the rest
    as procedures (``p_``).
    """
    if not n_words >= n_topics >= 2:
        raise ParameterError("need n_words >= n_topics >= 2")
    rng = np.random.default_rng(seed)
    block = np.arange(n_words) * n_topics // n_words
    topics = np.empty((n_words, n_topics))
    for k in range(n_topics):
        inside = block == k
        main = rng.dirichlet(np.full(inside.sum(), 5.0)) * dominant_mass
        rest = rng.dirichlet(np.full((~inside).sum(), 5.0)) * (1.0 - dominant_mass)
        topics[inside, k] = main
        topics[~inside, k] = rest
    weights = sample_simplex(rng, concentration, n_topics, n_docs).T
    probs = topics @ weights
    counts = np.stack(
        [rng.multinomial(doc_length, probs[:, m] / probs[:, m].sum()) for m in range(n_docs)],
        axis=1,
    )

    # token names; position within the block decides disease vs procedure
    names = []
    for n in range(n_words):
        members = np.flatnonzero(block == block[n])
        pos = int(np.searchsorted(members, n))
        prefix = "d" if pos < max(1, (2 * len(members)) // 3) else "p"
        names.append(f"{prefix}_{block[n]:02d}_{n:04d}")
    perm = np.argsort(names)
    vocab = Vocabulary.from_tokens([names[i] for i in perm])
    topics = topics[perm]
    counts = counts[perm]

    cluster = np.argmax(weights, axis=0)
    labels = [{"cluster": int(c)} for c in cluster]
    ids = [f"doc{m:05d}" for m in range(n_docs)]
    corpus = Corpus(vocab, ids, counts.astype(np.int64), labels)
    truth = SyntheticGroundTruth(topics, weights, cluster, seed)
    return corpus, truth

"""Alternating training of topics and word embeddings.

Each batch:

1. build the squared-distance cost from the embeddings and distill it;
2. differentiate the barycenter reconstruction loss of every document
   and step the topic and weight logits;
3. refresh the topics and weights, recover each document's plan to its
   closest topic, aggregate the plans into a Laplacian and take one
   descent step on the embeddings.
"""

import base64
import hashlib
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import Vocabulary
from .embedding import (
    EmbeddingModel,
    aggregate_transports,
    cost_matrix,
    distill,
    embedding_gradient,
    init_embeddings,
    laplacian,
    read_embedding_table,
)
from .errors import (
    CorruptCheckpointError,
    DWLError,
    NumericalError,
    ParameterError,
    ShapeError,
    VersionMismatchError,
)
from .io import atomic_write_text
from .ot import barycenter_forward, gibbs_kernel, smooth
from .topic import TopicLogits, apply_logit_updates, closest_plan, document_gradient

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "dwl-ckpt-1"


@dataclass
class TrainConfig:
    batch_size: int = 256
    beta: float = 0.01
    epsilon: float = 0.01
    topics: int = 8
    embed_dim: int = 50
    learning_rate: float = 0.05
    epochs: int = 50
    tau: float = 0.5
    inner_iters: int = 50
    seed: int = 0
    supervised: str = None
    init_embeddings: str = None

    def validate(self):
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")
        if not 0 < self.tau <= 1:
            raise ParameterError("tau must lie in (0, 1]")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if self.topics < 2:
            raise ParameterError("topics must be >= 2")
        if self.embed_dim < 1 or self.inner_iters < 1 or self.epochs < 0:
            raise ParameterError("embed_dim and inner_iters must be >= 1, epochs >= 0")
        if self.beta < 0:
            raise ParameterError("beta must be >= 0")
        if self.tau < 0.25:
            warnings.warn(f"tau={self.tau} below 0.25 may oversmooth the distilled cost", stacklevel=2)
        return self

    @classmethod
    def from_dict(cls, values):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ParameterError(f"unknown config key {key!r}")
            default = known[key].default
            if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
                kwargs[key] = None
            elif isinstance(default, bool):
                kwargs[key] = str(raw).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, **overrides):
        """Parse flat ``key=value`` lines (``#`` starts a comment); overrides win."""
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ParameterError(f"{path}:{lineno}: expected key=value")
                values[key.strip()] = value.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    grad_norm: float
    wall_time: float


@dataclass
class Telemetry:
    epochs: list = field(default_factory=list)

    def append(self, stats):
        if self.epochs and stats.epoch <= self.epochs[-1].epoch:
            raise ValueError("epoch index must increase")
        self.epochs.append(stats)

    def __getitem__(self, i):
        return self.epochs[i]

    def __len__(self):
        return len(self.epochs)

    def to_csv(self, path, include_time=True):
        cols = ["epoch", "mean_loss", "grad_norm"] + (["wall_time"] if include_time else [])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for s in self.epochs:
                row = [str(s.epoch), f"{s.mean_loss:.6g}", f"{s.grad_norm:.6g}"]
                if include_time:
                    row.append(f"{s.wall_time:.6g}")
                fh.write(",".join(row) + "\n")


@dataclass
class Checkpoint:
    theta: np.ndarray
    R: np.ndarray
    A: np.ndarray
    config: TrainConfig
    epoch: int
    rng_digest: str = ""
    vocab: Vocabulary = None

    @property
    def logits(self):
        return TopicLogits(self.R, self.A)

    @property
    def model(self):
        return EmbeddingModel(self.theta)


@dataclass
class TrainResult:
    model: EmbeddingModel
    logits: TopicLogits
    telemetry: Telemetry
    checkpoint: Checkpoint


class TrainingDiverged(DWLError):
    """Loss became non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def closest_topic(weights, supervised_label=None):
    """Index of the closest topic: the supervised label if given, else the argmax.

    ``np.argmax`` returns the first maximum, so ties go to the lowest index.
    """
    if supervised_label is not None:
        return int(supervised_label)
    return int(np.argmax(weights))


def _epoch_rng(seed, epoch):
    return np.random.default_rng([seed, epoch])


def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def initialize(corpus, config):
    """Draw ``theta``, ``A`` and ``R`` from the seeded generator (in that order)."""
    rng = np.random.default_rng(config.seed)
    n, m, k = corpus.n_words, corpus.n_docs, config.topics
    model = init_embeddings(n, config.embed_dim, rng)
    if config.init_embeddings:
        theta = read_embedding_table(config.init_embeddings, corpus.vocab.tokens)
        if theta.shape[0] != config.embed_dim:
            raise ShapeError(
                f"imported embeddings have dimension {theta.shape[0]}, config says {config.embed_dim}"
            )
        model = EmbeddingModel(theta)
    A = rng.standard_normal((k, m))
    R = rng.standard_normal((n, k))
    return model, TopicLogits(R, A)


def _map(pool, fn, items):
    if pool is None:
        return [fn(i) for i in items]
    return list(pool.map(fn, items))


def train(corpus, config, workers=1, resume=None, on_epoch=None):
    """Jointly learn embeddings, topics and document weights.

    Parameters
    ----------
    corpus : Corpus
        Every document of the corpus is trained on.
    config : TrainConfig
    workers : int
        Threads for per-document gradients.  Results do not depend on it:
        per-document work is independent and reductions run in ascending
        document order.
    resume : Checkpoint, optional
        Continue from a saved state instead of a fresh initialization.
    on_epoch : callable, optional
        Called as ``on_epoch(checkpoint, stats)`` after each epoch.

    Returns
    -------
    TrainResult
    """
    config.validate()
    n, m_docs = corpus.n_words, corpus.n_docs
    if m_docs == 0:
        raise ParameterError("corpus is empty")
    Y = corpus.Y
    supervised = None
    if config.supervised:
        supervised = corpus.label_array(config.supervised)
        if supervised.min() < 0 or supervised.max() >= config.topics:
            raise ParameterError(f"supervised label {config.supervised!r} must index topics 0..{config.topics - 1}")

    if resume is not None:
        if resume.theta.shape[1] != n or resume.A.shape[1] != m_docs:
            raise ShapeError("checkpoint does not match corpus dimensions")
        model, logits, start = EmbeddingModel(resume.theta.copy()), resume.logits.copy(), resume.epoch
    else:
        model, logits = initialize(corpus, config)
        start = 0

    batch_size = min(config.batch_size, m_docs)
    eps, iters = config.epsilon, config.inner_iters
    telemetry = Telemetry()
    checkpoint = Checkpoint(
        model.theta.copy(), logits.R.copy(), logits.A.copy(), config, start,
        _digest(config.seed, start), corpus.vocab,
    )
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for epoch in range(start + 1, config.epochs + 1):
            t0 = time.perf_counter()
            order = _epoch_rng(config.seed, epoch).permutation(m_docs)
            losses, norms = [], []
            for lo in range(0, m_docs, batch_size):
                batch = np.sort(order[lo:lo + batch_size])
                try:
                    logits, model, batch_losses, norm = _train_batch(
                        Y, batch, logits, model, config, eps, iters, supervised, pool
                    )
                except NumericalError as exc:
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", checkpoint) from exc
                if not np.all(np.isfinite(batch_losses)) or not np.isfinite(norm):
                    raise TrainingDiverged(f"epoch {epoch}: non-finite loss", checkpoint)
                losses.extend(batch_losses)
                norms.append(norm)
            stats = EpochStats(epoch, float(np.mean(losses)), float(np.mean(norms)), time.perf_counter() - t0)
            telemetry.append(stats)
            checkpoint = Checkpoint(
                model.theta.copy(), logits.R.copy(), logits.A.copy(), config, epoch,
                _digest(config.seed, epoch), corpus.vocab,
            )
            log.info("epoch %d loss %.6g grad %.6g", epoch, stats.mean_loss, stats.grad_norm)
            if on_epoch is not None:
                on_epoch(checkpoint, stats)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(model, logits, telemetry, checkpoint)


def _train_batch(Y, batch, logits, model, config, eps, iters, supervised, pool):
    n = Y.shape[0]
    kernel = gibbs_kernel(distill(cost_matrix(model.theta), config.tau), eps)

    state = logits.state()
    B = state.B

    def grad_one(m):
        lam = state.Lambda[:, m]
        k = closest_topic(lam, None if supervised is None else supervised[m])
        return document_gradient(Y[:, m], B, lam, kernel, iters, k)

    results = _map(pool, grad_one, batch)
    grad_B = np.zeros_like(B)
    for r in results:
        grad_B += r.grad_B
    grad_B /= len(batch)
    # each weight column belongs to a single document, so its batch average
    # is that document's own gradient
    grad_Lambda = np.stack([r.grad_lambda for r in results], axis=1)
    logits = apply_logit_updates(logits, grad_B, grad_Lambda, config.learning_rate, batch)

    state = logits.state()
    basis = smooth(state.B)

    def plan_one(m):
        lam = state.Lambda[:, m]
        k = closest_topic(lam, None if supervised is None else supervised[m])
        _, phi, beta = barycenter_forward(basis, lam, kernel, iters)
        return closest_plan(basis, k, kernel, phi, beta)

    plans = _map(pool, plan_one, batch)
    lap = laplacian(aggregate_transports(plans, n)) / len(batch)
    model.snapshot()
    grad = embedding_gradient(model, lap, config.beta)
    # the proximal term vanishes at the snapshot, so this is the Laplacian part
    norm = float(np.linalg.norm(grad))
    model = EmbeddingModel(model.theta - config.learning_rate * grad, model.theta_current)
    return logits, model, [r.loss for r in results], norm


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(obj):
    shape = tuple(obj["shape"])
    raw = base64.b64decode(obj["data"], validate=True)
    arr = np.frombuffer(raw, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise CorruptCheckpointError(f"matrix payload has {arr.size} values, shape says {shape}")
    return arr.reshape(shape).astype(float)


def save_checkpoint(path, checkpoint):
    """Write a checkpoint as one JSON document; the file is replaced atomically."""
    doc = {
        "format": CHECKPOINT_VERSION,
        "epoch": checkpoint.epoch,
        "rng_digest": checkpoint.rng_digest,
        "config": checkpoint.config.to_dict(),
        "theta": _encode(checkpoint.theta),
        "R": _encode(checkpoint.R),
        "A": _encode(checkpoint.A),
    }
    if checkpoint.vocab is not None:
        doc["vocab"] = {"tokens": list(checkpoint.vocab.tokens), "kinds": list(checkpoint.vocab.kinds)}
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    atomic_write_text(path, text)


def load_checkpoint(path, corpus=None):
    """Read a checkpoint; with ``corpus`` given, check it matches the vocabulary size."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CorruptCheckpointError(f"{path}: not a checkpoint document")
    if doc.get("format") != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: format {doc.get('format')!r}, expected {CHECKPOINT_VERSION!r}")
    try:
        ckpt = Checkpoint(
            theta=_decode(doc["theta"]),
            R=_decode(doc["R"]),
            A=_decode(doc["A"]),
            config=TrainConfig.from_dict(doc["config"]),
            epoch=int(doc["epoch"]),
            rng_digest=str(doc.get("rng_digest", "")),
            vocab=Vocabulary(tuple(doc["vocab"]["tokens"]), tuple(doc["vocab"]["kinds"]))
            if "vocab" in doc else None,
        )
    except (KeyError, TypeError, ValueError, DWLError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    if corpus is not None and ckpt.theta.shape[1] != corpus.n_words:
        raise ShapeError(
            f"checkpoint has {ckpt.theta.shape[1]} words, corpus vocabulary has {corpus.n_words}"
        )
    return ckpt

"""Linear word embeddings driven by aggregated optimal transport.

The embedding of word ``n`` is column ``n`` of ``theta`` (a linear map
applied to one-hot codes).  Pairwise squared distances between columns
form the transport cost; transport mass between words, symmetrized into a
graph Laplacian, pulls their embeddings together.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import CorpusFormatError, ParameterError, ShapeError

#: Below this distillation power the smoothed cost tends to wash out
#: the guidance it carries.
TAU_WARN = 0.25


@dataclass
class EmbeddingModel:
    """Embedding matrix ``theta`` (D x N) plus the snapshot ``theta_current``."""

    theta: np.ndarray
    theta_current: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta_current is None:
            self.theta_current = self.theta.copy()

    @property
    def dim(self):
        return self.theta.shape[0]

    @property
    def n_words(self):
        return self.theta.shape[1]

    def snapshot(self):
        """Record the current parameters as the proximal anchor."""
        self.theta_current = self.theta.copy()


def init_embeddings(n_words, dim, rng):
    """Gaussian initialization scaled by ``1/sqrt(dim)`` so squared distances are O(1)."""
    return EmbeddingModel(rng.standard_normal((dim, n_words)) / np.sqrt(dim))


def read_embedding_table(path, tokens):
    """Read ``<token> <v1> ... <vD>`` lines into a D x N matrix ordered like ``tokens``.

    Every vocabulary token must appear exactly once and no other token may
    appear.
    """
    rows = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise CorpusFormatError(f"{path}:{lineno}: expected {dim} values")
            if token in rows:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate token {token!r}")
            rows[token] = np.array([float(v) for v in values])
    missing = [t for t in tokens if t not in rows]
    extra = sorted(set(rows) - set(tokens))
    if missing or extra:
        raise CorpusFormatError(
            f"embedding table does not match vocabulary "
            f"(missing {missing[:5]}, unexpected {extra[:5]})"
        )
    return np.stack([rows[t] for t in tokens], axis=1)


def write_embedding_table(path, theta, tokens):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n, token in enumerate(tokens):
            fh.write(token + " " + " ".join(repr(float(x)) for x in theta[:, n]) + "\n")


def cost_matrix(theta):
    """Squared Euclidean distances between embedding columns (N x N)."""
    theta = np.asarray(theta, dtype=float)
    return squareform(pdist(theta.T, metric="sqeuclidean"))


def distill(cost, tau):
    """Entrywise power ``cost ** tau`` for ``0 < tau <= 1``.

    Powers below 0.25 are allowed but warn, since heavy smoothing leaves
    little guidance in the cost.
    """
    if not 0 < tau <= 1:
        raise ParameterError(f"tau must lie in (0, 1], got {tau}")
    if tau < TAU_WARN:
        warnings.warn(f"tau={tau} below {TAU_WARN}: distilled cost may be oversmoothed", stacklevel=2)
    cost = np.asarray(cost, dtype=float)
    if tau == 1:
        return cost.copy()
    return np.power(cost, tau)


def aggregate_transports(plans, n_words=None):
    """Entrywise sum of transport plans; an empty list needs ``n_words``."""
    plans = [np.asarray(p, dtype=float) for p in plans]
    if not plans:
        if n_words is None:
            raise ShapeError("n_words is required to aggregate an empty batch")
        return np.zeros((n_words, n_words))
    shape = plans[0].shape
    total = np.zeros(shape)
    for p in plans:
        if p.shape != shape:
            raise ShapeError(f"plan shape {p.shape} differs from {shape}")
        total += p
    return total


def laplacian(transport):
    """Graph Laplacian ``diag(S 1) - S`` of the symmetrized transport ``S``."""
    transport = np.asarray(transport, dtype=float)
    s = 0.5 * (transport + transport.T)
    return np.diag(s.sum(axis=1)) - s


def laplacian_energy(theta, lap):
    """``Tr(X L X^T)`` for embeddings ``X = theta``."""
    return float(np.sum((theta @ lap) * theta))


def embedding_objective(model, lap, beta):
    """``Tr(X L X^T) + beta * ||theta - theta_current||^2``."""
    drift = model.theta - model.theta_current
    return laplacian_energy(model.theta, lap) + beta * float(np.sum(drift**2))


def embedding_gradient(model, lap, beta):
    # lap is symmetric, so d/dX Tr(X L X^T) = 2 X L
    return 2.0 * model.theta @ lap + 2.0 * beta * (model.theta - model.theta_current)


def embedding_gradient_step(model, lap, beta, rho):
    """One descent step on :func:`embedding_objective`; returns a new model."""
    theta = model.theta - rho * embedding_gradient(model, lap, beta)
    return EmbeddingModel(theta, model.theta_current.copy())

"""Evaluation: document features, k-NN classification, procedure
recommendation, topic reports and k-NN graphs over word embeddings."""

import warnings

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConvergenceWarning, ParameterError, ShapeError
from .ot import exact_ot, sinkhorn_batch, sinkhorn_plan, transport_cost

FEATURE_MODES = ("ave_pool", "topic_weight", "word_distribution")
METRICS = ("euclidean", "wasserstein")


def doc_features(Y, mode, theta=None, Lambda=None):
    """Document feature matrix, one row per document.

    ``ave_pool`` is the count-weighted mean embedding ``theta @ y``,
    ``topic_weight`` the document's topic weights and
    ``word_distribution`` the word distribution itself.
    """
    Y = np.asarray(Y, dtype=float)
    if mode == "ave_pool":
        if theta is None:
            raise ParameterError("ave_pool features need embeddings")
        return (np.asarray(theta) @ Y).T
    if mode == "topic_weight":
        if Lambda is None:
            raise ParameterError("topic_weight features need topic weights")
        Lambda = np.asarray(Lambda, dtype=float)
        if Lambda.shape[1] != Y.shape[1]:
            raise ShapeError("topic weights do not cover the documents")
        return Lambda.T.copy()
    if mode == "word_distribution":
        return Y.T.copy()
    raise ParameterError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")


def wasserstein_doc_distance(y_a, y_b, cost, epsilon=0.01, exact=False, max_iters=5000):
    """Transport cost between two documents (entropic term excluded).

    Transport is solved between the supports of the two documents only;
    words absent from both carry no mass.  With ``exact=True`` the linear
    program is solved instead of Sinkhorn.
    """
    y_a = np.asarray(y_a, dtype=float)
    y_b = np.asarray(y_b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    rows = np.flatnonzero(y_a > 0)
    cols = np.flatnonzero(y_b > 0)
    sub = cost[np.ix_(rows, cols)]
    if exact:
        return exact_ot(y_a[rows], y_b[cols], sub)[0]
    plan, _ = sinkhorn_plan(y_a[rows], y_b[cols], sub, epsilon, max_iters=max_iters)
    return transport_cost(plan, sub)


def pairwise_distances(queries, references, metric="euclidean", cost=None, epsilon=0.01,
                       max_iters=5000, tol=1e-6):
    """Distance matrix between rows of ``queries`` and ``references``.

    The wasserstein metric solves one batched Sinkhorn problem per query
    and emits at most one :class:`ConvergenceWarning` for the whole matrix.
    """
    queries = np.asarray(queries, dtype=float)
    references = np.asarray(references, dtype=float)
    if metric == "euclidean":
        return cdist(queries, references)
    if metric == "wasserstein":
        if cost is None:
            raise ParameterError("the wasserstein metric needs a cost matrix")
        # one batched solve per query; zero-mass words are masked out
        out = np.empty((len(queries), len(references)))
        worst, missed = 0.0, 0
        for i, q in enumerate(queries):
            out[i], err = sinkhorn_batch(q, references, cost, epsilon, max_iters, tol, warn=False)
            worst = max(worst, float(err.max(initial=0.0)))
            missed += int(np.sum(err > tol))
        if missed:
            warnings.warn(
                ConvergenceWarning(
                    f"{missed} of {out.size} document pairs missed marginal tolerance {tol:g}",
                    marginal_error=worst,
                ),
                stacklevel=2,
            )
        return out
    raise ParameterError(f"unknown metric {metric!r}; expected one of {METRICS}")


def knn_predict(distances, train_labels, k):
    """Majority vote among the ``k`` nearest references per query row.

    Distance ties go to the lower reference index, vote ties to the
    smaller class id.
    """
    distances = np.asarray(distances, dtype=float)
    train_labels = np.asarray(train_labels, dtype=int)
    if distances.shape[1] == 0:
        raise ParameterError("empty training set")
    if not 1 <= k <= distances.shape[1]:
        raise ParameterError(f"k={k} must lie in [1, {distances.shape[1]}]")
    nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
    n_classes = int(train_labels.max()) + 1
    preds = np.empty(len(distances), dtype=int)
    for i, row in enumerate(nearest):
        votes = np.bincount(train_labels[row], minlength=n_classes)
        preds[i] = int(np.argmax(votes))
    return preds


def knn_classify(train_features, train_labels, test_features, k=1, metric="euclidean",
                 test_labels=None, cost=None, epsilon=0.01):
    """k-NN classification; returns ``(predictions, accuracy)``.

    ``accuracy`` is ``None`` when ``test_labels`` is not given.
    """
    if len(train_features) == 0:
        raise ParameterError("empty training set")
    d = pairwise_distances(test_features, train_features, metric, cost, epsilon)
    preds = knn_predict(d, train_labels, k)
    acc = None
    if test_labels is not None:
        acc = float(np.mean(preds == np.asarray(test_labels)))
    return preds, acc


def recommend_procedures(disease_idx, theta, procedure_idx, top, aggregate="mean"):
    """Rank procedures by their embedding distance to an admission's diseases.

    Each procedure is scored by the mean (or ``min``) Euclidean distance
    to the disease embeddings; the ``top`` lowest scores are returned as
    vocabulary indices, ties broken by vocabulary order.
    """
    disease_idx = np.asarray(disease_idx, dtype=int)
    procedure_idx = np.asarray(procedure_idx, dtype=int)
    if procedure_idx.size == 0:
        raise ParameterError("vocabulary has no procedures")
    if disease_idx.size == 0:
        raise ParameterError("admission has no diseases")
    if not 1 <= top <= procedure_idx.size:
        raise ParameterError(f"top={top} exceeds the {procedure_idx.size} available procedures")
    theta = np.asarray(theta, dtype=float)
    d = cdist(theta[:, procedure_idx].T, theta[:, disease_idx].T)
    if aggregate == "mean":
        score = d.mean(axis=1)
    elif aggregate == "min":
        score = d.min(axis=1)
    else:
        raise ParameterError(f"unknown aggregate {aggregate!r}")
    order = np.lexsort((procedure_idx, score))
    return procedure_idx[order[:top]]


def prf(recommended, truth):
    """Precision, recall and F1 of one recommended list against a truth set."""
    rec = set(recommended)
    truth = set(truth)
    if not rec or not truth:
        raise ParameterError("recommendation and ground truth must be nonempty")
    hit = len(rec & truth)
    p = hit / len(rec)
    r = hit / len(truth)
    f1 = 0.0 if hit == 0 else 2 * p * r / (p + r)
    return p, r, f1


def topn_prf(recommended_lists, truth_sets):
    """Mean precision, recall and F1 over admissions."""
    if len(recommended_lists) != len(truth_sets):
        raise ShapeError("one truth set per recommendation list is required")
    if not recommended_lists:
        raise ParameterError("no admissions to score")
    scores = np.array([prf(e, t) for e, t in zip(recommended_lists, truth_sets)])
    p, r, f1 = scores.mean(axis=0)
    return float(p), float(r), float(f1)


def topic_report(B, tokens, top_n=3):
    """Top ``top_n`` words per topic as ``(token, probability)`` pairs.

    Equal probabilities keep vocabulary order.
    """
    B = np.asarray(B, dtype=float)
    report = []
    for k in range(B.shape[1]):
        order = np.argsort(-B[:, k], kind="stable")[:top_n]
        report.append([(tokens[n], float(B[n, k])) for n in order])
    return report


def knn_graph(theta, tokens, kinds=None, k=4):
    """Directed k-nearest-neighbour graph of word embeddings.

    Returns ``{"nodes": [{"id", "kind"}], "edges": [{"src", "dst", "dist"}]}``;
    each node points to its ``k`` nearest other nodes, ties by vocabulary
    order.  Distances are rounded to 6 significant digits.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[1]
    if not 1 <= k < n:
        raise ParameterError(f"k={k} must lie in [1, {n - 1}]")
    if kinds is None:
        kinds = ["generic"] * n
    d = cdist(theta.T, theta.T)
    np.fill_diagonal(d, np.inf)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    nodes = [{"id": tokens[i], "kind": kinds[i]} for i in range(n)]
    edges = [
        {"src": tokens[i], "dst": tokens[j], "dist": float(f"{d[i, j]:.6g}")}
        for i in range(n)
        for j in nearest[i]
    ]
    return {"nodes": nodes, "edges": edges}

"""Wasserstein dictionary learning with softmax-parametrized topics.

Topics ``B`` (N x K) and document weights ``Lambda`` (K x M) are the
column-wise softmax of unconstrained logits ``R`` and ``A``.  A document is
reconstructed as the entropic barycenter of the topics under a (distilled)
cost, and the squared reconstruction error is differentiated by running
the barycenter recursion backwards.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError
from .ot import barycenter_forward, gibbs_kernel, smooth


def softmax_columns(logits):
    """Column-wise softmax with max-subtraction."""
    logits = np.asarray(logits, dtype=float)
    z = np.exp(logits - logits.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def softmax_backward(probs, upstream):
    """Pull a gradient on softmax outputs back to the logits, column-wise.

    For a column ``p`` this is ``(diag(p) - p p^T) g``.
    """
    probs = np.asarray(probs, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    return probs * (upstream - np.sum(probs * upstream, axis=0, keepdims=True))


@dataclass
class TopicModelState:
    """Topic word distributions ``B`` (N x K) and document weights ``Lambda`` (K x M)."""

    B: np.ndarray
    Lambda: np.ndarray

    @property
    def n_topics(self):
        return self.B.shape[1]


@dataclass
class TopicLogits:
    """Unconstrained parameters: ``R`` (N x K) for topics, ``A`` (K x M) for weights."""

    R: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        if self.R.ndim != 2 or self.A.ndim != 2 or self.R.shape[1] != self.A.shape[0]:
            raise ShapeError(f"R {self.R.shape} and A {self.A.shape} are inconsistent")

    def state(self):
        return TopicModelState(B=softmax_columns(self.R), Lambda=softmax_columns(self.A))

    def copy(self):
        return TopicLogits(self.R.copy(), self.A.copy())


def reconstruction_loss(y, yhat):
    """Squared loss ``sum (y - yhat)^2``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {yhat.shape}")
    return float(np.sum((y - yhat) ** 2))


def reconstruction_loss_grad(y, yhat):
    """Gradient of :func:`reconstruction_loss` with respect to ``yhat``."""
    return 2.0 * (np.asarray(yhat, dtype=float) - np.asarray(y, dtype=float))


def reconstruct_document(state, m, distilled_cost, epsilon, inner_iters=50):
    """Barycenter reconstruction of document ``m`` from the current topics.

    ``distilled_cost`` must already be raised to the distillation power.
    """
    kernel = gibbs_kernel(distilled_cost, epsilon)
    yhat, _, _ = barycenter_forward(smooth(state.B), state.Lambda[:, m], kernel, inner_iters)
    return yhat


@dataclass
class DocumentGradient:
    """Per-document output of :func:`sinkhorn_grad`."""

    grad_B: np.ndarray
    grad_lambda: np.ndarray
    plan: np.ndarray
    yhat: np.ndarray
    loss: float
    closest: int


def _backward_weights(grad_yhat, yhat, weights, basis, kernel, phi, beta):
    n_iter = phi.shape[0] - 1
    w = np.zeros(basis.shape[1])
    r = np.zeros_like(basis)
    # adjoint with respect to log(yhat)
    g = grad_yhat * yhat
    for l in range(n_iter, 0, -1):
        w += np.log(phi[l]).T @ g
        q = kernel @ beta[l - 1]
        r = -(kernel.T @ ((kernel @ ((weights * g[:, None] - r) / phi[l])) * basis / q**2)) * beta[l - 1]
        g = r.sum(axis=1)
    return w


def _backward_basis(grad_yhat, weights, basis, kernel, phi, beta):
    n_iter = phi.shape[0] - 1
    grad_basis = np.zeros_like(basis)
    z = np.zeros_like(basis)
    g = grad_yhat
    for l in range(n_iter, 0, -1):
        q = kernel @ beta[l - 1]
        psi = kernel @ ((weights * g[:, None] - z) * beta[l])
        grad_basis += psi / q
        z = -(kernel.T @ (basis * psi / q**2)) / phi[l - 1]
        g = z.sum(axis=1)
    return grad_basis


def closest_plan(basis, k, kernel, phi, beta):
    """Entropic plan from topic ``k`` to the reconstruction.

    Built from the last forward scalings as ``diag(b_k / C beta_k) C diag(beta_k)``;
    its rows sum to ``b_k`` exactly and its columns to the reconstruction
    once the recursion has converged.
    """
    last = phi.shape[0] - 1
    b_prev = beta[last - 1][:, k]
    a = basis[:, k] / (kernel @ b_prev)
    return a[:, None] * kernel * b_prev[None, :]


def document_gradient(y, basis, weights, kernel, inner_iters, closest):
    """Loss, gradients and closest-topic plan for one document.

    Low-level form of :func:`sinkhorn_grad` that takes a precomputed Gibbs
    kernel, so a batch can share it.
    """
    basis = smooth(basis)
    yhat, phi, beta = barycenter_forward(basis, weights, kernel, inner_iters)
    grad_yhat = reconstruction_loss_grad(y, yhat)
    grad_lambda = _backward_weights(grad_yhat, yhat, weights, basis, kernel, phi, beta)
    grad_B = _backward_basis(grad_yhat, weights, basis, kernel, phi, beta)
    if not (np.all(np.isfinite(grad_lambda)) and np.all(np.isfinite(grad_B))):
        raise NumericalError("non-finite Sinkhorn gradient")
    return DocumentGradient(
        grad_B=grad_B,
        grad_lambda=grad_lambda,
        plan=closest_plan(basis, closest, kernel, phi, beta),
        yhat=yhat,
        loss=reconstruction_loss(y, yhat),
        closest=closest,
    )


def sinkhorn_grad(y, state, m, distilled_cost, epsilon, inner_iters=50, closest=None):
    """Gradients of the squared reconstruction loss of document ``m``.

    Parameters
    ----------
    y : ndarray, shape (N,)
        Observed word distribution of the document.
    state : TopicModelState
    m : int
        Column of ``state.Lambda`` holding the document's weights.
    distilled_cost : ndarray, shape (N, N)
    epsilon : float
    inner_iters : int
    closest : int, optional
        Topic to transport from; defaults to the largest weight.

    Returns
    -------
    DocumentGradient
        ``grad_B`` (N x K) and ``grad_lambda`` (K,) are gradients with
        respect to the simplex-valued topics and weights, not the logits.
    """
    weights = state.Lambda[:, m]
    if closest is None:
        closest = int(np.argmax(weights))
    kernel = gibbs_kernel(distilled_cost, epsilon)
    return document_gradient(y, state.B, weights, kernel, inner_iters, closest)


def apply_logit_updates(logits, grad_B, grad_Lambda, rho, columns):
    """One gradient step on the logits through the softmax Jacobians.

    Parameters
    ----------
    logits : TopicLogits
    grad_B : ndarray, shape (N, K)
        Gradient with respect to the topic distributions.
    grad_Lambda : ndarray, shape (K, len(columns))
        Gradient with respect to the weight columns of the batch documents.
    rho : float
        Learning rate.
    columns : sequence of int
        Documents in the batch; all other columns of ``A`` are untouched.

    Returns
    -------
    TopicLogits
        New logits; the input is not modified.
    """
    columns = np.asarray(columns, dtype=int)
    B = softmax_columns(logits.R)
    R = logits.R - rho * softmax_backward(B, grad_B)
    A = logits.A.copy()
    if columns.size:
        lam = softmax_columns(logits.A[:, columns])
        A[:, columns] -= rho * softmax_backward(lam, np.asarray(grad_Lambda, dtype=float))
    return TopicLogits(R, A)

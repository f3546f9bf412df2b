"""Entropic and exact optimal transport between discrete distributions.

All distributions live on a common vocabulary of ``N`` states and are plain
1-D float arrays.  Cost matrices hold squared Euclidean distances between
word embeddings (symmetric, zero diagonal).
"""

import warnings

import numpy as np
from scipy.optimize import linprog

from .errors import (
    ConvergenceWarning,
    EmptyDocumentError,
    NumericalError,
    ParameterError,
    ShapeError,
)

#: Weight of the uniform distribution mixed into marginals that have zeros.
FLOOR = 1e-8

#: Above this ratio ``max(cost) / epsilon`` Sinkhorn switches to the
#: stabilized path when ``stabilized`` is left on auto.
STABILIZE_RATIO = 50.0

# scalings beyond exp(+-ABSORB_LOG) are folded into the potentials
ABSORB_LOG = 30.0


def normalize_counts(counts):
    """Turn a vector of nonnegative token counts into a word distribution."""
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1:
        raise ShapeError(f"counts must be 1-D, got shape {counts.shape}")
    if np.any(counts < 0):
        raise ParameterError("counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise EmptyDocumentError("document has no tokens")
    return counts / total


def is_distribution(p, atol=1e-9):
    p = np.asarray(p, dtype=float)
    return p.ndim == 1 and bool(np.all(p >= 0)) and abs(p.sum() - 1.0) <= atol


def smooth(p, eta=FLOOR):
    """Mix ``p`` with the uniform distribution: ``(1 - eta) p + eta / N``.

    Inputs that are already strictly positive are returned unchanged, so
    smoothing never perturbs a well-posed problem.  Works column-wise on a
    matrix of distributions.
    """
    p = np.asarray(p, dtype=float)
    if np.all(p > 0):
        return p
    return (1.0 - eta) * p + eta / p.shape[0]


def _check_epsilon(epsilon):
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")


def gibbs_kernel(cost, epsilon):
    """Return ``exp(-cost / epsilon)``, entries in (0, 1] for nonnegative costs."""
    _check_epsilon(epsilon)
    return np.exp(-np.asarray(cost, dtype=float) / epsilon)


def transport_cost(plan, cost):
    """``Tr(plan^T cost)``."""
    return float(np.sum(plan * cost))


def neg_entropy(plan):
    """``Tr(plan^T ln plan)`` with the convention ``0 ln 0 = 0``."""
    plan = np.asarray(plan, dtype=float)
    pos = plan > 0
    return float(np.sum(plan[pos] * np.log(plan[pos])))


def marginal_error(plan, u, v):
    """l1 violation of the row and column marginals (the larger of the two)."""
    return max(
        float(np.abs(plan.sum(axis=1) - u).sum()),
        float(np.abs(plan.sum(axis=0) - v).sum()),
    )


def _check_pair(u, v, cost):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError("marginals must be 1-D")
    if cost.shape != (u.shape[0], v.shape[0]):
        raise ShapeError(
            f"cost shape {cost.shape} does not match marginals "
            f"({u.shape[0]}, {v.shape[0]})"
        )
    return u, v, cost


def exact_ot(u, v, cost):
    """Solve the discrete Monge-Kantorovich problem as a linear program.

    Meant as a test oracle on small vocabularies (``N <= 20``); the
    transport polytope has ``N**2`` variables.

    Returns
    -------
    value : float
        ``min Tr(T^T cost)`` over couplings of ``u`` and ``v``.
    plan : ndarray, shape (N, N)
        An optimal coupling.
    """
    u, v, cost = _check_pair(u, v, cost)
    n, m = cost.shape
    # row-sum and column-sum constraints on the row-major flattened plan
    a_rows = np.kron(np.eye(n), np.ones((1, m)))
    a_cols = np.kron(np.ones((1, n)), np.eye(m))
    res = linprog(
        cost.ravel(),
        A_eq=np.vstack([a_rows, a_cols]),
        b_eq=np.concatenate([u, v]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise NumericalError(f"exact OT solver failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    return float(np.sum(plan * cost)), plan


def _sinkhorn_plain(u, v, kernel, tol, max_iters):
    a = np.ones_like(u)
    b = np.ones_like(v)
    err = np.inf
    for it in range(1, max_iters + 1):
        a = u / (kernel @ b)
        b = v / (kernel.T @ a)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericalError("non-finite Sinkhorn scaling", iteration=it)
        # columns are exact after the b-update; only rows can be off
        err = float(np.abs(a * (kernel @ b) - u).sum())
        if err <= tol:
            break
    return a[:, None] * kernel * b[None, :], err


def _sinkhorn_absorbed(u, v, cost, epsilon, tol, max_iters, f, g):
    # scalings a, b are folded into the potentials f, g whenever they drift
    # far from 1, so the working kernel never under/overflows
    kernel = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    a = np.ones_like(u)
    b = np.ones_like(v)
    err = np.inf
    for it in range(1, max_iters + 1):
        a = u / (kernel @ b)
        b = v / (kernel.T @ a)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericalError("non-finite Sinkhorn scaling", iteration=it)
        err = float(np.abs(a * (kernel @ b) - u).sum())
        if err <= tol:
            break
        if max(np.abs(np.log(a)).max(), np.abs(np.log(b)).max()) > ABSORB_LOG:
            f = f + epsilon * np.log(a)
            g = g + epsilon * np.log(b)
            kernel = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
            a = np.ones_like(u)
            b = np.ones_like(v)
    return f + epsilon * np.log(a), g + epsilon * np.log(b), err


def _sinkhorn_stabilized(u, v, cost, epsilon, tol, max_iters):
    # halve epsilon from the cost scale down to the target, warm-starting
    # the potentials; rough intermediate solutions (1e-3) were seen to strand
    # the final stage far from its fixed point, so stages stop at 1e-6
    f = np.zeros_like(u)
    g = np.zeros_like(v)
    schedule = _eps_schedule(cost.max(initial=0.0), epsilon)
    for stage, eps in enumerate(schedule):
        stage_tol = tol if stage == len(schedule) - 1 else max(tol, 1e-6)
        f, g, _ = _sinkhorn_absorbed(u, v, cost, eps, stage_tol, max_iters, f, g)
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    return plan, marginal_error(plan, u, v)


def sinkhorn_plan(u, v, cost, epsilon, max_iters=1000, tol=1e-6, stabilized=None):
    """Entropic optimal coupling of ``u`` and ``v`` by Sinkhorn scaling.

    Marginals with zero entries are floor-smoothed first so every ratio
    stays finite.

    Parameters
    ----------
    u, v : ndarray, shape (N,)
        Source and target distributions.
    cost : ndarray, shape (N, N)
    epsilon : float
        Entropic regularization weight, > 0.
    max_iters : int
        Iteration cap; reaching it emits a :class:`ConvergenceWarning`.
    tol : float
        Stop once the l1 marginal violation is at most ``tol``.
    stabilized : bool or None
        Fold large scalings into log-potentials and warm-start from a
        halving schedule of regularization weights.  Converges to the same
        plan as the plain iteration.  ``None`` enables it only when
        ``max(cost) / epsilon`` is large enough for the plain kernel to
        underflow.

    Returns
    -------
    plan : ndarray, shape (N, N)
    err : float
        Final l1 marginal violation (against the smoothed marginals).
    """
    _check_epsilon(epsilon)
    u, v, cost = _check_pair(u, v, cost)
    u = smooth(u)
    v = smooth(v)
    if stabilized is None:
        stabilized = cost.max(initial=0.0) / epsilon > STABILIZE_RATIO
    if stabilized:
        plan, err = _sinkhorn_stabilized(u, v, cost, epsilon, tol, max_iters)
    else:
        plan, err = _sinkhorn_plain(u, v, gibbs_kernel(cost, epsilon), tol, max_iters)
    if not np.all(np.isfinite(plan)):
        raise NumericalError("non-finite transport plan")
    if err > tol:
        warnings.warn(
            ConvergenceWarning(
                f"Sinkhorn did not reach marginal tolerance {tol:g} in "
                f"{max_iters} iterations (error {err:.3g})",
                marginal_error=err,
            ),
            stacklevel=2,
        )
    return plan, err


def sinkhorn_distance(u, v, cost, epsilon, max_iters=1000, tol=1e-6, stabilized=None):
    """Sinkhorn distance ``Tr(T^T D) + epsilon Tr(T^T ln T)`` at the entropic plan.

    Returns ``(value, plan)``.  Use :func:`transport_cost` on the plan for
    the transport term alone.
    """
    plan, _ = sinkhorn_plan(u, v, cost, epsilon, max_iters, tol, stabilized)
    value = transport_cost(plan, cost) + epsilon * neg_entropy(plan)
    return value, plan


def _eps_schedule(cost_scale, epsilon):
    schedule = []
    eps = float(cost_scale)
    while eps / 2.0 > epsilon:
        eps /= 2.0
        schedule.append(eps)
    return schedule + [epsilon]


def sinkhorn_batch(u, V, cost, epsilon, max_iters=5000, tol=1e-6, check_every=10, warn=True):
    """Entropic transport from ``u`` to every row of ``V`` at once.

    Zero-mass entries are masked out exactly rather than smoothed, so
    documents with sparse supports need no floor.  Uses the same
    absorption and halving schedule as the stabilized single-pair path.

    Parameters
    ----------
    u : ndarray, shape (N,)
    V : ndarray, shape (P, N)
    cost : ndarray, shape (N, N)

    Returns
    -------
    costs : ndarray, shape (P,)
        Transport cost ``Tr(T_p^T cost)`` of each entropic plan.
    errors : ndarray, shape (P,)
        l1 marginal violation of each plan.  A :class:`ConvergenceWarning`
        is raised when any exceeds ``tol`` unless ``warn`` is false.
    """
    _check_epsilon(epsilon)
    u = np.asarray(u, dtype=float)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (u.shape[0], V.shape[1]):
        raise ShapeError(f"cost shape {cost.shape} does not match marginals")
    rows = u > 0
    u = u[rows]
    cost = cost[rows]
    mask = V > 0
    p = V.shape[0]
    f = np.zeros((p, u.size))
    g = np.zeros(V.shape)

    def kernel_for(eps):
        expo = (f[:, :, None] + g[:, None, :] - cost[None]) / eps
        return np.exp(np.where(mask[:, None, :], expo, -np.inf))

    err = np.full(p, np.inf)
    schedule = _eps_schedule(cost.max(initial=0.0), epsilon)
    for stage, eps in enumerate(schedule):
        stage_tol = tol if stage == len(schedule) - 1 else max(tol, 1e-6)
        kernel = kernel_for(eps)
        a = np.ones_like(f)
        b = mask.astype(float)
        for it in range(1, max_iters + 1):
            a = u / np.einsum("pij,pj->pi", kernel, b)
            kta = np.einsum("pij,pi->pj", kernel, a)
            b = np.divide(V, kta, out=np.zeros_like(V), where=mask)
            if it % check_every and it != max_iters:
                continue
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise NumericalError("non-finite Sinkhorn scaling", iteration=it)
            err = np.abs(a * np.einsum("pij,pj->pi", kernel, b) - u).sum(axis=1)
            if np.all(err <= stage_tol):
                break
            log_b = np.log(b, out=np.zeros_like(b), where=mask)
            if max(np.abs(np.log(a)).max(), np.abs(log_b).max()) > ABSORB_LOG:
                f += eps * np.log(a)
                g += eps * log_b
                kernel = kernel_for(eps)
                a = np.ones_like(f)
                b = mask.astype(float)
        f += eps * np.log(a)
        g += eps * np.log(b, out=np.zeros_like(b), where=mask)
    plans = kernel_for(epsilon)
    costs = np.einsum("pij,ij->p", plans, cost)
    errors = np.abs(plans.sum(axis=2) - u).sum(axis=1) + np.abs(plans.sum(axis=1) - V).sum(axis=1)
    if warn and np.any(errors > tol):
        warnings.warn(
            ConvergenceWarning(
                f"{int(np.sum(errors > tol))} of {p} Sinkhorn problems missed tolerance {tol:g}",
                marginal_error=float(errors.max()),
            ),
            stacklevel=2,
        )
    return costs, errors


def barycenter_forward(basis, weights, kernel, inner_iters):
    """Run the barycenter fixed-point recursion and keep its history.

    For ``l = 1..L`` and every topic ``k``::

        phi_k[l]  = C^T (b_k / (C beta_k[l-1]))
        yhat[l]   = prod_k phi_k[l] ** lambda_k
        beta_k[l] = yhat[l] / phi_k[l]

    starting from ``beta_k[0] = 1``.

    Parameters
    ----------
    basis : ndarray, shape (N, K)
        Strictly positive topic distributions as columns.
    weights : ndarray, shape (K,)
    kernel : ndarray, shape (N, N)
    inner_iters : int

    Returns
    -------
    yhat : ndarray, shape (N,)
    phi : ndarray, shape (L + 1, N, K)
        ``phi[l]`` for ``l >= 1``; ``phi[0]`` is unused and left at ones.
    beta : ndarray, shape (L + 1, N, K)
    """
    n, k = basis.shape
    phi = np.ones((inner_iters + 1, n, k))
    beta = np.ones((inner_iters + 1, n, k))
    yhat = None
    for l in range(1, inner_iters + 1):
        denom = kernel @ beta[l - 1]
        phi[l] = kernel.T @ (basis / denom)
        yhat = np.exp(np.log(phi[l]) @ weights)
        beta[l] = yhat[:, None] / phi[l]
        if not (np.all(np.isfinite(beta[l])) and np.all(yhat > 0)):
            raise NumericalError("barycenter recursion over/underflowed", iteration=l)
    if yhat is None:
        raise ParameterError("inner_iters must be a positive integer")
    return yhat, phi, beta


def sinkhorn_barycenter(basis, weights, cost, epsilon, inner_iters=50):
    """Entropic Wasserstein barycenter of the columns of ``basis``.

    Columns are floor-smoothed, then :func:`barycenter_forward` runs
    ``inner_iters`` times from all-ones scalings.  With a single topic the
    output is the kernel smoothing ``C^T (b / C 1)``, which sums to one
    exactly; with several topics the mass converges to one as the
    recursion approaches its fixed point.
    """
    basis = np.asarray(basis, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if basis.ndim != 2 or weights.shape != (basis.shape[1],):
        raise ShapeError(
            f"basis {basis.shape} and weights {weights.shape} are inconsistent"
        )
    if inner_iters < 1:
        raise ParameterError("inner_iters must be a positive integer")
    kernel = gibbs_kernel(cost, epsilon)
    yhat, _, _ = barycenter_forward(smooth(basis), weights, kernel, inner_iters)
    return yhat

"""Independent reference implementations used as test oracles.

Nothing here imports from ``dwl``: each oracle recomputes its quantity
from first principles so that agreement with the library is evidence
rather than tautology.
"""

from itertools import combinations

import numpy as np


def transport_vertices(u, v, atol=1e-12):
    """All vertices of the transport polytope ``{T >= 0 : T1 = u, T^T 1 = v}``.

    Brute force over basic solutions: every vertex is supported on at most
    ``n + m - 1`` cells, so solve the marginal equations on each such cell
    subset and keep the nonnegative exact solutions.  Only for n, m <= 3.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n, m = len(u), len(v)
    cells = [(i, j) for i in range(n) for j in range(m)]
    rhs = np.concatenate([u, v])
    found = []
    for support in combinations(range(n * m), n + m - 1):
        A = np.zeros((n + m, len(support)))
        for col, c in enumerate(support):
            i, j = cells[c]
            A[i, col] = 1.0
            A[n + j, col] = 1.0
        x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.abs(A @ x - rhs).max() > 1e-10 or x.min() < -atol:
            continue
        T = np.zeros((n, m))
        for col, c in enumerate(support):
            T[cells[c]] = max(x[col], 0.0)
        if not any(np.allclose(T, other, atol=1e-12) for other in found):
            found.append(T)
    return found


def vertex_ot(u, v, cost):
    """Optimal value and the set of optimal vertices by enumeration."""
    vertices = transport_vertices(u, v)
    values = np.array([np.sum(T * cost) for T in vertices])
    best = values.min()
    optimal = [T for T, val in zip(vertices, values) if val <= best + 1e-12]
    return float(best), optimal


def entropic_2x2_grid(epsilon, cost_off=1.0, points=2_000_001):
    """Transport cost of the entropic plan between two uniform 2-point marginals.

    Plans are ``[[a, 1/2 - a], [1/2 - a, a]]``; minimize
    ``2 (1/2 - a) c + epsilon * sum T ln T`` on a uniform grid over ``a``.
    """
    a = np.linspace(0.0, 0.5, points)[1:-1]
    off = 0.5 - a
    obj = 2 * off * cost_off + epsilon * 2 * (a * np.log(a) + off * np.log(off))
    a_star = a[np.argmin(obj)]
    return 2 * (0.5 - a_star) * cost_off


def barycenter_loop(basis, weights, cost, epsilon, iters):
    """Plain-Python transcription of the forward barycenter recursion.

    Loops over topics and entries explicitly; no shared code with the
    vectorized library version.
    """
    import math

    n, k = len(basis), len(basis[0])
    C = [[math.exp(-cost[i][j] / epsilon) for j in range(n)] for i in range(n)]
    beta = [[1.0] * n for _ in range(k)]
    yhat = None
    for _ in range(iters):
        phis = []
        for t in range(k):
            cb = [sum(C[i][j] * beta[t][j] for j in range(n)) for i in range(n)]
            ratio = [basis[i][t] / cb[i] for i in range(n)]
            phis.append([sum(C[i][j] * ratio[i] for i in range(n)) for j in range(n)])
        yhat = [
            math.exp(sum(weights[t] * math.log(phis[t][j]) for t in range(k)))
            for j in range(n)
        ]
        beta = [[yhat[j] / phis[t][j] for j in range(n)] for t in range(k)]
    return np.array(yhat)


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))

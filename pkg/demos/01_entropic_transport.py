"""
Entropic transport against the exact linear program
===================================================

Sinkhorn scaling solves a smoothed transport problem.  As the
regularization weight shrinks its cost approaches the exact optimum
computed by the simplex-type solver, at the price of more iterations.
"""

import numpy as np

from dwl.ot import exact_ot, marginal_error, sinkhorn_plan, transport_cost

rng = np.random.default_rng(0)
x = rng.standard_normal((6, 2))
cost = ((x[:, None] - x[None]) ** 2).sum(-1)
u = rng.dirichlet(np.ones(6))
v = rng.dirichlet(np.ones(6))

exact, exact_plan = exact_ot(u, v, cost)
print(f"exact cost {exact:.6f}, {np.count_nonzero(exact_plan > 1e-12)} nonzero entries")

# the plan sharpens toward a vertex as epsilon decreases
for eps in (1.0, 0.1, 0.01, 0.001):
    plan, err = sinkhorn_plan(u, v, cost, eps, tol=1e-9, max_iters=100_000)
    gap = transport_cost(plan, cost) - exact
    print(f"eps={eps:<6} cost {transport_cost(plan, cost):.6f}  gap {gap:.2e}  "
          f"marginal error {marginal_error(plan, u, v):.1e}")

# large cost / epsilon ratios switch to the log-domain path automatically
plan, _ = sinkhorn_plan(u, 1.0 * v, 1000 * cost, 0.01, tol=1e-9, max_iters=100_000)
print(f"scaled costs: ratio to exact {transport_cost(plan, 1000 * cost) / (1000 * exact):.5f}")

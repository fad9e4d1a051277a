"""Dense damped-Newton oracle for the discrete truncated problem.

Independent route to the same nodal nonlinear system the monotone scheme
solves: build the dense convolution matrix from the discrete kernel, then
drive F(u) = eps^-m (W u - u) + u (a - u) to zero with a line-searched
Newton method.  Used to cross-validate solve_truncated on small grids.
"""

import numpy as np


def dense_operator_matrix(dk, grid):
    """Dense matrix of the truncated convolution sum_y w(x-y) u(y)."""
    n = grid.n_nodes
    K = dk.radius_cells
    W = np.zeros((n, n))
    if grid.dimension == 1:
        idx = grid.index
        for i in range(n):
            for j in range(n):
                off = idx[i] - idx[j]
                if -K <= off <= K:
                    W[i, j] = dk.weights[off + K]
    else:
        idx = grid.index
        for i in range(n):
            for j in range(n):
                oi, oj = idx[i] - idx[j]
                if -K <= oi <= K and -K <= oj <= K:
                    W[i, j] = dk.weights[oi + K, oj + K]
    return W


def newton_solve(W, a, eps, m, u0, tol=1e-13, max_iter=200):
    """Damped Newton on F(u) = eps^-m (W u - u) + u (a - u)."""
    scale = eps ** (-m)
    n = len(a)
    u = u0.astype(float).copy()

    def F(v):
        return scale * (W @ v - v) + v * (a - v)

    fu = F(u)
    norm = np.max(np.abs(fu))
    ref = max(np.max(np.abs(a)), 1.0)
    for _ in range(max_iter):
        if norm <= tol * ref:
            return u, norm, True
        J = scale * (W - np.eye(n)) + np.diag(a - 2.0 * u)
        try:
            step = np.linalg.solve(J, -fu)
        except np.linalg.LinAlgError:
            return u, norm, False
        t = 1.0
        while t >= 1e-6:
            cand = u + t * step
            fc = F(cand)
            nc = np.max(np.abs(fc))
            if nc <= (1.0 - 0.5 * t) * norm + 1e-300:
                u, fu, norm = cand, fc, nc
                break
            t *= 0.5
        else:
            return u, norm, False
    return u, norm, norm <= tol * ref


def positive_solution(W, a, eps, m, sup_ap, tol=1e-13):
    """Find the positive solution by Newton from a few generic starts."""
    n = len(a)
    starts = [
        np.full(n, sup_ap),
        np.maximum(a, 0.0) + 0.1 * sup_ap,
        np.full(n, 0.5 * sup_ap),
    ]
    for u0 in starts:
        u, norm, ok = newton_solve(W, a, eps, m, u0, tol=tol)
        if ok and np.min(u) > 0.0:
            return u
    return None

"""Strictly convex QP with box constraints, primal active-set method."""

from __future__ import annotations

import numpy as np

from .errors import ControllerFault


def kkt_residual(H, g, u, lo, hi) -> float:
    grad = H @ u + g
    return float(np.max(np.abs(u - np.clip(u - grad, lo, hi)), initial=0.0))


def solve_box_qp(H, g, lo, hi, x0=None, max_iter: int = 100, tol: float = 1e-8):
    """Minimize 0.5 u'Hu + g'u subject to lo <= u <= hi.

    H must be symmetric positive definite. Returns ``(u, iterations)``.
    Raises ControllerFault if the KKT residual is still above ``tol`` (scaled
    by the gradient magnitude) after ``max_iter`` iterations.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.size
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)))

    u = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    # working set: -1 pinned at lo, +1 pinned at hi, 0 free
    work = np.zeros(n, dtype=int)
    work[u <= lo] = -1
    work[u >= hi] = 1
    work[lo == hi] = -1

    for it in range(1, max_iter + 1):
        free = work == 0
        target = u.copy()
        if free.any():
            fixed = ~free
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ u[fixed])
            target[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        step = target - u

        # longest feasible step along the direction, blocking bound joins the set
        alpha, block, side = 1.0, -1, 0
        for i in np.flatnonzero(free):
            if step[i] < 0 and u[i] + step[i] < lo[i]:
                a = (lo[i] - u[i]) / step[i]
                if a < alpha:
                    alpha, block, side = a, i, -1
            elif step[i] > 0 and u[i] + step[i] > hi[i]:
                a = (hi[i] - u[i]) / step[i]
                if a < alpha:
                    alpha, block, side = a, i, 1

        u = u + alpha * step
        if block >= 0:
            u[block] = lo[block] if side < 0 else hi[block]
            work[block] = side
            continue

        grad = H @ u + g
        # multiplier sign check on pinned variables
        wrong = np.where(work == -1, -grad, np.where(work == 1, grad, 0.0))
        wrong[lo == hi] = 0.0
        worst = int(np.argmax(wrong))
        if wrong[worst] > tol * scale:
            work[worst] = 0
            continue
        if kkt_residual(H, g, u, lo, hi) <= tol * scale:
            return u, it

    res = kkt_residual(H, g, u, lo, hi)
    if res <= tol * scale:
        return u, max_iter
    raise ControllerFault(f"box QP did not converge in {max_iter} iterations (KKT residual {res:.3e})")

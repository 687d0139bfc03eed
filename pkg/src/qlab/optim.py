"""Limited-memory BFGS with Armijo backtracking and a user-supplied base preconditioner."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LBFGSResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    message: str = ""


def lbfgs(fun_grad, x0, precond=None, *, max_iter=5000, rtol=1e-8, memory=10,
          c1=1e-4, max_backtrack=60, callback=None) -> LBFGSResult:
    """Minimize a smooth function.

    Parameters
    ----------
    fun_grad : callable
        ``x -> (f, g)``.
    precond : callable, optional
        Applies the base inverse Hessian ``H0^-1`` inside the two-loop recursion.
        Without it the usual ``gamma I`` scaling is used.
    rtol : float
        Stop when ``sqrt(g . H0^-1 g) <= rtol * (1 + |f|)``.

    ``history`` holds the objective at every accepted iterate, starting with ``x0``;
    Armijo acceptance makes it nonincreasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    history = [f]
    pairs = deque(maxlen=memory)
    apply_h0 = precond if precond is not None else (lambda q: q)

    def decrement(gv):
        return float(np.sqrt(max(np.dot(gv.ravel(), apply_h0(gv).ravel()), 0.0)))

    stall = 0
    for it in range(1, max_iter + 1):
        if decrement(g) <= rtol * (1.0 + abs(f)):
            return LBFGSResult(x, f, it - 1, True, history, "gradient tolerance")

        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(pairs):
            a = rho * np.dot(s.ravel(), q.ravel())
            q -= a * y
            alphas.append(a)
        if precond is not None:
            r = apply_h0(q)
        elif pairs:
            s, y, _ = pairs[-1]
            r = q * (np.dot(s.ravel(), y.ravel()) / np.dot(y.ravel(), y.ravel()))
        else:
            r = q / max(np.linalg.norm(q), 1.0)
        for (s, y, rho), a in zip(pairs, reversed(alphas)):
            b = rho * np.dot(y.ravel(), r.ravel())
            r += (a - b) * s
        d = -r
        slope = float(np.dot(g.ravel(), d.ravel()))
        if slope >= 0:
            pairs.clear()
            d = -apply_h0(g)
            slope = float(np.dot(g.ravel(), d.ravel()))

        step = 1.0
        for _ in range(max_backtrack):
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * step * slope:
                break
            step *= 0.5
        else:
            converged = decrement(g) <= 1e-5 * (1.0 + abs(f))
            return LBFGSResult(x, f, it - 1, converged, history, "line search failed")

        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(np.dot(s_vec.ravel(), y_vec.ravel()))
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            pairs.append((s_vec, y_vec, 1.0 / sy))
        stall = stall + 1 if f - f_new <= 1e-15 * abs(f) else 0
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if callback is not None:
            callback(x, f)
        if stall >= 5:
            converged = decrement(g) <= 1e-5 * (1.0 + abs(f))
            return LBFGSResult(x, f, it, converged, history, "no further decrease")
    return LBFGSResult(x, f, max_iter, False, history, "max iterations")

"""BFGS minimiser with a strong-Wolfe line search.

Written for smooth log-likelihoods: the caller passes the objective and its
gradient separately; values are memoised so the line search and the outer
loop never evaluate the same point twice.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning

__all__ = ["OptimizeResult", "minimize_bfgs"]


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    trace: list[float] = field(default_factory=list)


class _Memo:
    def __init__(self, fun, grad):
        self._fun, self._grad = fun, grad
        self._f, self._g = {}, {}

    def f(self, x):
        key = x.tobytes()
        if key not in self._f:
            self._f[key] = float(self._fun(x))
        return self._f[key]

    def g(self, x):
        key = x.tobytes()
        if key not in self._g:
            self._g[key] = np.asarray(self._grad(x), dtype=float)
        return self._g[key]


def _backtrack(f, x, fx, g, p, c1=1e-4, shrink=0.5, max_halvings=60):
    slope = g @ p
    alpha = 1.0
    for _ in range(max_halvings):
        if f(x + alpha * p) <= fx + c1 * alpha * slope:
            return alpha
        alpha *= shrink
    return None


def minimize_bfgs(
    fun,
    grad,
    x0,
    grad_tol=1e-6,
    step_tol=1e-10,
    max_iter=500,
    c1=1e-4,
    c2=0.9,
    inv_hessian0=None,
):
    """Minimise ``fun`` starting at ``x0``.

    ``grad_tol`` may be a float or a callable of the current function value
    returning the tolerance on the sup-norm of the gradient. The inverse
    Hessian starts as ``I / ||grad(x0)||`` and is rescaled by ``s'y / y'y``
    before the first update, unless ``inv_hessian0`` is supplied (warm starts),
    in which case it is used as given. If the strong-Wolfe search fails, an Armijo
    backtrack along the same direction is tried, and after that a restart
    along steepest descent; every accepted step lowers ``fun``.
    """
    memo = _Memo(fun, grad)
    tol = grad_tol if callable(grad_tol) else (lambda _f: grad_tol)
    x = np.array(x0, dtype=float)
    fx, g = memo.f(x), memo.g(x)
    k = x.size
    gnorm0 = np.linalg.norm(g)
    if inv_hessian0 is not None:
        H = np.array(inv_hessian0, dtype=float)
        first_update = False
    else:
        H = np.eye(k) / max(gnorm0, 1e-12) if gnorm0 > 0 else np.eye(k)
        first_update = True
    trace = [fx]
    old_old = None

    for it in range(max_iter):
        if np.max(np.abs(g), initial=0.0) <= tol(fx):
            return OptimizeResult(x, fx, g, it, True, "gradient tolerance met", trace)
        p = -H @ g
        if not g @ p < 0:
            H = np.eye(k) / max(np.linalg.norm(g), 1e-12)
            p = -H @ g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, *_ = line_search(memo.f, memo.g, x, p, g, fx, old_old, c1=c1, c2=c2, maxiter=30)
        if alpha is None or not memo.f(x + alpha * p) <= fx:
            alpha = _backtrack(memo.f, x, fx, g, p, c1=c1)
        if alpha is None:
            steep = -g / max(np.linalg.norm(g), 1e-12)
            alpha = _backtrack(memo.f, x, fx, g, steep, c1=c1)
            if alpha is None:
                return OptimizeResult(x, fx, g, it, False, "line search failed", trace)
            p = steep
            H = np.eye(k) / max(np.linalg.norm(g), 1e-12)
            first_update = True
        s = alpha * p
        x_new = x + s
        f_new, g_new = memo.f(x_new), memo.g(x_new)
        y = g_new - g
        old_old, x, fx, g = fx, x_new, f_new, g_new
        trace.append(fx)

        if np.linalg.norm(s) <= step_tol * max(1.0, np.linalg.norm(x)):
            ok = np.max(np.abs(g), initial=0.0) <= tol(fx)
            return OptimizeResult(x, fx, g, it + 1, ok, "relative step below step_tol", trace)

        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                H = np.eye(k) * (sy / (y @ y))
                first_update = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (y @ Hy) + rho) * np.outer(s, s)

    ok = np.max(np.abs(g), initial=0.0) <= tol(fx)
    return OptimizeResult(x, fx, g, max_iter, ok, "maximum iterations reached", trace)

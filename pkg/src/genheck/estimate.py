"""Maximum likelihood fitting of the classic and generalized Heckman models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .bfgs import minimize_bfgs
from .errors import MissingCensoring, NonConvergence, NotConverged, SingularInformation
from .model import Dataset, Theta, hessian, loglik, predictors, score
from .numerics import inv_mills

__all__ = [
    "FitOptions",
    "FitResult",
    "SummaryRow",
    "fit",
    "fit_classic",
    "init_theta",
    "two_step_start",
    "summary",
    "format_summary",
    "classic_data",
    "refit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitOptions:
    """Optimizer controls.

    ``grad_tol=None`` means ``1e-6 * max(1, |loglik|/n)``. ``init`` is a
    user-supplied :class:`Theta`; ``None`` starts from the classic fit.
    """

    max_iter: int = 500
    grad_tol: float | None = None
    step_tol: float = 1e-10
    line_search: str = "strong-wolfe"
    init: Theta | None = None
    newton_polish: int = 10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.line_search != "strong-wolfe":
            raise ValueError("only the strong-wolfe line search is available")


@dataclass
class FitResult:
    theta_hat: Theta
    loglik: float
    covariance: np.ndarray
    std_errors: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    boundary_warning: bool
    n: int
    n_selected: int
    labels: list = field(default_factory=list)
    model: str = "generalized"
    message: str = ""
    grad_tol: float = np.nan
    trace: list = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        return self.theta_hat.flatten()

    @property
    def dims(self):
        return self.theta_hat.dims


class SummaryRow(NamedTuple):
    equation: str
    name: str
    estimate: float
    std_error: float
    z_value: float
    p_value: float
    ci_low: float
    ci_high: float


def _check_censoring(data: Dataset):
    if data.n_selected == data.n:
        raise MissingCensoring("every observation is selected; the selection equation is unidentified")
    if data.n_selected == 0:
        raise MissingCensoring("no observation is selected")


def _intercept_scale(A: np.ndarray) -> float | None:
    """Value of a constant first column, or None."""
    if A.shape[1] == 0:
        return None
    c = A[0, 0]
    return float(c) if c != 0 and np.all(A[:, 0] == c) else None


def classic_data(data: Dataset) -> Dataset:
    """Replace the dispersion and correlation designs by intercept columns.

    Blocks with no columns (e.g. a restricted ``rho = 0`` model) stay empty.
    """
    one = np.ones((data.n, 1))
    none = np.ones((data.n, 0))
    E = one if data.dims[2] else none
    V = one if data.dims[3] else none
    names = {"lambda": ["(Intercept)"][: E.shape[1]], "kappa": ["(Intercept)"][: V.shape[1]]}
    return data.replace(E=E, V=V, names=names)


def _probit(W, u, max_iter=50):
    """Probit coefficients by Newton's method (pseudo-inverse for rank defects)."""
    gamma = np.zeros(W.shape[1])
    for _ in range(max_iter):
        idx = W @ gamma
        a, b = inv_mills(idx), inv_mills(-idx)
        g = W.T @ (u * a - (1 - u) * b)
        w = u * a * (idx + a) + (1 - u) * b * (b - idx)
        H = (W * w[:, None]).T @ W
        step = np.linalg.pinv(H) @ g
        gamma = gamma + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return gamma


def two_step_start(data: Dataset) -> Theta:
    """Starting values for the classic model from the two-step procedure.

    Probit for the selection equation, then least squares of the selected
    outcomes on ``[X, inverse Mills ratio]``; ``sigma`` and ``rho`` follow
    from the Mills-ratio coefficient and the residual variance. ``rho`` is
    clipped to +-0.9 so the start is never near the boundary.
    """
    u = data.u.astype(float)
    gamma = _probit(data.W, u)
    sel = data.u == 1
    idx = data.W[sel] @ gamma
    mills = inv_mills(idx)
    Z = np.column_stack([data.X[sel], mills])
    coef, *_ = np.linalg.lstsq(Z, data.y[sel], rcond=None)
    beta, b_mills = coef[:-1], coef[-1]
    resid = data.y[sel] - Z @ coef
    sigma2 = np.mean(resid**2) + b_mills**2 * np.mean(mills * (mills + idx))
    sigma = np.sqrt(max(sigma2, 1e-8))
    rho = float(np.clip(b_mills / sigma, -0.9, 0.9))

    r, s = data.dims[2], data.dims[3]
    lam = np.zeros(r)
    kappa = np.zeros(s)
    ce, cv = _intercept_scale(data.E), _intercept_scale(data.V)
    if r and ce is not None:
        lam[0] = np.log(sigma) / ce
    if s and cv is not None:
        kappa[0] = np.arctanh(rho) / cv
    return Theta(beta, gamma, lam, kappa)


def _default_tol(options: FitOptions, n: int):
    if options.grad_tol is not None:
        return lambda _f: options.grad_tol
    return lambda negll: 1e-6 * max(1.0, abs(negll) / n)


def _maximize(
    data: Dataset,
    start: Theta,
    options: FitOptions,
    model: str,
    inv_hessian0=None,
    covariance: bool = True,
) -> FitResult:
    tol = _default_tol(options, data.n)
    opt = minimize_bfgs(
        lambda t: -loglik(t, data),
        lambda t: -score(t, data),
        start.flatten(),
        grad_tol=tol,
        step_tol=options.step_tol,
        max_iter=options.max_iter,
        inv_hessian0=inv_hessian0,
    )
    x, iterations, trace, message = opt.x, opt.iterations, opt.trace, opt.message
    ll = -opt.fun
    g = -opt.grad
    H = None

    # Newton refinement: BFGS often stalls a few digits short of a sup-norm
    # tolerance on the total score when columns have large scale.
    polish = 0
    budget = min(options.newton_polish, options.max_iter - iterations)
    while np.max(np.abs(g), initial=0.0) > tol(-ll) and polish < budget:
        H = hessian(x, data)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not g @ step < 0:
            break
        for alpha in 0.5 ** np.arange(30):
            cand = x - alpha * step
            ll_c = loglik(cand, data)
            if ll_c >= ll:
                break
        else:
            break
        x, ll = cand, ll_c
        g = score(x, data)
        H = None
        trace.append(-ll)
        polish += 1
    if polish:
        message = f"{message}; {polish} newton refinement step(s)"

    theta = Theta.unflatten(x, data.dims)
    grad_norm = float(np.max(np.abs(g), initial=0.0))
    converged = grad_norm <= tol(-ll)
    boundary = predictors(theta, data).at_clamp
    k = x.size
    singular = False
    cov = np.full((k, k), np.nan)
    se = np.full(k, np.nan)
    if covariance:
        info = -(hessian(x, data) if H is None else H)
        eig = np.linalg.eigvalsh(info) if k else np.ones(1)
        singular = not eig.min() > 1e-10 * max(1.0, float(eig.max()))
        if not singular:
            cov = np.linalg.inv(info)
            cov = 0.5 * (cov + cov.T)
            se = np.sqrt(np.diag(cov))

    result = FitResult(
        theta_hat=theta,
        loglik=float(ll),
        covariance=cov,
        std_errors=se,
        converged=bool(converged and not singular),
        iterations=iterations + polish,
        grad_norm=grad_norm,
        boundary_warning=boundary,
        n=data.n,
        n_selected=data.n_selected,
        labels=data.labels,
        model=model,
        message=message,
        grad_tol=float(tol(-ll)),
        trace=[-v for v in trace],
    )
    if boundary:
        log.warning("correlation index hit the +-18 clamp; rho is at the boundary")
    if singular:
        result.message = f"observed information not positive definite (min eigenvalue {eig.min():.3g})"
        raise SingularInformation(result.message, result)
    if not converged:
        raise NonConvergence(
            f"gradient sup-norm {grad_norm:.3g} above tolerance {result.grad_tol:.3g} ({message})",
            result,
        )
    return result


def refit(data: Dataset, fit: FitResult, max_iter: int = 50, covariance: bool = False) -> FitResult:
    """Refit the same model on new data, warm-started at ``fit``.

    The inverse observed information of ``fit`` seeds the BFGS inverse
    Hessian, so small perturbations of the data (case deletion, parametric
    bootstrap) converge in a handful of iterations. ``data`` must already be
    in the model's parameterisation (see :func:`classic_data`).
    """
    h0 = fit.covariance if np.all(np.isfinite(fit.covariance)) else None
    _validate(data)
    return _maximize(data, fit.theta_hat, FitOptions(max_iter=max_iter), fit.model,
                     inv_hessian0=h0, covariance=covariance)


def _validate(data: Dataset):
    _check_censoring(data)
    k = sum(data.dims)
    if k >= data.n:
        raise ValueError(f"{k} parameters for {data.n} observations")


def fit_classic(data: Dataset, options: FitOptions = FitOptions()) -> FitResult:
    """Fit the classic Heckman model (constant sigma and rho).

    The dispersion and correlation designs are replaced by intercept
    columns, so ``lambda`` holds ``log sigma`` and ``kappa`` holds
    ``arctanh rho``.

    Raises
    ------
    MissingCensoring, NonConvergence, SingularInformation
    """
    cdata = classic_data(data)
    _validate(cdata)
    start = options.init if options.init is not None else two_step_start(cdata)
    return _maximize(cdata, start, options, "classic")


def init_theta(data: Dataset, options: FitOptions = FitOptions()) -> Theta:
    """Start for the generalized fit: classic MLE, zero slopes elsewhere.

    Coefficients of non-constant dispersion and correlation columns start at
    zero; the intercepts (assumed to be the first columns of E and V) take
    the classic log-sigma and arctanh-rho estimates. If the classic fit stops
    short of convergence its last iterate is used.
    """
    try:
        classic = fit_classic(data, FitOptions(max_iter=options.max_iter, step_tol=options.step_tol))
    except NonConvergence as exc:
        if exc.result is None:
            raise
        # a rough classic estimate is still a sensible start for the larger model
        log.warning("classic fit for the start did not converge (%s); using its last iterate", exc)
        classic = exc.result
    th = classic.theta_hat
    r, s = data.dims[2], data.dims[3]
    lam, kappa = np.zeros(r), np.zeros(s)
    ce, cv = _intercept_scale(data.E), _intercept_scale(data.V)
    if r:
        if ce is None:
            log.warning("first column of E is not constant; dispersion start set to zero")
        else:
            lam[0] = th.lam[0] / ce
    if s:
        if cv is None:
            log.warning("first column of V is not constant; correlation start set to zero")
        else:
            kappa[0] = th.kappa[0] / cv
    return Theta(th.beta, th.gamma, lam, kappa)


def fit(data: Dataset, options: FitOptions = FitOptions()) -> FitResult:
    """Fit the generalized Heckman model by BFGS.

    Standard errors come from the observed information (negative FD Hessian
    of the analytic score) at the optimum.

    Raises
    ------
    MissingCensoring
        If the selection indicator is constant.
    NonConvergence
        If the score sup-norm is above tolerance when iterations stop; the
        partial :class:`FitResult` is attached as ``.result``.
    SingularInformation
        If the observed information is not positive definite.
    """
    _validate(data)
    start = options.init if options.init is not None else init_theta(data, options)
    return _maximize(data, start, options, "generalized")


def summary(fit: FitResult, level: float = 0.95) -> list[SummaryRow]:
    """Coefficient table with Wald z statistics and normal-theory intervals."""
    if not fit.converged:
        raise NotConverged("summary requires a converged fit")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    q = stats.norm.ppf(0.5 + level / 2)
    rows = []
    for (eq, name), est, se in zip(fit.labels, fit.params, fit.std_errors):
        z = est / se
        p = 2.0 * stats.norm.sf(abs(z))
        rows.append(SummaryRow(eq, name, float(est), float(se), float(z), float(p),
                               float(est - q * se), float(est + q * se)))
    return rows


_EQUATION_TITLES = {
    "beta": "Primary equation",
    "gamma": "Selection equation",
    "lambda": "Dispersion (log sigma)",
    "kappa": "Selection bias (arctanh rho)",
}


def format_summary(fit: FitResult, level: float = 0.95) -> str:
    rows = summary(fit, level)
    out = [f"{fit.model} Heckman fit: n={fit.n}, selected={fit.n_selected}, loglik={fit.loglik:.4f}"]
    header = f"{'':<16}{'estimate':>10}{'std.err':>10}{'z':>9}{'p':>8}{'ci_low':>10}{'ci_high':>10}"
    for eq in ("gamma", "beta", "lambda", "kappa"):
        block = [r for r in rows if r.equation == eq]
        if not block:
            continue
        out += ["", _EQUATION_TITLES[eq], header]
        for r in block:
            out.append(
                f"{r.name:<16}{r.estimate:>10.3f}{r.std_error:>10.3f}{r.z_value:>9.3f}"
                f"{r.p_value:>8.3f}{r.ci_low:>10.3f}{r.ci_high:>10.3f}"
            )
    return "\n".join(out)

"""Score residuals, simulated envelopes and generalized Cook distance."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, GenHeckError, NotConverged
from .estimate import FitResult, classic_data, refit
from .model import Dataset, hessian, predictors
from .numerics import QuadratureSpec, integrate, inv_mills, log_norm_cdf, log_norm_pdf

__all__ = [
    "psi",
    "ResidualReport",
    "EnvelopeBand",
    "CookDistance",
    "score_residuals",
    "envelope",
    "cook_distance",
    "model_data",
    "residuals_csv",
]

log = logging.getLogger(__name__)


def psi(mu2, sigma, rho, spec: QuadratureSpec | None = None):
    """E[(phi(zeta)/Phi(zeta))^2 | U = 1] by quadrature over the outcome.

    The expectation against the selected-outcome density is
    ``1/(sigma Phi(mu2)) * integral phi(z) phi(zeta)^2 / Phi(zeta) dy``;
    substituting ``y = mu1 + sigma z`` removes sigma. The product
    ``phi(z) phi(zeta)`` is a Gaussian kernel in z with mean ``-rho mu2`` and
    standard deviation ``sqrt(1 - rho^2)``, so each row is integrated in the
    standardized variable of that kernel, which stays well resolved as
    ``|rho| -> 1``. Arguments broadcast; the result has their common shape.
    """
    mu2, sigma, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu2, sigma, rho)))
    if np.any(~(sigma > 0)) or np.any(~(np.abs(rho) < 1)):
        raise DomainError("need sigma > 0 and |rho| < 1")
    shape = mu2.shape
    m2, rh = mu2.reshape(-1, 1), rho.reshape(-1, 1)
    sd = np.sqrt((1.0 - rh) * (1.0 + rh))
    log_sel = log_norm_cdf(m2)

    def f(t):
        z = -rh * m2 + sd * t
        zeta = (m2 + rh * z) / sd
        return sd * np.exp(log_norm_pdf(z) + log_norm_pdf(zeta) - log_sel) * inv_mills(zeta)

    out = integrate(f, spec)
    out = np.asarray(out).reshape(shape)
    return float(out) if out.ndim == 0 else out


@dataclass
class ResidualReport:
    """Score residuals of one fit.

    ``ordinary`` and ``standardized`` run over selected observations whose
    positions are ``indices``; ``all_obs`` has one entry per observation
    (zero where ``u = 0``).
    """

    ordinary: np.ndarray
    standardized: np.ndarray
    all_obs: np.ndarray
    indices: np.ndarray
    u: np.ndarray


def model_data(fit: FitResult, data: Dataset) -> Dataset:
    """``data`` in the parameterisation of ``fit`` (intercept-only E, V for classic fits)."""
    return classic_data(data) if fit.model == "classic" else data


def _residuals(theta, data: Dataset, spec=None) -> ResidualReport:
    pr = predictors(theta, data)
    sel = np.flatnonzero(data.u == 1)
    mu1, mu2, sigma, rho = pr.mu1[sel], pr.mu2[sel], pr.sigma[sel], pr.rho[sel]
    z = (data.y[sel] - mu1) / sigma
    one_m = (1.0 - rho) * (1.0 + rho)
    c = 1.0 / np.sqrt(one_m)
    zeta = c * (mu2 + rho * z)
    s = z - rho * c * inv_mills(zeta)
    var = 1.0 + mu2 * rho**2 * inv_mills(mu2) + rho**2 / one_m * psi(mu2, sigma, rho, spec)
    standardized = s / np.sqrt(var)
    all_obs = np.zeros(data.n)
    all_obs[sel] = s / np.sqrt(np.exp(log_norm_cdf(mu2)) * var)
    return ResidualReport(s, standardized, all_obs, sel, data.u.copy())


def score_residuals(fit: FitResult, data: Dataset) -> ResidualReport:
    """Ordinary, standardized and all-observation score residuals at the MLE.

    ``s_i = z_i - rho_i/sqrt(1-rho_i^2) phi(zeta_i)/Phi(zeta_i)`` has
    conditional mean zero given selection and conditional variance
    ``1 + mu2 rho^2 phi(mu2)/Phi(mu2) + rho^2/(1-rho^2) Psi``. The
    standardized residual divides by its square root; the all-observation
    residual additionally divides by ``sqrt(Phi(mu2))``.
    """
    if not fit.converged:
        raise NotConverged("residuals require a converged fit")
    return _residuals(fit.theta_hat, model_data(fit, data))


@dataclass
class EnvelopeBand:
    sorted_theoretical: np.ndarray
    observed: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    coverage_level: float
    n_sim: int
    n_failed: int
    order: np.ndarray
    kind: str = "standardized"

    @property
    def inside(self) -> np.ndarray:
        return (self.observed >= self.lower) & (self.observed <= self.upper)

    @property
    def fraction_inside(self) -> float:
        return float(np.mean(self.inside))


def _qq_positions(m: int) -> np.ndarray:
    return stats.norm.ppf((np.arange(1, m + 1) - 0.375) / (m + 0.25))


def _pick(report: ResidualReport, kind: str):
    if kind == "standardized":
        return report.standardized, report.indices
    if kind == "all_obs":
        return report.all_obs, np.arange(report.all_obs.size)
    raise ValueError(f"unknown residual kind {kind!r}")


def envelope(
    fit: FitResult,
    data: Dataset,
    n_sim: int = 100,
    level: float = 0.95,
    seed: int = 0,
    kind: str = "standardized",
    threads: int = 1,
    max_iter: int = 50,
) -> EnvelopeBand:
    """Simulated QQ envelope of the score residuals.

    ``n_sim`` datasets are drawn from the fitted model on the same designs,
    each is refitted (warm start at the estimate) and its sorted residuals
    are recorded. Because the number of selected observations varies across
    simulations, each simulated sample is summarised by its empirical
    quantiles at ``linspace(0, 1, m)`` (``m`` = observed length), which are
    exactly its order statistics when the lengths agree. Band edges are the
    ``(1 -+ level)/2`` quantiles across simulations; ``level=1`` gives the
    pointwise min and max. Failed refits are dropped and counted.
    """
    from .simulate import gen_dataset, mix_seed

    if not fit.converged:
        raise NotConverged("envelope requires a converged fit")
    if n_sim < 19:
        raise ValueError("n_sim must be >= 19")
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    mdata = model_data(fit, data)
    obs_res, obs_idx = _pick(_residuals(fit.theta_hat, mdata), kind)
    order = np.argsort(obs_res, kind="stable")
    observed = obs_res[order]
    m = observed.size
    probs = np.linspace(0.0, 1.0, m)
    designs = {"X": mdata.X, "W": mdata.W, "E": mdata.E, "V": mdata.V, "names": mdata.names}

    def one(b):
        sim = gen_dataset(fit.theta_hat, designs, mix_seed(seed, b))
        try:
            f_b = refit(sim, fit, max_iter=max_iter)
            res, _ = _pick(_residuals(f_b.theta_hat, sim), kind)
        except (GenHeckError, np.linalg.LinAlgError) as exc:
            log.info("envelope simulation %d failed: %s", b, exc)
            return None
        return np.quantile(np.sort(res), probs)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sims = list(pool.map(one, range(n_sim)))
    else:
        sims = [one(b) for b in range(n_sim)]
    good = np.array([s for s in sims if s is not None])
    if good.shape[0] == 0:
        raise GenHeckError("every envelope simulation failed")
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    return EnvelopeBand(
        sorted_theoretical=_qq_positions(m),
        observed=observed,
        lower=np.quantile(good, lo_q, axis=0),
        median=np.median(good, axis=0),
        upper=np.quantile(good, hi_q, axis=0),
        coverage_level=level,
        n_sim=n_sim,
        n_failed=n_sim - good.shape[0],
        order=obs_idx[order],
        kind=kind,
    )


@dataclass
class CookDistance:
    values: np.ndarray
    threshold: float
    weight: str

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.values > self.threshold)

    @property
    def failed(self) -> np.ndarray:
        return np.flatnonzero(np.isnan(self.values))


def cook_distance(
    fit: FitResult,
    data: Dataset,
    rows=None,
    weight: str = "information",
    max_iter: int = 50,
    threads: int = 1,
) -> CookDistance:
    """Generalized Cook distance by exact case-deletion refits.

    ``GCD_i = d' M d`` with ``d = theta_hat - theta_hat_(i)``. The default
    weight is the observed information ``M = -H(theta_hat)``;
    ``weight="covariance"`` uses its inverse instead. Each deletion refit is
    warm-started at ``theta_hat``. ``rows`` restricts the computation to a
    subset (other entries stay NaN, as do failed refits). The influence
    threshold is ``2 dim(theta) / n``.
    """
    if not fit.converged:
        raise NotConverged("Cook distance requires a converged fit")
    mdata = model_data(fit, data)
    info = -hessian(fit.theta_hat, mdata)
    if weight == "information":
        M = info
    elif weight == "covariance":
        M = fit.covariance
    else:
        raise ValueError("weight must be 'information' or 'covariance'")
    theta = fit.params
    rows = np.arange(mdata.n) if rows is None else np.asarray(rows)

    def one(i):
        try:
            d = theta - refit(mdata.drop(int(i)), fit, max_iter=max_iter).params
        except (GenHeckError, np.linalg.LinAlgError, ValueError) as exc:
            log.info("deletion of row %d failed: %s", i, exc)
            return np.nan
        return float(d @ M @ d)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(one, rows))
    else:
        vals = [one(i) for i in rows]
    out = np.full(mdata.n, np.nan)
    out[rows] = vals
    return CookDistance(out, 2.0 * theta.size / mdata.n, weight)


def _f(x) -> str:
    return repr(float(x))


def residuals_csv(report: ResidualReport, band: EnvelopeBand | None = None, kind: str = "standardized") -> str:
    """CSV with columns index,u,theoretical_quantile,residual,lower,upper (sorted residuals)."""
    lines = ["index,u,theoretical_quantile,residual,lower,upper"]
    if band is not None:
        for j, i in enumerate(band.order):
            lines.append(
                f"{int(i)},{int(report.u[i])},{_f(band.sorted_theoretical[j])},{_f(band.observed[j])},"
                f"{_f(band.lower[j])},{_f(band.upper[j])}"
            )
    else:
        res, idx = _pick(report, kind)
        order = np.argsort(res, kind="stable")
        q = _qq_positions(res.size)
        for j, k in enumerate(order):
            lines.append(f"{int(idx[k])},{int(report.u[idx[k]])},{_f(q[j])},{_f(res[k])},,")
    return "\n".join(lines) + "\n"

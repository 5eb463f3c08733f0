"""Generalized Heckman selection model: data containers, likelihood and derivatives.

The outcome ``Y1* = x'beta + e1`` is observed only when the latent selection
``Y2* = w'gamma + e2`` is positive. Errors are bivariate normal with
observation-specific standard deviation ``sigma_i = exp(e_i'lambda)`` and
correlation ``rho_i = tanh(v_i'kappa)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, DomainError
from .numerics import fd_step, inv_mills, log_norm_cdf, log_norm_pdf

__all__ = [
    "Dataset",
    "Theta",
    "Predictors",
    "ConditionalMoments",
    "predictors",
    "cond_density",
    "loglik",
    "loglik_obs",
    "score",
    "score_obs",
    "hessian",
    "hessian_obs",
    "hessian_beta",
    "conditional_moments",
    "BLOCKS",
    "KAPPA_CLAMP",
]

BLOCKS = ("beta", "gamma", "lambda", "kappa")
# tanh(18) rounds to 1 - 4.6e-16; beyond this 1 - rho^2 loses all precision.
KAPPA_CLAMP = 18.0


def _matrix(a, n, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(n, 0)
    if a.ndim != 2 or a.shape[0] != n:
        raise DimensionMismatch(f"{name} must have {n} rows, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass
class Dataset:
    """Outcome, selection indicator and the four design matrices.

    Parameters
    ----------
    y : array_like, shape (n,)
        Outcome. Only rows with ``u == 1`` are used; other entries may be NaN
        and are stored as 0.
    u : array_like, shape (n,)
        Selection indicator in {0, 1}.
    X, W, E, V : array_like, shape (n, p), (n, q), (n, r), (n, s)
        Designs of the outcome mean, selection index, log-dispersion and
        arctanh-correlation. ``E`` and ``V`` may have zero columns.
    names : dict, optional
        Column labels per block (keys ``beta``, ``gamma``, ``lambda``,
        ``kappa``). Defaults to ``x0, x1, ...`` style names.
    """

    y: np.ndarray
    u: np.ndarray
    X: np.ndarray
    W: np.ndarray
    E: np.ndarray
    V: np.ndarray
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        u = np.asarray(self.u)
        if u.ndim != 1:
            raise DimensionMismatch("u must be one-dimensional")
        n = u.size
        if not np.all((u == 0) | (u == 1)):
            raise ValueError("u must contain only 0 and 1")
        self.u = u.astype(np.int8)
        y = np.asarray(self.y, dtype=float)
        if y.shape != (n,):
            raise DimensionMismatch(f"y must have length {n}, got shape {y.shape}")
        sel = self.u == 1
        bad = sel & ~np.isfinite(y)
        if bad.any():
            raise ValueError(f"outcome missing or non-finite where u=1 (row {int(np.argmax(bad))})")
        self.y = np.where(sel, y, 0.0)
        self.X = _matrix(self.X, n, "X")
        self.W = _matrix(self.W, n, "W")
        self.E = _matrix(self.E, n, "E")
        self.V = _matrix(self.V, n, "V")
        defaults = {
            "beta": [f"x{j}" for j in range(self.X.shape[1])],
            "gamma": [f"w{j}" for j in range(self.W.shape[1])],
            "lambda": [f"e{j}" for j in range(self.E.shape[1])],
            "kappa": [f"v{j}" for j in range(self.V.shape[1])],
        }
        names = {k: list(self.names.get(k, defaults[k])) for k in BLOCKS}
        for k, m in zip(BLOCKS, self.dims):
            if len(names[k]) != m:
                raise DimensionMismatch(f"{len(names[k])} names given for {m} {k} columns")
        self.names = names

    @property
    def n(self) -> int:
        return int(self.u.size)

    @property
    def n_selected(self) -> int:
        return int(self.u.sum())

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.X.shape[1], self.W.shape[1], self.E.shape[1], self.V.shape[1])

    @property
    def labels(self) -> list[tuple[str, str]]:
        """(block, column name) for every entry of the flattened parameter vector."""
        return [(k, nm) for k in BLOCKS for nm in self.names[k]]

    def subset(self, rows) -> "Dataset":
        """Rows selected by an index array or boolean mask."""
        rows = np.asarray(rows)
        return Dataset(
            self.y[rows], self.u[rows], self.X[rows], self.W[rows],
            self.E[rows], self.V[rows], names=self.names,
        )

    def drop(self, i: int) -> "Dataset":
        return self.subset(np.arange(self.n) != i)

    def replace(self, names=None, **kw) -> "Dataset":
        """Copy with some fields swapped; labels of swapped designs are reset
        unless given in ``names``."""
        fields = dict(y=self.y, u=self.u, X=self.X, W=self.W, E=self.E, V=self.V)
        fields.update(kw)
        labels = {b: self.names[b] for key, b in zip("XWEV", BLOCKS) if key not in kw}
        labels.update(names or {})
        return Dataset(**fields, names=labels)


@dataclass
class Theta:
    """Parameter blocks (beta, gamma, lambda, kappa)."""

    beta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        for name in ("beta", "gamma", "lam", "kappa"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).ravel()
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite entry in {name}")
            setattr(self, name, v)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.beta.size, self.gamma.size, self.lam.size, self.kappa.size)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma, self.lam, self.kappa])

    @classmethod
    def unflatten(cls, vec, dims: Sequence[int]) -> "Theta":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.size != sum(dims):
            raise DimensionMismatch(f"vector of length {vec.size} for blocks {tuple(dims)}")
        cuts = np.cumsum(dims)[:-1]
        return cls(*np.split(vec, cuts))

    @staticmethod
    def slices(dims: Sequence[int]) -> dict[str, slice]:
        """Position of each block inside the flattened vector."""
        out, start = {}, 0
        for k, m in zip(BLOCKS, dims):
            out[k] = slice(start, start + m)
            start += m
        return out

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "Theta":
        return cls(*(np.zeros(m) for m in dims))


def _as_theta(theta, data: Dataset) -> Theta:
    if not isinstance(theta, Theta):
        theta = Theta.unflatten(theta, data.dims)
    if theta.dims != data.dims:
        raise DimensionMismatch(f"theta blocks {theta.dims} vs design columns {data.dims}")
    return theta


class Predictors(NamedTuple):
    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    at_clamp: bool


def predictors(theta, data: Dataset) -> Predictors:
    """Apply the four linear predictors and their links.

    The arctanh-correlation index is clipped at +-18 before ``tanh``;
    ``at_clamp`` reports whether any observation hit the clip.
    """
    theta = _as_theta(theta, data)
    eta = data.V @ theta.kappa
    at_clamp = bool(np.any(np.abs(eta) > KAPPA_CLAMP))
    eta = np.clip(eta, -KAPPA_CLAMP, KAPPA_CLAMP)
    return Predictors(
        mu1=data.X @ theta.beta,
        mu2=data.W @ theta.gamma,
        sigma=np.exp(data.E @ theta.lam),
        rho=np.tanh(eta),
        at_clamp=at_clamp,
    )


def _check_domain(sigma, rho):
    if np.any(~(np.asarray(sigma) > 0)):
        raise DomainError("sigma must be positive")
    if np.any(~(np.abs(np.asarray(rho)) < 1)):
        raise DomainError("rho must lie in (-1, 1)")


def _standardize(y, mu1, mu2, sigma, rho):
    """Return z, zeta and 1/sqrt(1-rho^2)."""
    z = (y - mu1) / sigma
    r = 1.0 / np.sqrt((1.0 - rho) * (1.0 + rho))
    return z, r * (mu2 + rho * z), r


def cond_density(y, mu1, mu2, sigma, rho):
    """Density of the observed outcome given selection, f(y | U = 1).

    ``phi(z) Phi(zeta) / (sigma Phi(mu2))`` with ``z = (y - mu1)/sigma`` and
    ``zeta = (mu2 + rho z)/sqrt(1 - rho^2)``; evaluated on the log scale.
    """
    _check_domain(sigma, rho)
    z, zeta, _ = _standardize(np.asarray(y, float), mu1, mu2, sigma, rho)
    logf = log_norm_pdf(z) + log_norm_cdf(zeta) - log_norm_cdf(mu2) - np.log(sigma)
    return np.exp(logf) if np.ndim(logf) else float(np.exp(logf))


def loglik_obs(theta, data: Dataset) -> np.ndarray:
    """Per-observation log-likelihood contributions."""
    pr = predictors(theta, data)
    z, zeta, _ = _standardize(data.y, pr.mu1, pr.mu2, pr.sigma, pr.rho)
    sel = data.u == 1
    selected = log_norm_cdf(zeta) + log_norm_pdf(z) - np.log(pr.sigma)
    return np.where(sel, selected, log_norm_cdf(-pr.mu2))


def loglik(theta, data: Dataset) -> float:
    return float(np.sum(loglik_obs(theta, data)))


def score_obs(theta, data: Dataset) -> np.ndarray:
    """Per-observation gradient of the log-likelihood, shape (n, p+q+r+s).

    With ``m = phi(zeta)/Phi(zeta)`` and ``c = 1/sqrt(1 - rho^2)`` the
    derivatives with respect to the four linear indices are::

        mu1:          u (z - rho c m) / sigma
        mu2:          u c m - (1 - u) phi(mu2)/Phi(-mu2)
        log sigma:    u (z^2 - 1 - rho c z m)
        arctanh rho:  u c m (z + rho mu2)

    each multiplied by the corresponding design row.
    """
    pr = predictors(theta, data)
    z, zeta, c = _standardize(data.y, pr.mu1, pr.mu2, pr.sigma, pr.rho)
    u = data.u.astype(float)
    m = inv_mills(zeta)
    d_mu1 = u * (z - pr.rho * c * m) / pr.sigma
    d_mu2 = u * c * m - (1.0 - u) * inv_mills(-pr.mu2)
    d_lsig = u * (z * z - 1.0 - pr.rho * c * z * m)
    d_eta = u * c * m * (z + pr.rho * pr.mu2)
    return np.hstack([
        d_mu1[:, None] * data.X,
        d_mu2[:, None] * data.W,
        d_lsig[:, None] * data.E,
        d_eta[:, None] * data.V,
    ])


def score(theta, data: Dataset) -> np.ndarray:
    return np.sum(score_obs(theta, data), axis=0)


def hessian(theta, data: Dataset) -> np.ndarray:
    """Hessian of the log-likelihood by central differences of the analytic score.

    Symmetrised as ``(H + H')/2``.
    """
    x = _as_theta(theta, data).flatten()
    h = _fd_jacobian(lambda t: score(t, data), x)
    return 0.5 * (h + h.T)


def hessian_obs(theta, data: Dataset) -> np.ndarray:
    """Per-observation Hessians, shape (n, k, k), by FD of ``score_obs``."""
    x = _as_theta(theta, data).flatten()
    h = _fd_jacobian(lambda t: score_obs(t, data), x)
    return 0.5 * (h + np.swapaxes(h, -1, -2))


def _fd_jacobian(g, x):
    steps = fd_step(x)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        cols.append((g(x + e) - g(x - e)) / (2.0 * steps[j]))
    return np.stack(cols, axis=-1)


def hessian_beta(theta, data: Dataset) -> np.ndarray:
    """Closed-form beta-block of the Hessian.

    ``-sum_i u_i {rho^2/(1-rho^2) [zeta m + m^2] + 1} x_i x_i' / sigma_i^2``.
    """
    pr = predictors(theta, data)
    z, zeta, c = _standardize(data.y, pr.mu1, pr.mu2, pr.sigma, pr.rho)
    m = inv_mills(zeta)
    w = data.u * ((pr.rho * c) ** 2 * (zeta * m + m * m) + 1.0) / pr.sigma**2
    return -(data.X * w[:, None]).T @ data.X


class ConditionalMoments(NamedTuple):
    EY_given_sel: float
    EZ_given_sel: float
    EZ2_given_sel: float
    EMills_given_sel: float
    EZetaMills_given_sel: float


def conditional_moments(mu1, mu2, sigma, rho) -> ConditionalMoments:
    """Closed-form moments of the selected outcome.

    With ``lam = phi(mu2)/Phi(mu2)``:

    - ``E(Y|U=1) = mu1 + rho sigma lam``
    - ``E(Z|U=1) = rho lam``
    - ``E(Z^2|U=1) = 1 - mu2 rho^2 lam``
    - ``E(m(zeta)|U=1) = sqrt(1-rho^2) lam``
    - ``E(zeta m(zeta)|U=1) = +mu2 (1-rho^2) lam``

    The last identity follows from integrating ``zeta phi(zeta) phi(z)``
    against the normal kernel; note the positive sign.
    """
    _check_domain(sigma, rho)
    lam = inv_mills(mu2)
    one_m = (1.0 - rho) * (1.0 + rho)
    return ConditionalMoments(
        EY_given_sel=mu1 + rho * sigma * lam,
        EZ_given_sel=rho * lam,
        EZ2_given_sel=1.0 - mu2 * rho**2 * lam,
        EMills_given_sel=np.sqrt(one_m) * lam,
        EZetaMills_given_sel=mu2 * one_m * lam,
    )


def density_integrand(mu2, rho):
    """Selected-outcome density in the standardized scale z, as a function of z.

    ``phi(z) Phi(zeta(z)) / Phi(mu2)``; used by quadrature-based checks.
    """
    def f(z):
        _, zeta, _ = _standardize(z, 0.0, mu2, 1.0, rho)
        return np.exp(log_norm_pdf(z) + log_norm_cdf(zeta) - log_norm_cdf(mu2))
    return f


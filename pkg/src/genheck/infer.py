"""Likelihood ratio, Wald and gradient tests of linear (zero) restrictions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DimensionMismatch, NotConverged, NotNested, SingularCovariance
from .estimate import FitResult, classic_data, fit, fit_classic
from .model import BLOCKS, Dataset, Theta, score

__all__ = [
    "Restriction",
    "TestResult",
    "lr_test",
    "wald_test",
    "gradient_test",
    "drop_columns",
    "embed",
    "restriction_for",
    "test_zero",
    "test_no_selection_bias",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Restriction:
    """Hypothesis ``theta[indices] == values`` on the flattened parameter vector."""

    indices: tuple
    values: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        vals = tuple(float(v) for v in np.broadcast_to(self.values, (len(idx),)))
        if not idx:
            raise ValueError("a restriction needs at least one index")
        if len(set(idx)) != len(idx):
            raise ValueError("restriction indices must be distinct")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def check(self, k: int):
        if min(self.indices) < 0 or max(self.indices) >= k:
            raise DimensionMismatch(f"restriction index out of range for {k} parameters")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    kind: str
    warning: bool = False

    __test__ = False  # not a pytest class


def _result(stat, df, kind, warning=False):
    return TestResult(float(stat), int(df), float(stats.chi2.sf(stat, df)), kind, warning)


def lr_test(fit_full: FitResult, fit_restricted: FitResult, df: int) -> TestResult:
    """``2 (loglik_full - loglik_restricted)`` against chi-square(df)."""
    if not (fit_full.converged and fit_restricted.converged):
        raise NotConverged("both fits must be converged")
    diff = fit_full.loglik - fit_restricted.loglik
    if diff < -1e-6:
        raise NotNested(f"restricted loglik exceeds full loglik by {-diff:.3g}")
    return _result(max(2.0 * diff, 0.0), df, "LR")


def wald_test(fit: FitResult, restriction: Restriction) -> TestResult:
    """Quadratic form of the restricted coordinates in their covariance block."""
    if not fit.converged:
        raise NotConverged("Wald test requires a converged fit")
    restriction.check(fit.params.size)
    idx = list(restriction.indices)
    d = fit.params[idx] - np.asarray(restriction.values)
    cov = fit.covariance[np.ix_(idx, idx)]
    if not np.all(np.isfinite(cov)):
        raise SingularCovariance("covariance block is not finite")
    try:
        stat = float(d @ np.linalg.solve(cov, d))
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    return _result(stat, len(idx), "Wald")


def gradient_test(theta_restricted, theta_full, data: Dataset, df: int) -> TestResult:
    """Gradient statistic ``S(theta_r)' (theta_full - theta_r)``.

    Both parameter vectors live in the full model's space (restricted
    coordinates set to their hypothesised values). The statistic can be
    slightly negative in finite samples; it is then floored at zero and the
    result carries ``warning=True``.
    """
    tr = theta_restricted.flatten() if isinstance(theta_restricted, Theta) else np.asarray(theta_restricted, float)
    tf = theta_full.flatten() if isinstance(theta_full, Theta) else np.asarray(theta_full, float)
    if tr.shape != tf.shape or tr.size != sum(data.dims):
        raise DimensionMismatch("parameter vectors must both match the full model")
    stat = float(score(tr, data) @ (tf - tr))
    warning = stat < 0
    if warning:
        log.warning("negative gradient statistic %.3g floored at 0", stat)
    return _result(max(stat, 0.0), df, "Gradient", warning)


def drop_columns(data: Dataset, block: str, columns: Sequence[int] | None = None) -> Dataset:
    """Dataset with some design columns of one block removed (all if ``None``).

    Fixing a coefficient at zero is the same as deleting its column, so this
    gives the restricted model for zero restrictions.
    """
    key = "XWEV"[BLOCKS.index(block)]
    A = getattr(data, key)
    keep = np.ones(A.shape[1], bool)
    keep[list(range(A.shape[1])) if columns is None else list(columns)] = False
    names = {block: [nm for nm, k in zip(data.names[block], keep) if k]}
    return data.replace(names=names, **{key: A[:, keep]})


def embed(theta: Theta, block: str, columns: Sequence[int], full_size: int) -> Theta:
    """Insert zeros at ``columns`` of ``block`` so a restricted estimate fits the full model."""
    parts = {"beta": theta.beta, "gamma": theta.gamma, "lambda": theta.lam, "kappa": theta.kappa}
    keep = [j for j in range(full_size) if j not in set(columns)]
    full = np.zeros(full_size)
    full[keep] = parts[block]
    parts[block] = full
    return Theta(parts["beta"], parts["gamma"], parts["lambda"], parts["kappa"])


def restriction_for(data: Dataset, block: str, columns: Sequence[int] | None = None) -> Restriction:
    """Zero restriction on ``columns`` (default all) of ``block`` in the flattened vector."""
    sl = Theta.slices(data.dims)[block]
    cols = range(sl.stop - sl.start) if columns is None else columns
    return Restriction(tuple(sl.start + c for c in cols), (0.0,) * len(list(cols)))


def test_zero(
    data: Dataset,
    block: str = "kappa",
    columns: Sequence[int] | None = None,
    model: str = "generalized",
    fit_full: FitResult | None = None,
) -> dict:
    """LR, gradient and Wald tests that some coefficients of ``block`` are zero.

    ``columns`` picks the design columns to restrict (default all). The
    restricted model is fitted by deleting those columns. With
    ``model="classic"`` the dispersion and correlation designs are the
    intercept alone. Returns the three :class:`TestResult` objects under
    ``"LR"``, ``"Gradient"``, ``"Wald"`` plus both fits.
    """
    if model == "classic":
        data = classic_data(data)
        fitter = fit_classic
    elif model == "generalized":
        fitter = fit
    else:
        raise ValueError(f"unknown model {model!r}")
    if block not in BLOCKS:
        raise ValueError(f"block must be one of {BLOCKS}")
    full = fit_full if fit_full is not None else fitter(data)
    width = data.dims[BLOCKS.index(block)]
    cols = list(range(width)) if columns is None else sorted(int(c) for c in columns)
    if not cols or cols[0] < 0 or cols[-1] >= width:
        raise DimensionMismatch(f"columns {cols} out of range for {width} {block} columns")
    restricted = fitter(drop_columns(data, block, cols))
    theta_r = embed(restricted.theta_hat, block, cols, width)
    df = len(cols)
    return {
        "LR": lr_test(full, restricted, df),
        "Gradient": gradient_test(theta_r, full.theta_hat, data, df),
        "Wald": wald_test(full, restriction_for(data, block, cols)),
        "fit_full": full,
        "fit_restricted": restricted,
    }


def test_no_selection_bias(data: Dataset, model: str = "generalized", columns=None, fit_full=None) -> dict:
    """Tests of ``kappa = 0`` (all columns by default): no sample selection bias."""
    return test_zero(data, "kappa", columns, model, fit_full)


test_zero.__test__ = False
test_no_selection_bias.__test__ = False

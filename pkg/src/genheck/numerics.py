"""Stable normal special functions, quadrature on the real line and FD gradients.

Every function here is pure and vectorised over numpy arrays; scalars in give
Python floats out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import erfc, erfcx, ndtr

from .errors import NonConvergence

__all__ = [
    "QuadratureSpec",
    "norm_pdf",
    "log_norm_pdf",
    "log_norm_cdf",
    "inv_mills",
    "integrate",
    "fd_gradient",
    "fd_step",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _out(x, value):
    return float(value) if np.ndim(x) == 0 else value


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return _out(x, np.exp(-0.5 * x * x - _LOG_SQRT_2PI))


def log_norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _out(x, -0.5 * x * x - _LOG_SQRT_2PI)


def log_norm_cdf(x):
    """log Phi(x) without underflow in the lower tail.

    For x < 0 the scaled complementary error function gives
    ``Phi(x) = erfcx(-x/sqrt2) exp(-x^2/2) / 2``, so the log is a sum of two
    negative terms with no cancellation. For x >= 0, ``log1p(-Phi(-x))``.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lower = np.log(0.5 * erfcx(-x / _SQRT2)) - 0.5 * x * x
        upper = np.log1p(-0.5 * erfc(x / _SQRT2))
    return _out(x, np.where(x < 0.0, lower, upper))


def inv_mills(x):
    """Inverse Mills ratio phi(x)/Phi(x).

    Lower tail uses ``sqrt(2/pi) / erfcx(-x/sqrt2)``, which tends to -x with no
    overflow; for x >= 0 the direct ratio is safe because Phi(x) >= 1/2.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lower = _SQRT_2_OVER_PI / erfcx(-x / _SQRT2)
        upper = np.exp(-0.5 * x * x - _LOG_SQRT_2PI) / ndtr(x)
    return _out(x, np.where(x < 0.0, lower, upper))


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre rule on (-1, 1) mapped to the real line by ``x = c + a*atanh(t)``.

    ``width`` is the substitution scale ``a`` in units of the integrand's
    natural scale; 3 keeps Gaussian-tailed integrands exact to ~1e-14 at 128
    nodes.
    """

    node_count: int = 128
    abs_tol: float = 1e-10
    width: float = 3.0

    def __post_init__(self):
        if self.node_count < 16:
            raise ValueError("node_count must be >= 16")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if not self.width > 0:
            raise ValueError("width must be positive")


@lru_cache(maxsize=16)
def _mapped_rule(node_count: int, width: float):
    t, w = np.polynomial.legendre.leggauss(node_count)
    u = width * np.arctanh(t)
    jac = w * width / (1.0 - t * t)
    u.setflags(write=False)
    jac.setflags(write=False)
    return u, jac


def _apply_rule(f, node_count, width, center, scale):
    u, jac = _mapped_rule(node_count, width)
    x = center + scale * u
    return np.sum(np.asarray(f(x)) * (jac * scale), axis=-1)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    spec: QuadratureSpec | None = None,
    center: float = 0.0,
    scale: float = 1.0,
):
    """Integrate ``f`` over the whole real line.

    ``f`` receives the 1-d array of nodes and may return an array whose last
    axis runs over the nodes; leading axes are integrated independently
    (batched integrals). The rule is applied at ``node_count`` and
    ``2*node_count`` nodes; the finer value is returned.

    Raises
    ------
    NonConvergence
        If the two rules disagree by more than ``spec.abs_tol`` anywhere.
    """
    spec = spec or QuadratureSpec()
    coarse = _apply_rule(f, spec.node_count, spec.width, center, scale)
    fine = _apply_rule(f, 2 * spec.node_count, spec.width, center, scale)
    gap = np.max(np.abs(fine - coarse)) if np.size(fine) else 0.0
    if not gap <= spec.abs_tol:
        raise NonConvergence(
            f"quadrature changed by {gap:.3g} on node doubling (tol {spec.abs_tol:.1g})"
        )
    return float(fine) if np.ndim(fine) == 0 else fine


def fd_step(x: np.ndarray) -> np.ndarray:
    """Central-difference step eps**(1/3) * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    return np.finfo(float).eps ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x))


def fd_gradient(f, x, h=None) -> np.ndarray:
    """Central finite-difference gradient of a scalar (or array-valued) ``f``.

    With ``h`` omitted each coordinate uses :func:`fd_step`. If ``f`` returns
    an array, the result stacks the partial derivatives along the last axis,
    so the FD Jacobian of a gradient is obtained directly.
    """
    x = np.asarray(x, dtype=float)
    steps = fd_step(x) if h is None else np.broadcast_to(np.asarray(h, float), x.shape)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * steps[j]))
    return np.stack(cols, axis=-1)

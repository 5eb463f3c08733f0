"""Maximum-likelihood estimation, inference and diagnostics for the generalized
Heckman sample-selection model.

The outcome mean, selection propensity, dispersion (log link) and
selection-bias correlation (arctanh link) each follow their own linear
predictor. With intercept-only dispersion and correlation designs the model
reduces to the classic Heckman model.
"""

__version__ = "0.1.0"

from .diagnostics import (
    CookDistance,
    EnvelopeBand,
    ResidualReport,
    cook_distance,
    envelope,
    psi,
    score_residuals,
)
from .errors import (
    DimensionMismatch,
    DomainError,
    GenHeckError,
    MissingCensoring,
    NonConvergence,
    NotConverged,
    SingularInformation,
)
from .estimate import FitOptions, FitResult, fit, fit_classic, init_theta, summary
from .infer import gradient_test, lr_test, test_no_selection_bias, test_zero, wald_test
from .model import (
    Dataset,
    Theta,
    cond_density,
    conditional_moments,
    hessian,
    hessian_obs,
    loglik,
    loglik_obs,
    predictors,
    score,
    score_obs,
)
from .numerics import QuadratureSpec, integrate
from .simulate import Scenario, gen_dataset, make_scenario, monte_carlo, scenario, size_power

__all__ = [
    "CookDistance",
    "Dataset",
    "DimensionMismatch",
    "DomainError",
    "EnvelopeBand",
    "FitOptions",
    "FitResult",
    "GenHeckError",
    "MissingCensoring",
    "NonConvergence",
    "NotConverged",
    "QuadratureSpec",
    "ResidualReport",
    "Scenario",
    "SingularInformation",
    "Theta",
    "cond_density",
    "conditional_moments",
    "cook_distance",
    "envelope",
    "fit",
    "fit_classic",
    "gen_dataset",
    "gradient_test",
    "hessian",
    "hessian_obs",
    "init_theta",
    "integrate",
    "loglik",
    "loglik_obs",
    "lr_test",
    "make_scenario",
    "monte_carlo",
    "predictors",
    "psi",
    "scenario",
    "score",
    "score_obs",
    "score_residuals",
    "size_power",
    "summary",
    "test_no_selection_bias",
    "test_zero",
    "wald_test",
]

"""Plain EM fitting of full-covariance Gaussian mixture priors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from .imaging import truncate_covariance
from .model import GaussianSource, GmmSource

RIDGE = 1e-6


@dataclass
class EmResult:
    model: GmmSource
    log_likelihood: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.log_likelihood)


def fit_em(
    X,
    n_components: int,
    s_max: int | None = None,
    iterations: int = 100,
    seed: int | None = 0,
    tol: float = 1e-10,
) -> EmResult:
    """Fit a ``n_components`` GMM to the rows of ``X``.

    Each M-step adds ``1e-6 I`` to the class covariances. After fitting,
    covariances are truncated to their top ``s_max`` principal components.
    The total log-likelihood after every iteration is returned in the trace;
    hitting the iteration cap is not an error.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array with one sample per row")
    if n_components < 1 or n_components > X.shape[0]:
        raise ValueError(f"n_components must lie in [1, {X.shape[0]}]")
    gm = GaussianMixture(
        n_components=n_components,
        covariance_type="full",
        reg_covar=RIDGE,
        max_iter=1,
        warm_start=True,
        random_state=seed,
    )
    trace = []
    converged = False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(iterations):
            gm.fit(X)
            trace.append(float(gm.score(X) * X.shape[0]))
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-1]):
                converged = True
                break
    weights = gm.weights_ / gm.weights_.sum()
    comps = []
    for mean, cov in zip(gm.means_, gm.covariances_):
        if s_max is not None:
            cov = truncate_covariance(cov, s_max)
        comps.append(GaussianSource(mean, cov))
    return EmResult(GmmSource(weights, comps), trace, converged)

"""Conditional-mean estimators for Gaussian and Gaussian-mixture sources.

Measurements may be passed as a single vector of length ``l`` or as an
``(l, count)`` matrix whose columns are independent measurements; outputs
follow the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .model import (
    GaussianSource,
    MeasurementSystem,
    as_gmm,
    random_kernel,
)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class WienerFilter:
    """Affine estimator ``x_hat(y) = offset + gain @ y``."""

    gain: np.ndarray
    offset: np.ndarray
    class_index: Optional[int] = None

    def __call__(self, y) -> np.ndarray:
        return gaussian_estimate(self, y)


@dataclass(frozen=True, eq=False)
class ClassPosterior:
    """Class posteriors; arrays have shape ``(K,)`` or ``(K, count)``."""

    probabilities: np.ndarray
    log_likelihoods: np.ndarray

    @property
    def map_class(self):
        return np.argmax(self.log_likelihoods, axis=0)


def _as_columns(y, n_rows: int):
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y2 = y[:, None] if single else y
    if y2.ndim != 2 or y2.shape[0] != n_rows:
        raise ValueError(f"expected measurements with {n_rows} rows, got shape {y.shape}")
    return y2, single


def wiener_filter(
    source: GaussianSource, system: MeasurementSystem, class_index: Optional[int] = None
) -> WienerFilter:
    """Wiener gain ``Sigma Phi^T (s2 I + Phi Sigma Phi^T)^{-1}`` and its affine offset.

    The inverse is applied through a Cholesky solve on whichever Gram matrix
    is full rank: the ``l x l`` measurement-space one when ``l <= s``, or the
    ``s x s`` one in the source image (push-through identity) when ``l > s``.
    """
    system.check_dim(source.dim)
    phi, s2 = system.kernel, system.noise_variance
    ell, s = phi.shape[0], source.rank
    L = source.factor
    if s == 0:
        gain = np.zeros((source.dim, ell))
    elif s < ell:
        A = phi @ L
        gram = s2 * np.eye(s) + A.T @ A
        gain = L @ cho_solve(cho_factor(gram), A.T)
    else:
        A = phi @ L
        gram = s2 * np.eye(ell) + A @ A.T
        gain = cho_solve(cho_factor(gram), A @ L.T).T
    offset = source.mean - gain @ (phi @ source.mean)
    return WienerFilter(gain=gain, offset=offset, class_index=class_index)


def gaussian_estimate(filt: WienerFilter, y) -> np.ndarray:
    y2, single = _as_columns(y, filt.gain.shape[1])
    out = filt.offset[:, None] + filt.gain @ y2
    return out[:, 0] if single else out


class MixtureFilter:
    """Per-class Wiener filters and likelihood factorizations for one system.

    Built once per ``(gmm, system)`` pair and reused across many measurements.
    Class likelihoods use the SVD ``Phi L_k = U S V^T`` of the whitened
    kernel, so ``Sigma_y = s2 I + Phi Sigma_k Phi^T`` is never inverted
    or determinant-evaluated explicitly.
    """

    def __init__(self, gmm, system: MeasurementSystem):
        gmm = as_gmm(gmm)
        system.check_dim(gmm.dim)
        self.gmm = gmm
        self.system = system
        s2 = system.noise_variance
        ell = system.n_measurements
        self.filters = [wiener_filter(c, system, k) for k, c in enumerate(gmm.components)]
        self._proj_means = []
        self._bases = []
        self._inv = []
        self._logdet = np.empty(gmm.n_components)
        for k, comp in enumerate(gmm.components):
            A = system.kernel @ comp.factor
            if comp.rank:
                U, S, _ = np.linalg.svd(A, full_matrices=False)
            else:
                U, S = np.zeros((ell, 0)), np.zeros(0)
            denom = s2 + S**2
            self._proj_means.append(system.kernel @ comp.mean)
            self._bases.append(U)
            self._inv.append(1.0 / denom)
            self._logdet[k] = np.sum(np.log(denom)) + (ell - S.size) * np.log(s2)
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(gmm.weights)

    def log_likelihoods(self, y) -> np.ndarray:
        """``log p(y | c=k) + log p_k`` with shape ``(K, count)``."""
        y2, _ = _as_columns(y, self.system.n_measurements)
        ell = y2.shape[0]
        s2 = self.system.noise_variance
        out = np.empty((self.gmm.n_components, y2.shape[1]))
        for k in range(self.gmm.n_components):
            r = y2 - self._proj_means[k][:, None]
            U = self._bases[k]
            c = U.T @ r
            perp = r - U @ c
            quad = self._inv[k] @ (c * c) + np.sum(perp * perp, axis=0) / s2
            out[k] = -0.5 * (quad + self._logdet[k] + ell * _LOG_2PI) + self._log_weights[k]
        return out

    def posteriors(self, y) -> ClassPosterior:
        y2, single = _as_columns(y, self.system.n_measurements)
        ll = self.log_likelihoods(y2)
        probs = np.exp(ll - logsumexp(ll, axis=0, keepdims=True))
        if single:
            return ClassPosterior(probs[:, 0], ll[:, 0])
        return ClassPosterior(probs, ll)

    def classify(self, y):
        y2, single = _as_columns(y, self.system.n_measurements)
        labels = np.argmax(self.log_likelihoods(y2), axis=0)
        return int(labels[0]) if single else labels

    def class_estimates(self, y) -> np.ndarray:
        """Class-wise Wiener estimates, shape ``(K, n, count)``."""
        y2, _ = _as_columns(y, self.system.n_measurements)
        return np.stack([f.offset[:, None] + f.gain @ y2 for f in self.filters])

    def classify_reconstruct(self, y) -> np.ndarray:
        y2, single = _as_columns(y, self.system.n_measurements)
        labels = np.argmax(self.log_likelihoods(y2), axis=0)
        out = np.empty((self.gmm.dim, y2.shape[1]))
        for k, f in enumerate(self.filters):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[:, idx] = f.offset[:, None] + f.gain @ y2[:, idx]
        return out[:, 0] if single else out

    def conditional_mean(self, y) -> np.ndarray:
        y2, single = _as_columns(y, self.system.n_measurements)
        probs = self.posteriors(y2).probabilities
        out = np.zeros((self.gmm.dim, y2.shape[1]))
        for k, f in enumerate(self.filters):
            out += probs[k] * (f.offset[:, None] + f.gain @ y2)
        return out[:, 0] if single else out


def class_posteriors(gmm, system: MeasurementSystem, y) -> ClassPosterior:
    return MixtureFilter(gmm, system).posteriors(y)


def map_classify(gmm, system: MeasurementSystem, y):
    """MAP class index; ties go to the smallest index."""
    return MixtureFilter(gmm, system).classify(y)


def classify_reconstruct(gmm, system: MeasurementSystem, y) -> np.ndarray:
    return MixtureFilter(gmm, system).classify_reconstruct(y)


def gmm_conditional_mean(gmm, system: MeasurementSystem, y) -> np.ndarray:
    return MixtureFilter(gmm, system).conditional_mean(y)


def gmm_moments(gmm) -> tuple[np.ndarray, np.ndarray]:
    """Overall mean and covariance of the mixture."""
    gmm = as_gmm(gmm)
    mean = sum(p * c.mean for p, c in zip(gmm.weights, gmm.components))
    second = sum(
        p * (c.covariance + np.outer(c.mean, c.mean)) for p, c in zip(gmm.weights, gmm.components)
    )
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def moment_matched_gaussian(gmm) -> GaussianSource:
    return GaussianSource(*gmm_moments(gmm))


def lmmse_filter(gmm, system: MeasurementSystem) -> WienerFilter:
    return wiener_filter(moment_matched_gaussian(gmm), system)


def lmmse_estimate(gmm, system: MeasurementSystem, y) -> np.ndarray:
    return gaussian_estimate(lmmse_filter(gmm, system), y)


# -- scikit-learn style estimators -----------------------------------------


class LinearMeasurement(BaseEstimator):
    """Transformer producing noisy compressive measurements ``X Phi^T + W``.

    Rows of ``X`` are signals. ``kernel`` is either a matrix or the number of
    measurements, in which case a trace-normalized Gaussian kernel is drawn
    at fit time.
    """

    def __init__(self, kernel=None, noise_variance=1e-6, random_state=None):
        self.kernel = kernel
        self.noise_variance = noise_variance
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X)
        rng = np.random.default_rng(self.random_state)
        self.kernel_ = _resolve_kernel(self.kernel, X.shape[1], rng)
        self.system_ = MeasurementSystem(self.kernel_, self.noise_variance)
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        rng = np.random.default_rng(self.random_state)
        return self.system_.measure(X.T, rng).T

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


class GmmReconstructor(BaseEstimator):
    """Bayesian reconstruction of signals from compressive measurements.

    ``fit`` takes clean training signals (rows) and either adopts the given
    ``prior`` or learns one by EM with ``n_components`` classes, optionally
    truncating each class covariance to rank ``s_max``. ``predict`` maps
    measurement rows back to signal rows.

    Parameters
    ----------
    kernel : array-like of shape (l, n) or int
        Measurement kernel, or a number of measurements for a random kernel.
    noise_variance : float
        Variance of the white measurement noise.
    prior : GmmSource or GaussianSource, optional
        Fixed prior; skips EM when given.
    n_components : int
        Number of mixture classes for EM.
    s_max : int, optional
        Rank cap applied to each learned class covariance.
    method : {"conditional_mean", "classify_reconstruct", "lmmse"}
        Which estimator ``predict`` applies.
    max_iter : int
        EM iteration cap.
    random_state : int, optional
        Seed for EM initialization and random kernels.
    """

    _methods = ("conditional_mean", "classify_reconstruct", "lmmse")

    def __init__(
        self,
        kernel=None,
        noise_variance=1e-6,
        prior=None,
        n_components=1,
        s_max=None,
        method="conditional_mean",
        max_iter=100,
        random_state=None,
    ):
        self.kernel = kernel
        self.noise_variance = noise_variance
        self.prior = prior
        self.n_components = n_components
        self.s_max = s_max
        self.method = method
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.method not in self._methods:
            raise ValueError(f"method must be one of {self._methods}, got {self.method!r}")
        if self.prior is not None:
            prior = as_gmm(self.prior)
            if X is not None:
                X = validate_data(self, X)
                if X.shape[1] != prior.dim:
                    raise ValueError(f"X has {X.shape[1]} features, prior has dimension {prior.dim}")
        else:
            from .em import fit_em

            X = validate_data(self, X)
            prior = fit_em(
                X,
                self.n_components,
                s_max=self.s_max,
                iterations=self.max_iter,
                seed=self.random_state,
            ).model
        self.n_features_in_ = prior.dim
        rng = np.random.default_rng(self.random_state)
        self.prior_ = prior
        self.kernel_ = _resolve_kernel(self.kernel, prior.dim, rng)
        self.system_ = MeasurementSystem(self.kernel_, self.noise_variance)
        self.filter_ = MixtureFilter(prior, self.system_)
        if self.method == "lmmse":
            self.lmmse_ = lmmse_filter(prior, self.system_)
        return self

    def _measurements(self, Y):
        check_is_fitted(self)
        Y = check_array(Y)
        if Y.shape[1] != self.system_.n_measurements:
            raise ValueError(
                f"Y has {Y.shape[1]} columns, kernel produces {self.system_.n_measurements}"
            )
        return Y.T

    def predict(self, Y):
        y = self._measurements(Y)
        if self.method == "conditional_mean":
            return self.filter_.conditional_mean(y).T
        if self.method == "classify_reconstruct":
            return self.filter_.classify_reconstruct(y).T
        return gaussian_estimate(self.lmmse_, y).T

    def predict_proba(self, Y):
        return self.filter_.posteriors(self._measurements(Y)).probabilities.T

    def predict_class(self, Y):
        return self.filter_.classify(self._measurements(Y))

    def measure(self, X, random_state=None):
        """Noisy measurements of signal rows ``X`` under the fitted system."""
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return self.system_.measure(X.T, np.random.default_rng(random_state)).T

    def score(self, Y, X):
        """Negative mean squared reconstruction error per signal."""
        X = check_array(X)
        err = self.predict(Y) - X
        return -float(np.mean(np.sum(err * err, axis=1)))


def _resolve_kernel(kernel, dim: int, rng) -> np.ndarray:
    if kernel is None:
        raise ValueError("a kernel matrix or a number of measurements is required")
    if np.isscalar(kernel):
        return random_kernel(int(kernel), dim, rng)
    phi = check_array(kernel)
    if phi.shape[1] != dim:
        raise ValueError(f"kernel has {phi.shape[1]} columns, signals have {dim} features")
    return phi

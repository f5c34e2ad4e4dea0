"""MMSE-optimal measurement kernels for Gaussian sources via water-filling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import Expansion
from .model import GaussianSource, MeasurementSystem, as_gmm


@dataclass(frozen=True)
class WaterfillAllocation:
    """Squared singular values of the designed kernel.

    ``allocations`` has one entry per measurement; only the first
    ``active_count`` are positive.
    """

    water_level: float
    allocations: np.ndarray
    active_count: int


def waterfill(eigenvalues, n_measurements: int, noise_variance: float) -> WaterfillAllocation:
    """Allocate a trace budget of ``n_measurements`` over source modes.

    ``alloc_i = max(eta - s2 / lam_i, 0)`` for the ``min(s, l)`` leading
    modes. The water level is found exactly by scanning candidate active
    sets from largest to smallest.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    ell = int(n_measurements)
    if ell < 1:
        raise ValueError("n_measurements must be at least 1")
    if lam.size == 0 or np.any(lam <= 0):
        raise ValueError("eigenvalues must be strictly positive")
    if np.any(np.diff(lam) > 0):
        raise ValueError("eigenvalues must be sorted in descending order")
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")
    m = min(lam.size, ell)
    inv = noise_variance / lam[:m]
    cum = np.cumsum(inv)
    for a in range(m, 0, -1):
        eta = (ell + cum[a - 1]) / a
        if eta > inv[a - 1]:
            break
    alloc = np.zeros(ell)
    alloc[:a] = eta - inv[:a]
    return WaterfillAllocation(water_level=float(eta), allocations=alloc, active_count=a)


def design_kernel_gaussian(
    source: GaussianSource, n_measurements: int, noise_variance: float
) -> MeasurementSystem:
    """Kernel whose rows are the leading source eigenvectors scaled by the allocation."""
    s = source.rank
    if s == 0:
        raise ValueError("cannot design a kernel for a degenerate source (zero covariance)")
    alloc = waterfill(source.eig.values[:s], n_measurements, noise_variance)
    kernel = np.zeros((n_measurements, source.dim))
    m = min(s, n_measurements)
    kernel[:m] = np.sqrt(alloc.allocations[:m])[:, None] * source.eig.vectors[:, :m].T
    return MeasurementSystem(kernel, noise_variance)


def designed_mmse(source: GaussianSource, n_measurements: int, noise_variance: float) -> float:
    s = source.rank
    if s == 0:
        return 0.0
    lam = source.eig.values[:s]
    m = min(s, n_measurements)
    alloc = waterfill(lam, n_measurements, noise_variance).allocations[:m]
    sensed = lam[:m] / (1.0 + lam[:m] * alloc / noise_variance)
    return float(sensed.sum() + lam[m:].sum())


def expansion_designed(source: GaussianSource, n_measurements: int) -> Expansion:
    """Floor is the uncaptured eigenvalue tail; slope is ``min(s, l)^2 / l``."""
    s = source.rank
    m = min(s, n_measurements)
    floor = float(source.eig.values[m:s].sum())
    return Expansion.from_terms(floor, m * m / n_measurements, source.power)


def mse_lower_bound_designed(gmm, n_measurements: int, noise_variance: float) -> float:
    """Genie bound with each class sensed through its own designed kernel."""
    gmm = as_gmm(gmm)
    return float(
        sum(
            p * designed_mmse(c, n_measurements, noise_variance)
            for p, c in zip(gmm.weights, gmm.components)
        )
    )


def expansion_lower_bound_designed(gmm, n_measurements: int) -> Expansion:
    gmm = as_gmm(gmm)
    parts = [expansion_designed(c, n_measurements) for c in gmm.components]
    w = gmm.weights
    power = float(sum(p * c.power for p, c in zip(w, gmm.components)))
    return Expansion.from_terms(
        sum(p * e.floor for p, e in zip(w, parts)),
        sum(p * e.slope for p, e in zip(w, parts)),
        power,
    )

"""Source and measurement models, PSD spectral helpers and random generators.

Matrices follow the column convention: a batch of ``count`` signals of
dimension ``n`` is an ``(n, count)`` array.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-12


class NotPSDError(ValueError):
    """Raised when a matrix has an eigenvalue below ``-tol * lambda_max``."""


class OverlapCase(enum.Enum):
    OVERLAPPING = "overlapping"
    NON_OVERLAPPING = "non_overlapping"


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a symmetric PSD matrix, values sorted descending."""

    vectors: np.ndarray
    values: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.values[0]) if self.values.size else 0.0

    def rank(self, rel_tol: float = RANK_TOL) -> int:
        return numerical_rank(self, rel_tol)

    def image_basis(self, rel_tol: float = RANK_TOL) -> np.ndarray:
        return self.vectors[:, : self.rank(rel_tol)]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def check_symmetric(matrix, name: str = "matrix") -> np.ndarray:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = 1.0 + (np.abs(a).max() if a.size else 0.0)
    if a.size and np.abs(a - a.T).max() > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return a


def eig_psd(matrix, rel_tol: float = RANK_TOL) -> EigenDecomposition:
    """Eigendecomposition of a symmetric PSD matrix.

    Eigenvalues in ``[-rel_tol * lambda_max, 0)`` are clamped to zero;
    anything more negative raises :class:`NotPSDError`.
    """
    a = check_symmetric(matrix)
    values, vectors = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    lam_max = max(values[0], 0.0) if values.size else 0.0
    if values.size and values[-1] < -rel_tol * lam_max:
        raise NotPSDError(
            f"eigenvalue {values[-1]:.3e} below -{rel_tol:g} * lambda_max ({lam_max:.3e})"
        )
    values = np.where(values < 0, 0.0, values)
    return EigenDecomposition(vectors=vectors, values=values)


def numerical_rank(decomp: EigenDecomposition, rel_tol: float = RANK_TOL) -> int:
    """Number of eigenvalues strictly above ``rel_tol * lambda_max``."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    lam_max = decomp.lambda_max
    if lam_max <= 0:
        return 0
    return int(np.count_nonzero(decomp.values > rel_tol * lam_max))


def matrix_sqrt_psd(matrix, rel_tol: float = RANK_TOL) -> np.ndarray:
    """Symmetric PSD square root ``V diag(sqrt(values)) V^T``.

    Eigenvalues at or below the rank threshold are treated as exact zeros,
    so rank-deficient inputs keep their null space.
    """
    decomp = eig_psd(matrix, rel_tol)
    s = decomp.rank(rel_tol)
    v = decomp.vectors[:, :s]
    return (v * np.sqrt(decomp.values[:s])) @ v.T


def in_image(vector, matrix, rel_tol: float = RANK_TOL) -> bool:
    """Whether ``vector`` lies in the image of the PSD ``matrix``."""
    x = np.asarray(vector, dtype=float).ravel()
    norm = np.linalg.norm(x)
    if norm == 0:
        return True
    basis = eig_psd(matrix, rel_tol).image_basis(rel_tol)
    residual = x - basis @ (basis.T @ x)
    return bool(np.linalg.norm(residual) <= 1e-8 * norm)


def in_null_space(vector, matrix) -> bool:
    """Whether the PSD ``matrix`` annihilates ``vector``: ``||A x|| < 1e-8 lam_max ||x||``.

    For PSD ``A`` this is equivalent to a vanishing quadratic form ``x^T A x``.
    """
    x = np.asarray(vector, dtype=float).ravel()
    A = check_symmetric(matrix)
    lam_max = max(float(np.linalg.eigvalsh(A)[-1]), 0.0)
    norm = np.linalg.norm(x)
    if lam_max == 0.0 or norm == 0.0:
        return True
    return bool(np.linalg.norm(A @ x) < 1e-8 * lam_max * norm)


@dataclass(frozen=True, eq=False)
class GaussianSource:
    """Gaussian source N(mean, covariance).

    The covariance is stored as its rank-``s`` PSD part: eigenvalues at or
    below ``RANK_TOL * lambda_max`` are set to exact zero on construction so
    that downstream null spaces are exact.
    """

    mean: np.ndarray
    covariance: np.ndarray
    eig: EigenDecomposition = field(repr=False)
    rank: int

    def __init__(self, mean, covariance):
        cov = check_symmetric(covariance, "covariance")
        mu = np.asarray(mean, dtype=float).ravel()
        if mu.shape[0] != cov.shape[0]:
            raise ValueError(f"mean has length {mu.shape[0]}, covariance is {cov.shape}")
        decomp = eig_psd(cov)
        s = decomp.rank()
        values = decomp.values.copy()
        values[s:] = 0.0
        decomp = EigenDecomposition(decomp.vectors, values)
        v = decomp.vectors[:, :s]
        clean = (v * values[:s]) @ v.T
        clean = 0.5 * (clean + clean.T)
        for arr in (mu, clean, decomp.vectors, decomp.values):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", clean)
        object.__setattr__(self, "eig", decomp)
        object.__setattr__(self, "rank", s)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def factor(self) -> np.ndarray:
        """``L`` of shape ``(n, s)`` with ``L L^T = covariance``."""
        s = self.rank
        return self.eig.vectors[:, :s] * np.sqrt(self.eig.values[:s])

    @cached_property
    def sqrt(self) -> np.ndarray:
        v = self.eig.vectors[:, : self.rank]
        return (v * np.sqrt(self.eig.values[: self.rank])) @ v.T

    @property
    def power(self) -> float:
        return float(np.trace(self.covariance))


@dataclass(frozen=True, eq=False)
class GmmSource:
    """Finite Gaussian mixture sum_k p_k N(mu_k, Sigma_k)."""

    weights: np.ndarray
    components: tuple

    def __init__(self, weights, components: Sequence[GaussianSource]):
        w = np.asarray(weights, dtype=float).ravel()
        comps = tuple(components)
        if len(comps) == 0 or w.shape[0] != len(comps):
            raise ValueError("need one weight per component and at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError(f"component dimensions differ: {sorted(dims)}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, source: GaussianSource) -> "GmmSource":
        return cls([1.0], [source])

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def ranks(self) -> list[int]:
        return [c.rank for c in self.components]

    @property
    def s_max(self) -> int:
        return max(self.ranks)


@dataclass(frozen=True, eq=False)
class MeasurementSystem:
    """Linear measurements ``y = kernel @ x + w`` with ``w ~ N(0, noise_variance I)``."""

    kernel: np.ndarray
    noise_variance: float

    def __init__(self, kernel, noise_variance: float):
        phi = np.atleast_2d(np.asarray(kernel, dtype=float))
        if phi.ndim != 2 or phi.shape[0] < 1:
            raise ValueError("kernel must be a nonempty 2-D matrix")
        if not noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        phi = phi.copy()
        phi.setflags(write=False)
        object.__setattr__(self, "kernel", phi)
        object.__setattr__(self, "noise_variance", float(noise_variance))

    @property
    def n_measurements(self) -> int:
        return self.kernel.shape[0]

    @property
    def dim(self) -> int:
        return self.kernel.shape[1]

    def with_noise(self, noise_variance: float) -> "MeasurementSystem":
        return MeasurementSystem(self.kernel, noise_variance)

    def check_dim(self, n: int) -> None:
        if self.dim != n:
            raise ValueError(f"kernel has {self.dim} columns but the source has dimension {n}")

    def measure(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.kernel @ x
        return y + np.sqrt(self.noise_variance) * rng.standard_normal(y.shape)


def as_gmm(source) -> GmmSource:
    if isinstance(source, GmmSource):
        return source
    if isinstance(source, GaussianSource):
        return GmmSource.single(source)
    raise TypeError(f"expected GaussianSource or GmmSource, got {type(source).__name__}")


# -- random generators ------------------------------------------------------


def random_kernel(n_measurements: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. standard normal kernel rescaled to ``tr(Phi Phi^T) = n_measurements``."""
    if n_measurements < 1 or dim < 1:
        raise ValueError("kernel dimensions must be positive")
    phi = rng.standard_normal((n_measurements, dim))
    return phi * np.sqrt(n_measurements / np.sum(phi * phi))


def sample_wishart(dim: int, dof: int, rng: np.random.Generator) -> np.ndarray:
    """Central Wishart draw ``G G^T`` with ``G`` of shape ``(dim, dof)``."""
    if dim < 1 or dof < 1:
        raise ValueError("dim and dof must be positive")
    g = rng.standard_normal((dim, dof))
    out = g @ g.T
    return 0.5 * (out + out.T)


def sample_gaussian(source: GaussianSource, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be positive")
    z = rng.standard_normal((source.rank, count))
    return source.mean[:, None] + source.factor @ z


def sample_gmm(gmm: GmmSource, count: int, rng: np.random.Generator):
    """Draw ``count`` labelled samples; returns ``(labels, samples)``."""
    if count < 1:
        raise ValueError("count must be positive")
    labels = rng.choice(gmm.n_components, size=count, p=gmm.weights)
    samples = np.empty((gmm.dim, count))
    for k, comp in enumerate(gmm.components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            samples[:, idx] = sample_gaussian(comp, idx.size, rng)
    return labels, samples


def spawn_generators(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generators derived from a master seed via ``SeedSequence.spawn``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# -- subspace predicates ----------------------------------------------------


def _check_pair(gmm: GmmSource, k: int, m: int) -> None:
    K = gmm.n_components
    if not (0 <= k < K and 0 <= m < K):
        raise IndexError(f"class indices ({k}, {m}) out of range for K={K}")


def pair_rank(gmm: GmmSource, k: int, m: int) -> int:
    """Numerical rank of ``Sigma_k + Sigma_m``."""
    _check_pair(gmm, k, m)
    total = gmm.components[k].covariance + gmm.components[m].covariance
    return eig_psd(total).rank()


def overlap_case(gmm: GmmSource, k: int, m: int) -> OverlapCase:
    """Whether the covariance images of classes ``k`` and ``m`` coincide."""
    _check_pair(gmm, k, m)
    s_k, s_m = gmm.components[k].rank, gmm.components[m].rank
    if s_k == s_m == pair_rank(gmm, k, m):
        return OverlapCase.OVERLAPPING
    return OverlapCase.NON_OVERLAPPING


# -- model file I/O ---------------------------------------------------------


def gmm_to_dict(gmm: GmmSource) -> dict:
    return {
        "n": gmm.dim,
        "weights": [float(w) for w in gmm.weights],
        "components": [
            {"mean": c.mean.tolist(), "covariance": c.covariance.tolist()}
            for c in gmm.components
        ],
    }


def gmm_from_dict(data: dict) -> GmmSource:
    try:
        n = int(data["n"])
        weights = data["weights"]
        raw = data["components"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model: {exc}") from None
    comps = []
    for c in raw:
        cov = np.asarray(c["covariance"], dtype=float)
        mean = np.asarray(c["mean"], dtype=float)
        if cov.shape != (n, n) or mean.shape != (n,):
            raise ValueError(f"component shapes {mean.shape}, {cov.shape} do not match n={n}")
        comps.append(GaussianSource(mean, 0.5 * (cov + cov.T)))
    return GmmSource(weights, comps)


def save_model(gmm, path) -> None:
    text = json.dumps(gmm_to_dict(as_gmm(gmm)), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> GmmSource:
    return gmm_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_kernel(kernel, path) -> None:
    phi = np.asarray(kernel, dtype=float)
    data = {"rows": phi.shape[0], "cols": phi.shape[1], "data": phi.tolist()}
    Path(path).write_text(json.dumps(data) + "\n", encoding="utf-8")


def load_kernel(path) -> np.ndarray:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    phi = np.asarray(data["data"], dtype=float)
    if phi.shape != (data["rows"], data["cols"]):
        raise ValueError(f"kernel data shape {phi.shape} disagrees with header")
    return phi

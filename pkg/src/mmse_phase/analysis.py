"""Closed-form MMSE values, low-noise expansions, bounds and Monte Carlo harness."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .estimators import MixtureFilter, gaussian_estimate, lmmse_filter, wiener_filter
from .model import (
    GaussianSource,
    MeasurementSystem,
    as_gmm,
    eig_psd,
    sample_gmm,
    spawn_generators,
)

FLOOR_TOL = 1e-9
ESTIMATORS = ("conditional_mean", "classify_reconstruct", "lmmse")
_BATCH = 50_000
FLAT_SLOPE = 0.25


class Regime(enum.Enum):
    FLOOR_PRESENT = "floor_present"
    FLOOR_ABSENT = "floor_absent"


@dataclass(frozen=True)
class Expansion:
    """Low-noise expansion ``mmse(s2) = floor + slope * s2 + o(s2)``."""

    floor: float
    slope: float
    regime: Regime

    @classmethod
    def from_terms(cls, floor: float, slope: float, power: float) -> "Expansion":
        floor = max(float(floor), 0.0)
        slope = max(float(slope), 0.0)
        absent = floor < FLOOR_TOL * power or floor == 0.0
        return cls(floor, slope, Regime.FLOOR_ABSENT if absent else Regime.FLOOR_PRESENT)

    @property
    def floor_present(self) -> bool:
        return self.regime is Regime.FLOOR_PRESENT

    def __call__(self, noise_variance: float) -> float:
        return self.floor + self.slope * noise_variance


@dataclass(frozen=True)
class MonteCarloResult:
    estimate: float
    std_error: float
    samples: int
    seed: int
    workers: int = 1


# -- Gaussian sources ---------------------------------------------------------


def gaussian_mmse(source: GaussianSource, system: MeasurementSystem) -> float:
    """``tr(Sigma - Sigma Phi^T (s2 I + Phi Sigma Phi^T)^{-1} Phi Sigma)``.

    For ``l >= s`` the trace is evaluated as ``s2 tr(Lam (s2 I + A^T A)^{-1})``
    with ``A = Phi L`` (push-through identity), which avoids subtracting two
    nearly equal traces when the MMSE is O(s2).
    """
    system.check_dim(source.dim)
    s = source.rank
    if s == 0:
        return 0.0
    s2 = system.noise_variance
    lam = source.eig.values[:s]
    A = system.kernel @ source.factor
    ell = A.shape[0]
    if ell >= s:
        gram = s2 * np.eye(s) + A.T @ A
        inv_diag = np.diag(cho_solve(cho_factor(gram), np.eye(s)))
        value = s2 * float(lam @ inv_diag)
    else:
        gram = s2 * np.eye(ell) + A @ A.T
        B = A * lam
        value = float(lam.sum() - np.sum(cho_solve(cho_factor(gram), B) * A))
    return min(max(value, 0.0), float(lam.sum()))


def sigma_matrix(source: GaussianSource, kernel) -> np.ndarray:
    """``Sigma_x^{1/2} Phi^T Phi Sigma_x^{1/2}``."""
    phi = np.asarray(kernel, dtype=float)
    if phi.shape[1] != source.dim:
        raise ValueError(f"kernel has {phi.shape[1]} columns, source has dimension {source.dim}")
    half = phi @ source.sqrt
    out = half.T @ half
    return 0.5 * (out + out.T)


def _energy(source: GaussianSource, U: np.ndarray) -> np.ndarray:
    # u^T Sigma_x u per column, through the exact rank-s factor
    proj = source.factor.T @ U
    return np.sum(proj * proj, axis=0)


def gaussian_mmse_spectral(source: GaussianSource, system: MeasurementSystem) -> float:
    """MMSE summed over the eigenpairs of :func:`sigma_matrix`."""
    system.check_dim(source.dim)
    decomp = eig_psd(sigma_matrix(source, system.kernel))
    ell_eff = decomp.rank()
    energy = _energy(source, decomp.vectors)
    lam = decomp.values[:ell_eff]
    sensed = energy[:ell_eff] / (1.0 + lam / system.noise_variance)
    return float(sensed.sum() + energy[ell_eff:].sum())


def expansion_gaussian(source: GaussianSource, kernel) -> Expansion:
    """Zero- and first-order terms of the low-noise MMSE expansion.

    The floor basis spans ``Null(Sigma) ∩ Im(Sigma_x)``; it is built inside
    ``Im(Sigma_x)`` from the reduced matrix ``B^T Sigma B``.
    """
    s = source.rank
    if s == 0:
        return Expansion.from_terms(0.0, 0.0, 0.0)
    B = source.eig.vectors[:, :s]
    reduced = B.T @ sigma_matrix(source, kernel) @ B
    decomp = eig_psd(0.5 * (reduced + reduced.T))
    ell_eff = decomp.rank()
    energy = _energy(source, B @ decomp.vectors)
    slope = float(np.sum(energy[:ell_eff] / decomp.values[:ell_eff]))
    floor = float(energy[ell_eff:].sum())
    return Expansion.from_terms(floor, slope, source.power)


# -- mixtures -----------------------------------------------------------------


def mse_lower_bound(gmm, system: MeasurementSystem) -> float:
    """Genie lower bound ``sum_k p_k mmse_k``: the class label is revealed."""
    gmm = as_gmm(gmm)
    return float(sum(p * gaussian_mmse(c, system) for p, c in zip(gmm.weights, gmm.components)))


def expansion_lower_bound(gmm, kernel) -> Expansion:
    gmm = as_gmm(gmm)
    parts = [expansion_gaussian(c, kernel) for c in gmm.components]
    w = gmm.weights
    power = float(sum(p * c.power for p, c in zip(w, gmm.components)))
    return Expansion.from_terms(
        sum(p * e.floor for p, e in zip(w, parts)),
        sum(p * e.slope for p, e in zip(w, parts)),
        power,
    )


def mismatched_mse(gmm, k: int, m: int, system: MeasurementSystem) -> float:
    """MSE of the class-``m`` Wiener estimator applied to class-``k`` signals.

    Grouped form ``tr(E Sigma_k E^T) + ||E d||^2 + s2 tr(W_m W_m^T)`` with
    ``E = I - W_m Phi`` and ``d = mu_k - mu_m``.
    """
    gmm = as_gmm(gmm)
    K = gmm.n_components
    if not (0 <= k < K and 0 <= m < K):
        raise IndexError(f"class indices ({k}, {m}) out of range for K={K}")
    src_k, src_m = gmm.components[k], gmm.components[m]
    W = wiener_filter(src_m, system).gain
    phi = system.kernel
    L = src_k.factor
    EL = L - W @ (phi @ L)
    d = src_k.mean - src_m.mean
    Ed = d - W @ (phi @ d)
    return float(np.sum(EL * EL) + Ed @ Ed + system.noise_variance * np.sum(W * W))


# -- Monte Carlo --------------------------------------------------------------


def _make_estimators(gmm, system, names: Sequence[str]):
    bank = MixtureFilter(gmm, system)
    table = {
        "conditional_mean": bank.conditional_mean,
        "classify_reconstruct": bank.classify_reconstruct,
    }
    if "lmmse" in names:
        lin = lmmse_filter(gmm, system)
        table["lmmse"] = lambda y: gaussian_estimate(lin, y)
    unknown = set(names) - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
    return {name: table[name] for name in names}


def _chunk_errors(gmm, system, funcs, count, rng):
    out = {name: [] for name in funcs}
    sigma = np.sqrt(system.noise_variance)
    done = 0
    while done < count:
        b = min(_BATCH, count - done)
        _, x = sample_gmm(gmm, b, rng)
        z = rng.standard_normal((system.n_measurements, b))
        y = system.kernel @ x + sigma * z
        for name, f in funcs.items():
            err = x - f(y)
            out[name].append(np.sum(err * err, axis=0))
        done += b
    return {name: np.concatenate(v) for name, v in out.items()}


def monte_carlo_errors(
    gmm,
    system: MeasurementSystem,
    estimators: Sequence[str] = ESTIMATORS,
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> dict[str, np.ndarray]:
    """Per-sample squared errors of several estimators on shared draws.

    Draws depend only on ``(seed, workers, samples)``, never on the noise
    variance, so sweeps over ``s2`` reuse the same signals and noise shapes.
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    gmm = as_gmm(gmm)
    system.check_dim(gmm.dim)
    funcs = _make_estimators(gmm, system, list(estimators))
    rngs = spawn_generators(seed, workers)
    counts = [len(c) for c in np.array_split(np.arange(samples), workers)]
    if workers == 1:
        parts = [_chunk_errors(gmm, system, funcs, counts[0], rngs[0])]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(
                pool.map(lambda a: _chunk_errors(gmm, system, funcs, *a), zip(counts, rngs))
            )
    return {name: np.concatenate([p[name] for p in parts]) for name in funcs}


def summarize(errors: np.ndarray, seed: int, workers: int = 1) -> MonteCarloResult:
    errors = np.asarray(errors, dtype=float)
    n = errors.size
    return MonteCarloResult(
        estimate=float(errors.mean()),
        std_error=float(errors.std(ddof=1) / np.sqrt(n)),
        samples=n,
        seed=seed,
        workers=workers,
    )


def monte_carlo_mse(
    gmm,
    system: MeasurementSystem,
    estimator: str = "conditional_mean",
    samples: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> MonteCarloResult:
    errors = monte_carlo_errors(gmm, system, [estimator], samples, seed, workers)[estimator]
    return summarize(errors, seed, workers)


def mse_cr_upper_bound(gmm, system: MeasurementSystem, samples: int = 10_000, seed: int = 0):
    return monte_carlo_mse(gmm, system, "classify_reconstruct", samples, seed)


# -- decay diagnostics --------------------------------------------------------


@dataclass(frozen=True)
class DecayDiagnostics:
    floor_estimate: float
    decay_exponent: float
    floor_guess: float


def decay_diagnostics(
    sweep: Iterable[tuple[float, float]],
    reference_power: float | None = None,
    expansion_floor: float | None = None,
) -> DecayDiagnostics:
    """Floor and log-log decay exponent of an MSE sweep on the ``s2`` axis.

    ``sweep`` holds ``(noise_variance, mse)`` pairs sorted by strictly
    decreasing noise variance. The floor counts as absent when the smallest
    noise MSE is below ``1e-9 * reference_power`` (default: the MSE at the
    largest noise variance). A present floor is removed using
    ``expansion_floor`` when known. Without it, a floor is assumed only if
    the raw log-log slope of the three lowest-noise points is at most 0.25,
    and is then found by linear extrapolation of the two lowest-noise
    points to ``s2 = 0``. O(s2) decay gives an exponent
    near 1, O(sigma) near 0.5.
    """
    pts = np.asarray(list(sweep), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (noise_variance, mse) points")
    s2, mse = pts[:, 0], pts[:, 1]
    if np.any(s2 <= 0) or np.any(np.diff(s2) >= 0):
        raise ValueError("noise variances must be positive and strictly decreasing")
    if np.log10(s2[0] / s2[-1]) < 3 - 1e-12:
        raise ValueError("grid must span at least 3 decades of noise variance")
    ref = float(mse[0]) if reference_power is None else float(reference_power)
    floor_estimate = float(mse[-1])
    x = np.log10(s2[-3:])
    if floor_estimate < FLOOR_TOL * ref:
        guess = 0.0
    elif expansion_floor is not None:
        guess = float(expansion_floor)
    elif np.polyfit(x, np.log10(mse[-3:]), 1)[0] > FLAT_SLOPE:
        guess = 0.0
    else:
        rate = (mse[-2] - mse[-1]) / (s2[-2] - s2[-1])
        guess = float(mse[-1] - rate * s2[-1])
    resid = mse[-3:] - guess
    if np.any(resid <= 0):
        raise ValueError("floor guess exceeds the low-noise MSE values")
    slope = np.polyfit(x, np.log10(resid), 1)[0]
    return DecayDiagnostics(floor_estimate, float(slope), guess)

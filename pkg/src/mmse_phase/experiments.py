"""Experiment drivers behind the command line: model generation, sweeps, scans."""

from __future__ import annotations

import enum
import io
import sys
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    FLOOR_TOL,
    expansion_gaussian,
    expansion_lower_bound,
    gaussian_mmse,
    monte_carlo_errors,
    mse_lower_bound,
    summarize,
)
from .estimators import moment_matched_gaussian
from .kernel import (
    design_kernel_gaussian,
    designed_mmse,
    expansion_designed,
    expansion_lower_bound_designed,
    mse_lower_bound_designed,
)
from .model import GaussianSource, GmmSource, MeasurementSystem, random_kernel, sample_wishart

QUANTITIES = ("closed_form", "lower_bound", "cr_upper", "lmmse", "conditional_mean_mc", "designed", "lbd")
MC_QUANTITIES = {"cr_upper": "classify_reconstruct", "conditional_mean_mc": "conditional_mean"}
MC_FLOOR_SE = 10.0
MC_FLOOR_RATIO = 0.5
MC_FLOOR_STEP = 100.0
WISHART_PAIR_SEED = 7


class ModelKind(enum.Enum):
    GAUSSIAN = "gaussian"
    GMM_WISHART = "gmm-wishart"


class KernelMode(enum.Enum):
    RANDOM = "random"
    DESIGNED = "designed"
    FIXED = "fixed"


def gen_model(kind: ModelKind, n: int, n_components: int = 1, dof: int = 2, seed: int = 0) -> GmmSource:
    """Zero-mean, equal-weight classes with independent Wishart(n, dof) covariances."""
    if n < 1 or dof < 1 or n_components < 1:
        raise ValueError("n, dof and the number of classes must be positive")
    rng = np.random.default_rng(seed)
    K = 1 if kind is ModelKind.GAUSSIAN else n_components
    comps = [GaussianSource(np.zeros(n), sample_wishart(n, dof, rng)) for _ in range(K)]
    return GmmSource(np.full(K, 1.0 / K), comps)


def wishart_pair_model(seed: int = WISHART_PAIR_SEED) -> GmmSource:
    """Two equal-weight zero-mean classes, Wishart(4, 2) covariances (``s_max = 2``)."""
    return gen_model(ModelKind.GMM_WISHART, 4, 2, 2, seed)


def kernel_rng(seed: int, ell: int, trial: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, ell, trial])


def mc_seed(seed: int, ell: int) -> int:
    # shared across the noise grid so that sweeps use common random numbers
    return int(np.random.SeedSequence([seed, ell]).generate_state(1)[0])


@dataclass
class SweepSpec:
    ells: Sequence[int]
    sigma2_grid: Sequence[float]
    quantities: Sequence[str] = ("closed_form",)
    mc_samples: int = 10_000
    seed: int = 0
    kernel_mode: KernelMode = KernelMode.RANDOM
    fixed_kernel: Optional[np.ndarray] = None
    model_path: str = ""

    def validate(self, gmm: GmmSource) -> None:
        if not len(self.ells) or not len(self.sigma2_grid):
            raise ValueError("ell list and noise grid must be nonempty")
        if any(s <= 0 for s in self.sigma2_grid):
            raise ValueError("noise variances must be strictly positive")
        if any(e < 1 for e in self.ells):
            raise ValueError("numbers of measurements must be positive")
        bad = set(self.quantities) - set(QUANTITIES)
        if bad:
            raise ValueError(f"unknown quantities {sorted(bad)}; choose from {QUANTITIES}")
        if set(self.quantities) & set(MC_QUANTITIES) and self.mc_samples < 100:
            raise ValueError("mc_samples must be at least 100 for Monte Carlo quantities")
        single = gmm.n_components == 1
        for q in ("closed_form", "designed"):
            if q in self.quantities and not single:
                raise ValueError(f"quantity {q!r} needs a single-Gaussian model")
        if self.kernel_mode is KernelMode.DESIGNED and not single:
            raise ValueError("designed kernels are defined for single-Gaussian models only")
        if self.kernel_mode is KernelMode.FIXED:
            if self.fixed_kernel is None:
                raise ValueError("fixed kernel mode needs a kernel")
            if self.fixed_kernel.shape[1] != gmm.dim:
                raise ValueError(
                    f"kernel has {self.fixed_kernel.shape[1]} columns, model dimension is {gmm.dim}"
                )
            if any(e != self.fixed_kernel.shape[0] for e in self.ells):
                raise ValueError("ell values must match the fixed kernel's row count")


def _kernel_for(spec: SweepSpec, gmm: GmmSource, ell: int, s2: float) -> np.ndarray:
    if spec.kernel_mode is KernelMode.FIXED:
        return spec.fixed_kernel
    if spec.kernel_mode is KernelMode.DESIGNED:
        return design_kernel_gaussian(gmm.components[0], ell, s2).kernel
    return random_kernel(ell, gmm.dim, kernel_rng(spec.seed, ell))


def sweep(gmm: GmmSource, spec: SweepSpec) -> list[dict]:
    """Rows ``(ell, sigma2, quantity, value, std_error, seed)`` sorted by the first three."""
    spec.validate(gmm)
    rows = []
    lmmse_src = moment_matched_gaussian(gmm) if "lmmse" in spec.quantities else None
    mc_names = [MC_QUANTITIES[q] for q in spec.quantities if q in MC_QUANTITIES]
    for ell in spec.ells:
        for s2 in spec.sigma2_grid:
            system = MeasurementSystem(_kernel_for(spec, gmm, ell, s2), s2)
            values = {}
            if "closed_form" in spec.quantities:
                values["closed_form"] = (gaussian_mmse(gmm.components[0], system), 0.0)
            if "lower_bound" in spec.quantities:
                values["lower_bound"] = (mse_lower_bound(gmm, system), 0.0)
            if "lmmse" in spec.quantities:
                values["lmmse"] = (gaussian_mmse(lmmse_src, system), 0.0)
            if "designed" in spec.quantities:
                values["designed"] = (designed_mmse(gmm.components[0], ell, s2), 0.0)
            if "lbd" in spec.quantities:
                values["lbd"] = (mse_lower_bound_designed(gmm, ell, s2), 0.0)
            if mc_names:
                errs = monte_carlo_errors(gmm, system, mc_names, spec.mc_samples, mc_seed(spec.seed, ell))
                for q, name in MC_QUANTITIES.items():
                    if name in errs:
                        r = summarize(errs[name], spec.seed)
                        values[q] = (r.estimate, r.std_error)
            for q, (v, se) in values.items():
                rows.append(
                    {"ell": ell, "sigma2": float(s2), "quantity": q, "value": v, "std_error": se, "seed": spec.seed}
                )
    rows.sort(key=lambda r: (r["ell"], -r["sigma2"], r["quantity"]))
    return rows


def phase_scan(
    gmm: GmmSource,
    ells: Iterable[int],
    sigma2_probe: float = 1e-8,
    trials: int = 50,
    seed: int = 0,
    mc_samples: int = 10_000,
) -> list[dict]:
    """Locate the floor/no-floor transition in the number of measurements.

    Single Gaussians use the exact expansion floor averaged over ``trials``
    random kernels. Mixtures use conditional-mean Monte Carlo: a floor is
    reported when the estimate at ``sigma2_probe`` exceeds 10 standard
    errors and has not dropped below half its value at ``100 * sigma2_probe``
    (shared draws). The ``ell = s_max`` row is left unclassified.
    """
    rows = []
    if gmm.n_components == 1:
        src = gmm.components[0]
        for ell in ells:
            floors = [
                expansion_gaussian(src, random_kernel(ell, src.dim, kernel_rng(seed, ell, t))).floor
                for t in range(trials)
            ]
            f = float(np.mean(floors))
            rows.append(
                {
                    "ell": ell,
                    "floor_estimate": f,
                    "std_error": 0.0,
                    "floor_present": "true" if f >= FLOOR_TOL * src.power else "false",
                    "method": "closed_form",
                }
            )
        return rows
    for ell in ells:
        phi = random_kernel(ell, gmm.dim, kernel_rng(seed, ell))
        s = mc_seed(seed, ell)
        fine = summarize(
            monte_carlo_errors(gmm, MeasurementSystem(phi, sigma2_probe), ["conditional_mean"], mc_samples, s)[
                "conditional_mean"
            ],
            s,
        )
        coarse = summarize(
            monte_carlo_errors(
                gmm, MeasurementSystem(phi, MC_FLOOR_STEP * sigma2_probe), ["conditional_mean"], mc_samples, s
            )["conditional_mean"],
            s,
        )
        if ell == gmm.s_max:
            flag = "undetermined"
        else:
            present = fine.estimate > MC_FLOOR_SE * fine.std_error and fine.estimate >= MC_FLOOR_RATIO * coarse.estimate
            flag = "true" if present else "false"
        rows.append(
            {
                "ell": ell,
                "floor_estimate": fine.estimate,
                "std_error": fine.std_error,
                "floor_present": flag,
                "method": "monte_carlo",
            }
        )
    return rows


def design_compare(
    gmm: GmmSource,
    ells: Iterable[int],
    sigma2_grid: Sequence[float],
    random_trials: int = 50,
    seed: int = 0,
) -> list[dict]:
    """Designed versus random kernels.

    For a single Gaussian the ``designed`` column is the water-filling MMSE
    and the random columns summarize the closed-form MMSE; for mixtures the
    per-class designed bound is compared with the genie bound under random
    kernels.
    """
    rows = []
    single = gmm.n_components == 1
    for ell in ells:
        kernels = [random_kernel(ell, gmm.dim, kernel_rng(seed, ell, t)) for t in range(random_trials)]
        if single:
            src = gmm.components[0]
            exp_d = expansion_designed(src, ell)
            exp_r = [expansion_gaussian(src, k) for k in kernels]
        else:
            exp_d = expansion_lower_bound_designed(gmm, ell)
            exp_r = [expansion_lower_bound(gmm, k) for k in kernels]
        for s2 in sigma2_grid:
            lbd = mse_lower_bound_designed(gmm, ell, s2)
            designed = designed_mmse(gmm.components[0], ell, s2) if single else lbd
            rand = np.array([mse_lower_bound(gmm, MeasurementSystem(k, s2)) for k in kernels])
            rows.append(
                {
                    "ell": ell,
                    "sigma2": float(s2),
                    "designed": designed,
                    "random_mean": float(rand.mean()),
                    "random_min": float(rand.min()),
                    "random_max": float(rand.max()),
                    "designed_floor": exp_d.floor,
                    "designed_slope": exp_d.slope,
                    "random_floor_mean": float(np.mean([e.floor for e in exp_r])),
                    "random_slope_mean": float(np.mean([e.slope for e in exp_r])),
                    "lbd": lbd,
                }
            )
    rows.sort(key=lambda r: (r["ell"], -r["sigma2"]))
    return rows


# -- CSV ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(rows: Sequence[dict], columns: Sequence[str], metadata: dict) -> str:
    buf = io.StringIO()
    meta = {"version": f"mmse_phase {__version__}", **metadata}
    for key, val in meta.items():
        buf.write(f"# {key}: {val}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    return buf.getvalue()


def write_csv(path, rows, columns, metadata) -> None:
    text = format_csv(rows, columns, metadata)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_csv_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]

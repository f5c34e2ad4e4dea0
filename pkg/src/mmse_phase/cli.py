"""Command-line experiment runner.

Exit codes: 0 on success, 2 for invalid specifications or inputs, 3 for
file-system errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .em import fit_em
from .experiments import (
    QUANTITIES,
    KernelMode,
    ModelKind,
    SweepSpec,
    design_compare,
    gen_model,
    phase_scan,
    sweep,
    write_csv,
)
from .imaging import (
    PEAK,
    PatchPipelineSpec,
    extract_overlapping_patches,
    extract_patches,
    read_pgm,
    run_patch_pipeline,
    synthetic_texture,
    write_pgm,
)
from .model import load_kernel, load_model, save_model

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3

SWEEP_COLUMNS = ("ell", "sigma2", "quantity", "value", "std_error", "seed")
SCAN_COLUMNS = ("ell", "floor_estimate", "std_error", "floor_present", "method")
DESIGN_COLUMNS = (
    "ell",
    "sigma2",
    "designed",
    "random_mean",
    "random_min",
    "random_max",
    "designed_floor",
    "designed_slope",
    "random_floor_mean",
    "random_slope_mean",
    "lbd",
)
PIPELINE_COLUMNS = ("sigma2", "ell", "psnr")


class SpecError(ValueError):
    """Raised for malformed command-line values."""


# -- argument parsing helpers -------------------------------------------------


def parse_int_list(text: str) -> list[int]:
    """``"2,3,5"`` or inclusive ranges such as ``"1-5"``."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise SpecError(f"cannot parse integer list {text!r}") from None
    if not out:
        raise SpecError("integer list is empty")
    return out


def parse_grid(text: str) -> list[float]:
    """Comma-separated values, or ``LO:HI:N`` for N log-spaced points from HI down to LO."""
    try:
        if ":" in text:
            lo, hi, num = text.split(":")
            lo, hi, num = float(lo), float(hi), int(num)
            if lo <= 0 or hi <= 0 or num < 1:
                raise SpecError("log-spaced grid needs positive bounds and count")
            return [float(v) for v in np.logspace(np.log10(hi), np.log10(lo), num)]
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise SpecError(f"cannot parse grid {text!r}") from None
    if not vals:
        raise SpecError("grid is empty")
    return vals


def parse_kernel(text: str):
    if text in ("random", "designed"):
        return KernelMode(text), None
    if text.startswith("fixed:") and len(text) > 6:
        return KernelMode.FIXED, text[6:]
    raise SpecError(f"kernel must be random, designed or fixed:PATH, got {text!r}")


def _metadata(args, **extra) -> dict:
    spec = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "image_dir")}
    return {"seed": getattr(args, "seed", ""), "spec": json.dumps(spec, sort_keys=True), **extra}


# -- subcommands --------------------------------------------------------------


def cmd_gen_model(args) -> None:
    kind = ModelKind(args.kind)
    gmm = gen_model(kind, args.n, args.K, args.dof, args.seed)
    save_model(gmm, args.out)


def cmd_sweep(args) -> None:
    gmm = load_model(args.model)
    mode, path = parse_kernel(args.kernel)
    spec = SweepSpec(
        ells=parse_int_list(args.ell),
        sigma2_grid=parse_grid(args.sigma2_grid),
        quantities=[q.strip() for q in args.quantities.split(",") if q.strip()],
        mc_samples=args.mc_samples,
        seed=args.seed,
        kernel_mode=mode,
        fixed_kernel=load_kernel(path) if path else None,
        model_path=args.model,
    )
    rows = sweep(gmm, spec)
    write_csv(args.out, rows, SWEEP_COLUMNS, _metadata(args))


def cmd_phase_scan(args) -> None:
    gmm = load_model(args.model)
    if args.sigma2_probe <= 0 or args.trials < 1:
        raise SpecError("sigma2-probe must be positive and trials at least 1")
    rows = phase_scan(
        gmm,
        parse_int_list(args.ell),
        sigma2_probe=args.sigma2_probe,
        trials=args.trials,
        seed=args.seed,
        mc_samples=args.mc_samples,
    )
    write_csv(args.out, rows, SCAN_COLUMNS, _metadata(args))


def cmd_design_compare(args) -> None:
    gmm = load_model(args.model)
    if args.random_trials < 1:
        raise SpecError("random-trials must be at least 1")
    rows = design_compare(
        gmm, parse_int_list(args.ell), parse_grid(args.sigma2_grid), args.random_trials, args.seed
    )
    write_csv(args.out, rows, DESIGN_COLUMNS, _metadata(args))


def cmd_image_pipeline(args) -> None:
    image = read_pgm(args.image)
    prior = load_model(args.prior)
    spec = PatchPipelineSpec(
        image=image,
        prior=prior,
        s_max=args.s_max,
        ells=parse_int_list(args.ell),
        sigma2_grid=parse_grid(args.sigma2_grid),
        seed=args.seed,
        patch=args.patch,
    )
    result = run_patch_pipeline(spec)
    write_csv(
        args.out,
        result.rows,
        PIPELINE_COLUMNS,
        _metadata(args, projection_psnr=format(result.projection_psnr, ".17g")),
    )
    if args.image_dir:
        out = Path(args.image_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_pgm(out / "ground_truth.pgm", result.ground_truth)
        for (ell, s2), img in sorted(result.reconstructions.items()):
            write_pgm(out / f"recon_l{ell}_s{s2:.3e}.pgm", img)


def load_patches(path, patch: int, stride: int | None) -> np.ndarray:
    """Training data as rows: images yield patch vectors scaled to ``[0, 1]``."""
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        img = read_pgm(p)
        cols = extract_patches(img, patch) if stride is None else extract_overlapping_patches(img, patch, stride)
        return cols.T / PEAK
    if p.suffix.lower() == ".npy":
        return np.load(p)
    return np.loadtxt(p, delimiter=",", ndmin=2)


def cmd_fit_em(args) -> None:
    X = load_patches(args.patches, args.patch, args.stride)
    if args.iterations < 1:
        raise SpecError("iterations must be at least 1")
    if args.s_max is not None and not 0 <= args.s_max <= X.shape[1]:
        raise SpecError(f"s-max must lie in [0, {X.shape[1]}]")
    result = fit_em(X, args.K, s_max=args.s_max, iterations=args.iterations, seed=args.seed)
    save_model(result.model, args.out)
    if args.trace:
        rows = [{"iteration": i + 1, "log_likelihood": v} for i, v in enumerate(result.log_likelihood)]
        write_csv(
            args.trace, rows, ("iteration", "log_likelihood"), _metadata(args, converged=result.converged)
        )


def cmd_gen_texture(args) -> None:
    write_pgm(args.out, synthetic_texture(args.size, args.seed, args.regions))


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmse-phase", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="sample a Gaussian or Wishart-GMM source model")
    p.add_argument("--kind", choices=[k.value for k in ModelKind], default="gmm-wishart")
    p.add_argument("--n", type=int, required=True, help="signal dimension")
    p.add_argument("--K", type=int, default=1, help="number of classes")
    p.add_argument("--dof", type=int, default=2, help="Wishart degrees of freedom (class rank)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("sweep", help="MMSE and bounds over an (ell, sigma2) grid")
    p.add_argument("--model", required=True)
    p.add_argument("--ell", required=True, help="e.g. 2,3,4 or 1-5")
    p.add_argument("--sigma2-grid", required=True, help="comma list or LO:HI:N (log-spaced)")
    p.add_argument("--quantities", default="closed_form", help=f"comma list from {','.join(QUANTITIES)}")
    p.add_argument("--mc-samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", default="random", help="random, designed or fixed:PATH")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("phase-scan", help="floor/no-floor classification versus ell")
    p.add_argument("--model", required=True)
    p.add_argument("--ell", required=True)
    p.add_argument("--sigma2-probe", type=float, default=1e-8)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--mc-samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_phase_scan)

    p = sub.add_parser("design-compare", help="water-filling kernels versus random kernels")
    p.add_argument("--model", required=True)
    p.add_argument("--ell", required=True)
    p.add_argument("--sigma2-grid", required=True)
    p.add_argument("--random-trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_design_compare)

    p = sub.add_parser("image-pipeline", help="compressive reconstruction of image patches")
    p.add_argument("--image", required=True, help="8-bit PGM (P2 or P5)")
    p.add_argument("--prior", "--model", dest="prior", required=True)
    p.add_argument("--s-max", type=int, default=14)
    p.add_argument("--ell", required=True)
    p.add_argument("--sigma2-grid", required=True)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--image-dir", default=None, help="directory for reconstructed PGMs")
    p.set_defaults(func=cmd_image_pipeline)

    p = sub.add_parser("fit-em", help="fit a GMM prior to patches by EM")
    p.add_argument("--patches", required=True, help="PGM image, .npy array or CSV of row vectors")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--s-max", type=int, default=None)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--stride", type=int, default=None, help="overlapping patches at this stride")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="CSV file for the log-likelihood trace")
    p.set_defaults(func=cmd_fit_em)

    p = sub.add_parser("gen-texture", help="write a synthetic grating texture PGM")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--regions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_texture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

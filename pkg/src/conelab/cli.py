"""Command-line front end.

Angles are given in degrees on the command line and converted to radians
once. Exit codes: 0 success, 2 invalid input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import grid, io, ntk, phantoms, radon

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
THREADS_ENV = "CONELAB_THREADS"


class InputError(Exception):
    pass


def fmt(x) -> str:
    """17 significant digits, locale independent."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def parse_range(text: str) -> list:
    """``a..b..step`` (inclusive) or a comma-separated list of numbers."""
    try:
        if ".." in text:
            parts = [float(p) for p in text.split("..")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ValueError
            start, stop, step = parts
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(count)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; use a..b..step or a,b,c")


def write_csv(rows, header, out) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    finally:
        if out:
            fh.close()


def resolve_delta(args) -> float:
    """Visible half-angle in radians from --delta-deg or --missing-deg."""
    delta_deg = getattr(args, "delta_deg", None)
    missing = getattr(args, "missing_deg", None)
    if delta_deg is not None and missing is not None:
        raise InputError("give either --delta-deg or --missing-deg, not both")
    if missing is not None:
        if not 0 <= missing < 180:
            raise InputError("--missing-deg must lie in [0, 180)")
        delta_deg = 90.0 - missing / 2.0
    if delta_deg is None:
        delta_deg = getattr(args, "default_delta_deg", None)
    if delta_deg is None:
        raise InputError("a visible angle is required (--delta-deg or --missing-deg)")
    if not 0 < delta_deg <= 90:
        raise InputError("--delta-deg must lie in (0, 90]")
    return math.radians(delta_deg)


def apply_thread_limit() -> None:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    import numba
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file {p} not found")
    return p


def _require_dataset(path) -> Path:
    p = Path(path)
    if not (p / io.MANIFEST).is_file():
        raise InputError(f"{p} is not a dataset directory (no {io.MANIFEST})")
    return p


# -- phantom ---------------------------------------------------------------

def cmd_phantom(args) -> int:
    if args.kind == "ellipses":
        if args.seed is None:
            raise InputError("--seed is required for random ellipses")
        ds = phantoms.generate_dataset(args.seed, args.count, args.n, args.max_ellipses)
    else:
        if args.kind == "disk":
            scene = phantoms.disk_scene(args.a)
        else:
            scene = phantoms.squares_scene(args.half_width, args.gap)
        img = phantoms.render(scene, args.n, phantoms.SUPERSAMPLE)
        params = {"kind": args.kind, "supersample": phantoms.SUPERSAMPLE}
        ds = phantoms.Dataset([img], [scene], args.seed if args.seed is not None else 0, params)
    io.save_dataset(ds, args.out)
    return EXIT_OK


# -- sino ------------------------------------------------------------------

def cmd_sino(args) -> int:
    delta = resolve_delta(args)
    if args.noise_rel and args.seed is None:
        raise InputError("--seed is required with --noise-rel")
    if args.noise_rel < 0:
        raise InputError("--noise-rel must be >= 0")
    n_theta = args.n_theta
    if n_theta is None:
        n_theta = dg.default_n_theta(delta)
    angles = radon.AngleSet(delta, n_theta)
    out = Path(args.out)
    if args.input:
        src = Path(args.input)
        if src.is_dir():
            ds = io.load_dataset(_require_dataset(src))
            out.mkdir(parents=True, exist_ok=True)
            n_p = args.np or 2 * ds.n + 1
            for i, img in enumerate(ds.images):
                if ds.scenes:
                    sino = phantoms.measure(ds.scenes[i], angles, n_p)
                else:
                    sino = radon.radon_forward(img, angles, n_p)
                sino = _noisy(sino, args, i)
                io.write_sinogram(out / f"sino_{i:05d}{io.SUFFIX}", sino, seed=args.seed,
                                  source="analytic" if ds.scenes else "raster")
            return EXIT_OK
        img = io.read_image(_require_file(src))
        n_p = args.np or 2 * img.shape[0] + 1
        sino = _noisy(radon.radon_forward(grid.check_image(img), angles, n_p), args, 0)
        io.write_sinogram(out, sino, seed=args.seed, source="raster")
        return EXIT_OK
    raise InputError("--input is required")


def _noisy(sino, args, index):
    if not args.noise_rel:
        return sino
    return phantoms.add_noise(sino, args.noise_rel, phantoms.derive_seed(args.seed, index))


# -- fbp / cone --------------------------------------------------------------

def cmd_fbp(args) -> int:
    sino = io.read_sinogram(_require_file(args.input))
    n = args.n
    img = radon.fbp(sino, n)
    delta = sino.angles.delta
    report = {"delta_deg": math.degrees(delta), "n": n,
              "outside_cone_fraction": grid.outside_cone_fraction(img, delta),
              "shell_deg": 2.0}
    if args.reference:
        ref = io.read_image(_require_file(args.reference))
        if ref.shape != img.shape:
            raise InputError("reference image size differs from --n")
        report["relative_error"] = float(np.linalg.norm(img - ref) / np.linalg.norm(ref))
        target = grid.cone_filter_padded(ref, delta)
        report["cone_agreement"] = grid.cone_agreement(img, target, delta)
    out = Path(args.out)
    io.write_image(out, img, fbp_of=Path(args.input).name, delta_deg=math.degrees(delta))
    io.dump_json(report, out.with_suffix(".report.json"))
    return EXIT_OK


def cmd_cone(args) -> int:
    img = io.read_image(_require_file(args.input))
    beta = math.radians(args.beta_deg)
    out = grid.apply_multiplier(grid.check_image(img), grid.cone_mask(img.shape[0], beta))
    io.write_image(args.out, out, beta_deg=args.beta_deg)
    return EXIT_OK


# -- diag --------------------------------------------------------------------

def _norms(choice: str) -> list:
    return {"inhomogeneous": [False], "homogeneous": [True], "both": [False, True]}[choice]


def cmd_diag_nbeta(args) -> int:
    ds = io.load_dataset(_require_dataset(args.data))
    curves = []
    for hom in _norms(args.norm):
        vals, xs = [], []
        for b in args.beta_deg:
            try:
                vals.append(dg.n_beta(ds, math.radians(b), hom))
                xs.append(b)
            except dg.DegenerateDenominator as exc:
                print(f"beta={b}: {exc}", file=sys.stderr)
        curves.append(dg.Curve(tuple(xs), tuple(vals), "N_beta",
                               meta={"norm": dg._norm_name(hom)}))
    _emit_curves(curves, args.out)
    return EXIT_OK


def cmd_diag_geps(args) -> int:
    ds = io.load_dataset(_require_dataset(args.data))
    delta = resolve_delta(args)
    curves = []
    for hom in _norms(args.norm):
        c = dg.g_eps_curve(ds, delta, args.eps_deg, hom)
        curves.append(c)
    _emit_curves(curves, args.out)
    return EXIT_OK


def _emit_curves(curves, out) -> None:
    if out:
        dg.write_curves_csv(curves, out)
    else:
        dg.write_curves_csv(curves, sys.stdout)


def cmd_diag_stability(args) -> int:
    ds = io.load_dataset(_require_dataset(args.data))
    delta = resolve_delta(args)
    eps = 0.0
    lines = []
    if args.factor == 2:
        if args.eps_deg is not None:
            eps = math.radians(args.eps_deg)
        else:
            N = dg.n_beta(ds, delta)
            eps = dg.eps_threshold(N) / 2
    for i, img in enumerate(ds.images):
        entry = {"index": i, "delta_deg": math.degrees(delta), "eps_deg": math.degrees(eps)}
        try:
            sino = dg.measurement(ds, i, delta)
            rep = dg.check_stability(img, delta, eps, args.factor, sino=sino)
            entry.update(rep.to_dict())
        except dg.DegenerateDenominator as exc:
            entry["error"] = str(exc)
        lines.append(json.dumps(entry, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_diag_eps_threshold(args) -> int:
    if not args.N > 0:
        raise InputError("--N must be positive")
    eps = dg.eps_threshold(args.N)
    write_csv([(args.N, eps, math.degrees(eps))], ("N", "eps_rad", "eps_deg"), args.out)
    return EXIT_OK


def cmd_diag_disk_sweep(args) -> int:
    delta = resolve_delta(args)
    eps = math.radians(args.eps_deg)
    curves = [dg.disk_sweep(args.radii, delta, eps, True, "continuum")]
    curves[0].meta["norm"] = "homogeneous_continuum"
    for hom in _norms(args.norm):
        curves.append(dg.disk_sweep(args.radii, delta, eps, hom, "discrete", n=args.n))
    _emit_curves(curves, args.out)
    return EXIT_OK


# -- ntk -----------------------------------------------------------------------

def ntk_config(args) -> dict:
    return {"seed": args.seed, "B": args.B, "sigma_K": args.sigma_k, "n_units": args.n_units,
            "alpha": args.alpha, "delta_deg": math.degrees(resolve_delta(args)),
            "lr": args.lr, "steps": args.steps, "m": args.m, "count": args.count}


def cmd_ntk_train(args) -> int:
    cfg = ntk_config(args)
    delta = math.radians(cfg["delta_deg"])
    if 2 * args.B >= args.m:
        raise InputError("--B must be below m/2")
    data = ntk.band_limited_dataset(args.seed, args.count, args.m, args.B)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    outside = {}
    for name, alpha in (("linear", 1.0), ("nonlinear", args.alpha)):
        net = ntk.make_net(args.seed, args.n_units, args.B, args.sigma_k, alpha, delta)
        lr = args.lr if args.lr is not None else ntk.safe_lr(net, data)
        trace = ntk.train_readout(net, data, lr, args.steps)
        write_csv(enumerate(trace.losses), ("step", "loss"), out / f"trace_{name}.csv")
        outside[name] = trace.outside
        summary[name] = {"alpha": alpha, "lr": lr, "lambda_max": trace.lambda_max,
                         "final_loss": float(trace.losses[-1]),
                         "outside_error": ntk.outside_error(net, data),
                         "max_outside_fraction": float(np.max(trace.outside)),
                         "monotone": bool(np.all(np.diff(trace.losses) <= 0))}
    write_csv(zip(range(args.steps + 1), outside["linear"], outside["nonlinear"]),
              ("step", "linear", "nonlinear"), out / "outside_fraction.csv")
    lin, non = summary["linear"]["outside_error"], summary["nonlinear"]["outside_error"]
    summary["improvement"] = 1.0 - non / lin
    io.dump_json(cfg, out / "config.json")
    io.dump_json(summary, out / "summary.json")
    return EXIT_OK


def cmd_ntk_rho_check(args) -> int:
    rows = []
    for i, r in enumerate(args.rho):
        for j, a in enumerate(args.alpha):
            emp, se = ntk.mc_corr_check(r, a, args.samples, seed=[args.seed, i, j])
            ana = ntk.rho_transform(r, a)
            z = (emp - ana) / se if se > 0 else 0.0
            rows.append((r, a, ana, emp, se, z))
    write_csv(rows, ("rho", "alpha", "analytic", "empirical", "std_err", "z"), args.out)
    return EXIT_OK


def _parse_zetas(text: str) -> list:
    try:
        out = []
        for item in text.split(";"):
            z1, z2 = item.split(",")
            out.append((int(z1), int(z2)))
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad zeta list {text!r}; use 'z1,z2;z1,z2'")


def cmd_ntk_czeta(args) -> int:
    delta = resolve_delta(args)
    data = ntk.band_limited_dataset(args.seed, args.count, args.m, args.B)
    rep = ntk.c_zeta_check(data, delta, args.B, args.zeta, args.alpha)
    rows = [(z[0], z[1], v) for z, v in zip(rep.zetas, rep.min_eigenvalues)]
    write_csv(rows, ("zeta1", "zeta2", "min_eigenvalue"), args.out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _angle_args(p):
    p.add_argument("--delta-deg", type=float,
                   help="visible half-angle in degrees")
    p.add_argument("--missing-deg", type=float,
                   help="missing angle in degrees (delta = 90 - missing/2)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conelab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate phantom images")
    p.add_argument("--kind", choices=("ellipses", "disk", "squares"), required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--max-ellipses", type=int, default=5)
    p.add_argument("--a", type=float, default=0.5, help="disk radius")
    p.add_argument("--half-width", type=float, default=0.2)
    p.add_argument("--gap", type=float, default=0.15)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("sino", help="limited-angle sinograms")
    p.add_argument("--input", help="CLF1 image or dataset directory")
    _angle_args(p)
    p.add_argument("--n-theta", type=int)
    p.add_argument("--np", type=int)
    p.add_argument("--noise-rel", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sino)

    p = sub.add_parser("fbp", help="limited-angle filtered backprojection")
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--reference", help="ground-truth image for the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("cone", help="apply the cone multiplier")
    p.add_argument("--input", required=True)
    p.add_argument("--beta-deg", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cone)

    diag = sub.add_parser("diag", help="stability diagnostics").add_subparsers(
        dest="diag_command", required=True)
    p = diag.add_parser("nbeta")
    p.add_argument("--data", required=True)
    p.add_argument("--beta-deg", type=parse_range, default=parse_range("60..90..5"))
    p.add_argument("--norm", choices=("inhomogeneous", "homogeneous", "both"),
                   default="inhomogeneous")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diag_nbeta)

    p = diag.add_parser("geps")
    p.add_argument("--data", required=True)
    _angle_args(p)
    p.add_argument("--eps-deg", type=parse_range, default=parse_range("0..10..1"))
    p.add_argument("--norm", choices=("inhomogeneous", "homogeneous", "both"),
                   default="homogeneous")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diag_geps)

    p = diag.add_parser("stability")
    p.add_argument("--data", required=True)
    _angle_args(p)
    p.add_argument("--factor", type=int, choices=(1, 2), default=1)
    p.add_argument("--eps-deg", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diag_stability)

    p = diag.add_parser("eps-threshold")
    p.add_argument("--N", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diag_eps_threshold)

    p = diag.add_parser("disk-sweep")
    p.add_argument("--radii", type=parse_range, default=parse_range("0.1..0.9..0.1"))
    _angle_args(p)
    p.add_argument("--eps-deg", type=float, default=2.0)
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--norm", choices=("inhomogeneous", "homogeneous", "both"), default="both")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diag_disk_sweep)

    nt = sub.add_parser("ntk", help="frozen-kernel network experiments").add_subparsers(
        dest="ntk_command", required=True)
    p = nt.add_parser("train")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--B", type=int, default=ntk.DEFAULT_B)
    p.add_argument("--sigma-k", type=float)
    p.add_argument("--n-units", type=int, default=ntk.DEFAULT_UNITS)
    p.add_argument("--alpha", type=float, default=ntk.DEFAULT_ALPHA)
    _angle_args(p)
    p.set_defaults(default_delta_deg=50.0)
    p.add_argument("--lr", type=float, help="default: 0.9 / lambda_max of the Gram matrix")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--m", type=int, default=ntk.DEFAULT_M)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ntk_train)

    p = nt.add_parser("rho-check")
    p.add_argument("--rho", type=parse_range, default=parse_range("-0.9,-0.5,0,0.5,0.9,1"))
    p.add_argument("--alpha", type=parse_range, default=parse_range("0,0.01,0.2"))
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ntk_rho_check)

    p = nt.add_parser("czeta")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--m", type=int, default=ntk.DEFAULT_M)
    p.add_argument("--B", type=int, default=ntk.DEFAULT_B)
    p.add_argument("--alpha", type=float, default=ntk.DEFAULT_ALPHA)
    _angle_args(p)
    p.set_defaults(default_delta_deg=50.0)
    p.add_argument("--zeta", type=_parse_zetas, default=_parse_zetas("0,0;1,0;0,1"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ntk_czeta)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        apply_thread_limit()
        return args.func(args)
    except (ntk.DivergenceError, ntk.StepSizeError, dg.DegenerateDenominator,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"conelab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, OSError) as exc:
        print(f"conelab: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: simulate, reconstruct, evaluate, diagnose."""

import argparse
import csv
import json
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baselines import TVConfig, solve_psm_tv
from .denoisers import make_denoiser
from .errors import SolverDivergence, ValidationError
from .frames import DynamicObject
from .io import read_config, read_raw, save_png_frames, write_raw
from .metrics import evaluate
from .phantom import (
    acquire,
    bit_reversed_angles,
    disc,
    sequential_angles,
    shepp_logan,
    warp_phantom,
)
from .psm import compose
from .solver import Diagnostics, SolverConfig, initial_estimate, run
from .tomo import Sinogram

DENOISER_KEYS = ("denoiser", "denoiser_sigma", "denoiser_weights", "patch", "stride", "patch_inner")
FBP_KEYS = ("window",)


def _solver_keys():
    return tuple(f.name for f in fields(SolverConfig) if f.name != "denoiser") + DENOISER_KEYS


def _tv_keys():
    return tuple(f.name for f in fields(TVConfig))


def _load_stack(path):
    arr = np.asarray(read_raw(path), dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValidationError(f"{path}: expected (p, n, n) frames, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------- simulate

def _phantom(args):
    kind = args.phantom[0]
    if kind == "shepp-logan":
        return shepp_logan(args.n)
    if kind == "disc":
        return disc(args.n)
    if kind == "import":
        if len(args.phantom) != 2:
            raise ValidationError("--phantom import needs a raw file path")
        return _load_stack(args.phantom[1])
    raise ValidationError(f"unknown phantom {kind!r}")


def cmd_simulate(args):
    base = _phantom(args)
    if base.ndim == 2 or base.shape[0] == 1:
        static = base if base.ndim == 2 else base[0]
        cmax = 0.05 * static.shape[0] if args.cmax is None else args.cmax
        if args.warp == "sin":
            truth = warp_phantom(static, args.p, cmax)
        else:
            truth = DynamicObject.from_frames(np.repeat(static[None], args.p, axis=0))
    else:
        if args.p not in (None, base.shape[0]):
            raise ValidationError(f"imported sequence has {base.shape[0]} frames, --p {args.p}")
        truth = DynamicObject.from_frames(base)
    make = bit_reversed_angles if args.scheme == "bit-reversed" else sequential_angles
    sched = make(truth.p, args.phat)
    g = acquire(truth, sched, args.sigma, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_raw(out / "truth.raw", truth.frames())
    write_raw(out / "sinogram.raw", g.data)
    with open(out / "schedule.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "angle"])
        for t, a in enumerate(sched.angles):
            w.writerow([t, repr(float(a))])
    print(f"wrote {truth.p} frames of {truth.n}x{truth.n}, P_hat={sched.p_hat} to {out}")
    return 0


# ---------------------------------------------------------------- reconstruct

def _read_data(data_dir):
    data_dir = Path(data_dir)
    sino = np.asarray(read_raw(data_dir / "sinogram.raw"), dtype=np.float64)
    with open(data_dir / "schedule.csv", newline="") as fh:
        angles = np.array([float(r["angle"]) for r in csv.DictReader(fh)])
    return Sinogram(sino, angles)


def _denoiser_from(values):
    kind = values.pop("denoiser", "gaussian")
    sigma = float(values.pop("denoiser_sigma", 1.0))
    weights = values.pop("denoiser_weights", None)
    patch = int(values.pop("patch", 8))
    stride = int(values.pop("stride", 2))
    inner = values.pop("patch_inner", "gaussian")
    return make_denoiser(kind, sigma=sigma, weights=weights, patch=patch, stride=stride, inner=inner)


def _write_run(out, method, frames, values, diag=None, factors=None):
    out.mkdir(parents=True, exist_ok=True)
    write_raw(out / "frames.raw", frames)
    (out / "png").mkdir(exist_ok=True)
    save_png_frames(frames, str(out / "png" / "frame_"))
    if factors is not None:
        write_raw(out / "lambda.raw", factors.lam)
        write_raw(out / "z.raw", factors.z)
        write_raw(out / "u.raw", factors.u)
        write_raw(out / "psi.raw", factors.psi)
    if diag is not None:
        diag.to_csv(out / "diagnostics.csv")
    with open(out / "run.json", "w") as fh:
        json.dump({"method": method, "config": {k: str(v) for k, v in values.items()}}, fh, indent=1)


def cmd_reconstruct(args):
    g = _read_data(args.data)
    method = args.method
    if method == "red-psm":
        allowed = _solver_keys()
    elif method in ("psm-tv-s", "psm-tv-st"):
        allowed = _tv_keys()
    else:
        allowed = FBP_KEYS
    values = read_config(args.config, allowed) if args.config else {}
    echo = dict(values)
    out = Path(args.out)
    n = g.n
    if method == "fbp":
        f = initial_estimate(g, int(values.get("window", 0)))
        _write_run(out, method, DynamicObject(f, n).frames(), echo)
        return 0
    try:
        if method == "red-psm":
            den = _denoiser_from(values)
            cfg = SolverConfig(denoiser=den, **values)
            factors, _, diag = run(g, cfg)
        else:
            factors, diag = solve_psm_tv(g, TVConfig(**values), variant=method.rsplit("-", 1)[1])
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}") from exc
    except SolverDivergence as exc:
        if exc.diagnostics is not None:
            out.mkdir(parents=True, exist_ok=True)
            exc.diagnostics.to_csv(out / "diagnostics.csv")
        raise
    _write_run(out, method, compose(factors).frames(), echo, diag, factors)
    last = diag.rows[-1]
    print(f"{method}: {last['iter']} iterations, data fit {last['fit']:.6g}")
    return 0


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args):
    ref = DynamicObject.from_frames(_load_stack(args.ref))
    est = DynamicObject.from_frames(_load_stack(args.est))
    report = evaluate(ref, est, method=args.method or Path(args.est).parent.name, peak=args.peak)
    report.to_csv(args.out)
    m = report.mean()
    print("mean PSNR {psnr:.3f} dB  SSIM {ssim:.4f}  MAE {mae:.4g}  HFEN {hfen:.4g}".format(**m))
    return 0


# ---------------------------------------------------------------- diagnose

def check_diagnostics(diag, slack=1e-8, dual_slack=1e-9, admm=True):
    """Return a list of human-readable violations (empty when all checks pass).

    Checks that the merit function never increases by more than ``slack``
    (relative to its magnitude when that exceeds one), and for ADMM runs the
    dual-step bound ``|d gamma| <= (L / beta) |d f|`` and that the
    constraint gap has shrunk since the first iteration.
    """
    problems = []
    if len(diag) < 2:
        return ["fewer than two diagnostic rows"]
    key = "lagrangian" if admm else "H"
    vals = diag.column(key)
    for i in range(1, vals.size):
        tol = slack * max(1.0, abs(vals[i - 1]))
        if vals[i] > vals[i - 1] + tol:
            problems.append(f"row {i}: {key} increased {vals[i - 1]!r} -> {vals[i]!r}")
    if admm:
        dg, df = diag.column("diff_gamma"), diag.column("diff_f")
        big_l, beta = diag.column("L"), diag.column("beta")
        for i in range(1, dg.size):
            bound = big_l[i] / beta[i] * df[i] + dual_slack
            if dg[i] > bound:
                problems.append(f"row {i}: |d gamma|={dg[i]:.3e} exceeds (L/beta)|d f| bound {bound:.3e}")
        gap = diag.column("gap")
        if gap[-1] > gap[1] + dual_slack:
            problems.append(f"gap grew from {gap[1]:.3e} (iteration 1) to {gap[-1]:.3e}")
    return problems


def cmd_diagnose(args):
    run_dir = Path(args.run)
    path = run_dir / "diagnostics.csv"
    if not path.exists():
        raise ValidationError(f"{path} not found (fbp runs have no diagnostics)")
    method = "red-psm"
    meta = run_dir / "run.json"
    if meta.exists():
        with open(meta) as fh:
            method = json.load(fh).get("method", method)
    problems = check_diagnostics(Diagnostics.from_csv(path), args.slack, admm=method == "red-psm")
    for p in problems:
        print(p)
    print(f"{path}: {'OK' if not problems else f'{len(problems)} violation(s)'}")
    return 1 if problems else 0


# ---------------------------------------------------------------- entry point

def build_parser():
    ap = argparse.ArgumentParser(prog="redpsm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="make a dynamic phantom and its time-sequential sinogram")
    s.add_argument("--phantom", nargs="+", default=["shepp-logan"],
                   metavar="KIND", help="shepp-logan, disc, or 'import <raw>'")
    s.add_argument("--warp", choices=["sin", "none"], default="sin")
    s.add_argument("--cmax", type=float, default=None, help="peak warp displacement in pixels (default 0.05 N)")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--p", type=int, default=32)
    s.add_argument("--phat", type=int, default=None, help="distinct view angles (default P)")
    s.add_argument("--scheme", choices=["bit-reversed", "sequential"], default="bit-reversed")
    s.add_argument("--sigma", type=float, default=5e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", help="reconstruct a dynamic object from a sinogram")
    r.add_argument("--method", choices=["red-psm", "psm-tv-s", "psm-tv-st", "fbp"], required=True)
    r.add_argument("--config", default=None, help="flat key=value file")
    r.add_argument("--data", required=True, help="directory written by 'simulate'")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("evaluate", help="per-frame PSNR/SSIM/MAE/HFEN")
    e.add_argument("--ref", required=True)
    e.add_argument("--est", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--method", default=None)
    e.add_argument("--peak", choices=["sequence", "frame"], default="sequence")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("diagnose", help="re-check convergence diagnostics of a run")
    d.add_argument("--run", required=True)
    d.add_argument("--slack", type=float, default=1e-8)
    d.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (ValidationError, SolverDivergence, OSError) as exc:
        print(f"redpsm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

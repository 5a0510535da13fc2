"""Command-line front end.

Exit codes: 0 success, 2 bad input or violated contract (malformed file,
inadmissible sample size, dimension mismatch, non-PD truth), 3 numerical
failure during fitting.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .estimator import AssumptionSet, FactorSet, FitConfig, FitError, fit
from .evaluation import mse_components, mse_total, run_validation
from .glm import alpha_regressor, bh_fdr, build_design, delta_regressor, f_tests, spectrum_from_psi
from .simulate import StudyConfig, run_study, sample_dataset, subtract_average_response

logger = logging.getLogger("tricov")


class InputError(Exception):
    """Raised for contract violations that map to exit status 2."""


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _band(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'f_lo,f_hi', got {text!r}") from None
    return lo, hi


def _dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _fit_config(args):
    return FitConfig(
        max_outer_iters=args.max_iters,
        outer_tol=args.tol,
        em_max_iters=args.em_max_iters,
        em_tol=args.em_tol,
        embedding_l=args.embedding_l,
    )


def _add_fit_options(p):
    g = p.add_argument_group("estimation")
    g.add_argument("--max-iters", type=int, default=200, help="maximum outer iterations (default 200)")
    g.add_argument("--tol", type=float, default=1e-7,
                   help="relative log-likelihood change for convergence (default 1e-7)")
    g.add_argument("--em-max-iters", type=int, default=100, help="maximum EM iterations per update (default 100)")
    g.add_argument("--em-tol", type=float, default=1e-6,
                   help="relative change of the Toeplitz first row ending EM (default 1e-6)")
    g.add_argument("--embedding-l", type=int, default=None, help="circulant embedding size (default 2q-1)")


def cmd_fit(args):
    t = io.read_kct(args.data)
    if args.subtract_average:
        t = subtract_average_response(t)
    a = AssumptionSet("unrestricted", args.psi, args.delta)
    res = fit(t, a, _fit_config(args))
    if args.out:
        io.save_fit(res, args.out)
    g = "n/a" if res.g_residual is None else f"{res.g_residual:.3e}"
    d = "n/a" if res.delta_residual is None else f"{res.delta_residual:.3e}"
    print(
        f"fit {a.code}: {'converged' if res.converged else 'stopped'} after {res.iters} iterations, "
        f"loglik {res.loglik:.10g}, residuals gamma {res.gamma_residual:.3e} delta {d} toeplitz-G {g}"
    )
    return 0


def _read_truth(args):
    if args.truth:
        factors, _ = io.load_fit(args.truth)
        return factors
    if not (args.gamma and args.psi and args.delta):
        raise InputError("give --truth DIR or all of --gamma, --psi and --delta")
    return FactorSet(io.read_kcf(args.gamma), io.read_kcf(args.psi), io.read_kcf(args.delta))


def cmd_simulate(args):
    truth = _read_truth(args)
    t = sample_dataset(truth, args.n, seed=args.seed)
    io.write_kct(args.out, t, sampling_rate=args.fs)
    print(f"wrote {args.out}: p={t.p} q={t.q} r={t.r} n={t.n}")
    return 0


def cmd_study(args):
    cfg = StudyConfig.from_json(args.config)
    spec = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        cfg.seed = args.seed
    elif "seed" not in spec:
        raise InputError("study needs a seed: put 'seed' in the config or pass --seed")
    report = run_study(cfg, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(report, out / "study_report.json")
    cols = ["assumptions", "mse", "percent_of_UTD", "mse_gamma", "mse_psi", "mse_delta", "fits", "failures"]
    with open(out / "study_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in report["summary"]:
            w.writerow([row[c] if not isinstance(row[c], float) else format(row[c], ".17g") for c in cols])
    print(f"study: {len(report['records'])} fits written to {out}")
    return 0


def cmd_evaluate(args):
    est, _ = io.load_fit(args.fit)
    truth = _read_truth(args)
    try:
        comps = mse_components(est, truth)
    except ValueError:
        from .estimator import normalize

        comps = mse_components(normalize(est), normalize(truth))
    report = {
        "mse": mse_total(est, truth),
        "mse_gamma": comps[0],
        "mse_psi": comps[1],
        "mse_delta": comps[2],
    }
    _dump_json(report, args.out)
    return 0


def cmd_validate(args):
    t = io.read_kct(args.data)
    factors, meta = io.load_fit(args.fit)
    if (factors.p, factors.q, factors.r) != (t.p, t.q, t.r):
        raise InputError(
            f"fit dims (p={factors.p}, q={factors.q}, r={factors.r}) do not match data "
            f"(p={t.p}, q={t.q}, r={t.r})")
    if args.mode == "random" and args.seed is None:
        raise InputError("random splits need --seed")
    a = AssumptionSet.from_code(meta.get("assumptions", "UTD"))
    cfg = FitConfig(**meta["config"]) if "config" in meta else FitConfig()
    report = run_validation(t, factors, a, cfg, mode=args.mode, repeats=args.repeats,
                            seed=args.seed or 0)
    _dump_json(report, args.out)
    return 0


def cmd_regress(args):
    out = Path(args.out)
    if args.kind == "delta":
        if not args.fit:
            raise InputError("--kind delta needs --fit")
        factors, _ = io.load_fit(args.fit)
        kept = np.diag(factors.delta)
        removed = sorted(set(args.removed))
        total = kept.size + len(removed)
        if removed and (removed[0] < 0 or removed[-1] >= total):
            raise InputError(f"removed epochs must lie in [0, {total})")
        full = np.full(total, np.nan)
        full[np.setdiff1d(np.arange(total), removed)] = kept
        reg = delta_regressor(full, removed)
    else:
        if not args.data:
            raise InputError("--kind alpha needs --data")
        t = io.read_kct(args.data)
        channels = args.channels if args.channels else list(range(t.p))
        reg = alpha_regressor(t, channels, args.band, args.fs)
    out.mkdir(parents=True, exist_ok=True)
    io.write_regressor_csv(out / "regressor.csv", reg)

    if args.bold is None:
        print(f"regressor ({reg.kind}, {reg.values.size} epochs) written to {out}")
        return 0
    bold = io.read_kct(args.bold)
    if bold.q != 1 or bold.n != 1:
        raise InputError(f"BOLD file must have q=1 and n=1, got q={bold.q} n={bold.n}")
    if bold.r != reg.values.size:
        raise InputError(f"BOLD has {bold.r} epochs but the regressor has {reg.values.size}")
    conf = io.read_matrix_csv(args.confounders) if args.confounders else None
    if conf is not None and conf.shape[0] != bold.r:
        raise InputError(f"confounders have {conf.shape[0]} rows, BOLD has {bold.r} epochs")
    design = build_design(reg, args.shifts, conf)
    y = bold.data[0, :, :, 0]  # (r, voxels)
    f, pv, df1, df2 = f_tests(y, design)
    sig = bh_fdr(pv, args.fdr)
    with open(out / "glm_voxels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["voxel", "f", "df1", "df2", "p", "significant"])
        for v in range(y.shape[1]):
            w.writerow([v, format(float(f[v]), ".17g"), df1, df2, format(float(pv[v]), ".17g"), int(sig[v])])
    _dump_json({
        "voxels": int(y.shape[1]),
        "significant": int(sig.sum()),
        "fdr": args.fdr,
        "df": [df1, df2],
        "shifts": args.shifts,
        "design_columns": list(design.roles),
        "regressor": reg.kind,
    }, out / "glm_summary.json")
    print(f"{int(sig.sum())} of {y.shape[1]} voxels significant at FDR {args.fdr}")
    return 0


def cmd_spectrum(args):
    factors, _ = io.load_fit(args.fit)
    freqs, power = spectrum_from_psi(factors.psi, args.fs)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frequency_hz", "power"])
        for fr, pw in zip(freqs, power):
            w.writerow([format(float(fr), ".17g"), format(float(pw), ".17g")])
    finally:
        if args.out:
            fh.close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="tricov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log iteration details")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from given factors")
    p.add_argument("--truth", help="directory with gamma.kcf, psi.kcf, delta.kcf")
    p.add_argument("--gamma", help="spatial factor (KCF1)")
    p.add_argument("--psi", help="temporal factor (KCF1)")
    p.add_argument("--delta", help="epoch factor (KCF1)")
    p.add_argument("--n", type=int, default=1, help="number of samples (default 1)")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--fs", type=float, default=None, help="sampling rate recorded in the JSON sidecar")
    p.add_argument("--out", required=True, help="output KCT1 file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="run a simulation study over assumption sets")
    p.add_argument("--config", required=True, help="study.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="replicates fitted in parallel (default 1)")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("fit", help="estimate the three covariance factors")
    p.add_argument("--data", required=True, help="input KCT1 file")
    p.add_argument("--psi", choices=["toeplitz", "persymmetric", "unrestricted"], default="toeplitz")
    p.add_argument("--delta", choices=["diagonal", "unrestricted", "identity"], default="diagonal")
    p.add_argument("--subtract-average", action="store_true",
                   help="remove the average response over epochs before fitting")
    p.add_argument("--out", help="fit directory to write")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="relative MSEs of a fit against known factors")
    p.add_argument("--fit", required=True, help="fit directory")
    p.add_argument("--truth", help="directory with true gamma.kcf, psi.kcf, delta.kcf")
    p.add_argument("--gamma", help="true spatial factor (KCF1)")
    p.add_argument("--psi", help="true temporal factor (KCF1)")
    p.add_argument("--delta", help="true epoch factor (KCF1)")
    p.add_argument("--out", help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate", help="epoch-subsample consistency check")
    p.add_argument("--data", required=True, help="input KCT1 file")
    p.add_argument("--fit", required=True, help="fit directory for the full data")
    p.add_argument("--mode", choices=["random", "consecutive"], default="random")
    p.add_argument("--repeats", type=int, default=10, help="random partitions (default 10)")
    p.add_argument("--seed", type=int, default=None, help="seed for random partitions")
    p.add_argument("--out", help="validate_report.json path (default stdout)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("regress", help="epoch regressors and voxelwise partial F-tests")
    p.add_argument("--kind", choices=["delta", "alpha"], default="delta")
    p.add_argument("--fit", help="fit directory (delta regressor)")
    p.add_argument("--removed", type=_ints, default=[],
                   help="comma-separated 0-based epochs dropped before fitting")
    p.add_argument("--data", help="KCT1 EEG data (alpha regressor)")
    p.add_argument("--channels", type=_ints, default=None, help="channels for the alpha regressor")
    p.add_argument("--band", type=_band, default=(8.0, 12.0), help="f_lo,f_hi in Hz (default 8,12)")
    p.add_argument("--fs", type=float, default=256.0, help="sampling rate in Hz (default 256)")
    p.add_argument("--bold", help="KCT1 BOLD matrix (p=voxels, q=1, r=epochs, n=1)")
    p.add_argument("--confounders", help="CSV with one row per epoch")
    p.add_argument("--shifts", type=_ints, default=[0], help="comma-separated lags (default 0)")
    p.add_argument("--fdr", type=float, default=0.01, help="Benjamini-Hochberg level (default 0.01)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("spectrum", help="power spectrum implied by the temporal factor")
    p.add_argument("--fit", required=True, help="fit directory")
    p.add_argument("--fs", type=float, required=True, help="sampling rate in Hz")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"tricov {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (InputError, ValueError, OSError) as exc:
        print(f"tricov {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 computation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .approximant import GeometryPolicy
from .ensemble import (EXPERIMENTS, EnsembleConfig, EnsembleError, PersistError, SchemaError,
                       fit_decay, load, persist, run_experiment, sample_disorder, DisorderSpec)
from .geometry import ChainRegion, GeometryError
from .hamiltonian import ModelError, ModelParams, check_half_integer
from .sample import SampleContext
from .spectral import SmoothFilter, SpectralError

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3

DESCRIPTIONS = {
    "spectrum": "Eigenvalues of the random XXZ Hamiltonian of one disorder sample, written "
                "as CSV rows (sector N, index, energy).  Calls sample.SampleContext.spectrum.",
    "quasiloc": "Disorder average of ||P_-^A (H - E)^{-1} P_+^B||^(1/4) with A the centre site "
                "and dist(A, B^c) on the grid; fits an exponential decay rate.  Calls "
                "quasiloc.resolvent_crossing_norm through ensemble.run_experiment.",
    "eigencorr": "Disorder average of the eigencorrelator sum over eigenvalues in I_<=q of "
                 "||P_-^A pi_E P_+^B|| (an upper bound on the sup over bounded spectral "
                 "functions; the witness lower bound is kept per sample).  Calls "
                 "quasiloc.eigencorrelator.",
    "ct-check": "Pass rate of the deterministic bound ||P_-^A R^_{q,z} P_+^B|| <= "
                "(1/delta0) exp(-ln((delta0-1)/8) dist) for random connected A, B and random "
                "z with Re z in the checked window; the lemma-level bound with prefactor "
                "delta0 is reported alongside.  Calls quasiloc.ct_check.",
    "multiprobe": "Disorder average of ||P_I<=k prod_i P_-^{S_i}|| for k+1 single-site probes "
                  "spaced 2 ell + 1 apart.  Calls quasiloc.multi_probe_norm.",
    "tailprob": "Frequency of samples with an eigenvalue in I_<=k among sectors holding more "
                "than 2 ell + k particles.  Calls quasiloc.tail_probability_probe.",
    "propagate": "Disorder average of ||(tau_t(T) - T_t)_P|| on the range of P = P_I<=q, for "
                 "T the centre occupation and T_t the localized approximant at scale ell.  "
                 "Calls approximant.build_approximant_top.",
    "matrix-element": "Disorder average of |<phi_M1|(tau_t(T) - T_t)_P|phi_M2>| for random "
                      "configurations M1, M2.  Calls approximant.matrix_element_approximant.",
    "verify": "Run the deterministic invariant suite (operator identities, the gapped "
              "resolvent bound, the Duhamel identity, filter sandwich, construction "
              "soundness) and print pass/fail per invariant.  Calls verify.run_suite.",
    "fit": "Refit the exponential decay rate of a stored result and optionally emit the "
           "CSV/SVG plot data.  Calls ensemble.fit_decay and plotting.emit_plotdata.",
}

DEFAULT_GRIDS = {"dist": (1, 2, 3, 4), "ell": (1, 2, 3)}


class InputError(ValueError):
    pass


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _model_flags(p):
    p.add_argument("--config", type=Path, help="JSON file with EnsembleConfig fields; "
                   "explicit flags override it")
    p.add_argument("--L", type=int, help="chain length")
    p.add_argument("--delta", type=float, help="anisotropy, > 1")
    p.add_argument("--lambda", dest="lam", type=float, help="disorder strength, > 0")
    p.add_argument("--q", type=float, help="energy index, a multiple of 1/2")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--distribution", choices=("uniform", "beta"))
    p.add_argument("--dist-params", type=_float_list, help="beta shape parameters a,b")


def _ensemble_flags(p, axis):
    _model_flags(p)
    p.add_argument("--samples", type=int, help="number of disorder samples")
    p.add_argument("--workers", type=int, help="worker processes (default: $XXZLAB_WORKERS "
                   "or 1); results do not depend on it")
    p.add_argument(f"--{axis}", dest="grid", type=_int_list,
                   help=f"comma-separated grid of {axis} values "
                        f"(default {','.join(map(str, DEFAULT_GRIDS[axis]))})")
    p.add_argument("--out", type=Path, help="result JSON path; CSV and SVG are written "
                   "next to it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xxzlab", description="Numerical experiments on "
                                     "localization and slow propagation in the random "
                                     "XXZ chain in its droplet regime.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name):
        return sub.add_parser(name, help=DESCRIPTIONS[name].split(".")[0],
                              description=DESCRIPTIONS[name])

    p = add("spectrum")
    _model_flags(p)
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.add_argument("--cutoff", type=float, help="keep eigenvalues up to this energy only")
    p.add_argument("--filter-curve", action="store_true",
                   help="write the smooth filter (energy, value) on a grid instead")
    p.add_argument("--out", type=Path, help="CSV path (default stdout)")

    for name in EXPERIMENTS:
        p = add(name)
        _ensemble_flags(p, EXPERIMENTS[name].axis)
        if name in ("propagate", "matrix-element"):
            p.add_argument("--t", type=float, help="evolution time")
            p.add_argument("--policy", choices=("default", "shrunken"),
                           help="geometry multipliers (shrunken is flagged in outputs)")
        if name in ("quasiloc",):
            p.add_argument("--energy-frac", type=float,
                           help="real energy E as a multiple of 1 - 1/delta (default 0.5)")
        if name == "ct-check":
            p.add_argument("--delta0", type=float, help="reference anisotropy, > 9")
        if name in ("multiprobe", "tailprob"):
            p.add_argument("--k", type=int, help="cluster index (default ceil(q))")
        if name == "matrix-element":
            p.add_argument("--alpha", type=float, help="window scale r = ceil(alpha ln L)")
            p.add_argument("--r", type=int, help="window scale override")
            p.add_argument("--particles", type=int, help="|M1| = |M2|")

    p = add("verify")
    p.add_argument("--sizes", type=_int_list, default=(6, 8, 10))
    p.add_argument("--seed", type=int, default=0)

    p = add("fit")
    p.add_argument("result", type=Path, help="result JSON written by an experiment")
    p.add_argument("--plot", type=Path, help="emit CSV/SVG plot data at this stem")
    return parser


OPTION_FLAGS = ("energy_frac", "delta0", "k", "alpha", "r", "particles")
FIELD_FLAGS = {"L": "L", "delta": "delta", "lam": "lam", "q": "q", "seed": "seed",
               "distribution": "distribution", "dist_params": "dist_params",
               "samples": "samples", "grid": "grid", "t": "t", "policy": "policy"}


def config_from_args(args) -> EnsembleConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}")
    data["experiment"] = args.command
    for flag, key in FIELD_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    opts = dict(data.get("options", {}))
    for flag in OPTION_FLAGS:
        val = getattr(args, flag, None)
        if val is not None:
            opts[flag] = val
    data["options"] = opts
    data.setdefault("grid", DEFAULT_GRIDS[EXPERIMENTS[args.command].axis])
    for key in ("L", "delta", "lam"):
        if key not in data:
            raise InputError(f"missing required setting {key!r} (flag or config)")
    if "q" in data:
        check_half_integer(data["q"])
    return EnsembleConfig.from_json(data)


def _print_result(res, cfg, out):
    exp = EXPERIMENTS[cfg.experiment]
    print(f"{exp.description}  [{res.statistic}]", file=out)
    print(f"{exp.axis:>6} {'mean':>14} {'stderr':>12} {'n':>5}", file=out)
    for p in res.points:
        print(f"{p.x:>6g} {p.mean:>14.6e} {p.stderr:>12.3e} {p.n:>5d}", file=out)
    if res.fit:
        if res.fit.get("theta") is not None:
            print(f"fitted rate theta = {res.fit['theta']:.6g} +- {res.fit['half_width']:.3g}",
                  file=out)
        else:
            print(f"no decay fit: {res.fit.get('reason')}", file=out)
    if cfg.experiment in ("propagate", "matrix-element"):
        pol = GeometryPolicy.named(cfg.policy) if isinstance(cfg.policy, str) \
            else GeometryPolicy(**cfg.policy)
        if pol.override:
            ref = GeometryPolicy.default()
            radii = ", ".join(f"ell={int(x)}: {ref.top_radius(cfg.q, int(x))}"
                              for x in cfg.grid)
            print(f"policy override in use {pol.to_json()}; default support radii "
                  f"({radii}) exceed the chain length {cfg.L}", file=out)
    if res.failures:
        print(f"{len(res.failures)} failed samples excluded", file=out)


def cmd_experiment(args, out) -> int:
    try:
        cfg = config_from_args(args)
    except (InputError, EnsembleError, ModelError, GeometryError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        res = run_experiment(cfg, workers=args.workers)
    except (EnsembleError, ValueError, ArithmeticError, RuntimeError,
            np.linalg.LinAlgError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    _print_result(res, cfg, out)
    if args.out is not None:
        from .plotting import emit_plotdata
        try:
            path, csv_path = persist(res, args.out)
            emit_plotdata(res, args.out)
        except (PersistError, OSError) as exc:
            print(f"computation failed: {exc}", file=sys.stderr)
            return EXIT_COMPUTE
        print(f"wrote {path}, {csv_path}, {args.out.with_suffix('.svg')}", file=out)
    return EXIT_OK


def cmd_spectrum(args, out) -> int:
    try:
        if args.config is not None:
            data = json.loads(args.config.read_text())
        else:
            data = {}
        L = args.L if args.L is not None else data.get("L")
        delta = args.delta if args.delta is not None else data.get("delta")
        lam = args.lam if args.lam is not None else data.get("lam")
        if None in (L, delta, lam):
            raise InputError("spectrum needs --L, --delta and --lambda (flag or config)")
        q = check_half_integer(args.q if args.q is not None else data.get("q", 0.5))
        params = ModelParams(delta, lam, q)
        seed = args.seed if args.seed is not None else data.get("seed", 0)
        spec = DisorderSpec(args.distribution or data.get("distribution", "uniform"),
                            tuple(args.dist_params or data.get("dist_params", ())))
        if args.index < 0:
            raise InputError("sample index must be nonnegative")
    except (InputError, ModelError, EnsembleError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    fh = open(args.out, "w", newline="") if args.out else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        if args.filter_curve:
            f = SmoothFilter(q, delta)
            w.writerow(["energy", "psi"])
            for e in np.linspace(-1.5, (q + 1.5) * params.u, 401):
                w.writerow([repr(float(e)), repr(float(f(e)))])
            return EXIT_OK
        try:
            omega = sample_disorder(spec, seed, args.index, ChainRegion(1, L))
            S = SampleContext(params, omega).spectrum(cutoff=args.cutoff)
        except (ValueError, SpectralError, np.linalg.LinAlgError) as exc:
            print(f"computation failed: {exc}", file=sys.stderr)
            return EXIT_COMPUTE
        w.writerow(["N", "index", "energy"])
        for N in sorted(S.sectors):
            for i, e in enumerate(S.sectors[N][0]):
                w.writerow([N, i, repr(float(e))])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_verify(args, out) -> int:
    from .verify import run_suite
    if not args.sizes or min(args.sizes) < 4:
        print("error: sizes must be at least 4", file=sys.stderr)
        return EXIT_INPUT
    results = run_suite(args.sizes, args.seed)
    for r in results:
        print(r.line(), file=out)
    bad = [r for r in results if not r.passed and not r.known_failure]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed or documented", file=out)
    return EXIT_OK if not bad else EXIT_COMPUTE


def cmd_fit(args, out) -> int:
    try:
        res = load(args.result)
    except (PersistError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    pos = [(p.x, p.mean, p.stderr) for p in res.points if p.mean > 0]
    try:
        theta, icpt, hw = fit_decay(pos)
    except EnsembleError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    print(f"theta = {theta:.6g} +- {hw:.3g} (intercept {icpt:.6g}, "
          f"{len(res.points) - len(pos)} censored)", file=out)
    if args.plot is not None:
        from .plotting import emit_plotdata
        res.fit = {"theta": theta, "intercept": icpt, "half_width": hw,
                   "censored": [p.x for p in res.points if p.mean <= 0]}
        emit_plotdata(res, args.plot)
    return EXIT_OK


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    if args.command == "spectrum":
        return cmd_spectrum(args, out)
    if args.command == "verify":
        return cmd_verify(args, out)
    if args.command == "fit":
        return cmd_fit(args, out)
    return cmd_experiment(args, out)


def entry() -> None:
    sys.exit(main())

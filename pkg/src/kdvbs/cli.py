"""Command-line entry point: ``python3 -m kdvbs <command> [flags]``.

Every command accepts ``--config FILE`` with flat ``key = value`` lines (``#``
starts a comment); explicit flags override the file.  Outputs go to ``--out``
and every CSV starts with a ``#`` line recording the full configuration and the
package version.

Exit codes: 0 success, 2 usage error, 3 non-convergence (or another numerical
failure), 4 blow-up, 5 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import Blowup, KdvbsError, NoConvergence
from .kernel import build_kernel, decay_report, dump_kernel, residual, variant_alpha
from .simulator import MODES, SchemeConfig, fit_decay_rate, simulate
from .spectral import find_eigenvalues, spectral_abscissa, write_eigen_csv
from .transform import (GridFunction, discretize_K, forward, inverse_direct,
                        inverse_succession, invnorm_estimate)

log = logging.getLogger("kdvbs")

EXIT_OK, EXIT_USAGE, EXIT_MATH, EXIT_BLOWUP, EXIT_IO = 0, 2, 3, 4, 5

# the decay rates printed for the seven kernels at L = 2 pi in the source table
PUBLISHED_ALPHA = {
    0.01: 0.00954938,
    0.02: 0.0167563,
    0.03: 0.0181985,
    0.04: 0.00844268,
    0.05: -0.0203987,
    0.1: -0.961935,
    1.0: -83925.8,
}

U0_PRESETS = ("one_minus_cos", "gaussian", "zero")


class UsageError(Exception):
    pass


def initial_condition(name: str, amplitude: float, L: float):
    """Named initial profile scaled by ``amplitude``."""
    if name == "one_minus_cos":
        return lambda x: amplitude * (1 - np.cos(x))
    if name == "gaussian":
        return lambda x: amplitude * np.exp(-(((x - L / 2) / (L / 8)) ** 2))
    if name == "zero":
        return lambda x: 0.0 * x
    raise UsageError(f"unknown u0 preset {name!r}; expected one of {U0_PRESETS}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; keys use underscores or dashes interchangeably."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--length", type=float, default=2 * math.pi, help="domain length L")
    common.add_argument("--seed-free", action="store_true",
                        help="accepted for compatibility; nothing here draws random numbers")
    common.add_argument("-v", "--verbose", action="store_true")

    kern = argparse.ArgumentParser(add_help=False)
    kern.add_argument("--tol", type=float, default=1e-12, help="series truncation tolerance")
    kern.add_argument("--n-max", type=int, default=200, help="maximum number of series terms")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--grid", type=int, default=200, help="number of cells J")
    sim.add_argument("--dt", type=float, default=1e-3)
    sim.add_argument("--steps", type=int, default=30000)
    sim.add_argument("--mode", choices=MODES, default="controlled2")
    sim.add_argument("--m-succession", type=int, default=None,
                     help="fixed number of successive substitutions (default: adaptive)")
    sim.add_argument("--u0", choices=U0_PRESETS, default="one_minus_cos")
    sim.add_argument("--amplitude", type=float, default=1.0)
    sim.add_argument("--fit-start", type=float, default=None,
                     help="start of the decay-rate fit window (default: T/6)")
    sim.add_argument("--fit-end", type=float, default=None,
                     help="end of the fit window (default: T)")

    p = argparse.ArgumentParser(prog="kdvbs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"kdvbs {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("kernel", parents=[common, kern], help="build a kernel; JSON + decay report")
    c.add_argument("--lambda", dest="lam", type=float, required=True)
    c.add_argument("--grid", type=int, default=None,
                   help="if given, estimate ||(I-K)^-1|| on J cells and report beta")

    c = sub.add_parser("table1", parents=[common, kern], help="decay rate alpha over a list of lambda")
    c.add_argument("--lambdas", type=_float_list, default=sorted(PUBLISHED_ALPHA))

    c = sub.add_parser("simulate", parents=[common, kern, sim], help="run the finite-difference scheme")
    c.add_argument("--lambda", dest="lam", type=float, default=0.0)
    c.add_argument("--snapshot-every", type=int, default=0)

    c = sub.add_parser("spectral", parents=[common], help="eigenvalues of the boundary operator")
    c.add_argument("--k-min", type=int, default=1)
    c.add_argument("--k-max", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-9, help="accepted residual")

    c = sub.add_parser("sweep", parents=[common, kern, sim], help="alpha, beta and fitted rate over lambda")
    c.add_argument("--lambdas", type=_float_list, default=[0.01, 0.02, 0.03])
    c.add_argument("--invnorm-grid", type=int, default=256)

    c = sub.add_parser("transform-check", parents=[common, kern],
                       help="round trip of the Volterra transform on fixed test functions")
    c.add_argument("--lambda", dest="lam", type=float, required=True)
    c.add_argument("--grid", type=int, default=128)
    c.add_argument("--m-succession", type=int, default=None)
    return p


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        known = {a.dest for a in sub._actions}  # noqa: SLF001
        defaults = {}
        for key, value in cfg.items():
            dest = "lam" if key in ("lambda", "lam") else key
            if dest not in known:
                raise UsageError(f"unknown config key {key!r} for command {args.command!r}")
            defaults[dest] = value
        # values from the file become defaults and go through the same type conversion
        for action in sub._actions:  # noqa: SLF001
            if action.dest in defaults:
                v = defaults[action.dest]
                if action.type is not None:
                    v = action.type(v)
                elif isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                    v = v.lower() in ("1", "true", "yes", "on")
                if action.choices is not None and v not in action.choices:
                    raise UsageError(f"config {action.dest} = {v!r} not in {list(action.choices)}")
                defaults[action.dest] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    _validate(args)
    return args


def _validate(args):
    def positive(name):
        v = getattr(args, name, None)
        if v is not None and not (v > 0):
            raise UsageError(f"--{name.replace('_', '-')} must be positive, got {v}")

    for name in ("length", "tol", "dt", "steps", "n_max", "invnorm_grid", "k_min", "k_max",
                 "m_succession"):
        positive(name)
    if not math.isfinite(getattr(args, "amplitude", 0.0)):
        raise UsageError("--amplitude must be finite")
    if getattr(args, "grid", None) is not None and args.grid < 8:
        raise UsageError("--grid must be >= 8")
    if args.command in ("kernel", "transform-check") and not args.lam > 0:
        raise UsageError("--lambda must be > 0 for a kernel")
    if args.command == "simulate":
        if args.lam < 0:
            raise UsageError("--lambda must be >= 0")
        if args.mode != "uncontrolled" and not args.lam > 0:
            raise UsageError(f"mode {args.mode} needs --lambda > 0")
    if args.command in ("table1", "sweep"):
        if not args.lambdas or any(not v > 0 for v in args.lambdas):
            raise UsageError("--lambdas must be a non-empty list of positive numbers")
    if args.command == "spectral" and args.k_min > args.k_max:
        raise UsageError("--k-min must not exceed --k-max")


def _meta(args) -> str:
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "verbose", "out")}
    body = " ".join(f"{k}={_fmt(v)}" for k, v in items.items())
    return f"kdvbs {__version__} {body}"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, meta: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {meta}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


# ---------------------------------------------------------------- commands

def cmd_kernel(args) -> int:
    out = _outdir(args)
    K = build_kernel(args.lam, args.length, tol=args.tol, n_max=args.n_max)
    invnorm = None
    if args.grid is not None:
        invnorm = invnorm_estimate(discretize_K(K, args.grid))
    rep = decay_report(K, invnorm)
    (out / "kernel.json").write_text(dump_kernel(K), encoding="utf-8")
    header = ["lambda", "L", "n_terms", "alpha", "beta", "norm_ky0_sq", "norm_kxL_sq",
              "invnorm", "tail_bound", "deriv_tail_bound", "residual_bound"]
    row = [K.lam, K.L, K.n_terms, rep.alpha, rep.beta, rep.norm_ky0_sq, rep.norm_kxL_sq,
           rep.invnorm, K.tail_bound, K.deriv_tail_bound, K.residual_bound]
    _write_rows(out / "decay.csv", _meta(args), header, [row])
    print(f"lambda={K.lam:g} L={K.L:.6g} n_terms={K.n_terms} alpha={rep.alpha:.9g}"
          + ("" if rep.beta is None else f" beta={rep.beta:.9g} invnorm={rep.invnorm:.6g}"))
    return EXIT_OK


def cmd_table1(args) -> int:
    out = _outdir(args)
    rows = []
    for lam in args.lambdas:
        K = build_kernel(lam, args.length, tol=args.tol, n_max=args.n_max)
        rep = decay_report(K)
        pub = PUBLISHED_ALPHA.get(lam) if math.isclose(args.length, 2 * math.pi) else None
        rows.append([lam, rep.alpha, pub, variant_alpha(lam, args.length), K.n_terms])
        print(f"lambda={lam:g} alpha={rep.alpha:.9g}"
              + ("" if pub is None else f" published={pub:g}"))
    _write_rows(out / "table1.csv", _meta(args),
                ["lambda", "alpha", "published_alpha", "variant_alpha", "n_terms"], rows)
    return EXIT_OK


def _scheme(args, lam) -> SchemeConfig:
    try:
        return SchemeConfig(L=args.length, J=args.grid, dt=args.dt, N_steps=args.steps, lam=lam,
                            mode=args.mode, m_succession=args.m_succession,
                            snapshot_every=getattr(args, "snapshot_every", 0))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _fit_window(args, T):
    t0 = T / 6 if args.fit_start is None else args.fit_start
    t1 = T if args.fit_end is None else args.fit_end
    if not 0 <= t0 < t1 <= T:
        raise UsageError(f"fit window [{t0}, {t1}] must lie inside [0, {T}]")
    return t0, t1


def cmd_simulate(args) -> int:
    out = _outdir(args)
    cfg = _scheme(args, args.lam if args.mode != "uncontrolled" else 0.0)
    t0, t1 = _fit_window(args, cfg.T)
    K = None
    if cfg.mode != "uncontrolled":
        K = build_kernel(cfg.lam, cfg.L, tol=args.tol, n_max=args.n_max)
    u0 = initial_condition(args.u0, args.amplitude, cfg.L)
    tr = simulate(cfg, u0, K)
    meta = _meta(args)
    tr.to_csv(out / "trace.csv", meta)
    if tr.snapshots:
        times = sorted(tr.snapshots)
        data = np.column_stack([tr.snapshots[times[0]].x] + [tr.snapshots[t].values for t in times])
        with open(out / "snapshots.csv", "w", encoding="utf-8") as fh:
            fh.write(f"# {meta}\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.12g", comments="",
                       header=",".join(["x"] + [f"t={t:g}" for t in times]))
    rate = fit_decay_rate(tr, t0, t1) if tr.energy[-1] > 0 else float("inf")
    drift = (tr.energy[-1] - tr.energy[0]) / tr.energy[0] if tr.energy[0] > 0 else 0.0
    print(f"mode={cfg.mode} T={cfg.T:g} energy0={tr.energy[0]:.6g} energyT={tr.energy[-1]:.6g} "
          f"drift={drift:.4g} fitted_rate={rate:.6g}")
    return EXIT_OK


def cmd_spectral(args) -> int:
    out = _outdir(args)
    recs = find_eigenvalues(args.length, args.k_min, args.k_max, args.tol)
    if not recs:
        raise NoConvergence("no eigenvalue converged")
    write_eigen_csv(recs, out / "eigenvalues.csv", header=_meta(args))
    missing = sorted(set(range(args.k_min, args.k_max + 1)) - {r.k for r in recs})
    print(f"found={len(recs)} abscissa={spectral_abscissa(recs):.9g}"
          + (f" missing_k={missing}" if missing else ""))
    return EXIT_OK


def _sweep_job(job):
    lam, length, tol, n_max, invnorm_grid, scheme_kw, u0name, amp, window = job
    K = build_kernel(lam, length, tol=tol, n_max=n_max)
    invnorm = invnorm_estimate(discretize_K(K, invnorm_grid))
    rep = decay_report(K, invnorm)
    cfg = SchemeConfig(L=length, lam=lam, **scheme_kw)
    tr = simulate(cfg, initial_condition(u0name, amp, length), K)
    t0 = cfg.T / 6 if window[0] is None else window[0]
    t1 = cfg.T if window[1] is None else window[1]
    return [lam, rep.alpha, rep.beta, invnorm, fit_decay_rate(tr, t0, t1)]


def sweep_workers(n_jobs: int) -> int:
    env = os.environ.get("KDVBS_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise UsageError(f"KDVBS_THREADS must be an integer, got {env!r}")
        if cap < 1:
            raise UsageError("KDVBS_THREADS must be >= 1")
    return max(1, min(cap, n_jobs))


def cmd_sweep(args) -> int:
    out = _outdir(args)
    cfg = _scheme(args, max(args.lambdas))
    if cfg.mode == "uncontrolled":
        raise UsageError("sweep needs a controlled mode")
    window = (args.fit_start, args.fit_end)
    _fit_window(args, cfg.T)
    scheme_kw = dict(J=cfg.J, dt=cfg.dt, N_steps=cfg.N_steps, mode=cfg.mode,
                     m_succession=cfg.m_succession)
    jobs = [(lam, args.length, args.tol, args.n_max, args.invnorm_grid, scheme_kw,
             args.u0, args.amplitude, window) for lam in args.lambdas]
    workers = sweep_workers(len(jobs))
    if workers == 1:
        rows = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_job, jobs))  # map keeps input order
    _write_rows(out / "sweep.csv", _meta(args),
                ["lambda", "alpha", "beta", "invnorm", "fitted_rate"], rows)
    for r in rows:
        print(f"lambda={r[0]:g} alpha={r[1]:.6g} beta={r[2]:.6g} fitted_rate={r[4]:.6g}")
    return EXIT_OK


def _test_functions(L: float):
    yield "sin1", lambda x: np.sin(np.pi * x / L)
    yield "sin5", lambda x: np.sin(5 * np.pi * x / L)
    yield "one_minus_cos", lambda x: 1 - np.cos(2 * np.pi * x / L)
    yield "gaussian", initial_condition("gaussian", 1.0, L)
    yield "poly", lambda x: x * (L - x) ** 2 / L**3


def cmd_transform_check(args) -> int:
    out = _outdir(args)
    K = build_kernel(args.lam, args.length, tol=args.tol, n_max=args.n_max)
    Kd = discretize_K(K, args.grid)
    rows = []
    for name, f in _test_functions(args.length):
        u = GridFunction.from_callable(f, args.length, args.grid)
        w = forward(Kd, u)
        res = inverse_succession(Kd, w, m=args.m_succession)
        direct = inverse_direct(Kd, w)
        rt = (res.u - u).norm() / u.norm()
        vs = (res.u - direct).norm() / direct.norm()
        rows.append([name, rt, vs, res.iterations])
        print(f"{name}: roundtrip={rt:.3e} vs_direct={vs:.3e} iterations={res.iterations}")
    _write_rows(out / "transform_check.csv", _meta(args),
                ["function", "roundtrip_rel_error", "succession_vs_direct", "iterations"], rows)
    (out / "invnorm.json").write_text(
        json.dumps({"J": args.grid, "invnorm": invnorm_estimate(Kd)}, indent=2) + "\n",
        encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "kernel": cmd_kernel,
    "table1": cmd_table1,
    "simulate": cmd_simulate,
    "spectral": cmd_spectral,
    "sweep": cmd_sweep,
    "transform-check": cmd_transform_check,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except UsageError as exc:
        print(f"kdvbs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"kdvbs: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kdvbs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Blowup as exc:
        print(f"kdvbs: blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except KdvbsError as exc:
        print(f"kdvbs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_MATH
    except OSError as exc:
        print(f"kdvbs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

"""Command-line front end.

    macrostab SUBCOMMAND --config model.toml [--seed S] [--out DIR] [...]

The config file holds the model (see macrostab.model) plus optional per-subcommand
sections, e.g. ``[stability]`` or ``[hydro]``, whose keys become experiment options.
Exit codes: 0 success, 1 invalid model or configuration, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from macrostab import experiments as ex
from macrostab.conslaw import CFLViolation, DensityInfeasible, Profile, build_flux_table, evolve_pde, exclusion_flux
from macrostab.experiments.common import EXPERIMENT_KEYS, ConfigError, atomic_write, rows_to_csv
from macrostab.model import (
    Model, ModelError, derive_constants, lipschitz_bound, load_model, validate_kernel, validate_rates,
)
from macrostab.rng import seed_sequence

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXPERIMENTS = {
    "stability": ex.run_stability,
    "hydro": ex.run_hydro,
    "propagation": ex.run_propagation,
    "density": ex.run_density,
    "coalescence": ex.run_coalescence,
    "audit": ex.run_label_audit,
    "compare": ex.run_comparison,
}
SUBCOMMANDS = ("validate", "flux", "pde") + tuple(EXPERIMENTS)

ASSUMPTION_TEXT = {
    "A1": "kernel support must have gcd 1 (irreducibility)",
    "A2": "kernel needs a finite first moment and positive mean",
    "A3": "rates need b(0,.) = 0, b(.,K) = 0 and b(1,K-1) > 0",
    "A4": "rates must be nondecreasing in the first and nonincreasing in the second argument",
}


class ValidationFailed(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macrostab", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model TOML file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--replicas", type=int, default=None)
    common.add_argument("--n-values", default=None, help="comma separated scales, e.g. 50,100,200")
    common.add_argument("--eps", type=float, default=None)
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: available CPUs)")
    common.add_argument("--audit", action="store_true", help="continuous consistency checking")
    common.add_argument("--event-log", default=None, help="CSV event log of the first replica")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    helps = {
        "validate": "check the model assumptions and print derived constants",
        "flux": "estimate the macroscopic flux on a density grid",
        "pde": "solve the conservation law from an initial profile",
        "stability": "growth of sup Phi between coupled copies",
        "hydro": "empirical density against the entropy solution",
        "propagation": "finite propagation and boundary walks",
        "density": "block averages of an equilibrium ring",
        "coalescence": "coalescence chance on a closed interval",
        "audit": "per-label discrepancy counters",
        "compare": "finite against wide-box configurations",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def _parse_n(text: str | None):
    if text is None:
        return None
    try:
        return tuple(int(s) for s in text.replace(" ", "").split(",") if s)
    except ValueError:
        raise ConfigError(f"--n-values must be comma separated integers, got {text!r}") from None


def _sections(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _validate(model: Model, eps: float, out=print) -> dict:
    rk = validate_kernel(model.kernel)
    rr = validate_rates(model.rates)
    for line in rk.lines() + rr.lines():
        out(line)
    failed = rk.failed() + rr.failed()
    if failed:
        raise ValidationFailed("; ".join(f"assumption ({a}) failed: {ASSUMPTION_TEXT[a]}"
                                         f" [{(rk.details | rr.details)[a]}]" for a in failed))
    V = lipschitz_bound(model.rates, model.kernel)
    dc = derive_constants(model.kernel, model.rates, eps, L=model.run.get("L"))
    out(f"V = {V:.12g}")
    out(f"L = {dc.L:g}, n = {dc.n}, M0 = {dc.M0}, m_eps = {dc.m_eps}, v_L = {dc.v_L:.12g} (eps = {eps:g})")
    return {"checks": rk.checks | rr.checks, "values": rk.values | rr.values,
            "V": V, "L": dc.L, "n": dc.n, "M0": dc.M0, "m_eps": dc.m_eps, "v_L": dc.v_L, "eps": eps}


def _cmd_flux(model: Model, opts: dict, args, out_dir: Path):
    seed = args.seed if args.seed is not None else int(model.run.get("seed", 1))
    G = build_flux_table(model.kernel, model.rates, int(opts.get("points", 33)), int(opts.get("ring_size", 400)),
                         opts.get("t_burn"), opts.get("t_avg"), seed=seed_sequence(seed, EXPERIMENT_KEYS["flux"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [{"rho": float(g), "G": float(v), "stderr": float(s), "provenance": p}
            for g, v, s, p in zip(G.grid, G.values, G.stderr, G.provenance)]
    atomic_write(out_dir / "flux.csv", rows_to_csv(rows))
    exact = exclusion_flux(model.kernel, model.rates)
    summary = {"V": G.V, "empirical_lipschitz": G.empirical_lipschitz(), "seed": seed,
               "max_abs_error_vs_closed_form": (float(np.abs(exact(G.grid) - G.values).max())
                                                if exact is not None else None)}
    atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return f"flux: {len(rows)} densities, max G = {max(G.values):.6g}"


def _cmd_pde(model: Model, opts: dict, args, out_dir: Path):
    G = exclusion_flux(model.kernel, model.rates)
    if G is None or opts.get("flux_csv"):
        if not opts.get("flux_csv"):
            raise ConfigError("pde.flux_csv is required when K > 1 (run the flux subcommand first)")
        from macrostab.conslaw import FluxTable
        G = FluxTable.read_csv(opts["flux_csv"], V=lipschitz_bound(model.rates, model.kernel))
    if "u0_csv" in opts:
        u0 = Profile.read_csv(opts["u0_csv"])
    else:
        u0 = Profile.riemann_data(float(opts.get("ul", 1.0)), float(opts.get("ur", 0.0)), 0.0,
                                  float(opts.get("width", 2.0)))
    t = float(opts.get("t", 1.0))
    dx = float(opts.get("dx", 1.0 / 400))
    u = evolve_pde(u0, G, t, dx)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = []
    for a, b, v in zip(u.breakpoints[:-1], u.breakpoints[1:], u.values):
        buf.append({"left": float(a), "right": float(b), "value": float(v)})
    atomic_write(out_dir / "profile.csv", rows_to_csv(buf))
    mass = float(np.sum(u.values * np.diff(u.breakpoints)))
    atomic_write(out_dir / "summary.json",
                 json.dumps({"t": t, "dx": dx, "cells": int(u.values.size), "mass": mass}, indent=2,
                            sort_keys=True) + "\n")
    return f"pde: {u.values.size} cells at t = {t:g}"


def _headline(res) -> str:
    parts = []
    for a in res.aggregates[:6]:
        keys = [k for k in ("N", "m", "l", "t", "statistic") if k in a]
        label = ",".join(f"{k}={a[k]}" for k in keys)
        if "freq" in a:
            parts.append(f"{label} freq={a['freq']:.3f} [{a['ci_lo']:.3f},{a['ci_hi']:.3f}]")
        elif "l1_avg_profile" in a:
            parts.append(f"{label} L1={a['l1_avg_profile']:.4f}")
        elif "mean" in a:
            parts.append(f"{label} mean={a['mean']:.4f}")
        elif "min_freq" in a:
            parts.append(f"{label} min_freq={a['min_freq']:.3f}")
    return "; ".join(parts)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    say = print
    try:
        model = load_model(args.config)
        doc = _sections(args.config)
        eps = args.eps if args.eps is not None else float(model.run.get("eps", 0.1))
        info = _validate(model, eps, out=say if (args.command == "validate" or args.verbose) else (lambda s: None))
        out_dir = Path(args.out or os.path.join("results", args.command))
        opts = dict(doc.get(args.command, {}))
        t0 = time.perf_counter()
        if args.command == "validate":
            if args.out:
                out_dir.mkdir(parents=True, exist_ok=True)
                atomic_write(out_dir / "validate.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
            say("validate: model satisfies A1-A4")
            return 0
        if args.command == "flux":
            line = _cmd_flux(model, opts, args, out_dir)
        elif args.command == "pde":
            line = _cmd_pde(model, opts, args, out_dir)
        else:
            threads = args.threads
            if threads is None:
                threads = int(model.run.get("threads", os.cpu_count() or 1))
            cfg = ex.make_config(model, eps=eps, seed=args.seed, replicas=args.replicas,
                                 n_values=_parse_n(args.n_values), threads=threads, out=str(out_dir),
                                 audit=args.audit, event_log=args.event_log, options=opts)
            res = EXPERIMENTS[args.command](cfg)
            res.write(out_dir)
            line = f"{args.command}: {_headline(res)}"
        say(f"{line} -> {out_dir} ({time.perf_counter() - t0:.1f}s)")
        return 0
    except (ValidationFailed, ModelError, ConfigError, DensityInfeasible, CFLViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"error: missing config key {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        if args.verbose:
            traceback.print_exc()
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())

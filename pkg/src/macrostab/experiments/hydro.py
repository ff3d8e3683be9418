"""Empirical density of one copy on scale N against the entropy solution."""
from __future__ import annotations

import math
import time

import numpy as np

from macrostab.conslaw import (
    FluxTable, Profile, build_flux_table, cell_averages, evolve_pde, exclusion_flux, riemann,
)
from macrostab.experiments.common import (
    ConfigError, ExperimentConfig, ExperimentResult, meta, replica_seed, run_tasks,
)
from macrostab.experiments.initial import sample_profile
from macrostab.harris import CoupledSystem
from macrostab.model import Configuration
from macrostab.rng import INIT, substream

TIMES = (0.5, 1.0)


def initial_profile(opts: dict, half: float) -> Profile:
    kind = opts.get("u0", "riemann")
    if kind == "riemann":
        return Profile.riemann_data(float(opts.get("ul", 1.0)), float(opts.get("ur", 0.0)), 0.0, half)
    if kind == "constant":
        rho = float(opts.get("rho", 0.5))
        return Profile(np.array([-half, half]), np.array([rho]))
    if kind == "csv":
        return Profile.read_csv(opts["u0_path"])
    raise ConfigError(f"unknown initial profile {kind!r} (options.u0)")


def flux_for(cfg: ExperimentConfig) -> FluxTable:
    G = exclusion_flux(cfg.kernel, cfg.rates)
    if G is None or cfg.opt("flux") == "estimate":
        G = build_flux_table(cfg.kernel, cfg.rates, int(cfg.opt("flux_points", 33)),
                             int(cfg.opt("flux_ring", 400)), seed=replica_seed(cfg, "hydro", 0))
    return G


def solution(u0: Profile, G: FluxTable, t: float, opts: dict, window) -> Profile:
    """u(., t): closed-form fan for Riemann data, Godunov otherwise."""
    a, b = window
    if opts.get("u0", "riemann") == "riemann":
        ul, ur = u0.values
        n = int(opts.get("fine_cells", 8000))
        return Profile.from_function(lambda x: riemann(G, ul, ur, x / t), a, b, n)
    if opts.get("u0") == "constant":
        return u0
    return evolve_pde(u0, G, t, float(opts.get("dx", 1.0 / 400)))


def empirical_delta(sites: np.ndarray, counts: np.ndarray, N: int, u: Profile, window) -> float:
    """sup over x in the window of |alpha^N((a, x]) - int_a^x u|, both restricted to the window."""
    a, b = window
    x = sites / N
    keep = (x > a) & (x <= b)
    x, m = x[keep], counts[keep] / N
    F = lambda s: u.cumulative(s) - u.cumulative(a)
    if x.size == 0:
        return float(abs(F(b)))
    A = np.cumsum(m)
    Fx = F(x)
    before = np.concatenate([[0.0], A[:-1]])
    cand = np.concatenate([np.abs(A - Fx), np.abs(before - Fx), [abs(A[-1] - F(b))]])
    return float(cand.max())


def block_edges(N: int, window) -> np.ndarray:
    """Site edges of blocks of floor(sqrt N) sites over the window; last block may be shorter."""
    lo, hi = int(math.floor(window[0] * N)), int(math.floor(window[1] * N))
    b = max(1, int(math.isqrt(N)))
    e = np.arange(lo, hi, b)
    return np.append(e, hi)


def _hydro_task(args):
    cfg, N, r, u0, sols = args
    ss = replica_seed(cfg, "hydro", N, r)
    rng = np.random.default_rng(substream(ss, INIT))
    half = float(cfg.opt("box", 3.0))
    lo, hi = -int(half * N), int(half * N) - 1
    occ = sample_profile(rng, lo, hi, lambda xs: u0(xs / N), cfg.rates.K)
    eta = Configuration.from_array(occ, lo, K=cfg.rates.K)
    window = tuple(cfg.opt("window", (-2.0, 2.0)))
    edges = block_edges(N, window)
    row = {"N": N, "replica": r}
    blocks = {}
    if eta.total == 0:
        for t in cfg.opt("times", TIMES):
            blocks[t] = np.zeros(edges.size - 1)
            row[f"delta_t{t:g}"] = empirical_delta(np.zeros(0), np.zeros(0), N, sols[t], window)
            u_blocks = cell_averages(sols[t], edges / N)
            row[f"l1_t{t:g}"] = float(np.sum(np.abs(u_blocks) * np.diff(edges)) / N)
        return row, blocks
    sys = CoupledSystem([eta], cfg.kernel, cfg.rates, seed=ss)
    for t in cfg.opt("times", TIMES):
        sys.evolve(N * t)
        arr, alo = sys.arrays()
        a = arr[0]
        sites = np.nonzero(a)[0]
        row[f"delta_t{t:g}"] = empirical_delta(sites + alo, a[sites], N, sols[t], window)
        cum = np.concatenate([[0], np.cumsum(a)])
        idx = np.clip(edges - alo, 0, a.size)
        blocks[t] = np.diff(cum[idx]) / np.diff(edges)
        u_blocks = cell_averages(sols[t], edges / N)
        row[f"l1_t{t:g}"] = float(np.sum(np.abs(blocks[t] - u_blocks) * np.diff(edges)) / N)
    row["events"] = sys.n_events
    return row, blocks


def run_hydro(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    if not math.isfinite(cfg.kernel.mu3):
        raise ConfigError("hydrodynamics needs a kernel with finite third moment")
    half = float(cfg.opt("box", 3.0))
    u0 = initial_profile(cfg.options, half)
    G = flux_for(cfg)
    window = tuple(cfg.opt("window", (-2.0, 2.0)))
    times = tuple(cfg.opt("times", TIMES))
    sols = {t: solution(u0, G, t, cfg.options, window) for t in times}
    tasks = [(cfg, N, r, u0, sols) for N in cfg.n_values for r in range(cfg.replicas)]
    out = run_tasks(_hydro_task, tasks, cfg.threads)
    rows = [o[0] for o in out]
    aggs = []
    for N in cfg.n_values:
        sub = [o for o in out if o[0]["N"] == N]
        edges = block_edges(N, window)
        for t in times:
            mean_blocks = np.mean([o[1][t] for o in sub], axis=0)
            u_blocks = cell_averages(sols[t], edges / N)
            l1 = float(np.sum(np.abs(mean_blocks - u_blocks) * np.diff(edges)) / N)
            aggs.append({
                "N": N, "t": t, "l1_avg_profile": l1,
                "mean_l1": float(np.mean([o[0].get(f"l1_t{t:g}", 0.0) for o in sub])),
                "mean_delta": float(np.mean([o[0][f"delta_t{t:g}"] for o in sub])),
                "replicas": len(sub),
            })
    res = ExperimentResult("hydro", cfg.echo(), rows, aggs, aggs, meta(cfg))
    res.wall_time = time.perf_counter() - t0
    return res

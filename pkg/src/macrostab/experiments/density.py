"""Block averages of a ring in equilibrium at fixed particle number."""
from __future__ import annotations

import math
import time

import numpy as np

from macrostab.experiments.common import (
    ConfigError, ExperimentConfig, ExperimentResult, frequency, meta, replica_seed, run_tasks,
)
from macrostab.harris import CoupledSystem
from macrostab.model import Configuration
from macrostab.rng import INIT, substream


def block_average(occ: np.ndarray, l: int) -> float:
    """(2l+1)^-1 sum over |x| <= l of eta(x), sites taken modulo the ring size."""
    S = occ.size
    idx = np.arange(-l, l + 1) % S
    return float(occ[idx].sum()) / (2 * l + 1)


def _density_task(args):
    cfg, r = args
    ss = replica_seed(cfg, "density", r)
    rng = np.random.default_rng(substream(ss, INIT))
    S = int(cfg.opt("ring_size", 2000))
    rho = float(cfg.opt("rho", 0.5))
    K = cfg.rates.K
    n = int(math.floor(rho * S + 1e-9))
    if n > K * S:
        raise ConfigError(f"density {rho} does not fit on a ring of {S} sites with K={K}")
    slots = rng.permutation(K * S)[:n]
    eta = np.bincount(slots // K, minlength=S).astype(np.int64)
    ls = [int(l) for l in cfg.opt("blocks", (10, 50, 100, 250, 500))]
    if 2 * max(ls) + 1 > S:
        raise ConfigError(f"block half-width {max(ls)} does not fit on a ring of {S} sites")
    samples = int(cfg.opt("samples", 100))
    spacing = float(cfg.opt("spacing", float(S)))
    burn = float(cfg.opt("burn", 10.0 * S))
    tol = float(cfg.opt("tol", 0.02))
    sys = CoupledSystem([Configuration.ring(eta, K=K)], cfg.kernel, cfg.rates, seed=ss)
    devs = {l: [] for l in ls}
    t = burn
    for k in range(samples):
        if n and n < K * S:
            sys.evolve(t)
        occ = sys.arrays()[0][0]
        for l in ls:
            devs[l].append(block_average(occ, l) - rho)
        t += spacing
    row = {"replica": r, "particles": n, "events": sys.n_events}
    for l in ls:
        d = np.abs(np.array(devs[l]))
        row[f"max_dev_l{l}"] = float(d.max())
        row[f"rms_dev_l{l}"] = float(np.sqrt(np.mean(d ** 2)))
        row[f"within_l{l}"] = int((d < tol).sum())
    row["samples"] = samples
    return row


def run_density(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    rows = run_tasks(_density_task, [(cfg, r) for r in range(cfg.replicas)], cfg.threads)
    ls = [int(l) for l in cfg.opt("blocks", (10, 50, 100, 250, 500))]
    aggs = []
    for l in ls:
        k = sum(r[f"within_l{l}"] for r in rows)
        n = sum(r["samples"] for r in rows)
        agg = frequency(k, n, l=l, statistic="within_tol")
        agg["rms_dev"] = float(np.sqrt(np.mean([r[f"rms_dev_l{l}"] ** 2 for r in rows])))
        agg["max_dev"] = max(r[f"max_dev_l{l}"] for r in rows)
        aggs.append(agg)
    res = ExperimentResult("density", cfg.echo(), rows, aggs, aggs, meta(cfg))
    res.wall_time = time.perf_counter() - t0
    return res

"""Chance that a 1/2 at 0 and a 2/1 at m coalesce within unit time on a closed interval."""
from __future__ import annotations

import math
import time

import numpy as np

from macrostab.experiments.common import (
    ExperimentConfig, ExperimentResult, frequency, meta, replica_seed, run_tasks,
)
from macrostab.harris import evolve_restricted
from macrostab.model import Configuration
from macrostab.rng import INIT, substream


def interval_pair(rng, m: int, K: int, rho: float, background: str):
    """eta1(0) > eta2(0), eta2(m) > eta1(m); interior sites drawn at density rho."""
    a = rng.binomial(K, rho / K, size=m + 1).astype(np.int64)
    b = a.copy() if background == "equal" else rng.binomial(K, rho / K, size=m + 1).astype(np.int64)
    a[0], b[0] = 1, 0
    a[m], b[m] = 0, 1
    return Configuration.from_array(a, 0, K=K), Configuration.from_array(b, 0, K=K)


def total_discrepancy(e1: Configuration, e2: Configuration) -> int:
    sites = set(e1.sites()) | set(e2.sites())
    return sum(abs(e1[x] - e2[x]) for x in sites)


def no_crossing_probability(cfg: ExperimentConfig, M: int, t: float = 1.0) -> float:
    """P(no Harris event joins [0, M] to its complement during time t)."""
    rate = 2.0 * cfg.rates.b_max * cfg.kernel.expected_min_abs(M + 1)
    return math.exp(-rate * t)


def _coal_task(args):
    cfg, m, j, pair, cutoff, reps = args
    e1, e2 = pair
    t = float(cfg.opt("t", 1.0))
    d0 = total_discrepancy(e1, e2)
    hits = 0
    for r in range(reps):
        ss = replica_seed(cfg, "coalescence", m, j, r, 0 if cutoff is not None else 1)
        n = cutoff if cutoff is not None else (1 << 62)
        f1, f2 = evolve_restricted([e1, e2], (0, m), n, t, cfg.kernel, cfg.rates, seed=ss)
        hits += total_discrepancy(f1, f2) < d0
    return {"m": m, "pair": j, "cutoff": "full" if cutoff is None else cutoff,
            "hits": hits, "trials": reps, "d0": d0}


def run_coalescence(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    c = cfg.constants
    ms = [int(m) for m in cfg.opt("m_values", (c.M0,))]
    n_pairs = int(cfg.opt("pairs", 5))
    cutoff = int(cfg.opt("cutoff", c.n))
    rho = float(cfg.opt("rho", 0.5))
    background = cfg.opt("background", "independent")
    corollary = bool(cfg.opt("corollary", True))
    K = cfg.rates.K
    tasks = []
    for m in ms:
        for j in range(n_pairs):
            rng = np.random.default_rng(substream(replica_seed(cfg, "coalescence", m, j), INIT))
            pair = interval_pair(rng, m, K, rho, background)
            tasks.append((cfg, m, j, pair, cutoff, cfg.replicas))
            if corollary:
                tasks.append((cfg, m, j, pair, None, cfg.replicas))
    rows = run_tasks(_coal_task, tasks, cfg.threads)
    for row in rows:
        row.update(frequency(row["hits"], row["trials"]))
    aggs = []
    for m in ms:
        sub = [r for r in rows if r["m"] == m and r["cutoff"] != "full"]
        worst = min(sub, key=lambda r: (r["freq"], r["pair"]))
        agg = {"m": m, "cutoff": cutoff, "below_cutoff": m < cutoff, "min_freq": worst["freq"],
               "min_pair": worst["pair"], "min_ci_lo": worst["ci_lo"], "min_ci_hi": worst["ci_hi"],
               "positive": worst["ci_lo"] > 0}
        if corollary:
            full = [r for r in rows if r["m"] == m and r["cutoff"] == "full"]
            pnc = no_crossing_probability(cfg, m, float(cfg.opt("t", 1.0)))
            fmin = min(r["freq"] for r in full)
            agg.update({"p_no_crossing": pnc, "min_freq_full_kernel": fmin, "joint_min": pnc * fmin})
        aggs.append(agg)
    res = ExperimentResult("coalescence", cfg.echo(), rows, aggs, aggs, meta(cfg))
    res.wall_time = time.perf_counter() - t0
    return res

"""A finite configuration against a wide-box one that agrees with it in Phi-sense.

Particles of eta2 are split by their starting region: class 2.1 starts inside
(-LN, LN), class 2.2 outside.  Running eta^{2.1} as its own copy makes class 2.2
the (nonnegative, by attractiveness) difference eta2 - eta^{2.1}.
"""
from __future__ import annotations

import math
import time

import numpy as np

from macrostab.experiments.common import (
    ConfigError, ExperimentConfig, ExperimentResult, frequency, meta, replica_seed, run_tasks,
)
from macrostab.experiments.initial import sample_profile, support_range
from macrostab.functionals import max_interval_sum
from macrostab.harris import CoupledSystem
from macrostab.model import Configuration
from macrostab.rng import INIT, substream

CHECKPOINTS = (0.25, 0.5, 1.0)


def swap_neighbours(rng, a: np.ndarray, prob: float) -> np.ndarray:
    """Exchange the occupancies of disjoint neighbour pairs (2k, 2k+1) with probability prob."""
    b = a.copy()
    m = b.size // 2
    sel = np.nonzero(rng.random(m) < prob)[0]
    i, j = 2 * sel, 2 * sel + 1
    b[i], b[j] = a[j], a[i]
    return b


def _compare_task(args):
    cfg, N, r = args
    ss = replica_seed(cfg, "compare", N, r)
    rng = np.random.default_rng(substream(ss, INIT))
    L = cfg.constants.L
    K = cfg.rates.K
    rho = float(cfg.opt("rho", 0.5))
    lo, hi = support_range(N, L)
    wide = int(math.ceil((L + float(cfg.opt("buffer_factor", 5.0))) * N))
    a = sample_profile(rng, lo, hi, rho, K)
    inner = a.copy() if cfg.opt("identical", False) else swap_neighbours(rng, a, float(cfg.opt("swap", 0.1)))
    left = sample_profile(rng, -wide, lo - 1, rho, K)
    right = sample_profile(rng, hi + 1, wide, rho, K)
    if cfg.opt("identical", False):
        left[:] = 0
        right[:] = 0
    full = np.concatenate([left, inner, right])
    # hypothesis: |sum_{y=x}^{LN} (eta1 - eta2)(y)| <= eps N / 4 for every x
    d_in = a - inner
    one_sided = int(np.abs(np.cumsum(d_in[::-1])).max()) if d_in.size else 0
    if one_sided > cfg.eps * N / 4:
        raise ConfigError(f"closeness hypothesis fails: max one-sided sum {one_sided} > eps N/4 = "
                          f"{cfg.eps * N / 4:g} (options.swap too large for N={N})")
    d_all = np.concatenate([-left, d_in, -right])
    tail_all = np.cumsum(d_all[::-1])[::-1]
    in_range = slice(left.size, left.size + d_in.size)
    tail_form = int(np.abs(tail_all[in_range]).max()) if d_in.size else 0
    e1 = Configuration.from_array(a, lo, K=K)
    e21 = Configuration.from_array(inner, lo, K=K)
    e2 = Configuration.from_array(full, -wide, K=K)
    sys = CoupledSystem([e1, e21, e2], cfg.kernel, cfg.rates, seed=ss, check_order=cfg.audit, order_from=1)
    row = {"N": N, "replica": r, "closeness_one_sided": one_sided, "closeness_tail_form": tail_form}
    worst = 0
    for frac in cfg.opt("checkpoints", CHECKPOINTS):
        sys.evolve(frac * N)
        occ, olo = sys.arrays()
        i0, i1 = -N - olo, N - olo
        diff = occ[0, i0:i1 + 1] - occ[2, i0:i1 + 1]
        m = max_interval_sum(diff)
        row[f"max_interval_t{frac:g}"] = m
        row[f"class22_t{frac:g}"] = int((occ[2, i0:i1 + 1] - occ[1, i0:i1 + 1]).sum())
        worst = max(worst, m)
    row["max_interval"] = worst
    row["violation"] = worst > 3 * cfg.eps * N
    row["order_violations"] = sys.order_violations
    row["events"] = sys.n_events
    return row


def run_comparison(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    tasks = [(cfg, N, r) for N in cfg.n_values for r in range(cfg.replicas)]
    rows = run_tasks(_compare_task, tasks, cfg.threads)
    last = f"class22_t{cfg.opt('checkpoints', CHECKPOINTS)[-1]:g}"
    aggs = []
    for N in cfg.n_values:
        sub = [r for r in rows if r["N"] == N]
        agg = frequency(sum(r["violation"] for r in sub), len(sub), N=N, statistic="interval_gt_3epsN")
        agg["mean_max_interval"] = float(np.mean([r["max_interval"] for r in sub]))
        agg["mean_class22"] = float(np.mean([r[last] for r in sub]))
        agg["freq_class22_present"] = sum(r[last] > 0 for r in sub) / len(sub)
        agg["max_closeness_one_sided"] = max(r["closeness_one_sided"] for r in sub)
        agg["max_closeness_tail_form"] = max(r["closeness_tail_form"] for r in sub)
        aggs.append(agg)
    res = ExperimentResult("compare", cfg.echo(), rows, aggs, aggs, meta(cfg))
    res.wall_time = time.perf_counter() - t0
    return res

"""Growth of sup Phi between coupled copies, and per-label counter statistics."""
from __future__ import annotations

import time

import numpy as np

from macrostab.discrepancy import DiscrepancyTracker
from macrostab.experiments.common import (
    ExperimentConfig, ExperimentResult, frequency, meta, replica_seed, run_tasks,
)
from macrostab.experiments.initial import check_vacant, make_pair
from macrostab.functionals import delta_distance, measure_from_arrays, sup_phi_arrays
from macrostab.harris import CoupledSystem
from macrostab.rng import INIT, substream

CHECKPOINTS = (0.25, 0.5, 1.0)


class SupPhiMonitor:
    """Running max of sup Phi, refreshed whenever exactly one copy moves."""

    def __init__(self, sys, c1=0, c2=1):
        self.c1, self.c2 = c1, c2
        occ, lo = sys.arrays()
        self.value = sup_phi_arrays(occ[c1] - occ[c2], lo)[0]
        self.max = self.value

    def __call__(self, pre, e, moved, sys):
        if moved[self.c1] != moved[self.c2]:
            occ, lo = sys.arrays()
            self.value = sup_phi_arrays(occ[self.c1] - occ[self.c2], lo)[0]
            self.max = max(self.max, self.value)


def _sup_phi(sys) -> int:
    occ, lo = sys.arrays()
    return sup_phi_arrays(occ[0] - occ[1], lo)[0]


def _delta(sys, N: int) -> float:
    occ, lo = sys.arrays()
    return delta_distance(measure_from_arrays(occ[0], lo, N), measure_from_arrays(occ[1], lo, N))


def _stability_task(args):
    cfg, N, r = args
    ss = replica_seed(cfg, "stability", N, r)
    rng = np.random.default_rng(substream(ss, INIT))
    L = cfg.constants.L
    e1, e2 = make_pair(rng, N, L, cfg.options, cfg.rates.K)
    check_vacant((e1, e2), N, L)
    log = cfg.event_log if (cfg.event_log and r == 0 and N == cfg.n_values[0]) else None
    sys = CoupledSystem([e1, e2], cfg.kernel, cfg.rates, seed=ss, check_order=cfg.audit, event_log=log)
    sp0 = _sup_phi(sys)
    d0 = _delta(sys, N)
    row = {"N": N, "replica": r, "sup_phi_0": sp0, "delta_0": d0,
           "equal_mass": e1.total == e2.total}
    mon = SupPhiMonitor(sys) if cfg.audit else None
    for frac in cfg.opt("checkpoints", CHECKPOINTS):
        sys.evolve(frac * N, [mon] if mon else [])
        row[f"dphi_t{frac:g}"] = _sup_phi(sys) - sp0
        row[f"ddelta_t{frac:g}"] = _delta(sys, N) - d0
    if mon is not None:
        row["dphi_running_max"] = mon.max - sp0
    sys.close_log()
    row["events"] = sys.n_events
    row["order_violations"] = sys.order_violations
    return row


def run_stability(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    tasks = [(cfg, N, r) for N in cfg.n_values for r in range(cfg.replicas)]
    rows = run_tasks(_stability_task, tasks, cfg.threads)
    eps = cfg.eps
    aggs = []
    last = f"dphi_t{cfg.opt('checkpoints', CHECKPOINTS)[-1]:g}"
    for N in cfg.n_values:
        sub = [r for r in rows if r["N"] == N]
        k = sum(r[last] > eps * N for r in sub)
        kd = sum(r[last.replace("dphi", "ddelta")] * N > eps * N for r in sub)
        kany = sum(any(r[c] > eps * N for c in r if c.startswith("dphi_t")) for r in sub)
        agg = frequency(k, len(sub), N=N, statistic="sup_phi_growth_gt_epsN")
        agg["freq_delta_form"] = kd / len(sub)
        agg["freq_any_checkpoint"] = kany / len(sub)
        agg["mean_growth"] = float(np.mean([r[last] for r in sub]))
        agg["order_violations"] = int(sum(r["order_violations"] for r in sub))
        if cfg.audit:
            agg["freq_running"] = sum(r["dphi_running_max"] > eps * N for r in sub) / len(sub)
        aggs.append(agg)
    plot = [{"N": a["N"], "freq": a["freq"], "ci_lo": a["ci_lo"], "ci_hi": a["ci_hi"],
             "mean_growth": a["mean_growth"]} for a in aggs]
    res = ExperimentResult("stability", cfg.echo(), rows, aggs, plot, meta(cfg))
    res.wall_time = time.perf_counter() - t0
    return res


# label audit ---------------------------------------------------------------

def _audit_task(args):
    cfg, N, r = args
    ss = replica_seed(cfg, "audit", N, r)
    rng = np.random.default_rng(substream(ss, INIT))
    half = float(cfg.opt("support_L", 1.0))
    e1, e2 = make_pair(rng, N, half, cfg.options, cfg.rates.K)
    sys = CoupledSystem([e1, e2], cfg.kernel, cfg.rates, seed=ss)
    tracked = None
    n_sample = cfg.opt("sample_labels")
    if n_sample is not None:
        npos = sum(max(e1[x] - e2[x], 0) for x in set(e1.sites()) | set(e2.sites()))
        if int(n_sample) < npos:
            tracked = sorted(rng.choice(npos, size=int(n_sample), replace=False).tolist())
    tr = DiscrepancyTracker(sys, cfg.constants, seed=ss, audit=cfg.audit, tracked=tracked,
                            phantoms=bool(cfg.opt("phantoms", True)))
    t = float(cfg.opt("t_factor", 1.0)) * N
    sys.evolve(t, [tr])
    crow = tr.counter_rows()
    eps = cfg.eps
    gamma = float(cfg.opt("gamma", eps / 10))
    alive = [c for c in crow if c["death_time"] == "inf"]
    n_a = sum(c["delta_a"] > eps * t / 5 for c in alive)
    n_b = sum(c["delta_b"] >= eps * N / 10 for c in crow)
    max_c = max((c["delta_c_ass"] for c in crow), default=0)
    n_big = sum(c["final_delta"] >= eps * N / 2 for c in alive)
    row = {
        "N": N, "replica": r, "labels": len(crow), "surviving": len(alive),
        "partial": tracked is not None,
        "n_a_exceed": n_a, "n_b_exceed": n_b, "max_c_ass": max_c,
        "max_c_non": max((c["delta_c_non"] for c in crow), default=0),
        "n_delta_big": n_big,
        "event_a": n_a > 0,
        "event_b": n_b >= eps * eps * N / 50,
        "event_c": max_c >= gamma * N,
        "event_thm": n_big >= eps * eps * N,
        "windows_closed": len(tr.state.closed),
        "audit_violations": len(tr.report.violations),
        "events": sys.n_events,
    }
    return row, (crow if r == 0 else None)


def run_label_audit(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    tasks = [(cfg, N, r) for N in cfg.n_values for r in range(cfg.replicas)]
    out = run_tasks(_audit_task, tasks, cfg.threads)
    rows = [o[0] for o in out]
    dumps = {rows[i]["N"]: o[1] for i, o in enumerate(out) if o[1] is not None}
    aggs = []
    for N in cfg.n_values:
        sub = [r for r in rows if r["N"] == N]
        n = len(sub)
        for ev in ("event_a", "event_b", "event_c", "event_thm"):
            agg = frequency(sum(r[ev] for r in sub), n, N=N, statistic=ev)
            agg["audit_violations"] = int(sum(r["audit_violations"] for r in sub))
            agg["partial"] = any(r["partial"] for r in sub)
            aggs.append(agg)
        surv = sum(r["surviving"] for r in sub)
        aggs.append(frequency(sum(r["n_a_exceed"] for r in sub), surv, N=N, statistic="label_frac_a"))
    plot = [{"N": a["N"], "statistic": a["statistic"], "freq": a["freq"],
             "ci_lo": a["ci_lo"], "ci_hi": a["ci_hi"]} for a in aggs]
    res = ExperimentResult("audit", cfg.echo(), rows, aggs, plot, meta(cfg))
    res.extra_files = {f"counters_N{N}.csv": d for N, d in dumps.items()}
    res.wall_time = time.perf_counter() - t0
    return res

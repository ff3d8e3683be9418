"""Finite propagation: two copies agreeing on [x, y], with the boundary walks L_t and R_t."""
from __future__ import annotations

import math
import time

import numpy as np

from macrostab import _engine as eng
from macrostab.experiments.common import (
    ExperimentConfig, ExperimentResult, frequency, meta, replica_seed, run_tasks,
)
from macrostab.experiments.initial import sample_profile
from macrostab.harris import CoupledSystem
from macrostab.model import Configuration, JumpKernel
from macrostab.rng import AUX, INIT, UniformStream, substream


def crossing_law(kernel: JumpKernel, bmax: float):
    """Jump sizes i with weights i(p(i)+p(-i)), the share of +i jumps, and the total crossing rate."""
    zs, ws = kernel.truncated()
    mass = {}
    for z, w in zip(zs.tolist(), ws.tolist()):
        pos, neg = mass.get(abs(z), (0.0, 0.0))
        mass[abs(z)] = (pos + w, neg) if z > 0 else (pos, neg + w)
    sizes = np.array(sorted(mass), dtype=np.int64)
    w = np.array([i * sum(mass[i]) for i in sizes.tolist()])
    pos_frac = np.array([mass[i][0] / sum(mass[i]) for i in sizes.tolist()])
    cdf = np.cumsum(w) / w.sum()
    return sizes, cdf, pos_frac, bmax * float(w.sum())


class WalkedPair:
    """A CoupledSystem plus the boundary walks, driven by the same Harris events."""

    def __init__(self, sys: CoupledSystem, L0: int, R0: int, aux_seed):
        self.sys = sys
        self.LR = np.array([L0, R0], dtype=np.int64)
        self.L0, self.R0 = L0, R0
        self.aux = UniformStream(aux_seed)
        self.sizes, self.size_cdf, self.pos_frac, self.rate = crossing_law(sys.kernel, sys.bmax)
        t = sys.clock
        self.st = np.array([t, 0.0, sys.st[2], 0.0, -t - 1.0, -t - 1.0])
        self.counts = np.zeros(3, dtype=np.int64)

    def evolve(self, t_end: float):
        s = self.sys
        while True:
            self.st[1] = s.stream.pos
            self.st[3] = self.aux.pos
            status = eng.run_propagation(
                s.occ, s.lo, s.window, s.wpos, self.st, s.b, s.bmax, s.K, s.zs, s.cdf, s.tp,
                s.stream.buf, self.aux.buf, self.sizes, self.size_cdf, self.pos_frac, self.rate,
                self.LR, float(t_end), self.counts)
            s.stream.pos = int(self.st[1])
            self.aux.pos = int(self.st[3])
            s.st[0] = self.st[0]
            s.st[2] = self.st[2]
            if status == eng.NEED_RNG:
                s.stream.refill()
            elif status == eng.NEED_AUX:
                self.aux.refill()
            elif status == eng.NEED_GROW:
                s._grow()
            else:
                break
        s.clock = float(t_end)
        s.counts[0] = self.counts[0]

    @property
    def L(self) -> int:
        return int(self.LR[0])

    @property
    def R(self) -> int:
        return int(self.LR[1])

    def disagree(self, a: float, b: float) -> bool:
        """Do the copies differ at some site of [a, b]?"""
        occ, lo = self.sys.arrays()
        i0 = max(math.ceil(a) - lo, 0)
        i1 = min(math.floor(b) - lo, occ.shape[1] - 1)
        if i1 < i0:
            return False
        return bool(np.any(occ[0, i0:i1 + 1] != occ[1, i0:i1 + 1]))


def _prop_task(args):
    cfg, r = args
    ss = replica_seed(cfg, "propagation", r)
    rng = np.random.default_rng(substream(ss, INIT))
    width = int(cfg.opt("width", 400))
    buf = int(cfg.opt("buffer", 200))
    rho = float(cfg.opt("rho", 0.5))
    x, y = -width // 2, width // 2
    K = cfg.rates.K
    a = sample_profile(rng, x - buf, y + buf, rho, K)
    b = a.copy()
    outside = np.r_[np.arange(0, buf), np.arange(buf + width + 1, a.size)]
    if not cfg.opt("identical", False):
        b[outside] = sample_profile(rng, 0, outside.size - 1, rho, K)
    e1 = Configuration.from_array(a, x - buf, K=K)
    e2 = Configuration.from_array(b, x - buf, K=K)
    sys = CoupledSystem([e1, e2], cfg.kernel, cfg.rates, seed=ss)
    walk = WalkedPair(sys, x, y, substream(ss, AUX))
    v = float(cfg.opt("v_factor", 2.0)) * cfg.constants.v_L
    t_core = float(cfg.opt("t_core", (y - x) / (4 * v)))
    T = float(cfg.opt("T", 500.0))
    row = {"replica": r}
    for t in sorted({t_core, T}):
        walk.evolve(t)
        if t == t_core:
            row["core_disagree"] = walk.disagree(x + v * t, y - v * t)
            row["L_core"] = walk.L
            row["R_core"] = walk.R
    row["L_T"] = walk.L
    row["R_T"] = walk.R
    row["drift_L"] = (walk.L - x) / T
    row["drift_R"] = (y - walk.R) / T
    row["inside_violations"] = int(walk.counts[2])
    row["phantom_crossings"] = int(walk.counts[1])
    row["events"] = int(walk.counts[0])
    return row


def run_propagation(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    rows = run_tasks(_prop_task, [(cfg, r) for r in range(cfg.replicas)], cfg.threads)
    vL = cfg.constants.v_L
    dL = np.array([r["drift_L"] for r in rows])
    n = len(rows)
    se = float(dL.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    dis = frequency(sum(r["core_disagree"] for r in rows), n, statistic="core_disagreement")
    drift = {
        "statistic": "drift_L", "mean": float(dL.mean()), "stderr": se, "v_L": vL,
        "ratio": float(dL.mean()) / vL if vL else float("nan"),
        "mean_drift_R": float(np.mean([r["drift_R"] for r in rows])),
        "inside_violations": int(sum(r["inside_violations"] for r in rows)),
    }
    res = ExperimentResult("propagation", cfg.echo(), rows, [drift, dis], [], meta(cfg))
    res.plot = [{"replica": r["replica"], "drift_L": r["drift_L"], "drift_R": r["drift_R"]} for r in rows]
    res.wall_time = time.perf_counter() - t0
    return res

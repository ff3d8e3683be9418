"""Harris graphical construction with basic coupling of several copies.

The per-pair Poisson clocks of rate p(y-x)*bmax are realised by one aggregated
clock of rate bmax*|origin window|: origin uniform in the window, displacement
from p, uniform mark.  Origins where every copy is empty cannot produce a move
(b(0, .) = 0), so restricting the window to the union of occupied sites
(line) or to all sites (ring) leaves the joint law unchanged.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from macrostab import _engine as eng
from macrostab.model import Configuration, JumpKernel, RateTable
from macrostab.rng import UniformStream, as_seed_sequence, substream, PARTICLES


class EmptySystem(RuntimeError):
    pass


@dataclass(frozen=True)
class HarrisEvent:
    time: float
    x: int
    y: int
    u: float

    @property
    def size(self) -> int:
        return abs(self.y - self.x)


class PreState:
    """Occupancies just before an event, reconstructed from the post-event arrays."""

    def __init__(self, sys: "CoupledSystem", event: HarrisEvent, moved):
        self._sys = sys
        self._e = event
        self._moved = moved

    def occ(self, c: int, site: int) -> int:
        v = self._sys.occupancy(c, site)
        if self._moved[c]:
            if self._sys.ring:
                S = self._sys.ring_size
                site %= S
                if site == self._e.x % S:
                    v += 1
                if site == self._e.y % S:
                    v -= 1
            else:
                if site == self._e.x:
                    v += 1
                if site == self._e.y:
                    v -= 1
        return v

    def diff(self, site: int, c1: int = 0, c2: int = 1) -> int:
        return self.occ(c1, site) - self.occ(c2, site)


class CoupledSystem:
    """Several configurations driven by one Harris realization.

    All copies share the backend: either a growable box on Z or a ring of fixed size.
    """

    def __init__(self, copies, kernel: JumpKernel, rates: RateTable, seed=None,
                 restrict: tuple[int, int, int] | None = None, check_order: bool = False,
                 order_from: int = 0, event_log: str | None = None, clock: float = 0.0, margin: int = 64):
        copies = list(copies)
        if not copies:
            raise ValueError("need at least one copy")
        rings = {c.ring_size for c in copies}
        if len(rings) != 1:
            raise ValueError("all copies must share the same backend geometry")
        self.kernel = kernel
        self.rates = rates
        self.K = rates.K
        self.b = np.ascontiguousarray(rates.b)
        self.bmax = rates.b_max
        if self.bmax <= 0:
            raise ValueError("rate table is identically zero")
        self.zs, self.cdf, self.tp = kernel.sampler_arrays
        self.ring_size = copies[0].ring_size
        self.ring = self.ring_size is not None
        self.C = len(copies)
        for c in copies:
            if c.items() and max(v for _, v in c.items()) > self.K:
                raise ValueError(f"occupancy exceeds K={self.K}")
        ss = as_seed_sequence(seed)
        self.stream = UniformStream(substream(ss, PARTICLES))
        self.seed_sequence = ss
        self.clock = float(clock)
        self.st = np.array([self.clock, 0.0, 0.0, 0.0])
        self.counts = np.zeros(3, dtype=np.int64)
        self.check_order = bool(check_order)
        # copies before order_from are not expected to be ordered
        self._order_from = int(order_from) if check_order else -1
        self.info = np.zeros(5)
        self.moved = np.zeros(self.C, dtype=np.int64)
        self._log_path = event_log
        self._log_rows = np.zeros((4096, 5)) if event_log else np.zeros((0, 5))
        self._log_fh = None
        if restrict is not None:
            a, bb, n = restrict
            if a > bb:
                raise ValueError("empty restriction interval")
            for c in copies:
                h = c.hull()
                if h and (h[0] < a or h[1] > bb):
                    raise ValueError("configuration not supported in the restriction interval")
        if self.ring:
            S = self.ring_size
            self.lo = 0
            self.occ = np.zeros((self.C, S), dtype=np.int64)
            for i, c in enumerate(copies):
                self.occ[i], _ = c.to_array()
            self.window = np.arange(S, dtype=np.int64)
            self.wpos = np.arange(S, dtype=np.int64)
            self.st[2] = S
            self.restrict = np.zeros(4, dtype=np.int64)
        else:
            hulls = [c.hull() for c in copies if c.hull() is not None]
            if restrict is not None:
                lo, hi = restrict[0], restrict[1]
                pad = 0
            elif hulls:
                lo, hi = min(h[0] for h in hulls), max(h[1] for h in hulls)
                pad = margin
            else:
                lo = hi = 0
                pad = margin
            self.lo = lo - pad
            B = hi - lo + 1 + 2 * pad
            self.occ = np.zeros((self.C, B), dtype=np.int64)
            for i, c in enumerate(copies):
                for x, v in c.items():
                    self.occ[i, x - self.lo] = v
            occupied = np.nonzero(self.occ.sum(axis=0))[0]
            self.window = np.zeros(B, dtype=np.int64)
            self.wpos = np.full(B, -1, dtype=np.int64)
            self.window[: occupied.size] = occupied
            self.wpos[occupied] = np.arange(occupied.size)
            self.st[2] = occupied.size
            if restrict is not None:
                a, bb, n = restrict
                self.restrict = np.array([1, a - self.lo, bb - self.lo, n], dtype=np.int64)
            else:
                self.restrict = np.zeros(4, dtype=np.int64)

    # state access -----------------------------------------------------------
    @property
    def copies(self) -> list[Configuration]:
        if self.ring:
            return [Configuration.ring(self.occ[c], K=self.K) for c in range(self.C)]
        return [Configuration.from_array(self.occ[c], self.lo, K=self.K) for c in range(self.C)]

    def occupancy(self, c: int, site: int) -> int:
        if self.ring:
            return int(self.occ[c, site % self.ring_size])
        i = site - self.lo
        if 0 <= i < self.occ.shape[1]:
            return int(self.occ[c, i])
        return 0

    def arrays(self) -> tuple[np.ndarray, int]:
        """Occupancy matrix (copies x box) and the site of column 0. Do not mutate."""
        return self.occ, self.lo

    @property
    def origin_window(self) -> np.ndarray:
        w = self.window[: int(self.st[2])]
        return np.sort(w + self.lo)

    @property
    def n_events(self) -> int:
        return int(self.counts[0])

    @property
    def order_violations(self) -> int:
        return int(self.counts[2])

    # engine plumbing --------------------------------------------------------
    def _grow(self):
        B = self.occ.shape[1]
        pad = max(B // 2, 64)
        occ = np.zeros((self.C, B + 2 * pad), dtype=np.int64)
        occ[:, pad: pad + B] = self.occ
        wsize = int(self.st[2])
        window = np.zeros(B + 2 * pad, dtype=np.int64)
        window[:wsize] = self.window[:wsize] + pad
        wpos = np.full(B + 2 * pad, -1, dtype=np.int64)
        wpos[window[:wsize]] = np.arange(wsize)
        self.occ, self.window, self.wpos = occ, window, wpos
        self.lo -= pad

    def _flush_log(self):
        n = int(self.st[3])
        if not self._log_path or n == 0:
            return
        if self._log_fh is None:
            self._log_fh = open(self._log_path, "w", newline="")
            w = csv.writer(self._log_fh)
            w.writerow(["time", "x", "y", "u"] + [f"moved{c}" for c in range(self.C)])
        w = csv.writer(self._log_fh)
        for row in self._log_rows[:n]:
            mask = int(row[4])
            w.writerow([repr(float(row[0])), int(row[1]), int(row[2]), repr(float(row[3]))]
                       + [(mask >> c) & 1 for c in range(self.C)])
        self.st[3] = 0

    def close_log(self):
        self._flush_log()
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def _run(self, t_end: float, max_events: int) -> int:
        while True:
            self.st[1] = self.stream.pos
            status = eng.run_events(
                self.occ, self.ring, self.lo, self.window, self.wpos, self.st, self.b, self.bmax,
                self.K, self.zs, self.cdf, self.tp, self.stream.buf, float(t_end), max_events,
                self.restrict, self._order_from, self._log_rows, self.info, self.moved, self.counts,
            )
            self.stream.pos = int(self.st[1])
            if status == eng.NEED_RNG:
                self.stream.refill()
            elif status == eng.NEED_GROW:
                self._grow()
            elif status == eng.NEED_LOG:
                self._flush_log()
            else:
                return status

    # public operations ------------------------------------------------------
    def next_event(self) -> HarrisEvent:
        """Draw the next event of the realization and advance the clock to it (not applied)."""
        if int(self.st[2]) == 0:
            raise EmptySystem("no copy has any particle")
        row = self.stream.row()
        lam = self.bmax * int(self.st[2])
        t = self.st[0] - np.log1p(-row[0]) / lam
        wsize = int(self.st[2])
        k = min(int(row[1] * wsize), wsize - 1)
        xi = int(self.window[k])
        z = int(eng.sample_disp(row[2], self.zs, self.cdf, self.tp))
        x = xi + self.lo
        y = x + z
        if self.ring:
            y = y % self.ring_size
        self.st[0] = t
        self.clock = t
        return HarrisEvent(float(t), int(x), int(y), float(row[3]))

    def apply_event(self, e: HarrisEvent) -> np.ndarray:
        """Apply the coupled transition of event ``e``; returns per-copy moved flags."""
        moved = np.zeros(self.C, dtype=np.int64)
        if self.restrict[0]:
            a, bb, n = self.restrict[1:]
            if abs(e.y - e.x) > n or not (a <= e.y - self.lo <= bb):
                self.counts[0] += 1
                return moved.astype(bool)
        if self.ring:
            xi, yi = e.x % self.ring_size, e.y % self.ring_size
        else:
            while not (0 <= e.y - self.lo < self.occ.shape[1] and 0 <= e.x - self.lo < self.occ.shape[1]):
                self._grow()
            xi, yi = e.x - self.lo, e.y - self.lo
        for c in range(self.C):
            ex, ey = self.occ[c, xi], self.occ[c, yi]
            if e.u * self.bmax < self.b[ex, ey]:
                assert ex >= 1 and ey <= self.K - 1, "rate table violates its boundary conditions"
        self.counts[0] += 1
        nm = eng.apply_move(self.occ, xi, yi, e.u, self.bmax, self.b, self.K, moved)
        if nm and not self.ring:
            self.st[2] = eng.window_update(self.occ, xi, yi, self.window, self.wpos, int(self.st[2]))
        if nm:
            self.counts[1] += 1
        return moved.astype(bool)

    def evolve(self, t_end: float, observers=()) -> "CoupledSystem":
        """Apply all events up to ``t_end`` and set the clock to ``t_end``.

        Each observer is called as ``obs(pre, event, moved, sys)`` after every event;
        an observer may define ``finish(t_end, sys)``.
        """
        if t_end < self.clock:
            raise ValueError(f"t_end {t_end} is before the clock {self.clock}")
        observers = list(observers)
        if not observers:
            status = self._run(t_end, np.iinfo(np.int64).max)
        else:
            while True:
                status = self._run(t_end, 1)
                if status != eng.STEPPED:
                    break
                i = self.info
                y = int(i[2])
                if self.ring:
                    y %= self.ring_size
                e = HarrisEvent(float(i[0]), int(i[1]), y, float(i[3]))
                moved = self.moved.astype(bool)
                pre = PreState(self, e, moved)
                for obs in observers:
                    obs(pre, e, moved, self)
        if status not in (eng.DONE, eng.EMPTY):
            raise RuntimeError(f"engine stopped with status {status}")
        self.clock = float(t_end)
        for obs in observers:
            fin = getattr(obs, "finish", None)
            if fin is not None:
                fin(t_end, self)
        if self._log_path:
            self._flush_log()
        return self


def evolve_restricted(config, interval: tuple[int, int], kernel_cutoff: int, t_end: float,
                      kernel: JumpKernel, rates: RateTable, seed=None):
    """Evolve using only events inside ``interval`` with displacement at most ``kernel_cutoff``.

    ``config`` is one Configuration or a sequence of them (coupled through one realization);
    the result has the same shape.
    """
    single = isinstance(config, Configuration)
    copies = [config] if single else list(config)
    a, b = interval
    sys = CoupledSystem(copies, kernel, rates, seed=seed, restrict=(a, b, kernel_cutoff))
    if any(c.total for c in copies):
        sys.evolve(t_end)
    out = sys.copies
    return out[0] if single else out

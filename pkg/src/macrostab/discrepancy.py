"""Labelled discrepancies between two coupled copies.

A site with eta1 - eta2 = h > 0 carries h labels of 1/2 discrepancies (x-labels),
a site with h < 0 carries |h| labels of 2/1 discrepancies (y-labels).  x-labels
carry a total order that respects space; big jumps (|z - y| >= m_eps) move single
labels, short jumps reassign labels order-preservingly, and coalescences send one
label of each type to its graveyard.  Around each x-label, active windows of
length M0 + m_eps are opened when a 2/1 discrepancy sits M0..M0+m_eps sites to its
right, and per-label counters bound the growth of the label's Phi-tilde value.

Only the line backend is supported: the right/left notions used here have no
meaning on a ring.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from sortedcontainers import SortedList

from macrostab.model import Configuration, DerivedConstants
from macrostab.rng import as_seed_sequence, substream, TRACKER

CASES = ("none", "a1", "a2", "b1", "b2", "c", "d", "e1", "e2", "f_move", "g_move")
BIG_CASES = {"a1", "a2", "b1", "b2", "f_move", "g_move"}


class InconsistentState(RuntimeError):
    pass


class LabelDead(KeyError):
    pass


@dataclass
class ActiveWindow:
    wid: int
    owner: int
    j: int
    a: int
    span: int
    S: float
    ref: int
    cur: int
    relevant: list[int] = field(default_factory=list)
    T: float | None = None
    cause: str = ""

    @property
    def right(self) -> int:
        return self.a + self.span

    def contains(self, s: int) -> bool:
        return self.a <= s <= self.a + self.span


@dataclass
class ConsistencyReport:
    ok: bool = True
    violations: list[str] = field(default_factory=list)

    def fail(self, kind: str, msg: str):
        self.ok = False
        self.violations.append(f"{kind}: {msg}")

    @property
    def first(self) -> str | None:
        return self.violations[0] if self.violations else None


@dataclass
class LabelParams:
    M0: int
    m_eps: int
    K: int = 1

    @property
    def span(self) -> int:
        return self.M0 + self.m_eps

    @classmethod
    def from_constants(cls, dc: DerivedConstants, K: int) -> "LabelParams":
        return cls(dc.M0, dc.m_eps, K)


class LabelState:
    """Positions, order, windows and counters of all discrepancy labels."""

    def __init__(self, params: LabelParams):
        self.params = params
        self.time = 0.0
        # x-labels
        self.x_birth: list[tuple[int, int]] = []
        self.x_site: list[int | None] = []
        self.x_death: list[float | None] = []
        self.site_x: dict[int, list[int]] = {}
        self.order: list[int] = []
        # y-labels
        self.y_birth: list[tuple[int, int]] = []
        self.y_site: list[int | None] = []
        self.y_death: list[float | None] = []
        self.site_y: dict[int, list[int]] = {}
        # signed difference eta1 - eta2
        self.d: dict[int, int] = {}
        self.pos12 = SortedList()
        self.pos21 = SortedList()
        self.tracked: set[int] | None = None
        # counters
        self.cnt_a: list[int] = []
        self.cnt_b: list[int] = []
        self.credited: list[set[int]] = []
        self.c_credit: list[list[int]] = []
        self.key0: list[tuple[int, int]] = []
        self.phi0: list[int] = []
        self.assoc: list[set[int]] = []
        # windows
        self.windows: dict[int, ActiveWindow] = {}
        self.closed: list[ActiveWindow] = []
        self.owner_window: dict[int, int] = {}
        self.owner_j: dict[int, int] = {}
        self.win_by_a = SortedList()
        self._next_wid = 0
        self._timeouts: list[tuple[float, int]] = []
        self.cover: dict[int, int] = {}
        self.U: list[int] = []
        self.upos: dict[int, int] = {}
        self.window_version = 0
        self.label_version = 0

    # basic queries ----------------------------------------------------------
    @property
    def n_x(self) -> int:
        return len(self.x_site)

    @property
    def n_y(self) -> int:
        return len(self.y_site)

    def live_x(self) -> list[int]:
        return list(self.order)

    def live_y(self) -> list[int]:
        return [j for j, s in enumerate(self.y_site) if s is not None]

    def is_tracked(self, lab: int) -> bool:
        return self.tracked is None or lab in self.tracked

    def key(self, lab: int) -> tuple[int, int]:
        s = self.x_site[lab]
        return s, self.site_x[s].index(lab)

    def dval(self, s: int) -> int:
        return self.d.get(s, 0)

    def x_in(self, lo: int, hi: int) -> list[int]:
        """x-labels with sites in [lo, hi], in order."""
        out = []
        for s in self.pos12.irange(lo, hi):
            out.extend(self.site_x[s])
        return out

    def y_in(self, lo: int, hi: int) -> list[int]:
        out = []
        for s in self.pos21.irange(lo, hi):
            out.extend(self.site_y[s])
        return out

    def abs_sum(self, lo: int, hi: int) -> int:
        tot = 0
        for s in self.pos12.irange(lo, hi):
            tot += self.d[s]
        for s in self.pos21.irange(lo, hi):
            tot -= self.d[s]
        return tot

    def windows_containing(self, s: int) -> list[int]:
        span = self.params.span
        return [wid for _, wid in self.win_by_a.irange((s - span, -1), (s, math.inf))]

    def counters(self, lab: int) -> dict[str, int]:
        """delta_a, delta_b, delta_c_ass, delta_c_non for an x-label.

        Association for windows still open is evaluated provisionally at the current time.
        """
        ass = set(self.assoc[lab])
        site = self.x_site[lab]
        if site is not None:
            for w in self.windows.values():
                if lab in w.relevant:
                    ass.update(self.y_in(w.a, w.right))
                    ass.update(self.y_in(site + self.params.M0, site + self.params.m_eps))
        ca = sum(1 for k in self.c_credit[lab] if k & 1 and (k >> 1) in ass)
        return {
            "delta_a": self.cnt_a[lab],
            "delta_b": self.cnt_b[lab],
            "delta_c_ass": ca,
            "delta_c_non": len(self.c_credit[lab]) - ca,
        }

    # mutation helpers -------------------------------------------------------
    def _set_d(self, s: int, v: int):
        old = self.d.get(s, 0)
        if old > 0:
            self.pos12.remove(s)
        elif old < 0:
            self.pos21.remove(s)
        if v == 0:
            self.d.pop(s, None)
        else:
            self.d[s] = v
            (self.pos12 if v > 0 else self.pos21).add(s)

    def _x_remove(self, lab: int):
        s = self.x_site[lab]
        lst = self.site_x[s]
        lst.remove(lab)
        if not lst:
            del self.site_x[s]

    def _y_remove(self, lab: int):
        s = self.y_site[lab]
        lst = self.site_y[s]
        lst.remove(lab)
        if not lst:
            del self.site_y[s]

    def _kill_x(self, lab: int):
        self._x_remove(lab)
        self.order.remove(lab)
        self.x_site[lab] = None
        self.x_death[lab] = self.time

    def _kill_y(self, lab: int):
        self._y_remove(lab)
        self.y_site[lab] = None
        self.y_death[lab] = self.time

    def _move_y(self, lab: int, s: int):
        self._y_remove(lab)
        self.y_site[lab] = s
        self.site_y.setdefault(s, []).append(lab)

    def _jump_x(self, lab: int, s: int):
        """Move one x-label to s with the lowest order among labels at s."""
        self._x_remove(lab)
        self.order.remove(lab)
        # first label (in order) at a site >= s
        idx = len(self.order)
        for t in self.pos12.irange(s, None):
            lst = self.site_x.get(t)
            if lst:
                idx = self.order.index(lst[0])
                break
        self.order.insert(idx, lab)
        self.x_site[lab] = s
        self.site_x.setdefault(s, []).insert(0, lab)

    def _reassign(self, labels: list[int], targets: list[int]):
        """Put ``labels`` (in order) on ``targets`` (ascending sites with multiplicity)."""
        if len(labels) != len(targets):
            raise InconsistentState(f"reassignment of {len(labels)} labels onto {len(targets)} sites")
        for lab in labels:
            self._x_remove(lab)
        for lab, s in zip(labels, targets):
            self.x_site[lab] = s
            self.site_x.setdefault(s, []).append(lab)


def init_labels(eta1: Configuration, eta2: Configuration, params: LabelParams,
                tracked=None) -> LabelState:
    """Labels (x, i), i <= (eta1 - eta2)^+(x), in spatial order; y-labels for the negative part."""
    if eta1.is_ring or eta2.is_ring:
        raise NotImplementedError("discrepancy labels need the line backend")
    st = LabelState(params)
    sites = sorted(set(eta1.sites()) | set(eta2.sites()))
    for s in sites:
        h = eta1[s] - eta2[s]
        if h == 0:
            continue
        st._set_d(s, h)
        if h > 0:
            for i in range(1, h + 1):
                lab = len(st.x_site)
                st.x_birth.append((s, i))
                st.x_site.append(s)
                st.x_death.append(None)
                st.site_x.setdefault(s, []).append(lab)
                st.order.append(lab)
        else:
            for j in range(1, -h + 1):
                lab = len(st.y_site)
                st.y_birth.append((s, j))
                st.y_site.append(s)
                st.y_death.append(None)
                st.site_y.setdefault(s, []).append(lab)
    n = st.n_x
    st.tracked = None if tracked is None else set(int(t) for t in tracked)
    st.cnt_a = [0] * n
    st.cnt_b = [0] * n
    st.credited = [set() for _ in range(n)]
    st.c_credit = [[] for _ in range(n)]
    st.assoc = [set() for _ in range(n)]
    st.key0 = [st.key(lab) for lab in range(n)]
    st.phi0 = [phi_tilde(st, lab) for lab in range(n)]
    return st


def phi_tilde(st: LabelState, lab: int) -> int:
    """#{x-labels after lab in order} - sum over y > X of (eta1 - eta2)^-(y)."""
    s = st.x_site[lab]
    if s is None:
        raise LabelDead(lab)
    after = len(st.order) - st.order.index(lab) - 1
    neg = sum(-st.d[t] for t in st.pos21.irange(s + 1, None))
    return after - neg


def phi_tilde_all(st: LabelState) -> dict[int, int]:
    """phi_tilde for every live x-label, in one sweep."""
    n = len(st.order)
    neg_sites = list(st.pos21)
    neg_vals = np.array([-st.d[t] for t in neg_sites], dtype=np.int64)
    suffix = np.concatenate([np.cumsum(neg_vals[::-1])[::-1], [0]]) if neg_vals.size else np.zeros(1, np.int64)
    arr = np.array(neg_sites, dtype=np.int64)
    out = {}
    for r, lab in enumerate(st.order):
        s = st.x_site[lab]
        k = int(np.searchsorted(arr, s, side="right"))
        out[lab] = (n - r - 1) - int(suffix[k])
    return out


def delta_value(st: LabelState, lab: int) -> int:
    return phi_tilde(st, lab) - st.phi0[lab]


def classify_event(st: LabelState, z: int, y: int, m1: bool, m2: bool) -> str:
    """Rule case of an event z -> y given which of the two copies moved (state at t-)."""
    if m1 == m2:
        return "none"
    big = abs(y - z) >= st.params.m_eps
    dz, dy = st.dval(z), st.dval(y)
    if m1:
        if dz > 0:
            if big:
                return "a2" if dy < 0 else "a1"
            return "e" if dy < 0 else "d"
        if dy >= 0:
            raise InconsistentState(f"copy 1 alone moved {z}->{y} with d(z)={dz}, d(y)={dy}")
        return "f_move" if big else "c"
    if dy > 0:
        if big:
            return "b1" if dz < 0 else "b2"
        return "e" if dz < 0 else "d"
    if dz >= 0:
        raise InconsistentState(f"copy 2 alone moved {z}->{y} with d(z)={dz}, d(y)={dy}")
    return "g_move" if big else "c"


def _pick(rng, items: list[int]) -> int:
    return items[min(int(rng.random() * len(items)), len(items) - 1)]


def apply_rule(st: LabelState, case: str, z: int, y: int, m1: bool, rng,
               e1_windows: list[int] | None = None) -> dict:
    """Move labels for one event; also updates the difference map at z and y.

    Returns the set of labels that changed and the region touched.
    """
    lo, hi = min(z, y), max(z, y)
    info = {"x_dead": [], "y_dead": [], "x_moved": [], "region": (lo, hi), "window": None}
    if case == "none":
        return info
    dz, dy = st.dval(z), st.dval(y)
    # post-event difference at z and y
    dz2, dy2 = (dz - 1, dy + 1) if m1 else (dz + 1, dy - 1)
    if case == "e":
        case = "e1" if e1_windows else "e2"
    info["case"] = case
    if case == "a1":
        lab = _pick(rng, st.site_x[z])
        st._jump_x(lab, y)
        info["x_moved"].append(lab)
    elif case == "a2":
        xl = _pick(rng, st.site_x[z])
        yl = _pick(rng, st.site_y[y])
        st._kill_x(xl)
        st._kill_y(yl)
        info["x_dead"].append(xl)
        info["y_dead"].append(yl)
    elif case == "b1":
        yl = _pick(rng, st.site_y[z])
        xl = _pick(rng, st.site_x[y])
        st._kill_y(yl)
        st._kill_x(xl)
        info["x_dead"].append(xl)
        info["y_dead"].append(yl)
    elif case == "b2":
        lab = _pick(rng, st.site_x[y])
        st._jump_x(lab, z)
        info["x_moved"].append(lab)
    elif case in ("f_move", "c") and m1:
        yl = _pick(rng, st.site_y[y])
        st._move_y(yl, z)
    elif case in ("g_move", "c"):
        yl = _pick(rng, st.site_y[z])
        st._move_y(yl, y)
    elif case == "d":
        labels = st.x_in(lo, hi)
        before = {lab: st.x_site[lab] for lab in labels}
        targets = []
        for s in range(lo, hi + 1):
            v = dz2 if s == z else dy2 if s == y else st.dval(s)
            if v > 0:
                targets.extend([s] * v)
        st._reassign(labels, targets)
        info["x_moved"].extend(lab for lab in labels if st.x_site[lab] != before[lab])
    elif case == "e2":
        s12, s21 = (z, y) if m1 else (y, z)
        xl = _pick(rng, st.site_x[s12])
        yl = _pick(rng, st.site_y[s21])
        st._kill_x(xl)
        st._kill_y(yl)
        info["x_dead"].append(xl)
        info["y_dead"].append(yl)
    elif case == "e1":
        s12, s21 = (z, y) if m1 else (y, z)
        wid = _pick(rng, sorted(e1_windows))
        w = st.windows[wid]
        a, b = w.a, w.right
        info["window"] = wid
        info["region"] = (min(lo, a), max(hi, b))
        labels = st.x_in(a, b)
        xl = _pick(rng, labels)
        yl = _pick(rng, st.site_y[s21])
        before = {lab: st.x_site[lab] for lab in labels}
        st._kill_x(xl)
        st._kill_y(yl)
        rest = [lab for lab in labels if lab != xl]
        targets = []
        for s in range(a, b + 1):
            v = dz2 if s == z else dy2 if s == y else st.dval(s)
            if v > 0:
                targets.extend([s] * v)
        st._reassign(rest, targets)
        info["x_dead"].append(xl)
        info["y_dead"].append(yl)
        info["x_moved"].extend(lab for lab in rest if st.x_site[lab] != before[lab])
    else:
        raise InconsistentState(f"unknown case {case}")
    st._set_d(z, dz2)
    st._set_d(y, dy2)
    st.label_version += 1
    return info


class DiscrepancyTracker:
    """Observer that keeps a LabelState in step with copies c1, c2 of a CoupledSystem."""

    def __init__(self, sys, constants: DerivedConstants | LabelParams, c1: int = 0, c2: int = 1,
                 seed=None, audit: bool = False, tracked=None, phantoms: bool = True,
                 strict: bool = False):
        if sys.ring:
            raise NotImplementedError("discrepancy labels need the line backend")
        params = constants if isinstance(constants, LabelParams) else LabelParams.from_constants(constants, sys.K)
        copies = sys.copies
        self.sys = sys
        self.c1, self.c2 = c1, c2
        self.state = init_labels(copies[c1], copies[c2], params, tracked)
        self.state.time = sys.clock
        ss = as_seed_sequence(seed if seed is not None else sys.seed_sequence)
        self.rng = np.random.Generator(np.random.PCG64(substream(ss, TRACKER)))
        self.kernel = sys.kernel
        self.zs, self.cdf, self.tp = sys.kernel.sampler_arrays
        self.bmax = sys.bmax
        self.audit = audit
        self.strict = strict
        self.phantoms = phantoms
        self.report = ConsistencyReport()
        self.case_counts = {c: 0 for c in CASES}
        self.n_events = 0
        self.n_audited = 0
        self.n_phantom = 0
        self.max_cover = 0
        self.cover_bound_violations = 0
        self._ph_time: float | None = None
        self._last_live = (len(self.state.order), len(self.state.live_y()))
        for lab in list(self.state.order):
            self._try_open(lab)
        if audit:
            self._full_audit(None, set())

    # window machinery -------------------------------------------------------
    def _cover_add(self, lo: int, hi: int):
        st = self.state
        for s in range(lo, hi + 1):
            c = st.cover.get(s, 0)
            if c == 0:
                st.upos[s] = len(st.U)
                st.U.append(s)
            st.cover[s] = c + 1

    def _cover_remove(self, lo: int, hi: int):
        st = self.state
        for s in range(lo, hi + 1):
            c = st.cover[s] - 1
            if c == 0:
                del st.cover[s]
                k = st.upos.pop(s)
                last = st.U.pop()
                if last != s:
                    st.U[k] = last
                    st.upos[last] = k
            else:
                st.cover[s] = c

    def _try_open(self, lab: int):
        st = self.state
        if not st.is_tracked(lab) or lab in st.owner_window:
            return
        s = st.x_site[lab]
        if s is None:
            return
        p = st.params
        lo, hi = s + p.M0, s + p.M0 + p.m_eps
        if next(iter(st.pos21.irange(lo, hi)), None) is None:
            return
        j = st.owner_j.get(lab, 0)
        w = ActiveWindow(st._next_wid, lab, j, s, p.span, st.time, 0, 0)
        st._next_wid += 1
        w.ref = w.cur = st.abs_sum(w.a, w.right)
        w.relevant = [x for x in st.x_in(w.a, w.right) if st.is_tracked(x)]
        ys = st.y_in(w.a, w.right)
        for x in w.relevant:
            st.assoc[x].update(ys)
        st.windows[w.wid] = w
        st.owner_window[lab] = w.wid
        st.win_by_a.add((w.a, w.wid))
        heapq.heappush(st._timeouts, (w.S + 1.0, w.wid))
        self._cover_add(w.a, w.right)
        self._ph_time = None
        st.window_version += 1
        if self.audit:
            cov = st.cover
            m = max(cov[t] for t in range(w.a, w.right + 1))
            self.max_cover = max(self.max_cover, m)
            if m > p.M0 + p.m_eps + 1:
                self.cover_bound_violations += 1

    def _close(self, wid: int, cause: str):
        st = self.state
        w = st.windows.pop(wid)
        w.T = st.time
        w.cause = cause
        st.win_by_a.remove((w.a, w.wid))
        del st.owner_window[w.owner]
        st.owner_j[w.owner] = w.j + 1
        self._cover_remove(w.a, w.right)
        p = st.params
        ys = st.y_in(w.a, w.right)
        for x in w.relevant:
            s = st.x_site[x]
            if s is None:
                continue
            st.assoc[x].update(ys)
            st.assoc[x].update(st.y_in(s + p.M0, s + p.m_eps))
        st.closed.append(w)
        self._ph_time = None
        st.window_version += 1

    def _harris_closures(self, u: int, v: int) -> list[int]:
        """Windows closed by a Harris event between u and v (crossing or big intra-span)."""
        st = self.state
        wu = set(st.windows_containing(u))
        wv = set(st.windows_containing(v))
        out = wu ^ wv
        if abs(u - v) >= st.params.m_eps:
            out |= wu & wv
        return sorted(out)

    def _advance(self, t: float, pre):
        """Process window timeouts and phantom Harris events strictly before t."""
        st = self.state
        while True:
            while st._timeouts and st._timeouts[0][1] not in st.windows:
                heapq.heappop(st._timeouts)
            t_out = st._timeouts[0][0] if st._timeouts else math.inf
            t_ph = math.inf
            if self.phantoms and st.U:
                if self._ph_time is None:
                    rate = 2.0 * self.bmax * len(st.U)
                    self._ph_time = st.time - math.log1p(-self.rng.random()) / rate
                t_ph = self._ph_time
            nxt = min(t_out, t_ph)
            if nxt >= t:
                return
            st.time = nxt
            if t_out <= t_ph:
                _, wid = heapq.heappop(st._timeouts)
                owner = st.windows[wid].owner
                self._close(wid, "timeout")
                self._try_open(owner)
            else:
                self._ph_time = None
                self._phantom(pre)

    def _phantom(self, pre):
        from macrostab._engine import sample_disp

        st = self.state
        r = self.rng.random(3)
        z = int(sample_disp(r[1], self.zs, self.cdf, self.tp))
        k = min(int(r[2] * len(st.U)), len(st.U) - 1)
        if r[0] < 0.5:
            u = st.U[k]
            v = u + z
        else:
            v = st.U[k]
            u = v - z
            if u in st.cover:
                return
        for c in range(self.sys.C):
            if pre.occ(c, u) > 0:
                return
        self.n_phantom += 1
        closed = self._harris_closures(u, v)
        owners = [st.windows[w].owner for w in closed]
        for w in closed:
            self._close(w, "harris")
        for o in owners:
            self._try_open(o)

    # event processing -------------------------------------------------------
    def __call__(self, pre, e, moved, sys):
        st = self.state
        self._advance(e.time, pre)
        st.time = e.time
        self.n_events += 1
        z, y = e.x, e.y
        m1, m2 = bool(moved[self.c1]), bool(moved[self.c2])
        version0 = st.label_version
        case = classify_event(st, z, y, m1, m2)
        e1_windows = None
        if case == "e":
            both = set(st.windows_containing(z)) & set(st.windows_containing(y))
            e1_windows = sorted(both)
        region = (min(z, y), max(z, y))
        if case == "e" and e1_windows:
            for wid in e1_windows:
                w = st.windows[wid]
                region = (min(region[0], w.a), max(region[1], w.right))
        snap = snapshot_region(st, region) if case != "none" else None
        dz_pre, dy_pre = st.dval(z), st.dval(y)
        sum_pos_pre = len(st.order)
        info = apply_rule(st, case, z, y, m1, self.rng, e1_windows)
        case = info.get("case", case)
        self.case_counts[case] += 1
        if case != "none":
            audit_counters(st, snap, info, abs(y - z) >= st.params.m_eps)
        # window closures
        to_close = set(self._harris_closures(z, y))
        if case != "none":
            dabs = {z: abs(st.dval(z)) - abs(dz_pre), y: abs(st.dval(y)) - abs(dy_pre)}
            touched = set(st.windows_containing(z)) | set(st.windows_containing(y))
            for wid in touched:
                w = st.windows[wid]
                w.cur += sum(dv for s, dv in dabs.items() if w.contains(s))
                if w.cur < w.ref:
                    to_close.add(wid)
        for lab in info["x_dead"]:
            if lab in st.owner_window:
                to_close.add(st.owner_window[lab])
        owners = []
        for wid in sorted(to_close):
            owners.append(st.windows[wid].owner)
            self._close(wid, "event")
        # openings
        cands = set(owners) | set(info["x_moved"])
        p = st.params
        for s in (z, y):
            if st.dval(s) < 0:
                cands.update(st.x_in(s - p.M0 - p.m_eps, s - p.M0))
        for lab in sorted(cands):
            if st.x_site[lab] is not None:
                self._try_open(lab)
        if self.audit:
            self._event_audit(case, info, m1 or m2 or any(moved), version0, sum_pos_pre)
            self._full_audit(sys, set())

    def finish(self, t_end: float, sys):
        update_windows(self, t_end, sys)

    # auditing ---------------------------------------------------------------
    def _fail(self, kind, msg):
        self.report.fail(kind, f"t={self.state.time:.6g}: {msg}")
        if self.strict:
            raise InconsistentState(self.report.violations[-1])

    def _event_audit(self, case, info, any_moved, version0, sum_pos_pre):
        st = self.state
        nx, ny = len(info["x_dead"]), len(info["y_dead"])
        if nx != ny or nx > 1:
            self._fail("coalescence", f"{nx} x-labels and {ny} y-labels died in case {case}")
        if len(st.order) != sum_pos_pre - nx:
            self._fail("coalescence", f"1/2 count went {sum_pos_pre} -> {len(st.order)} with {nx} deaths")
        if not any_moved and st.label_version != version0:
            self._fail("condition5", "labels moved at an event that changed no copy")

    def _full_audit(self, sys, _):
        self.n_audited += 1
        rep = check_consistency(self.state, *(self._configs(sys)))
        for v in rep.violations:
            self._fail(v.split(":")[0], v)
        live = (len(self.state.order), len(self.state.live_y()))
        if live[0] > self._last_live[0] or live[1] > self._last_live[1]:
            self._fail("condition2", f"live label counts increased {self._last_live} -> {live}")
        self._last_live = live
        st = self.state
        phis = phi_tilde_all(st)
        for lab, ph in phis.items():
            if not st.is_tracked(lab):
                continue
            delta = ph - st.phi0[lab]
            bound = st.cnt_a[lab] + st.cnt_b[lab] + len(st.c_credit[lab])
            if delta > bound:
                self._fail("counter", f"label {st.x_birth[lab]}: Delta={delta} > a+b+c={bound}")

    def _configs(self, sys):
        sys = sys or self.sys
        occ, lo = sys.arrays()
        return occ[self.c1], occ[self.c2], lo

    # output -----------------------------------------------------------------
    def counter_rows(self) -> list[dict]:
        st = self.state
        phis = phi_tilde_all(st)
        rows = []
        for lab in range(st.n_x):
            if not st.is_tracked(lab):
                continue
            c = st.counters(lab)
            death = st.x_death[lab]
            rows.append({
                "label": f"{st.x_birth[lab][0]}:{st.x_birth[lab][1]}",
                "birth_site": st.x_birth[lab][0],
                "death_time": "inf" if death is None else repr(float(death)),
                **c,
                "final_delta": (phis[lab] - st.phi0[lab]) if lab in phis else "",
            })
        return rows

    def write_counters(self, path):
        rows = self.counter_rows()
        cols = ["label", "birth_site", "death_time", "delta_a", "delta_b", "delta_c_ass",
                "delta_c_non", "final_delta"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)


class _Current:
    def __init__(self, sys):
        self.sys = sys

    def occ(self, c, site):
        return self.sys.occupancy(c, site)


def update_windows(tracker: DiscrepancyTracker, now: float, sys=None):
    """Bring windows up to time ``now``: timeouts at S+1 and closures by empty-site Harris events."""
    tracker._advance(now, _Current(sys or tracker.sys))
    tracker.state.time = max(tracker.state.time, now)


def snapshot_region(st: LabelState, region) -> dict:
    """Keys of the labels in a site range, taken before a rule is applied."""
    lo, hi = region
    xs = st.x_in(lo, hi)
    ys = st.y_in(lo, hi)
    return {
        "x": {lab: st.key(lab) for lab in xs},
        "y": {lab: st.y_site[lab] for lab in ys},
        "region": region,
    }


def _wkey(w: int) -> int:
    return 2 * w


def _ykey(y: int) -> int:
    return 2 * y + 1


def audit_counters(st: LabelState, snap: dict, info: dict, big: bool):
    """Credit counters for relations that changed in the touched region.

    A label Z is credited to X (once) when its contribution to phi_tilde(X), relative to
    time 0, first reaches +1; the class is (b) when X made the big jump itself, (a) for
    other big jumps and (c) for short jumps.  Credits never exceed the growth of
    phi_tilde, so Delta <= a + b + c holds by construction and is re-checked by the audit.
    """
    lo, hi = snap["region"]
    lo = min(lo, info["region"][0])
    hi = max(hi, info["region"][1])
    post_x = {lab: st.key(lab) for lab in st.x_in(lo, hi)}
    post_y = {lab: st.y_site[lab] for lab in st.y_in(lo, hi)}
    pre_x, pre_y = snap["x"], snap["y"]
    moved_x = set(info["x_moved"])
    xs_all = set(pre_x) | set(post_x)
    ys_all = set(pre_y) | set(post_y)

    def give(X, zkey, cls):
        if zkey in st.credited[X]:
            return
        st.credited[X].add(zkey)
        if cls == "a":
            st.cnt_a[X] += 1
        elif cls == "b":
            st.cnt_b[X] += 1
        else:
            st.c_credit[X].append(zkey)

    for X in sorted(post_x):
        if not st.is_tracked(X):
            continue
        kx = post_x[X]
        cls = ("b" if X in moved_x else "a") if big else "c"
        x0 = st.key0[X]
        for W in sorted(xs_all):
            if W == X:
                continue
            kw = post_x.get(W)
            c_post = 1 if (kw is not None and kw > kx) else 0
            c0 = 1 if st.key0[W] > x0 else 0
            if c_post - c0 == 1:
                give(X, _wkey(W), cls)
        for Y in sorted(ys_all):
            sy = post_y.get(Y)
            c_post = -1 if (sy is not None and sy > kx[0]) else 0
            c0 = -1 if st.y_birth[Y][0] > x0[0] else 0
            if c_post - c0 == 1:
                give(X, _ykey(Y), cls)
    # a dead 2/1 label stops counting against every x-label on its left
    for Y in info["y_dead"]:
        s_pre = pre_y[Y]
        for t in list(st.pos12.irange(None, s_pre - 1)):
            for X in st.site_x[t]:
                if X in post_x or not st.is_tracked(X):
                    continue
                if st.y_birth[Y][0] > st.key0[X][0]:
                    give(X, _ykey(Y), "a" if big else "c")


def check_consistency(st: LabelState, eta1, eta2, lo: int | None = None) -> ConsistencyReport:
    """Verify the label invariants against the two configurations.

    ``eta1``/``eta2`` are Configurations, or occupancy arrays starting at site ``lo``.
    """
    rep = ConsistencyReport()
    if isinstance(eta1, Configuration):
        sites = sorted(set(eta1.sites()) | set(eta2.sites()))
        diff = {s: eta1[s] - eta2[s] for s in sites if eta1[s] != eta2[s]}
    else:
        dv = np.asarray(eta1) - np.asarray(eta2)
        nz = np.nonzero(dv)[0]
        diff = dict(zip((nz + lo).tolist(), dv[nz].tolist()))
    if diff != st.d:
        bad = sorted(set(diff.items()) ^ set(st.d.items()))[:3]
        rep.fail("difference", f"tracked differences disagree with the copies near {bad}")
    for s, v in st.d.items():
        nx = len(st.site_x.get(s, ()))
        ny = len(st.site_y.get(s, ()))
        if nx != max(v, 0) or ny != max(-v, 0):
            rep.fail("condition3", f"site {s}: d={v} but {nx} x-labels and {ny} y-labels")
        if nx and ny:
            rep.fail("exclusivity", f"site {s} hosts both label types")
    for s in set(st.site_x) | set(st.site_y):
        if s not in st.d:
            rep.fail("condition3", f"labels at site {s} with no discrepancy")
    for s, lst in st.site_x.items():
        for lab in lst:
            if st.x_site[lab] != s:
                rep.fail("condition3", f"x-label {st.x_birth[lab]} listed at {s} but positioned at {st.x_site[lab]}")
    for s, lst in st.site_y.items():
        for lab in lst:
            if st.y_site[lab] != s:
                rep.fail("condition3", f"y-label {st.y_birth[lab]} listed at {s} but positioned at {st.y_site[lab]}")
    for lab, s in enumerate(st.x_site):
        if (s is None) != (st.x_death[lab] is not None):
            rep.fail("condition2", f"x-label {st.x_birth[lab]} graveyard state inconsistent")
    for lab, s in enumerate(st.y_site):
        if (s is None) != (st.y_death[lab] is not None):
            rep.fail("condition2", f"y-label {st.y_birth[lab]} graveyard state inconsistent")
    # order: explicit list must be the site lists concatenated in spatial order
    expect = []
    for s in sorted(st.site_x):
        expect.extend(st.site_x[s])
    if expect != st.order:
        rep.fail("order", "order of x-labels does not respect spatial positions")
    prev = -math.inf
    for lab in st.order:
        s = st.x_site[lab]
        if s is None or s < prev:
            rep.fail("order", f"x-label {st.x_birth[lab]} out of spatial order")
            break
        prev = s
    npos = sum(v for v in st.d.values() if v > 0)
    nneg = sum(-v for v in st.d.values() if v < 0)
    if len(st.order) != npos or len(st.live_y()) != nneg:
        rep.fail("condition3", f"live label counts {len(st.order)}/{len(st.live_y())} vs {npos}/{nneg}")
    return rep

"""Macroscopic flux estimation and the scalar conservation law u_t + G(u)_x = 0.

The flux is a piecewise-linear table; Riemann problems are solved exactly with
convex/concave envelopes of that table and the PDE with a first-order Godunov
scheme built on the same exact Riemann flux.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from macrostab import _engine as eng
from macrostab.model import Configuration, JumpKernel, RateTable, lipschitz_bound
from macrostab.rng import UniformStream, as_seed_sequence, substream, INIT, PARTICLES


class DensityInfeasible(ValueError):
    pass


class CFLViolation(ValueError):
    pass


@dataclass(frozen=True)
class FluxTable:
    grid: np.ndarray
    values: np.ndarray
    V: float
    stderr: np.ndarray | None = None
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or g.size < 2:
            raise ValueError("flux grid and values must be 1-d of equal length >= 2")
        if not np.all(np.diff(g) > 0):
            raise ValueError("flux grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        se = np.zeros_like(g) if self.stderr is None else np.asarray(self.stderr, dtype=float)
        object.__setattr__(self, "stderr", se)
        prov = self.provenance or ("analytic",) * g.size
        object.__setattr__(self, "provenance", tuple(prov))
        object.__setattr__(self, "_st", _SparseTable(v))

    @classmethod
    def from_function(cls, G, K: float = 1.0, n: int = 1001, V: float | None = None) -> "FluxTable":
        grid = np.linspace(0.0, K, n)
        vals = np.array([G(u) for u in grid], dtype=float)
        if V is None:
            V = float(np.abs(np.diff(vals) / np.diff(grid)).max())
        return cls(grid, vals, V)

    @property
    def K(self) -> float:
        return float(self.grid[-1])

    def __call__(self, u):
        return np.interp(u, self.grid, self.values)

    def empirical_lipschitz(self) -> float:
        return float(np.abs(np.diff(self.values) / np.diff(self.grid)).max())

    def range_min(self, ul, ur):
        return _range_extreme(self, ul, ur, lower=True)

    def range_max(self, ul, ur):
        return _range_extreme(self, ul, ur, lower=False)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rho", "G", "stderr", "provenance"])
            for r, g, s, p in zip(self.grid, self.values, self.stderr, self.provenance):
                w.writerow([repr(float(r)), repr(float(g)), repr(float(s)), p])

    @classmethod
    def read_csv(cls, path, V: float | None = None) -> "FluxTable":
        rows = list(csv.DictReader(open(path, newline="")))
        g = np.array([float(r["rho"]) for r in rows])
        v = np.array([float(r["G"]) for r in rows])
        s = np.array([float(r.get("stderr") or 0.0) for r in rows])
        p = tuple(r.get("provenance") or "analytic" for r in rows)
        if V is None:
            V = float(np.abs(np.diff(v) / np.diff(g)).max())
        return cls(g, v, V, s, p)


class _SparseTable:
    """O(1) range min/max over the table nodes."""

    def __init__(self, v: np.ndarray):
        self.mins = [v.copy()]
        self.maxs = [v.copy()]
        k = 1
        while 2 * k <= v.size:
            pm, pM = self.mins[-1], self.maxs[-1]
            self.mins.append(np.minimum(pm[:-k], pm[k:]))
            self.maxs.append(np.maximum(pM[:-k], pM[k:]))
            k *= 2

    def query(self, i, j, lower: bool):
        """Extreme of v[i..j] inclusive (vectorised); requires i <= j."""
        n = j - i + 1
        lvl = np.floor(np.log2(np.maximum(n, 1))).astype(np.int64)
        out = np.empty(np.shape(i))
        tabs = self.mins if lower else self.maxs
        for L in np.unique(lvl):
            m = lvl == L
            t = tabs[L]
            a = t[i[m]]
            b = t[j[m] - (1 << L) + 1]
            out[m] = np.minimum(a, b) if lower else np.maximum(a, b)
        return out


def _range_extreme(G: FluxTable, a, b, lower: bool):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ends = np.stack([G(lo), G(hi)])
    res = ends.min(axis=0) if lower else ends.max(axis=0)
    # interior nodes strictly inside (lo, hi)
    i = np.searchsorted(G.grid, lo, side="right")
    j = np.searchsorted(G.grid, hi, side="left") - 1
    has = i <= j
    if has.any():
        inner = G._st.query(i[has], j[has], lower)
        res[has] = np.minimum(res[has], inner) if lower else np.maximum(res[has], inner)
    return res


def godunov_flux(G: FluxTable, u_l, u_r):
    """min of G over [u_l, u_r] if u_l <= u_r, else max over [u_r, u_l]."""
    ul = np.atleast_1d(np.asarray(u_l, dtype=float))
    ur = np.atleast_1d(np.asarray(u_r, dtype=float))
    mn = _range_extreme(G, ul, ur, lower=True)
    mx = _range_extreme(G, ul, ur, lower=False)
    out = np.where(ul <= ur, mn, mx)
    return float(out[0]) if np.ndim(u_l) == 0 and np.ndim(u_r) == 0 else out


def _hull(us: np.ndarray, gs: np.ndarray, lower: bool) -> np.ndarray:
    """Indices of the lower convex (or upper concave) envelope of points sorted by u."""
    idx: list[int] = []
    sgn = 1.0 if lower else -1.0
    for k in range(us.size):
        while len(idx) >= 2:
            i, j = idx[-2], idx[-1]
            cross = (us[j] - us[i]) * (gs[k] - gs[i]) - (gs[j] - gs[i]) * (us[k] - us[i])
            if sgn * cross <= 0:
                idx.pop()
            else:
                break
        idx.append(k)
    return np.array(idx, dtype=np.int64)


def riemann_fan(G: FluxTable, u_l: float, u_r: float) -> tuple[np.ndarray, np.ndarray]:
    """Envelope nodes ordered from u_l to u_r and the nondecreasing wave speeds between them."""
    if u_l == u_r:
        return np.array([u_l]), np.zeros(0)
    lo, hi = min(u_l, u_r), max(u_l, u_r)
    inner = G.grid[(G.grid > lo) & (G.grid < hi)]
    us = np.concatenate([[lo], inner, [hi]])
    gs = G(us)
    h = _hull(us, gs, lower=u_l < u_r)
    nodes, vals = us[h], gs[h]
    if u_l > u_r:
        nodes, vals = nodes[::-1], vals[::-1]
    speeds = np.diff(vals) / np.diff(nodes)
    return nodes, speeds


def riemann(G: FluxTable, u_l: float, u_r: float, xi):
    """Entropy solution of the Riemann problem at x/t = xi (right state on a wave)."""
    nodes, speeds = riemann_fan(G, u_l, u_r)
    k = np.searchsorted(speeds, np.asarray(xi, dtype=float), side="right")
    out = nodes[k]
    return float(out) if np.ndim(xi) == 0 else out


@dataclass(frozen=True)
class Profile:
    """Piecewise-constant density: ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``.

    Outside the breakpoints the profile extends by its end values.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if bp.ndim != 1 or v.ndim != 1 or bp.size != v.size + 1 or v.size < 1:
            raise ValueError("need len(breakpoints) == len(values) + 1 >= 2")
        if not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if (v < 0).any():
            raise ValueError("densities must be nonnegative")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    @classmethod
    def riemann_data(cls, u_l: float, u_r: float, x0: float = 0.0, width: float = 1.0) -> "Profile":
        return cls(np.array([x0 - width, x0, x0 + width]), np.array([u_l, u_r]))

    @classmethod
    def from_function(cls, f, a: float, b: float, n: int) -> "Profile":
        bp = np.linspace(a, b, n + 1)
        mid = 0.5 * (bp[1:] + bp[:-1])
        return cls(bp, np.asarray(f(mid), dtype=float))

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.values.size - 1)
        return self.values[i]

    def cumulative(self, x):
        """Integral of the profile from the left end of the domain to x (extension included)."""
        x = np.asarray(x, dtype=float)
        bp, v = self.breakpoints, self.values
        F = np.concatenate([[0.0], np.cumsum(v * np.diff(bp))])
        i = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, v.size - 1)
        return F[i] + v[i] * (x - bp[i])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["left", "right", "value"])
            for a, b, v in zip(self.breakpoints[:-1], self.breakpoints[1:], self.values):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])

    @classmethod
    def read_csv(cls, path) -> "Profile":
        rows = list(csv.DictReader(open(path, newline="")))
        bp = [float(r["left"]) for r in rows] + [float(rows[-1]["right"])]
        return cls(np.array(bp), np.array([float(r["value"]) for r in rows]))


def cell_averages(u: Profile, edges: np.ndarray) -> np.ndarray:
    F = u.cumulative(edges)
    return np.diff(F) / np.diff(edges)


def evolve_pde(u0: Profile, G: FluxTable, t: float, dx: float, cfl: float = 0.5,
               dt: float | None = None, V: float | None = None, domain=None) -> Profile:
    """First-order Godunov scheme to time t with constant extension at both ends."""
    if dx <= 0:
        raise ValueError("dx must be positive")
    V = G.V if V is None else V
    speed = max(V, 1e-12)
    if dt is None:
        dt = cfl * dx / speed
    elif dt * V / dx > 1.0:
        raise CFLViolation(f"dt*V/dx = {dt * V / dx:.3g} > 1")
    a, b = u0.domain if domain is None else domain
    buf = V * t + 2 * dx
    lo = math.floor((a - buf) / dx) * dx
    ncell = int(math.ceil((b + buf - lo) / dx))
    edges = lo + dx * np.arange(ncell + 1)
    u = cell_averages(u0, edges)
    if t <= 0:
        return Profile(edges, u)
    nsteps = max(1, int(math.ceil(t / dt - 1e-12)))
    dt = t / nsteps
    lam = dt / dx
    for _ in range(nsteps):
        ext = np.concatenate([[u[0]], u, [u[-1]]])
        F = godunov_flux(G, ext[:-1], ext[1:])
        u = u - lam * (F[1:] - F[:-1])
    return Profile(edges, u)


def step_approximation(u: Profile, dx_macro: float, K: float | None = None) -> Profile:
    """Cell averages of u on the uniform grid of spacing dx_macro covering its domain."""
    if dx_macro <= 0:
        raise ValueError("dx_macro must be positive")
    a, b = u.domain
    i0 = math.floor(a / dx_macro + 1e-12)
    i1 = math.ceil(b / dx_macro - 1e-12)
    edges = dx_macro * np.arange(i0, max(i1, i0 + 1) + 1)
    vals = cell_averages(u, edges)
    top = float(u.values.max()) if K is None else K
    return Profile(edges, np.clip(vals, 0.0, top))


def profile_delta(u: Profile, v: Profile, window=None) -> float:
    """sup_x |int_{a}^{x} u - int_{a}^{x} v| over [a, b] (default: union of both domains)."""
    if window is None:
        a = min(u.domain[0], v.domain[0])
        b = max(u.domain[1], v.domain[1])
    else:
        a, b = window
    pts = np.concatenate([u.breakpoints, v.breakpoints, [a, b]])
    pts = np.unique(pts[(pts >= a) & (pts <= b)])
    d = (u.cumulative(pts) - u.cumulative(a)) - (v.cumulative(pts) - v.cumulative(a))
    return float(np.abs(d).max())


def l1_distance(u: Profile, v: Profile, window) -> float:
    """Exact L1 distance of two piecewise-constant profiles on a window."""
    a, b = window
    pts = np.concatenate([u.breakpoints, v.breakpoints, [a, b]])
    pts = np.unique(pts[(pts >= a) & (pts <= b)])
    mid = 0.5 * (pts[1:] + pts[:-1])
    return float(np.sum(np.abs(u(mid) - v(mid)) * np.diff(pts)))


# flux estimation ------------------------------------------------------------

def current_support(kernel: JumpKernel, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    return kernel.truncated(tol)


def instantaneous_current(eta: np.ndarray, kernel: JumpKernel, rates: RateTable) -> float:
    """Site average of sum_z z p(z) b(eta(x), eta(x+z)) on a ring."""
    zj, wj = current_support(kernel)
    return eng.ring_current(np.asarray(eta, dtype=np.int64), np.ascontiguousarray(rates.b),
                            zj, wj) / len(eta)


def estimate_flux(kernel: JumpKernel, rates: RateTable, rho: float, ring_size: int,
                  t_burn: float | None = None, t_avg: float | None = None, seed=None,
                  batches: int = 50) -> tuple[float, float]:
    """Long-run ring average of the instantaneous current at particle number floor(rho*S)."""
    S = int(ring_size)
    K = rates.K
    n = int(math.floor(rho * S + 1e-9))
    if n > K * S or n < 0:
        raise DensityInfeasible(f"floor(rho*S) = {n} particles do not fit on {S} sites with K={K}")
    t_burn = 50.0 * S if t_burn is None else float(t_burn)
    t_avg = 200.0 * S if t_avg is None else float(t_avg)
    ss = as_seed_sequence(seed)
    init = np.random.default_rng(substream(ss, INIT))
    # uniformly shuffled placement of n particles into K*S slots
    slots = init.permutation(K * S)[:n]
    eta = np.bincount(slots // K, minlength=S).astype(np.int64)
    if n == 0 or rates.b_max == 0:
        return 0.0, 0.0
    zs, cdf, tp = kernel.sampler_arrays
    zj, wj = current_support(kernel)
    b = np.ascontiguousarray(rates.b)
    occ = eta.reshape(1, S).copy()
    J = eng.ring_current(occ[0], b, zj, wj)
    edges = t_burn + t_avg * np.arange(batches + 1) / batches
    acc = np.zeros(batches)
    stamp = np.zeros(S, dtype=np.int64)
    stream = UniformStream(substream(ss, PARTICLES))
    st = np.array([0.0, 0.0, J, 0.0, 0.0])
    t_end = float(edges[-1])
    while True:
        st[1] = stream.pos
        status = eng.run_ring_flux(occ, b, rates.b_max, K, zs, cdf, tp, zj, wj, stream.buf, st,
                                   t_end, edges, acc, stamp)
        stream.pos = int(st[1])
        if status == eng.NEED_RNG:
            stream.refill()
        else:
            break
    means = acc / np.diff(edges)
    G = float(means.mean())
    se = float(means.std(ddof=1) / math.sqrt(batches)) if batches > 1 else 0.0
    return G, se


def build_flux_table(kernel: JumpKernel, rates: RateTable, n_points: int = 33, ring_size: int = 400,
                     t_burn: float | None = None, t_avg: float | None = None, seed=None) -> FluxTable:
    """Estimated flux on a uniform density grid over [0, K]; endpoints are exactly 0."""
    K = rates.K
    grid = np.linspace(0.0, K, n_points)
    vals, ses, prov = [], [], []
    ss = as_seed_sequence(seed)
    for i, rho in enumerate(grid):
        if i == 0 or i == n_points - 1:
            vals.append(0.0)
            ses.append(0.0)
            prov.append("analytic")
            continue
        g, s = estimate_flux(kernel, rates, float(rho), ring_size, t_burn, t_avg,
                             seed=np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (100 + i,)))
        vals.append(g)
        ses.append(s)
        prov.append("estimated")
    return FluxTable(grid, np.array(vals), lipschitz_bound(rates, kernel), np.array(ses), tuple(prov))


def exclusion_flux(kernel: JumpKernel, rates: RateTable, n: int = 1001) -> FluxTable | None:
    """Closed-form flux for K = 1: product Bernoulli measures are invariant, G = b(1,0) mu u(1-u)."""
    if rates.K != 1:
        return None
    c = rates.b[1, 0] * kernel.mu
    grid = np.linspace(0.0, 1.0, n)
    return FluxTable(grid, c * grid * (1 - grid), lipschitz_bound(rates, kernel))

"""Empirical measures on scale N, the sup-CDF distance and the right-tail sums Phi."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from macrostab.model import Configuration


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Atoms ``counts[i]/N`` at ``sites[i]/N``; stored as integers so comparisons are exact."""

    sites: np.ndarray
    counts: np.ndarray
    N: int

    @property
    def locations(self) -> np.ndarray:
        return self.sites / self.N

    @property
    def masses(self) -> np.ndarray:
        return self.counts / self.N

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.masses.tolist()))

    @property
    def total_mass(self) -> float:
        return float(self.counts.sum()) / self.N

    def integrate(self, psi) -> float:
        """Integral of a test function against the measure."""
        if self.sites.size == 0:
            return 0.0
        return float(np.dot(np.asarray(psi(self.locations), dtype=float), self.masses))


def empirical_measure(eta: Configuration, N: int) -> EmpiricalMeasure:
    if N < 1:
        raise ValueError("scale N must be >= 1")
    items = eta.items()
    sites = np.array([x for x, _ in items], dtype=np.int64)
    counts = np.array([v for _, v in items], dtype=np.int64)
    return EmpiricalMeasure(sites, counts, int(N))


def measure_from_arrays(occ: np.ndarray, lo: int, N: int) -> EmpiricalMeasure:
    nz = np.nonzero(occ)[0]
    return EmpiricalMeasure(nz + lo, occ[nz].astype(np.int64), int(N))


def _cdf_gap(alpha: EmpiricalMeasure, beta: EmpiricalMeasure) -> tuple[int, int]:
    """Max |difference of cumulative counts| over the merged breakpoints, and the common scale."""
    if alpha.N == beta.N:
        locs = np.concatenate([alpha.sites, beta.sites])
        w = np.concatenate([alpha.counts, -beta.counts])
        if locs.size == 0:
            return 0, alpha.N
        order = np.argsort(locs, kind="stable")
        locs, w = locs[order], w[order]
        cum = np.cumsum(w)
        # the cumulative only counts once all atoms at a location are included
        last = np.r_[locs[1:] != locs[:-1], True]
        return int(np.abs(cum[last]).max()), alpha.N
    raise ValueError("different scales")


def delta_distance(alpha: EmpiricalMeasure, beta: EmpiricalMeasure) -> float:
    """sup_x |alpha((-inf, x]) - beta((-inf, x])|, exact over the merged atom locations."""
    if alpha.N == beta.N:
        gap, N = _cdf_gap(alpha, beta)
        return gap / N
    # different scales: exact rational sweep
    la = [(Fraction(int(s), alpha.N), Fraction(int(c), alpha.N)) for s, c in zip(alpha.sites, alpha.counts)]
    lb = [(Fraction(int(s), beta.N), -Fraction(int(c), beta.N)) for s, c in zip(beta.sites, beta.counts)]
    acc = {}
    for loc, m in la + lb:
        acc[loc] = acc.get(loc, 0) + m
    run, best = Fraction(0), Fraction(0)
    for loc in sorted(acc):
        run += acc[loc]
        best = max(best, abs(run))
    return float(best)


def _diff_arrays(eta1: Configuration, eta2: Configuration) -> tuple[np.ndarray, int]:
    h1, h2 = eta1.hull(), eta2.hull()
    hs = [h for h in (h1, h2) if h is not None]
    if not hs:
        return np.zeros(0, dtype=np.int64), 0
    lo, hi = min(h[0] for h in hs), max(h[1] for h in hs)
    a1, _ = eta1.to_array(lo, hi)
    a2, _ = eta2.to_array(lo, hi)
    return a1 - a2, lo


def phi(eta1: Configuration, eta2: Configuration, x: int) -> int:
    """Phi(x) = sum over y >= x of eta1(y) - eta2(y)."""
    return sum(v for y, v in eta1.items() if y >= x) - sum(v for y, v in eta2.items() if y >= x)


def phi_profile(diff: np.ndarray) -> np.ndarray:
    """Right cumulative sums of a difference array: out[i] = sum(diff[i:]); out has one extra 0."""
    out = np.zeros(diff.size + 1, dtype=np.int64)
    out[:-1] = np.cumsum(diff[::-1])[::-1]
    return out


def sup_phi_arrays(diff: np.ndarray, lo: int) -> tuple[int, int | None]:
    """sup_x Phi(x) for a difference array starting at site ``lo``; leftmost argmax.

    Phi equals the total for x left of the array and 0 right of it, so the range
    [lo, lo + len] covers every value.
    """
    if diff.size == 0:
        return 0, None
    prof = phi_profile(diff)
    i = int(np.argmax(prof))
    return int(prof[i]), lo + i


def sup_phi(eta1: Configuration, eta2: Configuration) -> tuple[int, int | None]:
    """(sup_x Phi(x), leftmost maximiser); the maximiser is None when both are empty."""
    diff, lo = _diff_arrays(eta1, eta2)
    return sup_phi_arrays(diff, lo)


def sup_abs_phi(eta1: Configuration, eta2: Configuration) -> int:
    diff, _ = _diff_arrays(eta1, eta2)
    if diff.size == 0:
        return 0
    return int(np.abs(phi_profile(diff)).max())


def max_interval_sum(diff: np.ndarray) -> int:
    """max over intervals I of |sum_{y in I} diff(y)|, via prefix sums."""
    if diff.size == 0:
        return 0
    pre = np.concatenate([[0], np.cumsum(diff)])
    return int(pre.max() - pre.min())

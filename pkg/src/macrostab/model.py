"""Jump kernels, misanthrope rate tables, configurations and derived constants.

A model is a translation-invariant jump kernel ``p`` on the integers together
with a rate table ``b(i, j)`` on ``{0..K}^2``; a particle jumps from ``x`` to
``y`` at rate ``p(y - x) * b(eta(x), eta(y))``.

Config file schema (TOML)::

    [kernel]
    # displacement -> mass; masses are decimal or fraction strings
    finite = { "1" = "2/3", "-1" = "1/3" }

    [[kernel.tail]]          # optional, at most one per sign
    start = 2                # first displacement of the tail, >= 1
    mass = "0.25"            # total tail mass
    ratio = "0.5"            # geometric ratio in (0, 1)
    sign = 1                 # +1 (tail to +inf) or -1 (tail to -inf)

    [rates]
    K = 1
    b = [["0", "0"], ["1", "0"]]    # b[i][j], (K+1) x (K+1)

    [run]                    # optional experiment defaults
    eps = 0.1
    seed = 1
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

PROB_TOL = 1e-12


class ModelError(ValueError):
    """Base class for invalid model definitions."""


class NonStochastic(ModelError):
    pass


class EmptySupport(ModelError):
    pass


class TailTooHeavy(ModelError):
    pass


@dataclass(frozen=True)
class GeometricTail:
    """Geometric tail ``p(sign*(start + k)) = mass * (1 - ratio) * ratio**k``, k >= 0."""

    start: int
    mass: float
    ratio: float
    sign: int = 1

    def __post_init__(self):
        if self.start < 1:
            raise ModelError(f"tail start must be >= 1, got {self.start}")
        if not 0.0 < self.ratio < 1.0:
            raise ModelError(f"tail ratio must lie in (0, 1), got {self.ratio}")
        if self.mass < 0:
            raise ModelError(f"tail mass must be nonnegative, got {self.mass}")
        if self.sign not in (1, -1):
            raise ModelError(f"tail sign must be +1 or -1, got {self.sign}")

    def atom(self, k: int) -> float:
        return self.mass * (1.0 - self.ratio) * self.ratio**k

    def abs_moment(self, m: int) -> float:
        """E|Z|^m restricted to the tail (times its mass), in closed form."""
        r = self.ratio
        # raw moments of k ~ Geometric(r) on {0, 1, ...}
        ek = [1.0, r / (1 - r), r * (1 + r) / (1 - r) ** 2, r * (1 + 4 * r + r * r) / (1 - r) ** 3]
        z0 = self.start
        total = sum(math.comb(m, j) * z0 ** (m - j) * ek[j] for j in range(m + 1))
        return self.mass * total

    def first_moment_beyond(self, m: int) -> float:
        """Sum over |w| >= m of |w| p(w) for this tail."""
        k0 = max(0, m - self.start)
        r = self.ratio
        return self.mass * r**k0 * (self.start + k0 + r / (1 - r))

    def mass_beyond(self, m: int) -> float:
        """Sum over |w| >= m of p(w) for this tail."""
        k0 = max(0, m - self.start)
        return self.mass * self.ratio**k0

    def expected_min(self, c: int) -> float:
        """Sum over the tail of p(w) * min(|w|, c)."""
        if c <= 0:
            return 0.0
        r, z0 = self.ratio, self.start
        if c <= z0:
            return self.mass * c
        return self.mass * (z0 + r * (1 - r ** (c - z0)) / (1 - r))


def _as_float(value) -> float:
    if isinstance(value, str):
        return float(Fraction(value.strip()))
    return float(value)


@dataclass(frozen=True)
class JumpKernel:
    """Displacement law: explicit finite atoms plus optional geometric tails."""

    finite: Mapping[int, float]
    tails: tuple[GeometricTail, ...] = ()

    def __post_init__(self):
        finite = {int(z): float(m) for z, m in dict(self.finite).items() if float(m) != 0.0}
        object.__setattr__(self, "finite", MappingProxyType(dict(sorted(finite.items()))))
        object.__setattr__(self, "tails", tuple(t for t in self.tails if t.mass > 0))
        if not self.finite and not self.tails:
            raise EmptySupport("jump kernel has no support")
        if 0 in self.finite:
            raise ModelError("p(0) must be zero: a jump needs a distinct destination")
        if any(m < 0 for m in self.finite.values()):
            raise ModelError("kernel masses must be nonnegative")
        signs = [t.sign for t in self.tails]
        if len(set(signs)) != len(signs):
            raise ModelError("at most one geometric tail per sign")
        for t in self.tails:
            clash = [z for z in self.finite if z * t.sign >= t.start]
            if clash:
                raise ModelError(f"finite atoms {clash} overlap the tail starting at {t.sign * t.start}")
        total = sum(self.finite.values()) + sum(t.mass for t in self.tails)
        if abs(total - 1.0) > PROB_TOL:
            raise NonStochastic(f"kernel masses sum to {total!r}, not 1")

    def __reduce__(self):
        return (JumpKernel, (dict(self.finite), self.tails))

    @classmethod
    def from_dict(cls, finite: Mapping, tails=()) -> "JumpKernel":
        fin = {int(z): _as_float(m) for z, m in finite.items()}
        tl = tuple(
            GeometricTail(
                start=int(t["start"]),
                mass=_as_float(t["mass"]),
                ratio=_as_float(t["ratio"]),
                sign=int(t.get("sign", 1)),
            )
            for t in tails
        )
        return cls(fin, tl)

    def to_dict(self) -> dict:
        return {
            "finite": {str(z): repr(m) for z, m in self.finite.items()},
            "tail": [
                {"start": t.start, "mass": repr(t.mass), "ratio": repr(t.ratio), "sign": t.sign}
                for t in self.tails
            ],
        }

    def tail(self, sign: int) -> GeometricTail | None:
        for t in self.tails:
            if t.sign == sign:
                return t
        return None

    def mass(self, z: int) -> float:
        z = int(z)
        if z in self.finite:
            return self.finite[z]
        t = self.tail(1 if z > 0 else -1)
        if t is not None and abs(z) >= t.start:
            return t.atom(abs(z) - t.start)
        return 0.0

    @property
    def has_tail(self) -> bool:
        return bool(self.tails)

    @property
    def radius(self) -> float:
        """Largest |z| in the support (inf with a tail)."""
        if self.tails:
            return math.inf
        return max(abs(z) for z in self.finite)

    def _moment(self, m: int, signed: bool) -> float:
        total = 0.0
        for z, w in self.finite.items():
            total += (z**m if signed else abs(z) ** m) * w
        for t in self.tails:
            s = t.sign**m if signed else 1
            total += s * t.abs_moment(m)
        return total

    @cached_property
    def mu(self) -> float:
        return self._moment(1, signed=True)

    @cached_property
    def mu1(self) -> float:
        return self._moment(1, signed=False)

    @cached_property
    def mu2(self) -> float:
        return self._moment(2, signed=False)

    @cached_property
    def mu3(self) -> float:
        return self._moment(3, signed=False)

    def support_upto(self, n: int) -> list[int]:
        """Support points with |z| <= n, ascending."""
        pts = [z for z in self.finite if abs(z) <= n]
        for t in self.tails:
            pts.extend(t.sign * k for k in range(t.start, n + 1))
        return sorted(pts)

    def gcd(self) -> int:
        g = 0
        for z in self.finite:
            g = math.gcd(g, abs(z))
        for t in self.tails:
            g = math.gcd(g, t.start)
            g = math.gcd(g, t.start + 1)
        return g

    def first_moment_beyond(self, m: int) -> float:
        """Sum over w >= m of w (p(w) + p(-w))."""
        total = sum(abs(z) * w for z, w in self.finite.items() if abs(z) >= m)
        return total + sum(t.first_moment_beyond(m) for t in self.tails)

    def mass_beyond(self, m: int, sign: int = 0) -> float:
        """P(|Z| >= m), or P(sign*Z >= m) when sign is +-1."""
        total = sum(w for z, w in self.finite.items() if abs(z) >= m and (sign == 0 or z * sign > 0))
        return total + sum(t.mass_beyond(m) for t in self.tails if sign in (0, t.sign))

    def expected_min_abs(self, c: int) -> float:
        """E[min(|Z|, c)]."""
        total = sum(min(abs(z), c) * w for z, w in self.finite.items())
        return total + sum(t.expected_min(c) for t in self.tails)

    def truncated(self, cutoff_mass: float = 1e-16) -> tuple[np.ndarray, np.ndarray]:
        """Explicit (displacements, masses) with tails cut where remaining first moment < cutoff_mass."""
        zs = dict(self.finite)
        for t in self.tails:
            k = 0
            while t.first_moment_beyond(t.start + k) >= cutoff_mass:
                zs[t.sign * (t.start + k)] = t.atom(k)
                k += 1
        items = sorted(zs.items())
        return np.array([z for z, _ in items], dtype=np.int64), np.array([w for _, w in items])

    @cached_property
    def sampler_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays for the inverse-CDF sampler: finite atoms, their CDF upper ends, tail params.

        Tail params are ``(q_neg, r_neg, s_neg, q_pos, r_pos, s_pos)``; the CDF runs over the
        support in ascending order, so the negative tail covers ``[0, q_neg)``.
        """
        neg, pos = self.tail(-1), self.tail(1)
        qn = neg.mass if neg else 0.0
        zs = np.array(list(self.finite.keys()), dtype=np.int64)
        cdf = qn + np.cumsum(np.array(list(self.finite.values()), dtype=np.float64))
        params = np.array(
            [
                qn,
                neg.ratio if neg else 0.5,
                neg.start if neg else 1,
                pos.mass if pos else 0.0,
                pos.ratio if pos else 0.5,
                pos.start if pos else 1,
            ],
            dtype=np.float64,
        )
        return zs, cdf, params


def sample_displacement(kernel: JumpKernel, u01: float) -> int:
    """Deterministic inverse-CDF map from ``[0, 1)`` to the support of ``kernel``."""
    from macrostab._engine import sample_disp

    zs, cdf, params = kernel.sampler_arrays
    return int(sample_disp(float(u01), zs, cdf, params))


@dataclass(frozen=True)
class RateTable:
    """Misanthrope jump rate ``b(i, j)`` on ``{0..K}^2``."""

    b: np.ndarray

    def __post_init__(self):
        arr = np.array(self.b, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
            raise ModelError(f"rate table must be (K+1)x(K+1) with K >= 1, got shape {arr.shape}")
        if (arr < 0).any():
            raise ModelError("rates must be nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "b", arr)

    @classmethod
    def from_nested(cls, rows) -> "RateTable":
        return cls(np.array([[_as_float(v) for v in row] for row in rows]))

    @classmethod
    def exclusion(cls) -> "RateTable":
        return cls(np.array([[0.0, 0.0], [1.0, 0.0]]))

    @property
    def K(self) -> int:
        return self.b.shape[0] - 1

    @property
    def b_max(self) -> float:
        return float(self.b.max())

    def __call__(self, i: int, j: int) -> float:
        return float(self.b[i, j])

    def __eq__(self, other):
        return isinstance(other, RateTable) and np.array_equal(self.b, other.b)

    def __hash__(self):
        return hash(self.b.tobytes())


@dataclass
class ValidationReport:
    """Pass/fail per assumption plus the computed quantities."""

    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)
    values: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]

    def lines(self) -> list[str]:
        out = []
        for name, passed in self.checks.items():
            msg = f"{name}: {'pass' if passed else 'FAIL'}"
            if self.details.get(name):
                msg += f" ({self.details[name]})"
            out.append(msg)
        for k, v in self.values.items():
            out.append(f"{k} = {v:.12g}")
        return out


def validate_kernel(k: JumpKernel) -> ValidationReport:
    """Check irreducibility (A1) and finite first moment with positive mean (A2)."""
    if not k.finite and not k.tails:
        raise EmptySupport("jump kernel has no support")
    total = sum(k.finite.values()) + sum(t.mass for t in k.tails)
    if abs(total - 1.0) > PROB_TOL:
        raise NonStochastic(f"kernel masses sum to {total!r}, not 1")
    rep = ValidationReport()
    g = k.gcd()
    rep.checks["A1"] = g == 1
    rep.details["A1"] = f"gcd of support = {g}"
    mu1, mu = k.mu1, k.mu
    rep.checks["A2"] = math.isfinite(mu1) and mu > 0
    rep.details["A2"] = f"mu1 = {mu1:.6g}, mu = {mu:.6g}"
    rep.values.update(gcd=g, mu=mu, mu1=mu1, mu2=k.mu2, mu3=k.mu3)
    return rep


def validate_rates(r: RateTable) -> ValidationReport:
    """Check boundary conditions (A3) and attractiveness (A4); report first violating pair."""
    b, K = r.b, r.K
    rep = ValidationReport()
    bad = None
    for j in range(K + 1):
        if b[0, j] != 0:
            bad = f"b(0,{j}) = {b[0, j]:g} != 0"
            break
    if bad is None:
        for i in range(K + 1):
            if b[i, K] != 0:
                bad = f"b({i},{K}) = {b[i, K]:g} != 0"
                break
    if bad is None and not b[1, K - 1] > 0:
        bad = f"b(1,{K - 1}) = {b[1, K - 1]:g} is not positive"
    rep.checks["A3"] = bad is None
    rep.details["A3"] = bad or ""
    bad = None
    for i in range(K):
        for j in range(K + 1):
            if b[i + 1, j] < b[i, j]:
                bad = f"b({i + 1},{j}) < b({i},{j}) (decreasing in first argument)"
                break
        if bad:
            break
    if bad is None:
        for i in range(K + 1):
            for j in range(K):
                if b[i, j + 1] > b[i, j]:
                    bad = f"b({i},{j + 1}) > b({i},{j}) (increasing in second argument)"
                    break
            if bad:
                break
    rep.checks["A4"] = bad is None
    rep.details["A4"] = bad or ""
    rep.values.update(K=K, b_max=r.b_max)
    return rep


def lipschitz_bound(r: RateTable, k: JumpKernel) -> float:
    """Lipschitz bound V = 2 mu1 sup{b(a,c)-b(a,c+1), b(c+1,a)-b(c,a)} of the macroscopic flux."""
    b = r.b
    steps = np.concatenate([(b[:, :-1] - b[:, 1:]).ravel(), (b[1:, :] - b[:-1, :]).ravel()])
    return 2.0 * k.mu1 * max(float(steps.max()), 0.0)


@dataclass(frozen=True)
class DerivedConstants:
    L: float
    n: int
    M0: int
    m_eps: int
    eps: float
    V: float
    v_L: float
    outside_hypotheses: bool = False

    @property
    def window_span(self) -> int:
        """Length M0 + m_eps of an active window."""
        return self.M0 + self.m_eps


def irreducibility_cutoff(k: JumpKernel) -> int:
    """Smallest n such that the support restricted to |z| <= n has gcd 1."""
    if k.gcd() != 1:
        raise ModelError("kernel is not irreducible: no cutoff restores gcd 1")
    n = 1
    while True:
        g = 0
        for z in k.support_upto(n):
            g = math.gcd(g, abs(z))
        if g == 1:
            return n
        n += 1


def derive_constants(
    k: JumpKernel, r: RateTable, eps: float, L: float | None = None, max_scan: int = 10**7
) -> DerivedConstants:
    """Compute the spatial constant L, cutoff n, window sizes M0 and m_eps, V and v_L."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n = irreducibility_cutoff(k)
    M0 = 10 * n + 1
    bmax = r.b_max
    bound = eps / (20.0 * bmax)
    m = 10 * M0 + 1
    while k.first_moment_beyond(m) >= bound:
        m += 1
        if m > max_scan:
            raise TailTooHeavy(f"no m_eps <= {max_scan} meets the tail bound {bound:g}")
    L_min = 10.0 * (k.mu1 + 1.0)
    outside = False
    if L is None:
        L = L_min + 1.0
    elif not L > L_min:
        outside = True
        warnings.warn(
            f"L = {L:g} does not exceed 10(mu1+1) = {L_min:g}: run is outside the theorem hypotheses",
            stacklevel=2,
        )
    v_L = bmax * (k.mu1 + k.mu2) / 2.0
    return DerivedConstants(
        L=float(L), n=n, M0=M0, m_eps=m, eps=float(eps), V=lipschitz_bound(r, k), v_L=v_L,
        outside_hypotheses=outside,
    )


class Configuration:
    """Occupancy map eta: sites -> {0..K}, immutable.

    Two backends: a sparse map over Z with finitely many occupied sites, or a
    dense ring of ``ring_size`` sites.
    """

    __slots__ = ("_sparse", "_dense", "ring_size")

    def __init__(self, occupancy=None, ring_size: int | None = None, K: int | None = None):
        self.ring_size = ring_size
        if ring_size is None:
            data = {int(x): int(v) for x, v in dict(occupancy or {}).items() if int(v) != 0}
            if any(v < 0 for v in data.values()):
                raise ValueError("occupancies must be nonnegative")
            if K is not None and any(v > K for v in data.values()):
                raise ValueError(f"occupancy exceeds K={K}")
            self._sparse = MappingProxyType(dict(sorted(data.items())))
            self._dense = None
        else:
            arr = np.zeros(ring_size, dtype=np.int64)
            if occupancy is not None:
                if isinstance(occupancy, Mapping):
                    for x, v in occupancy.items():
                        arr[int(x) % ring_size] = int(v)
                else:
                    src = np.asarray(occupancy, dtype=np.int64)
                    if src.shape != (ring_size,):
                        raise ValueError(f"ring occupancy must have shape ({ring_size},)")
                    arr[:] = src
            if (arr < 0).any() or (K is not None and (arr > K).any()):
                raise ValueError("ring occupancy out of range")
            arr.setflags(write=False)
            self._dense = arr
            self._sparse = None

    @classmethod
    def ring(cls, values, K: int | None = None) -> "Configuration":
        values = np.asarray(values, dtype=np.int64)
        return cls(values, ring_size=len(values), K=K)

    @classmethod
    def from_array(cls, values, lo: int = 0, K: int | None = None) -> "Configuration":
        """SparseLine configuration with ``values[i]`` particles at site ``lo + i``."""
        values = np.asarray(values, dtype=np.int64)
        nz = np.nonzero(values)[0]
        return cls({int(lo + i): int(values[i]) for i in nz}, K=K)

    @property
    def is_ring(self) -> bool:
        return self.ring_size is not None

    def __getitem__(self, site: int) -> int:
        if self._dense is not None:
            return int(self._dense[int(site) % self.ring_size])
        return self._sparse.get(int(site), 0)

    def items(self):
        """(site, occupancy) for occupied sites, ascending."""
        if self._dense is not None:
            return [(int(i), int(v)) for i, v in enumerate(self._dense) if v]
        return list(self._sparse.items())

    def sites(self) -> list[int]:
        return [x for x, _ in self.items()]

    @property
    def total(self) -> int:
        if self._dense is not None:
            return int(self._dense.sum())
        return sum(self._sparse.values())

    def __len__(self):
        return self.total

    def hull(self) -> tuple[int, int] | None:
        if self._dense is not None:
            return (0, self.ring_size - 1)
        if not self._sparse:
            return None
        keys = list(self._sparse)
        return keys[0], keys[-1]

    def to_array(self, lo: int | None = None, hi: int | None = None) -> tuple[np.ndarray, int]:
        """Dense occupancy over ``[lo, hi]`` and the offset ``lo``."""
        if self._dense is not None:
            return self._dense.copy(), 0
        h = self.hull()
        if lo is None:
            lo = h[0] if h else 0
        if hi is None:
            hi = h[1] if h else lo
        arr = np.zeros(hi - lo + 1, dtype=np.int64)
        for x, v in self._sparse.items():
            if lo <= x <= hi:
                arr[x - lo] = v
        return arr, lo

    def as_dict(self) -> dict[int, int]:
        return dict(self.items())

    def __eq__(self, other):
        if not isinstance(other, Configuration) or self.ring_size != other.ring_size:
            return NotImplemented
        if self._dense is not None:
            return np.array_equal(self._dense, other._dense)
        return dict(self._sparse) == dict(other._sparse)

    def __hash__(self):
        return hash((self.ring_size, tuple(self.items())))

    def __reduce__(self):
        if self.is_ring:
            return (Configuration, (np.array(self._dense), self.ring_size))
        return (Configuration, (dict(self._sparse),))

    def __repr__(self):
        if self.is_ring:
            return f"Configuration.ring({self._dense.tolist()})"
        return f"Configuration({dict(self._sparse)})"


@dataclass(frozen=True)
class Model:
    kernel: JumpKernel
    rates: RateTable
    run: Mapping = field(default_factory=dict)

    def __reduce__(self):
        return (Model, (self.kernel, self.rates, dict(self.run)))


def load_model(path: str | Path) -> Model:
    """Read a kernel/rate definition from a TOML config file."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    try:
        kern = doc["kernel"]
        kernel = JumpKernel.from_dict(kern.get("finite", {}), kern.get("tail", []))
    except KeyError as exc:
        raise ModelError(f"config key missing: kernel.{exc.args[0]}") from None
    try:
        rates_doc = doc["rates"]
        rates = RateTable.from_nested(rates_doc["b"])
    except KeyError as exc:
        raise ModelError(f"config key missing: rates.{exc.args[0]}") from None
    if "K" in rates_doc and int(rates_doc["K"]) != rates.K:
        raise ModelError(f"rates.K = {rates_doc['K']} but rates.b is {rates.K + 1}x{rates.K + 1}")
    return Model(kernel, rates, MappingProxyType(dict(doc.get("run", {}))))

"""Initial configurations and pairs for the experiments."""
from __future__ import annotations

import math

import numpy as np

from macrostab.experiments.common import ConfigError
from macrostab.model import Configuration


def support_range(N: int, L: float) -> tuple[int, int]:
    """Sites x with |x| < L*N, the open interval (-LN, LN)."""
    h = math.ceil(L * N) - 1
    return -h, h


def sample_profile(rng, lo: int, hi: int, density, K: int = 1) -> np.ndarray:
    """Site-independent occupancies on [lo, hi] with mean density(x), Binomial(K, rho/K) per site."""
    xs = np.arange(lo, hi + 1)
    rho = np.broadcast_to(np.asarray(density(xs) if callable(density) else density, dtype=float), xs.shape)
    p = np.clip(rho / K, 0.0, 1.0)
    return rng.binomial(K, p).astype(np.int64)


def bernoulli_pair(rng, N: int, L: float, rho1: float, rho2: float, K: int = 1):
    lo, hi = support_range(N, L)
    a = sample_profile(rng, lo, hi, rho1, K)
    b = sample_profile(rng, lo, hi, rho2, K)
    return Configuration.from_array(a, lo, K=K), Configuration.from_array(b, lo, K=K)


def shifted_block_pair(rng, N: int, L: float, rho: float, shift: int, K: int = 1):
    """eta2 is eta1 translated left by ``shift``; sup Phi starts near rho*shift."""
    lo, hi = support_range(N, L)
    a_lo, a_hi = lo + shift, hi
    if a_lo > a_hi:
        raise ConfigError(f"shift {shift} leaves no room inside (-LN, LN)")
    a = sample_profile(rng, a_lo, a_hi, rho, K)
    return Configuration.from_array(a, a_lo, K=K), Configuration.from_array(a, a_lo - shift, K=K)


def mixed_pair(rng, N: int, L: float, rho: float, core: int, flip: float, K: int = 1):
    """Common background on (-LN, LN); sites with |x| <= core resampled in eta2 with prob ``flip``."""
    lo, hi = support_range(N, L)
    a = sample_profile(rng, lo, hi, rho, K)
    b = a.copy()
    xs = np.arange(lo, hi + 1)
    sel = (np.abs(xs) <= core) & (rng.random(xs.size) < flip)
    b[sel] = rng.binomial(K, rho / K, size=int(sel.sum()))
    return Configuration.from_array(a, lo, K=K), Configuration.from_array(b, lo, K=K)


def make_pair(rng, N: int, L: float, opts: dict, K: int = 1):
    kind = opts.get("generator", "bernoulli")
    if kind == "bernoulli":
        return bernoulli_pair(rng, N, L, float(opts.get("rho1", 0.5)), float(opts.get("rho2", 0.5)), K)
    if kind == "block":
        shift = int(round(float(opts.get("shift_frac", 0.1)) * N))
        return shifted_block_pair(rng, N, L, float(opts.get("rho", 0.5)), shift, K)
    if kind == "mixed":
        return mixed_pair(rng, N, L, float(opts.get("rho", 0.5)), int(float(opts.get("core_frac", 1.0)) * N),
                          float(opts.get("flip", 0.5)), K)
    if kind == "explicit":
        e1 = Configuration({int(k): int(v) for k, v in opts["eta1"].items()}, K=K)
        e2 = Configuration({int(k): int(v) for k, v in opts["eta2"].items()}, K=K)
        return e1, e2
    raise ConfigError(f"unknown pair generator {kind!r} (options.generator)")


def check_vacant(cfgs, N: int, L: float):
    """Both configurations must be empty outside (-LN, LN)."""
    for c in cfgs:
        h = c.hull()
        if h is not None and (h[0] <= -L * N or h[1] >= L * N):
            raise ConfigError(f"initial configuration occupies {h}, outside (-{L * N:g}, {L * N:g})")

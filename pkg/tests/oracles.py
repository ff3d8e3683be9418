"""Independent reference computations: small-state generators solved exactly.

These build generators directly from the jump rates and share no code with the
simulator beyond the model dataclasses.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm, null_space


def ring_states(S: int, K: int = 1, n: int | None = None) -> list[tuple[int, ...]]:
    states = itertools.product(range(K + 1), repeat=S)
    return [s for s in states if n is None or sum(s) == n]


def ring_generator(S: int, finite: dict, b: np.ndarray, n: int | None = None):
    """Generator of the misanthrope process on a ring of S sites (finite kernel only)."""
    K = b.shape[0] - 1
    states = ring_states(S, K, n)
    index = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for s, i in index.items():
        for x in range(S):
            for z, p in finite.items():
                y = (x + z) % S
                if y == x:
                    continue
                rate = p * b[s[x], s[y]]
                if rate == 0:
                    continue
                t = list(s)
                t[x] -= 1
                t[y] += 1
                j = index[tuple(t)]
                Q[i, j] += rate
                Q[i, i] -= rate
    return states, Q


def transition_law(S: int, finite: dict, b: np.ndarray, start: tuple[int, ...], t: float):
    """Exact law at time t from ``start`` via the matrix exponential."""
    states, Q = ring_generator(S, finite, b)
    P = expm(Q * t)
    return states, P[states.index(tuple(start))]


def stationary(Q: np.ndarray) -> np.ndarray:
    v = null_space(Q.T)[:, 0]
    return v / v.sum()


def ring_current(S: int, n: int, finite: dict, b: np.ndarray) -> float:
    """Exact stationary current per site, sum_z z p(z) E[b(eta(0), eta(z))], for n particles."""
    states, Q = ring_generator(S, finite, b, n)
    pi = stationary(Q)
    J = 0.0
    for w, s in zip(pi, states):
        tot = 0.0
        for x in range(S):
            for z, p in finite.items():
                tot += z * p * b[s[x], s[(x + z) % S]]
        J += w * tot / S
    return float(J)


def extrapolate(sizes, values) -> float:
    """Polynomial fit in 1/S through the given points, evaluated at 1/S = 0."""
    x = 1.0 / np.asarray(sizes, dtype=float)
    coef = np.polyfit(x, np.asarray(values, dtype=float), len(sizes) - 1)
    return float(np.polyval(coef, 0.0))


def segment_stationary(S: int, finite: dict, b: np.ndarray, n: int):
    """Stationary density profile of the closed segment {0..S-1} with n particles."""
    K = b.shape[0] - 1
    states = ring_states(S, K, n)
    index = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for s, i in index.items():
        for x in range(S):
            for z, p in finite.items():
                y = x + z
                if not 0 <= y < S:
                    continue
                rate = p * b[s[x], s[y]]
                if rate == 0:
                    continue
                t = list(s)
                t[x] -= 1
                t[y] += 1
                Q[i, index[tuple(t)]] += rate
                Q[i, i] -= rate
    pi = stationary(Q)
    return np.asarray(states, dtype=float).T @ pi


def hypergeometric_sd(S: int, n: int, l: int) -> float:
    """Sd of the mean of l sites of a uniformly random n-particle ring of S sites (K = 1)."""
    p = n / S
    return float(np.sqrt(p * (1 - p) / l * (S - l) / (S - 1)))

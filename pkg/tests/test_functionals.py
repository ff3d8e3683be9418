from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrostab.functionals import (
    EmpiricalMeasure, delta_distance, empirical_measure, max_interval_sum, measure_from_arrays,
    phi, phi_profile, sup_abs_phi, sup_phi,
)
from macrostab.model import Configuration


def measure(atoms: dict, N: int) -> EmpiricalMeasure:
    sites = np.array(sorted(atoms), dtype=np.int64)
    return EmpiricalMeasure(sites, np.array([atoms[s] for s in sorted(atoms)], dtype=np.int64), N)


def brute_delta(a: EmpiricalMeasure, b: EmpiricalMeasure) -> Fraction:
    pts = sorted({Fraction(int(s), a.N) for s in a.sites} | {Fraction(int(s), b.N) for s in b.sites})
    best = Fraction(0)
    for x in pts:
        fa = sum(Fraction(int(c), a.N) for s, c in zip(a.sites, a.counts) if Fraction(int(s), a.N) <= x)
        fb = sum(Fraction(int(c), b.N) for s, c in zip(b.sites, b.counts) if Fraction(int(s), b.N) <= x)
        best = max(best, abs(fa - fb))
    return best


def test_empirical_measure_examples():
    assert empirical_measure(Configuration({}), 5).atoms == []
    m = empirical_measure(Configuration({y: 1 for y in range(10)}), 10)
    assert len(m.atoms) == 10 and m.total_mass == pytest.approx(1.0)
    assert all(w == pytest.approx(0.1) for _, w in m.atoms)
    m = empirical_measure(Configuration({0: 3}, K=3), 4)
    assert m.atoms == [(0.0, 0.75)]
    with pytest.raises(ValueError):
        empirical_measure(Configuration({}), 0)


def test_delta_examples():
    a = measure({0: 1}, 1)
    assert delta_distance(a, a) == 0
    assert delta_distance(a, measure({1: 1}, 1)) == 1
    # atoms of mass 1/2 at 0 and 2 against a unit atom at 1, all on scale 2
    assert delta_distance(measure({0: 1, 4: 1}, 2), measure({2: 2}, 2)) == 0.5


def test_phi_examples():
    e = Configuration({0: 1})
    assert sup_phi(e, e)[0] == 0
    assert sup_phi(e, Configuration({})) == (1, 0)
    assert [phi(e, Configuration({}), x) for x in (-3, 0, 1)] == [1, 1, 0]
    e2 = Configuration({2: 1})
    assert [phi(e, e2, x) for x in (-1, 0, 1, 2, 3)] == [0, 0, -1, -1, 0]
    val, arg = sup_phi(e, e2)
    assert val == 0 and arg <= 0
    assert sup_abs_phi(e, e2) == 1


def test_phi_profile_suffix_sums():
    d = np.array([1, -2, 0, 3])
    assert phi_profile(d).tolist() == [2, 1, 3, 3, 0]


@st.composite
def pair(draw, equal_mass=False):
    n = draw(st.integers(1, 25))
    K = draw(st.integers(1, 3))
    a = np.array(draw(st.lists(st.integers(0, K), min_size=n, max_size=n)))
    b = np.array(draw(st.lists(st.integers(0, K), min_size=n, max_size=n)))
    if equal_mass:
        b = draw(st.permutations(a.tolist()))
    lo = draw(st.integers(-20, 20))
    return Configuration.from_array(a, lo), Configuration.from_array(np.array(b), lo)


@settings(max_examples=200)
@given(p=pair(), N=st.integers(1, 7))
def test_delta_matches_brute_force(p, N):
    a, b = (empirical_measure(c, N) for c in p)
    assert delta_distance(a, b) == pytest.approx(float(brute_delta(a, b)), abs=1e-15)


@settings(max_examples=100)
@given(p=pair(), q=pair(), N=st.integers(1, 5))
def test_delta_is_a_metric(p, q, N):
    a, b = (empirical_measure(c, N) for c in p)
    c = empirical_measure(q[0], N)
    assert delta_distance(a, b) == delta_distance(b, a)
    assert delta_distance(a, c) <= delta_distance(a, b) + delta_distance(b, c) + 1e-12
    assert delta_distance(a, a) == 0


@given(p=pair(), N=st.integers(1, 5))
def test_delta_across_scales(p, N):
    # the same measures written on scale N and 2N
    a = empirical_measure(p[0], N)
    b = empirical_measure(p[1], N)
    b2 = EmpiricalMeasure(b.sites * 2, b.counts * 2, 2 * N)
    a2 = EmpiricalMeasure(a.sites * 2, a.counts * 2, 2 * N)
    assert delta_distance(a, b2) == pytest.approx(delta_distance(a2, b2))


@settings(max_examples=200)
@given(p=pair(equal_mass=True), N=st.integers(1, 9))
def test_delta_phi_bridge(p, N):
    e1, e2 = p
    a, b = empirical_measure(e1, N), empirical_measure(e2, N)
    assert Fraction(sup_abs_phi(e1, e2), N) == brute_delta(a, b)


@given(p=pair())
def test_sup_phi_matches_direct_sum(p):
    e1, e2 = p
    sites = [s for c in p for s in c.sites()] or [0]
    xs = range(min(sites) - 2, max(sites) + 3)
    direct = max(phi(e1, e2, x) for x in xs)
    val, arg = sup_phi(e1, e2)
    assert val == direct
    if arg is not None:
        assert phi(e1, e2, arg) == val
        # leftmost within the joint hull (Phi is constant to its left)
        assert all(phi(e1, e2, x) < val for x in xs if min(sites) <= x < arg)


@given(st.lists(st.integers(-3, 3), max_size=30))
def test_max_interval_sum_brute(vals):
    d = np.array(vals, dtype=np.int64)
    best = 0
    for i in range(d.size):
        for j in range(i, d.size):
            best = max(best, abs(int(d[i:j + 1].sum())))
    assert max_interval_sum(d) == best


def test_measure_from_arrays_matches():
    occ = np.array([0, 2, 0, 1])
    m = measure_from_arrays(occ, -2, 3)
    assert m.sites.tolist() == [-1, 1] and m.counts.tolist() == [2, 1] and m.N == 3

import math

import numpy as np
import pytest

from macrostab.experiments import (
    ConfigError, clopper_pearson, make_config, non_increasing, run_coalescence, run_comparison,
    run_density, run_hydro, run_label_audit, run_propagation, run_stability,
)
from macrostab.experiments.coalescence import _coal_task, no_crossing_probability, total_discrepancy
from macrostab.experiments.common import frequency, rows_to_csv
from macrostab.experiments.density import block_average
from macrostab.experiments.hydro import block_edges, empirical_delta
from macrostab.experiments.initial import check_vacant, make_pair, support_range
from macrostab.experiments.propagation import crossing_law
from macrostab.conslaw import Profile
from macrostab.model import Configuration, JumpKernel, Model, RateTable

TASEP = JumpKernel.from_dict({1: "2/3", -1: "1/3"})
NN = JumpKernel({1: 1.0})
GEO = JumpKernel.from_dict({1: 0.5, -1: 0.25}, [{"start": 2, "mass": 0.25, "ratio": 0.5}])
EXCL = RateTable.exclusion()


def cfg(kernel=TASEP, **kw):
    kw.setdefault("replicas", 3)
    kw.setdefault("n_values", (20, 40))
    return make_config((kernel, EXCL), eps=kw.pop("eps", 0.1), **kw)


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


# common helpers ---------------------------------------------------------------

def test_clopper_pearson_known_values():
    lo, hi = clopper_pearson(0, 10)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / 10))
    lo, hi = clopper_pearson(10, 10)
    assert hi == 1.0 and lo == pytest.approx(0.025 ** (1 / 10))


def test_non_increasing_rule():
    a, b = frequency(10, 100), frequency(12, 100)
    assert non_increasing([a, b])
    assert not non_increasing([frequency(0, 200), frequency(60, 200)])


def test_run_section_fills_defaults():
    m = Model(TASEP, EXCL, {"seed": 9, "replicas": 4, "n_values": [10, 30], "eps": 0.2})
    c = make_config(m)
    assert (c.seed, c.replicas, c.n_values, c.eps) == (9, 4, (10, 30), 0.2)
    assert make_config(m, seed=3).seed == 3
    with pytest.raises(ConfigError):
        make_config(m, n_values=(30, 10))


def test_csv_is_stable():
    text = rows_to_csv([{"a": 1, "b": 0.1}, {"a": 2, "c": "x"}])
    assert text == "a,b,c\n1,0.1,\n2,,x\n"


def test_support_and_vacancy():
    assert support_range(10, 2.0) == (-19, 19)
    with pytest.raises(ConfigError):
        check_vacant([Configuration({20: 1})], 10, 2.0)


# stability ------------------------------------------------------------------------

def test_equal_pairs_never_grow():
    c = Configuration({i: 1 for i in range(-5, 5, 2)})
    opts = {"generator": "explicit", "eta1": {str(k): v for k, v in c.items()},
            "eta2": {str(k): v for k, v in c.items()}}
    res = run_stability(cfg(options=opts))
    assert all(a["freq"] == 0 and a["mean_growth"] == 0 for a in res.aggregates)


def test_dominated_pair_has_no_growth():
    # eta1 <= eta2 sitewise stays so under the coupling, hence Phi <= 0 and sup Phi = 0 throughout
    e2 = {str(i): 1 for i in range(-10, 10)}
    e1 = {str(i): 1 for i in range(-10, 10, 3)}
    res = run_stability(cfg(options={"generator": "explicit", "eta1": e1, "eta2": e2}, audit=True))
    assert all(r["dphi_t1"] == 0 and r["dphi_running_max"] == 0 for r in res.rows)
    assert all(a["order_violations"] == 0 for a in res.aggregates)


def test_stability_deterministic(tmp_path):
    a = run_stability(cfg(options={"generator": "block", "shift_frac": 0.1}))
    b = run_stability(cfg(options={"generator": "block", "shift_frac": 0.1}, threads=2))
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    sa, sb = read_all(tmp_path / "a"), read_all(tmp_path / "b")
    assert sa == sb
    assert "wall" not in sa["summary.json"].decode()


def test_block_pair_initial_phi():
    rng = np.random.default_rng(0)
    e1, e2 = make_pair(rng, 100, 21.0, {"generator": "block", "rho": 1.0, "shift_frac": 0.1})
    from macrostab.functionals import sup_phi
    assert sup_phi(e1, e2)[0] == 10


# hydrodynamics ------------------------------------------------------------------------

def test_empty_profile_is_exact():
    res = run_hydro(cfg(NN, options={"u0": "constant", "rho": 0.0}))
    assert all(r["delta_t1"] == 0.0 and r["l1_t1"] == 0.0 for r in res.rows)


def test_constant_profile_stays_close():
    res = run_hydro(cfg(NN, n_values=(500,), replicas=20, options={"u0": "constant", "rho": 0.5,
                                                                   "window": (-1.0, 1.0)}))
    assert res.aggregate(N=500, t=1.0)["l1_avg_profile"] < 0.05


def test_empirical_delta_oracle():
    u = Profile(np.array([-1.0, 1.0]), np.array([0.5]))
    # alternating sites on scale 10 match density 1/2 up to one atom
    sites = np.arange(-10, 10, 2)
    d = empirical_delta(sites, np.ones(sites.size), 10, u, (-1.0, 1.0))
    assert d == pytest.approx(0.1, abs=1e-12)
    assert block_edges(100, (-1, 1)).tolist() == list(range(-100, 101, 10))


# propagation ----------------------------------------------------------------------------

def test_crossing_law_tasep():
    sizes, cdf, pos, rate = crossing_law(TASEP, 1.0)
    assert sizes.tolist() == [1] and rate == pytest.approx(1.0)
    assert pos[0] == pytest.approx(2 / 3)
    sizes, cdf, pos, rate = crossing_law(GEO, 1.5)
    assert rate == pytest.approx(1.5 * GEO.mu1, rel=1e-9)


def test_identical_copies_never_disagree():
    res = run_propagation(cfg(options={"identical": True, "width": 100, "buffer": 50, "T": 50.0}))
    assert res.aggregate(statistic="core_disagreement")["count"] == 0


def test_boundary_walk_drift():
    res = run_propagation(cfg(replicas=10, options={"width": 100, "buffer": 50, "T": 200.0}))
    d = res.aggregate(statistic="drift_L")
    assert d["v_L"] == pytest.approx(1.0)
    assert abs(d["mean"] - 1.0) < 4 * d["stderr"] + 0.02
    assert d["inside_violations"] == 0


# density ------------------------------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.0, 1.0])
def test_density_extremes(rho):
    res = run_density(cfg(replicas=1, options={"ring_size": 100, "rho": rho, "blocks": (5, 20),
                                               "samples": 5, "spacing": 1.0, "burn": 1.0}))
    assert all(r["max_dev_l5"] == 0 and r["max_dev_l20"] == 0 for r in res.rows)


def test_block_average_wraps():
    occ = np.zeros(10, dtype=np.int64)
    occ[[0, 9, 1]] = 1
    assert block_average(occ, 1) == 1.0
    assert block_average(occ, 2) == pytest.approx(3 / 5)


def test_density_rejects_wide_block():
    with pytest.raises(ConfigError):
        run_density(cfg(replicas=1, options={"ring_size": 50, "blocks": (30,)}))


# coalescence ----------------------------------------------------------------------------------

def test_equal_pair_never_coalesces():
    c = cfg(replicas=5)
    e = Configuration({0: 1, 3: 1})
    row = _coal_task((c, 11, 0, (e, e), 1, 5))
    assert row["hits"] == 0 and row["d0"] == 0


def test_coalescence_run():
    # adjacent discrepancies annihilate after one jump; at m = M0 = 11 the chance within unit time is tiny
    res = run_coalescence(cfg(replicas=40, options={"pairs": 2, "background": "equal",
                                                    "m_values": [1, 11]}))
    near, far = res.aggregates
    assert near["m"] == 1 and near["min_freq"] > 0.3 and near["positive"]
    assert far["m"] == 11 and far["p_no_crossing"] == pytest.approx(math.exp(-2.0))
    assert far["joint_min"] == pytest.approx(far["p_no_crossing"] * far["min_freq_full_kernel"])


def test_total_discrepancy():
    assert total_discrepancy(Configuration({0: 1}), Configuration({2: 1})) == 2


def test_no_crossing_probability_geometric():
    c = cfg(GEO)
    want = math.exp(-2.0 * GEO.expected_min_abs(12))
    assert no_crossing_probability(c, 11) == pytest.approx(want)


# label audit -----------------------------------------------------------------------------------

def test_audit_finite_kernel_has_no_big_jump_events():
    res = run_label_audit(cfg(replicas=2, n_values=(30,), audit=True,
                              options={"generator": "mixed", "core_frac": 0.3}))
    a = res.aggregate(statistic="event_a")
    assert a["count"] == 0 and a["audit_violations"] == 0
    assert res.aggregate(statistic="event_b")["count"] == 0
    assert "counters_N30.csv" in res.extra_files


def test_audit_label_sampling():
    res = run_label_audit(cfg(GEO, replicas=1, n_values=(30,), options={"generator": "mixed",
                                                                      "sample_labels": 3}))
    assert res.rows[0]["labels"] <= 3 and res.rows[0]["partial"]


# comparison -------------------------------------------------------------------------------------

def test_identical_comparison_is_exact():
    res = run_comparison(cfg(replicas=2, options={"identical": True}))
    assert all(r["max_interval"] == 0 and r["class22_t1"] == 0 for r in res.rows)


def test_comparison_closeness_guard():
    with pytest.raises(ConfigError):
        run_comparison(cfg(replicas=1, n_values=(10,), options={"swap": 0.9}))


def test_comparison_runs():
    res = run_comparison(cfg(replicas=2, audit=True, n_values=(50, 100)))
    assert all(r["order_violations"] == 0 for r in res.rows)
    assert all(a["max_closeness_one_sided"] <= 0.1 * a["N"] / 4 for a in res.aggregates)

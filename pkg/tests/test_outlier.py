import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from consensus_nids.attacks import AdditiveDisruption, AttackModel
from consensus_nids.consensus import build_max_degree_weights, consensus_step, run_phase
from consensus_nids.outlier import (COMMON_NEIGHBORS_PLUS_SELF, OutlierDetector, flag_suspicious,
                                    init_thresholds, majority_verdict, soft_update,
                                    update_threshold, vote_candidates)
from consensus_nids.topology import (build_petersen, build_random, build_ring, build_torus,
                                     from_edges)


def test_init_thresholds_ring4():
    st_ = init_thresholds([0, 1, 2, 3], build_ring(4), beta=2)
    assert st_.lam[0] == 4.0
    # node 1: (1 + 1) / 2 = 1
    assert st_.lam[1] == 2.0
    assert st_.prev_deviation_sum[0] == 4.0


def test_init_thresholds_constant():
    st_ = init_thresholds(np.full(5, -3.0), build_ring(5), beta=1.7)
    assert np.all(st_.lam == 1.7)


def test_init_thresholds_single_neighbour():
    g = from_edges(2, [(0, 1)])
    assert init_thresholds([0.0, 5.0], g, beta=1).lam[0] == 5.0


def test_init_rejects_bad_beta():
    with pytest.raises(ValueError):
        init_thresholds([0, 1, 2], build_ring(3), beta=0)


def test_update_threshold():
    assert update_threshold(0.8, 4, 2) == 0.4
    assert update_threshold(0.8, 0.0, 2) == 0.8
    assert update_threshold(0.8, 1e-13, 2) == 0.8
    with pytest.raises(ValueError):
        update_threshold(-1, 1, 1)


def test_flag_suspicious():
    assert flag_suspicious(0, 0.0, {1: 0.1, 2: 5.0}, 1.0) == {2}
    assert flag_suspicious(0, 0.0, {1: 0.1, 2: 5.0}, 0.0) == {1, 2}
    assert flag_suspicious(0, 0.0, {1: 0.1, 2: 0.2}, 1.0) == set()
    assert flag_suspicious(0, 0.0, {1: 1.0}, 1.0) == {1}


@settings(max_examples=100, deadline=None)
@given(vals=st.dictionaries(st.integers(1, 20), st.floats(-100, 100), max_size=8),
       lo=st.floats(0, 50), hi=st.floats(0, 50))
def test_flags_monotone_in_lambda(vals, lo, hi):
    lo, hi = sorted((lo, hi))
    assert flag_suspicious(0, 0.0, vals, hi) <= flag_suspicious(0, 0.0, vals, lo)


def _star_plus():
    # j=0 with neighbours a=1, b=2, c=3
    return from_edges(4, [(0, 1), (0, 2), (0, 3)])


def test_majority_strict():
    g = _star_plus()
    x = [5.0, 0.0, 0.0, 0.0]
    assert majority_verdict({1: {0}, 2: {0}}, g, x) == 0
    assert majority_verdict({1: {0}}, g, x) is None


def test_majority_without_values():
    assert majority_verdict({1: {0}, 2: {0}}, _star_plus()) == 0


def test_majority_requires_same_side():
    g = _star_plus()
    # the two flaggers see node 0 on opposite sides
    x = [0.0, -5.0, 5.0, 0.0]
    assert majority_verdict({1: {0}, 2: {0}}, g, x) is None


def test_common_neighbours_policy_triangle_free():
    g = build_ring(6)
    x = [0, 0, 0, 0, 0, 0]
    assert majority_verdict({1: {2}}, g, x, policy=COMMON_NEIGHBORS_PLUS_SELF) == 2
    assert majority_verdict({1: {2}}, g, x) is None


def test_common_neighbours_policy_with_triangle():
    # triangle 0-1-2 plus pendant 3 on node 2; observer 0 and accused 1 share node 2
    g = from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
    x = [0.0, 4.0, 0.0, 0.0]
    # B = 1, need more than 1 vote: observer alone is not enough
    assert majority_verdict({0: {1}}, g, x, policy=COMMON_NEIGHBORS_PLUS_SELF) is None
    assert majority_verdict({0: {1}, 2: {1}}, g, x, policy=COMMON_NEIGHBORS_PLUS_SELF) == 1


def test_tie_break_largest_deviation():
    g = build_ring(8)
    x = [0.0, 0.4, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0]
    flags = {0: {1}, 2: {1}, 4: {5}, 6: {5}}
    assert vote_candidates(flags, g, x) == pytest.approx({1: 0.4, 5: 0.6})
    assert majority_verdict(flags, g, x) == 5


def test_unknown_policy():
    with pytest.raises(ValueError):
        majority_verdict({}, build_ring(3), policy="bogus")


def test_soft_update_matches_max_degree_step():
    g = build_petersen()
    w = build_max_degree_weights(g)
    x = np.random.default_rng(0).uniform(-55, -20, 10)
    ref = consensus_step(w, x)
    gain = 1 / (g.max_degree + 1)
    for i in range(10):
        got = soft_update(x[i], {j: x[j] for j in g.neighbors(i)}, {}, gain, 2.0)
        assert got == pytest.approx(ref[i], abs=1e-12)


def test_soft_update_limits():
    assert soft_update(1.0, {}, {2: 5.0, 3: 9.0}, 0.25, 1e12) == pytest.approx(1.0)
    assert soft_update(1.0, {2: 1.0}, {}, 0.25, 2.0) == 1.0
    assert soft_update(0.0, {1: 4.0}, {2: 4.0}, 0.25, 2.0) == 1.5
    with pytest.raises(ValueError):
        soft_update(0.0, {}, {}, 0.0, 2.0)
    with pytest.raises(ValueError):
        soft_update(0.0, {}, {}, 0.1, 1.0)


def test_threshold_decays_in_honest_run():
    g = build_ring(9)
    w = build_max_degree_weights(g)
    x0 = np.random.default_rng(4).uniform(-55, -20, 9)
    det = OutlierDetector(trace=True)
    res = run_phase(w, x0, x0, eps=1e-8, mitigation=det)
    assert res.detection is None and res.converged
    lam0 = init_thresholds(x0, g, 1.0).lam
    assert (det.trackers["attack"].state.lam < 1e-3 * lam0).all()


def test_detector_trace_rows(tmp_path):
    g = build_ring(5)
    w = build_max_degree_weights(g)
    det = OutlierDetector(trace=True)
    run_phase(w, np.arange(5.0), np.arange(5.0), max_iter=3, mitigation=det)
    p = tmp_path / "lam.csv"
    det.write_trace_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,channel,node,lambda,flags"
    # t = 0..3, two channels, five nodes
    assert len(lines) == 1 + 4 * 2 * 5


@pytest.mark.parametrize("make", [lambda: build_ring(9), lambda: build_torus(3, 3),
                                  build_petersen, lambda: build_random(10, 15, 2, True)])
def test_detector_finds_additive_attacker(make):
    g = make()
    w = build_max_degree_weights(g)
    rng = np.random.default_rng(8)
    for _ in range(10):
        x0 = rng.uniform(-55, -20, g.n)
        target = int(rng.integers(g.n))
        res = run_phase(w, x0, x0 - 3, mitigation=OutlierDetector(),
                        attacker=AttackModel(AdditiveDisruption(0.5), target))
        assert res.removed == target


def test_detector_options_run():
    g = build_petersen()
    w = build_max_degree_weights(g)
    x0 = np.random.default_rng(1).uniform(-55, -20, 10)
    atk = AttackModel(AdditiveDisruption(0.5), 3)
    for det in (OutlierDetector(delayed_exchange=True), OutlierDetector(soft=True),
                OutlierDetector(policy=COMMON_NEIGHBORS_PLUS_SELF)):
        res = run_phase(w, x0, x0, mitigation=det, attacker=atk)
        assert res.removed is not None


def test_detector_bad_options():
    with pytest.raises(ValueError):
        OutlierDetector(policy="x")
    with pytest.raises(ValueError):
        OutlierDetector(decay_tolerance=1.0)

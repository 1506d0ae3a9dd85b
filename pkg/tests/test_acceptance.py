"""Acceptance suite. Each test prints one PASS/FAIL line with its measured value."""

import math
import statistics

import numpy as np
import pytest

from consensus_nids.attacks import AdditiveDisruption, AttackModel, apply_attack
from consensus_nids.classifier import (FeatureRecord, feature_log_terms, filter_dos, log_likelihoods,
                                       parse_records, synthetic_pair, train)
from consensus_nids.consensus import build_max_degree_weights, run_phase
from consensus_nids.harness import (ALERT, NO_ALERT, ExperimentConfig, bench, compare_convergence,
                                    export, run_experiment)
from consensus_nids.observer import build_observer, observer_step, residual
from consensus_nids.outlier import OutlierDetector
from consensus_nids.topology import build_petersen, build_random, build_ring, build_torus
from kdd_data import make_lines

TOPOLOGIES = [("ring", 9), ("ring", 25), ("torus", 9), ("torus", 25), ("petersen", 10), ("random", 10)]
GRAPHS = {
    "ring9": lambda: build_ring(9),
    "ring25": lambda: build_ring(25),
    "torus3x3": lambda: build_torus(3, 3),
    "torus5x5": lambda: build_torus(5, 5),
    "petersen": build_petersen,
    **{f"random10-15-s{s}": (lambda s=s: build_random(10, 15, s)) for s in range(5)},
}


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def mitigated_runs():
    """1000 balanced phases per topology and mitigation, attacker present in each."""
    out = {}
    for topo, size in TOPOLOGIES:
        for mit in ("outlier", "fault"):
            cfg = ExperimentConfig(topology=topo, size=size, mitigation=mit, attack="additive",
                                   magnitude=0.5, phases=1000, seed=2024)
            out[topo, size, mit] = run_experiment(cfg).records
    return out


def test_c1_consensus_correctness(capsys):
    worst_err = worst_cons = worst_time = 0.0
    for make in GRAPHS.values():
        g = make()
        w = build_max_degree_weights(g)
        x0 = np.random.default_rng(g.n + len(g.edges)).uniform(-55, -20, g.n)
        res = run_phase(w, x0, x0[::-1].copy(), eps=1e-8, record=True)
        worst_time = max(worst_time, res.wall_time)
        for final, start in ((res.final_attack, x0), (res.final_normal, x0[::-1])):
            worst_err = max(worst_err, np.abs(final - start.mean()).max())
        traj = np.asarray(res.trajectories["attack"])
        sums = traj.sum(axis=1)
        worst_cons = max(worst_cons, np.abs(np.diff(sums)).max() / abs(sums[0]))
    ok = worst_err < 1e-6 and worst_cons < 1e-9 and worst_time < 1.0
    report(capsys, 1, ok, f"max limit error {worst_err:.2e} (<1e-6), max step sum drift "
                          f"{worst_cons:.2e} (<1e-9), slowest phase {worst_time:.3f}s (<1s)")


def test_c2_constant_attack_slows_convergence(capsys):
    cfg = ExperimentConfig(topology="ring", size=9, magnitude=-10.0, phases=1000, epsilon=1e-8, seed=7)
    cmp = compare_convergence(cfg)
    hm, am = statistics.median(cmp.honest_iterations), statistics.median(cmp.attacked_iterations)
    err = max(cmp.attacked_max_error)
    report(capsys, 2, am > hm and err < 1e-6,
           f"honest median {hm}, attacked median {am}, max |x - c| {err:.2e} (<1e-6)")


def _drive_observers(g, init, steps, target, seed):
    w = build_max_degree_weights(g)
    W = w.entries
    x = np.random.default_rng(seed).uniform(-55, -20, g.n)
    obs = [build_observer(w, g, i, init, x) for i in range(g.n)]
    atk = AttackModel(AdditiveDisruption(0.5), target)
    prev = [None] * g.n
    stats = {"forms": 0.0, "copy": True, "outside": True, "res": None}
    for t in range(steps):
        last = []
        for i, e in enumerate(obs):
            lit = e.literal_next(w, x[e.observed])
            z_next, x_o = observer_step(e, x[e.observed], w)
            stats["forms"] = max(stats["forms"], np.abs(lit - z_next).max())
            o = g.observed_set(i)
            stats["copy"] &= bool(np.array_equal(x_o[o], x[o]))
            if prev[i] is not None:
                r = residual(x_o, w, prev[i], t).values
                stats["outside"] &= bool(np.all(np.delete(r, o) == 0.0))
                last.append(r)
            prev[i] = x_o
        stats["res"] = last
        nxt = W @ x
        nxt[target] = apply_attack(atk, t, nxt[target], "attack")
        x = nxt
    return stats


def test_c3_observer_algebra(capsys):
    forms, copy, outside = 0.0, True, True
    for g in (build_ring(9), build_torus(3, 3), build_petersen(), build_random(10, 15, 1)):
        for init in ("zero", "exact"):
            s = _drive_observers(g, init, 120, target=3, seed=g.n)
            forms = max(forms, s["forms"])
            copy &= s["copy"]
            outside &= s["outside"]
    # honest estimation error at convergence, default start and zero start
    worst = {"exact": 0.0, "zero": 0.0}
    for g in (build_ring(9), build_torus(3, 3), build_petersen()):
        w = build_max_degree_weights(g)
        x = np.random.default_rng(0).uniform(-55, -20, g.n)
        res = run_phase(w, x, x, eps=1e-12, max_iter=20000, record=True)
        for init in worst:
            obs = [build_observer(w, g, i, init, x) for i in range(g.n)]
            for xt in res.trajectories["attack"]:
                for e in obs:
                    observer_step(e, xt[e.observed], w)
            worst[init] = max(worst[init], max(np.abs(e.x_o - xt).max() for e in obs))
    ok = forms <= 1e-12 and copy and outside and worst["exact"] < 1e-6
    report(capsys, 3, ok, f"form gap {forms:.1e} (<=1e-12), copy-through exact {copy}, "
                          f"residual outside observed set exactly 0 {outside}, "
                          f"honest estimation error {worst['exact']:.1e} (<1e-6; "
                          f"zero start {worst['zero']:.1e}, not gated)")


def test_c4_residual_recovers_attack_input(capsys):
    worst = {"exact": [0.0, 0.0], "zero": [0.0, 0.0]}
    for make in GRAPHS.values():
        g = make()
        target = g.n // 2
        for init, acc in worst.items():
            s = _drive_observers(g, init, 200, target, seed=1)
            for i in g.neighbors(target):
                r = s["res"][i]
                acc[0] = max(acc[0], abs(r[target] - 0.5))
                acc[1] = max(acc[1], np.delete(r, target).max())
    att, other = worst["exact"]
    report(capsys, 4, att < 1e-3 and other < 1e-3,
           f"max |residual - 0.5| at iteration 200 {att:.1e} (<1e-3), max other entry {other:.1e} "
           f"(zero start, not gated: {worst['zero'][0]:.1e} / {worst['zero'][1]:.1e})")


def test_c5_detection_completeness(capsys, mitigated_runs):
    lines, ok = [], True
    for (topo, size, mit), recs in mitigated_runs.items():
        removed = sum(r.removed_node is not None for r in recs)
        wrong = sum(r.removed_node is not None and r.removed_node != r.attacker for r in recs)
        correct = removed - wrong
        ok &= correct == len(recs) and wrong <= 0.01 * len(recs)
        lines.append(f"{topo}{size}/{mit} {correct}/{len(recs)} wrong {wrong}")
    report(capsys, 5, ok, "; ".join(lines))


def test_c6_fault_faster_than_outlier(capsys, mitigated_runs):
    lines, ok = [], True
    for topo, size in TOPOLOGIES:
        med = {}
        for mit in ("fault", "outlier"):
            its = [r.detection_iteration for r in mitigated_runs[topo, size, mit]
                   if r.detection_iteration is not None]
            med[mit] = statistics.median(its)
        ok &= med["fault"] < med["outlier"]
        lines.append(f"{topo}{size} fault {med['fault']} < outlier {med['outlier']}")
    report(capsys, 6, ok, "; ".join(lines))


def test_c7_cost_ordering(capsys):
    rows = bench(phases=10, repeats=3, seed=0)
    per = {(r["topology"], r["size"], r["mitigation"]): r["per_phase_ms"] for r in rows}
    lines, ok = [], True
    for topo, size in TOPOLOGIES:
        n, o, f = (per[topo, size, m] for m in ("none", "outlier", "fault"))
        ok &= n < o < f
        lines.append(f"{topo}{size} {n:.1f}<{o:.1f}<{f:.1f}ms")
    report(capsys, 7, ok, "; ".join(lines))


def test_c8_decision_pattern(capsys, mitigated_runs):
    lines, ok = [], True
    for topo, size in TOPOLOGIES:
        cfg = ExperimentConfig(topology=topo, size=size, mitigation="none", attack="additive",
                               phases=200, seed=2024)
        recs = run_experiment(cfg).records
        normal = [r for r in recs if r.ground_truth == "normal"]
        tn = sum(r.decision == NO_ALERT for r in normal)
        ok &= tn == 0
        cells = [f"{topo}{size} none TN {tn}/{len(normal)}"]
        for mit in ("outlier", "fault"):
            recs = mitigated_runs[topo, size, mit]
            normal = [r for r in recs if r.ground_truth == "normal"]
            attack = [r for r in recs if r.ground_truth == "attack"]
            tn = sum(r.decision == NO_ALERT for r in normal)
            fn = sum(r.decision != ALERT for r in attack)
            ok &= tn >= 0.8 * len(normal) and fn <= 0.03 * len(attack)
            cells.append(f"{mit} TN {tn}/{len(normal)} FN {fn}/{len(attack)}")
        lines.append(" ".join(cells))
    report(capsys, 8, ok, "; ".join(lines))


def test_c9_threshold_decay(capsys):
    g = build_ring(9)
    w = build_max_degree_weights(g)
    x0 = np.random.default_rng(9).uniform(-55, -20, 9)
    det = OutlierDetector()
    det.start(w, {"attack": x0, "normal": x0})
    lam0 = det.trackers["attack"].state.lam.copy()
    det = OutlierDetector()
    res = run_phase(w, x0, x0, eps=1e-8, mitigation=det)
    ratio = (det.trackers["attack"].state.lam / lam0).max()
    report(capsys, 9, res.converged and ratio < 1e-3,
           f"max lambda(end)/lambda(0) {ratio:.2e} (<1e-3) after {res.iterations} iterations")


def test_c10_classifier_identities(capsys):
    recs = filter_dos(parse_records(make_lines(800, seed=10)))
    m = train(recs)
    gap, finite = 0.0, True
    for r in recs[:200]:
        pa, pn = feature_log_terms(m, r)
        pair = log_likelihoods(m, r)
        gap = max(gap, abs(pair.log_pa - math.fsum(pa)) / abs(pair.log_pa),
                  abs(pair.log_pn - math.fsum(pn)) / abs(pair.log_pn))
        prod = math.prod(m.prob(k, r.features[k], "attack") for k in m.features)
        gap = max(gap, abs(pair.log_pa - math.log(prod)) / abs(pair.log_pa))
        finite &= bool(np.isfinite(pa).all() and np.isfinite(pn).all())
    p_tcp = train(_laplace_records()).prob(1, "tcp", "attack")
    in_range = True
    for s in range(10_000):
        p = synthetic_pair(("attack", "normal")[s % 2], s)
        in_range &= -55 <= min(p.log_pa, p.log_pn) and max(p.log_pa, p.log_pn) <= -20
    ok = gap <= 1e-12 and abs(p_tcp - 2 / 3) < 1e-15 and finite and in_range
    report(capsys, 10, ok, f"log-joint relative gap {gap:.1e} (<=1e-12), P(tcp|attack) {p_tcp!r}, "
                           f"all finite {finite}, synthetic in [-55,-20] {in_range}")


def _laplace_records():
    def rec(label, proto):
        f = [0.0] * 41
        f[1], f[2], f[3] = proto, "http", "SF"
        return FeatureRecord(tuple(f), label)
    return [rec("neptune", "tcp")] * 3 + [rec("neptune", "udp"), rec("normal", "tcp")]


def test_c11_determinism(capsys, tmp_path):
    cfg = ExperimentConfig(topology="random", mitigation="outlier", attack="additive",
                           phases=200, seed=31)
    rows = []
    for d in ("a", "b"):
        export(run_experiment(cfg), "csv", tmp_path / d)
        # wall_time_us is the last column
        rows.append([line.rsplit(",", 1)[0] for line in (tmp_path / d / "phases.csv").read_text().splitlines()])
    report(capsys, 11, rows[0] == rows[1], f"{len(rows[0]) - 1} data rows identical apart from wall_time_us")

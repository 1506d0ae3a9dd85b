"""Experiment protocol: seeded phases, metrics, timing and export.

Phase ``p`` of a run with master seed ``s`` draws all of its randomness
from ``numpy.random.default_rng(SeedSequence([s, p]))`` in a fixed order:
ground truth, graph seed (random topology only), attack target, then one
seed per node for synthetic likelihoods. Phases are therefore independent
and reproducible on their own.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .attacks import (AdditiveDisruption, AttackModel, ConstantTransmission,
                      InitialStateFalsification)
from .classifier import (NaiveBayesModel, filter_dos, log_likelihoods, parse_records,
                         synthetic_pair, train)
from .consensus import PhaseAborted, build_max_degree_weights, run_phase, write_trajectory_csv
from .observer import INIT_MODES, FaultDetector
from .outlier import POLICIES, OutlierDetector
from .topology import build_topology

logger = logging.getLogger(__name__)

TOPOLOGIES = ("ring", "torus", "petersen", "random")
MITIGATIONS = ("none", "outlier", "fault", "soft")
ATTACKS = ("none", "additive", "constant", "initial")
FORMATS = ("csv", "json")
ALERT = "alert"
NO_ALERT = "no-alert"

PHASE_FIELDS = ("phase_id", "ground_truth", "decision", "status", "iterations", "converged",
                "attacker", "detection_iteration", "removed_node", "wall_time_us")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class RunFailed(RuntimeError):
    """Too many phases aborted."""


@dataclass
class ExperimentConfig:
    """All knobs of one experiment. Mirrors the JSON config file.

    ``graph_seed`` only matters for the random topology: when ``None``
    every phase draws its own graph, otherwise all phases share one.
    ``attack`` names the behaviour; ``magnitude`` is ``u`` for
    ``additive``, ``c`` for ``constant`` and ``delta`` for ``initial``.
    ``data`` is an NSL-KDD file, or ``None`` for synthetic likelihoods.
    """

    topology: str = "ring"
    size: int | None = None
    graph_seed: int | None = None
    mitigation: str = "none"
    attack: str = "none"
    magnitude: float = 0.5
    magnitude_normal: float = 0.0
    start_iteration: int = 0
    phases: int = 1000
    epsilon: float = 1e-6
    max_iter: int = 10_000
    alert_value: float = 1.0
    attack_probability: float = 0.5
    data: str | None = None
    model: str | None = None
    margin: tuple = (0.5, 5.0)
    seed: int = 0
    voter_policy: str = "attacker-neighborhood"
    beta: float = 1.0
    outlier_persistence: int = 10
    decay_tolerance: float = 0.05
    delayed_exchange: bool = False
    tau: float = 1e-3
    persistence: int = 3
    observer_init: str = "exact"
    gain: float | None = None
    a: float = 2.0
    out: str | None = None
    format: str = "csv"

    def validate(self) -> "ExperimentConfig":
        checks = [
            (self.topology in TOPOLOGIES, f"topology must be one of {TOPOLOGIES}"),
            (self.mitigation in MITIGATIONS, f"mitigation must be one of {MITIGATIONS}"),
            (self.attack in ATTACKS, f"attack must be one of {ATTACKS}"),
            (self.phases >= 1, "phases must be >= 1"),
            (self.epsilon > 0, "epsilon must be positive"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.alert_value > 0, "alert_value must be positive"),
            (0 <= self.attack_probability <= 1, "attack_probability must lie in [0, 1]"),
            (math.isfinite(self.magnitude) and math.isfinite(self.magnitude_normal),
             "magnitudes must be finite"),
            (self.start_iteration >= 0, "start_iteration must be >= 0"),
            (len(self.margin) == 2 and 0 < self.margin[0] <= self.margin[1] < 35,
             "margin must be (lo, hi) with 0 < lo <= hi < 35"),
            (self.voter_policy in POLICIES, f"voter_policy must be one of {POLICIES}"),
            (self.beta > 0, "beta must be positive"),
            (self.outlier_persistence >= 0, "outlier_persistence must be >= 0"),
            (0 <= self.decay_tolerance < 1, "decay_tolerance must lie in [0, 1)"),
            (self.tau > 0, "tau must be positive"),
            (self.persistence >= 1, "persistence must be >= 1"),
            (self.observer_init in INIT_MODES, f"observer_init must be one of {INIT_MODES}"),
            (self.gain is None or self.gain > 0, "gain must be positive"),
            (self.a > 1, "a must exceed 1"),
            (self.format in FORMATS, f"format must be one of {FORMATS}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "margin" in d:
            d["margin"] = tuple(d["margin"])
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["margin"] = list(self.margin)
        return d


@dataclass
class PhaseRecord:
    """One row of the per-phase output."""

    phase_id: int
    ground_truth: str
    decision: str
    status: str
    iterations: int
    converged: bool
    attacker: int | None
    detection_iteration: int | None
    removed_node: int | None
    wall_time_us: int

    def row(self) -> list:
        return [getattr(self, f) for f in PHASE_FIELDS]


@dataclass
class Metrics:
    """Aggregate counts, histograms and timing of a run."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    accuracy: float = 0.0
    detection_speed_histogram: dict = field(default_factory=dict)
    convergence_speed_histogram: dict = field(default_factory=dict)
    total_wall_time: float = 0.0
    per_phase_wall_times: list = field(default_factory=list)
    aborted: int = 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: Metrics
    records: list


def decide(avg_log_pa: float, avg_log_pn: float, alert_value: float = 1.0) -> str:
    """Alert when the fused likelihood ratio exceeds ``alert_value``."""
    if not (math.isfinite(avg_log_pa) and math.isfinite(avg_log_pn)):
        raise ValueError("decision inputs must be finite")
    return ALERT if avg_log_pa - avg_log_pn > math.log(alert_value) else NO_ALERT


def phase_rng(seed: int, phase_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, phase_id]))


def make_mitigation(cfg: ExperimentConfig):
    if cfg.mitigation in ("outlier", "soft"):
        return OutlierDetector(beta=cfg.beta, policy=cfg.voter_policy,
                               persistence=cfg.outlier_persistence,
                               decay_tolerance=cfg.decay_tolerance,
                               delayed_exchange=cfg.delayed_exchange,
                               soft=cfg.mitigation == "soft", gain=cfg.gain, a=cfg.a)
    if cfg.mitigation == "fault":
        return FaultDetector(tau=cfg.tau, persistence=cfg.persistence, init=cfg.observer_init)
    return None


def make_attack(cfg: ExperimentConfig, target: int) -> AttackModel | None:
    if cfg.attack == "additive":
        kind = AdditiveDisruption(cfg.magnitude, cfg.magnitude_normal)
    elif cfg.attack == "constant":
        kind = ConstantTransmission(cfg.magnitude)
    elif cfg.attack == "initial":
        kind = InitialStateFalsification(cfg.magnitude, cfg.magnitude_normal)
    else:
        return None
    return AttackModel(kind=kind, target=target, start_iteration=cfg.start_iteration)


class RecordSource:
    """Round-robin supply of per-class NSL-KDD likelihood pairs."""

    def __init__(self, data_path: str, model_path: str | None = None):
        with open(data_path, encoding="utf-8") as fh:
            records = filter_dos(parse_records(fh, skip_bad=True))
        self.model = (NaiveBayesModel.load(model_path) if model_path
                      else train(records))
        self.pairs = {"attack": [], "normal": []}
        for r in records:
            self.pairs["attack" if r.is_attack else "normal"].append(log_likelihoods(self.model, r))
        for k, v in self.pairs.items():
            if not v:
                raise ConfigError(f"data file has no {k} records")
        self._warned = False

    def take(self, truth: str, phase_id: int, n: int) -> list:
        pool = self.pairs[truth]
        start = phase_id * n
        if start + n > len(pool) and not self._warned:
            logger.warning("%s records exhausted at phase %d; wrapping around", truth, phase_id)
            self._warned = True
        return [pool[(start + i) % len(pool)] for i in range(n)]


@dataclass
class PhaseSetup:
    """Everything a phase needs, drawn from its seed."""

    truth: str
    weights: object
    x_attack: np.ndarray
    x_normal: np.ndarray
    target: int
    attacker: AttackModel | None


def prepare_phase(cfg: ExperimentConfig, phase_id: int, source: RecordSource | None = None,
                  graph=None) -> PhaseSetup:
    """Draw ground truth, graph, target and initial states for a phase."""
    rng = phase_rng(cfg.seed, phase_id)
    truth = "attack" if rng.random() < cfg.attack_probability else "normal"
    if graph is None:
        gseed = int(rng.integers(2**32)) if cfg.graph_seed is None else cfg.graph_seed
        graph = build_topology(cfg.topology, cfg.size, gseed, biconnected=True)
    n = graph.n
    target = int(rng.integers(n))
    if source is None:
        seeds = rng.integers(2**32, size=n)
        pairs = [synthetic_pair(truth, int(s), cfg.margin) for s in seeds]
    else:
        pairs = source.take(truth, phase_id, n)
    return PhaseSetup(truth=truth, weights=build_max_degree_weights(graph),
                      x_attack=np.array([p.log_pa for p in pairs]),
                      x_normal=np.array([p.log_pn for p in pairs]),
                      target=target, attacker=make_attack(cfg, target))


def run_phase_protocol(cfg: ExperimentConfig, phase_id: int, source: RecordSource | None = None,
                       graph=None) -> PhaseRecord:
    """Run one seeded phase end to end and return its record.

    Args:
        cfg: Experiment configuration.
        phase_id: Phase counter, combined with ``cfg.seed`` for the seed.
        source: NSL-KDD likelihood source; synthetic when ``None``.
        graph: Fixed graph to use instead of building one.
    """
    s = prepare_phase(cfg, phase_id, source, graph)
    attacker_id = s.target if s.attacker else None
    started = time.perf_counter()
    try:
        res = run_phase(s.weights, s.x_attack, s.x_normal, cfg.epsilon, cfg.max_iter,
                        s.attacker, make_mitigation(cfg))
    except PhaseAborted as exc:
        logger.warning("phase %d aborted: %s", phase_id, exc)
        return PhaseRecord(phase_id, s.truth, "", "aborted", exc.iteration, False,
                           attacker_id, exc.iteration, exc.report.removed,
                           int((time.perf_counter() - started) * 1e6))
    elapsed = time.perf_counter() - started
    det = res.detection
    return PhaseRecord(
        phase_id=phase_id, ground_truth=s.truth,
        decision=decide(res.final_attack_avg, res.final_normal_avg, cfg.alert_value),
        status="ok", iterations=res.iterations, converged=res.converged,
        attacker=attacker_id,
        detection_iteration=det.iteration if det else None,
        removed_node=res.removed, wall_time_us=int(elapsed * 1e6))


def trace_phase(cfg: ExperimentConfig, phase_id: int, out_dir) -> list[str]:
    """Re-run one phase with debug dumps into ``out_dir``.

    Writes ``trajectory.csv`` always, ``outlier_trace.csv`` or
    ``residual_trace.csv`` for the matching mitigation, and the graph
    as ``graph.txt``.
    """
    cfg.validate()
    source = RecordSource(cfg.data, cfg.model) if cfg.data else None
    graph = None
    if cfg.topology != "random" or cfg.graph_seed is not None:
        graph = build_topology(cfg.topology, cfg.size, cfg.graph_seed or 0, biconnected=True)
    s = prepare_phase(cfg, phase_id, source, graph)
    mit = make_mitigation(cfg)
    if mit is not None:
        mit.rows = []
    os.makedirs(out_dir, exist_ok=True)
    res = run_phase(s.weights, s.x_attack, s.x_normal, cfg.epsilon, cfg.max_iter,
                    s.attacker, mit, record=True)
    paths = [os.path.join(out_dir, "trajectory.csv"), os.path.join(out_dir, "graph.txt")]
    write_trajectory_csv(res, paths[0])
    with open(paths[1], "w", encoding="utf-8") as fh:
        fh.write(s.weights.graph.to_edge_list())
    if mit is not None:
        name = "residual_trace.csv" if isinstance(mit, FaultDetector) else "outlier_trace.csv"
        paths.append(os.path.join(out_dir, name))
        mit.write_trace_csv(paths[-1])
    return paths


def tally(records: list) -> Metrics:
    """Counts, histograms and timing from per-phase records."""
    m = Metrics()
    ok = [r for r in records if r.status == "ok"]
    m.aborted = len(records) - len(ok)
    for r in ok:
        alert = r.decision == ALERT
        if r.ground_truth == "attack":
            m.tp += alert
            m.fn += not alert
        else:
            m.fp += alert
            m.tn += not alert
    total = m.tp + m.tn + m.fp + m.fn
    m.accuracy = (m.tp + m.tn) / total if total else 0.0
    m.detection_speed_histogram = dict(sorted(Counter(
        r.detection_iteration for r in ok if r.detection_iteration is not None).items()))
    m.convergence_speed_histogram = dict(sorted(Counter(r.iterations for r in ok).items()))
    m.per_phase_wall_times = [r.wall_time_us / 1e6 for r in records]
    m.total_wall_time = math.fsum(m.per_phase_wall_times)
    return m


def run_experiment(cfg: ExperimentConfig, max_abort_fraction: float = 0.05) -> ExperimentResult:
    """Run ``cfg.phases`` phases sequentially and tally them.

    Raises:
        RunFailed: More than ``max_abort_fraction`` of phases aborted.
    """
    cfg.validate()
    source = RecordSource(cfg.data, cfg.model) if cfg.data else None
    graph = None
    if cfg.topology != "random" or cfg.graph_seed is not None:
        graph = build_topology(cfg.topology, cfg.size, cfg.graph_seed or 0, biconnected=True)
    records = [run_phase_protocol(cfg, p, source, graph) for p in range(cfg.phases)]
    metrics = tally(records)
    if metrics.aborted > max_abort_fraction * cfg.phases:
        raise RunFailed(f"{metrics.aborted} of {cfg.phases} phases aborted")
    return ExperimentResult(cfg, metrics, records)


@dataclass
class ConvergenceComparison:
    """Paired honest and constant-attack convergence results."""

    honest_iterations: list
    attacked_iterations: list
    attacked_max_error: list
    c: float

    @property
    def honest_histogram(self) -> dict:
        return dict(sorted(Counter(self.honest_iterations).items()))

    @property
    def attacked_histogram(self) -> dict:
        return dict(sorted(Counter(self.attacked_iterations).items()))


def compare_convergence(cfg: ExperimentConfig) -> ConvergenceComparison:
    """Run each seeded phase twice: honest, then with a constant attacker.

    ``cfg.magnitude`` is the constant. Both runs use the same initial
    states; mitigation is ignored.
    """
    cfg.validate()
    honest, attacked, err = [], [], []
    graph = None
    if cfg.topology != "random" or cfg.graph_seed is not None:
        graph = build_topology(cfg.topology, cfg.size, cfg.graph_seed or 0)
    for p in range(cfg.phases):
        rng = phase_rng(cfg.seed, p)
        g = graph if graph is not None else build_topology(
            cfg.topology, cfg.size, int(rng.integers(2**32)))
        w = build_max_degree_weights(g)
        xa = rng.uniform(-55.0, -20.0, g.n)
        xn = rng.uniform(-55.0, -20.0, g.n)
        target = int(rng.integers(g.n))
        a = run_phase(w, xa, xn, cfg.epsilon, cfg.max_iter)
        b = run_phase(w, xa, xn, cfg.epsilon, cfg.max_iter,
                      AttackModel(ConstantTransmission(cfg.magnitude), target))
        honest.append(a.iterations)
        attacked.append(b.iterations)
        err.append(float(max(np.abs(b.final_attack - cfg.magnitude).max(),
                             np.abs(b.final_normal - cfg.magnitude).max())))
    return ConvergenceComparison(honest, attacked, err, cfg.magnitude)


BENCH_GRID = (("ring", 9), ("ring", 25), ("torus", 9), ("torus", 25), ("petersen", 10),
              ("random", 10))


def bench(grid=BENCH_GRID, mitigations=("none", "outlier", "fault"), phases: int = 20,
          repeats: int = 3, seed: int = 0, epsilon: float = 1e-6) -> list[dict]:
    """Wall time of attack-free runs for each topology and mitigation.

    Runs are sequential. Each configuration is timed ``repeats`` times and
    the smallest total is kept, which filters scheduler noise.
    """
    rows = []
    for topo, size in grid:
        for mit in mitigations:
            cfg = ExperimentConfig(topology=topo, size=size, graph_seed=seed if topo == "random" else None,
                                   mitigation=mit, attack="none", phases=phases, seed=seed,
                                   epsilon=epsilon).validate()
            best = math.inf
            for _ in range(repeats):
                res = run_experiment(cfg)
                best = min(best, res.metrics.total_wall_time)
            rows.append({"topology": topo, "size": size, "mitigation": mit,
                         "phases": phases, "total_ms": best * 1e3,
                         "per_phase_ms": best * 1e3 / phases})
    return rows


def median(values) -> float:
    return float(statistics.median(values)) if values else math.nan


def _phase_csv(records) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(PHASE_FIELDS)
    for r in records:
        wr.writerow(["" if v is None else v for v in r.row()])
    return buf.getvalue()


def _hist_csv(hist: dict) -> str:
    return "iterations,count\n" + "".join(f"{k},{v}\n" for k, v in hist.items())


def summary_dict(result: ExperimentResult) -> dict:
    m = result.metrics
    return {
        "seed": result.config.seed,
        "config": result.config.to_dict(),
        "metrics": {
            "tp": m.tp, "tn": m.tn, "fp": m.fp, "fn": m.fn, "accuracy": m.accuracy,
            "aborted": m.aborted,
            "detection_speed_histogram": {str(k): v for k, v in m.detection_speed_histogram.items()},
            "convergence_speed_histogram": {str(k): v for k, v in m.convergence_speed_histogram.items()},
            "total_wall_time": m.total_wall_time,
            "per_phase_wall_times": m.per_phase_wall_times,
        },
    }


def export(result: ExperimentResult, fmt: str, path) -> list[str]:
    """Write per-phase rows and a summary into directory ``path``.

    CSV output: ``phases.csv``, ``summary.json``, ``detection_speed.csv``
    and ``convergence_speed.csv``. JSON output: ``phases.json`` and
    ``summary.json``.

    Raises:
        OSError: If the directory cannot be created or written.
    """
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    try:
        os.makedirs(path, exist_ok=True)
        written = []

        def put(name, text):
            p = os.path.join(path, name)
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(text)
            written.append(p)

        if fmt == "csv":
            put("phases.csv", _phase_csv(result.records))
            put("detection_speed.csv", _hist_csv(result.metrics.detection_speed_histogram))
            put("convergence_speed.csv", _hist_csv(result.metrics.convergence_speed_histogram))
        else:
            put("phases.json", json.dumps([dataclasses.asdict(r) for r in result.records], indent=1))
        put("summary.json", json.dumps(summary_dict(result), indent=1))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return written

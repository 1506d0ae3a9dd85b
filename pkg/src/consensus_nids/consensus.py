"""Max-degree weights and the synchronous dual-channel consensus phase."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .attacks import ATTACK, CHANNELS, NORMAL, AttackModel, apply_attack
from .topology import DisconnectionReport, Graph, remove_node


class PhaseAborted(RuntimeError):
    """A removal left the network disconnected."""

    def __init__(self, report: DisconnectionReport, iteration: int):
        super().__init__(
            f"removing node {report.removed} at iteration {iteration} "
            f"split the network into {len(report.components)} components")
        self.report = report
        self.iteration = iteration


@dataclass(frozen=True)
class WeightMatrix:
    """Max-degree consensus weights for ``graph``."""

    graph: Graph
    entries: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.graph.n


def build_max_degree_weights(g: Graph) -> WeightMatrix:
    """Edges get ``1/(d+1)``, the diagonal ``1 - d_i/(d+1)``, ``d`` = max degree."""
    d = g.max_degree
    w = g.adjacency.astype(float) / (d + 1)
    np.fill_diagonal(w, 1.0 - g.degrees / (d + 1))
    w.setflags(write=False)
    return WeightMatrix(graph=g, entries=w)


def consensus_step(w: WeightMatrix, x, u=None) -> np.ndarray:
    """One synchronous update ``W x + u``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (w.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({w.n},)")
    out = w.entries @ x
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != x.shape:
            raise ValueError(f"input has shape {u.shape}, expected {x.shape}")
        out = out + u
    return out


def observation(g: Graph, i: int, x) -> np.ndarray:
    """States of ``i`` and its neighbours, ascending node order."""
    return np.asarray(x, dtype=float)[g.observed_set(i)]


@dataclass
class Detection:
    """A mitigation verdict.

    Attributes:
        iteration: Iteration at which the verdict fired.
        node: Accused node in the phase's original numbering.
        score: Evidence magnitude (deviation or residual).
        channel: Channel whose data produced the verdict.
    """

    iteration: int
    node: int
    score: float
    channel: str


class Mitigation(Protocol):
    """Hook interface consumed by :func:`run_phase`.

    Indices passed to the hook are positions in the current (possibly
    shrunk) state vectors. ``step`` may return ``None`` to accept the
    plain weighted update.
    """

    def start(self, w: WeightMatrix, states: dict) -> None: ...

    def step(self, w: WeightMatrix, channel: str, x: np.ndarray) -> np.ndarray | None: ...

    def observe(self, t: int, states: dict) -> tuple | None: ...

    def rebuild(self, w: WeightMatrix, states: dict) -> None: ...


@dataclass
class PhaseState:
    """Dual-channel state of a running phase."""

    t: int
    x_attack: np.ndarray
    x_normal: np.ndarray
    prev_attack: np.ndarray
    prev_normal: np.ndarray
    eps: float

    @property
    def converged(self) -> np.ndarray:
        """``(n, 2)`` flags: node moved less than ``eps`` on each channel."""
        return np.column_stack((np.abs(self.x_attack - self.prev_attack) < self.eps,
                                np.abs(self.x_normal - self.prev_normal) < self.eps))

    def channel(self, name: str) -> np.ndarray:
        return self.x_attack if name == ATTACK else self.x_normal


@dataclass
class PhaseResult:
    """Outcome of one consensus phase.

    ``live`` maps final state positions to original node ids. When
    ``record`` was requested, ``trajectories`` holds one array per
    iteration and channel with ``nan`` for removed nodes.
    """

    iterations: int
    converged: bool
    final_attack: np.ndarray
    final_normal: np.ndarray
    live: np.ndarray
    detection: Detection | None = None
    removed: int | None = None
    wall_time: float = 0.0
    trajectories: dict | None = None

    @property
    def final_attack_avg(self) -> float:
        return float(self.final_attack.mean())

    @property
    def final_normal_avg(self) -> float:
        return float(self.final_normal.mean())

    @property
    def detection_event(self) -> tuple | None:
        if self.detection is None:
            return None
        return (self.detection.iteration, self.detection.node)


def run_phase(w: WeightMatrix, x0_attack, x0_normal, eps: float = 1e-6,
              max_iter: int = 10_000, attacker: AttackModel | None = None,
              mitigation: Mitigation | None = None, record: bool = False) -> PhaseResult:
    """Iterate both channels until every node moves less than ``eps``.

    The attacker's transmitted value replaces its honest update each
    iteration. After each update the mitigation hook may accuse a node;
    the node is removed, weights are rebuilt on the survivors and the
    phase continues from the current states. Only the first verdict is
    acted on (single-attacker scope).

    Raises:
        PhaseAborted: The removal disconnected the network.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    n0 = w.n
    xa = np.array(x0_attack, dtype=float)
    xn = np.array(x0_normal, dtype=float)
    if xa.shape != (n0,) or xn.shape != (n0,):
        raise ValueError(f"initial states must have shape ({n0},)")
    if attacker is not None and not (0 <= attacker.target < n0):
        raise ValueError(f"attack target {attacker.target} out of range")

    started = time.perf_counter()
    live = np.arange(n0)
    pos = attacker.target if attacker is not None else None
    traj = {ATTACK: [xa.copy()], NORMAL: [xn.copy()]} if record else None
    state = PhaseState(t=0, x_attack=xa, x_normal=xn, prev_attack=xa, prev_normal=xn, eps=eps)
    if mitigation is not None:
        mitigation.start(w, {ATTACK: xa, NORMAL: xn})
    detection = None
    removed = None
    converged = False
    W = w.entries
    while state.t < max_iter:
        ya = yn = None
        if mitigation is not None:
            ya = mitigation.step(w, ATTACK, state.x_attack)
            yn = mitigation.step(w, NORMAL, state.x_normal)
        ya = W @ state.x_attack if ya is None else ya
        yn = W @ state.x_normal if yn is None else yn
        if pos is not None:
            ya[pos] = apply_attack(attacker, state.t, ya[pos], ATTACK)
            yn[pos] = apply_attack(attacker, state.t, yn[pos], NORMAL)
        state.prev_attack, state.prev_normal = state.x_attack, state.x_normal
        state.x_attack, state.x_normal = ya, yn
        state.t += 1
        t = state.t
        verdict = None
        if mitigation is not None and detection is None:
            verdict = mitigation.observe(t, {ATTACK: ya, NORMAL: yn})
        if verdict is not None:
            k, score, ch = verdict
            detection = Detection(iteration=t, node=int(live[k]), score=float(score), channel=ch)
            removed = detection.node
            reduced = remove_node(w.graph, k)
            if isinstance(reduced, DisconnectionReport):
                orig = DisconnectionReport(
                    removed=removed,
                    components=tuple(tuple(int(live[c]) for c in comp)
                                     for comp in reduced.components))
                raise PhaseAborted(orig, t)
            keep = np.arange(len(live)) != k
            live = live[keep]
            if pos is not None:
                pos = None if pos == k else pos - (pos > k)
            w = build_max_degree_weights(reduced)
            W = w.entries
            state.x_attack, state.x_normal = state.x_attack[keep], state.x_normal[keep]
            state.prev_attack, state.prev_normal = state.prev_attack[keep], state.prev_normal[keep]
            mitigation.rebuild(w, {ATTACK: state.x_attack, NORMAL: state.x_normal})
        if traj is not None:
            for ch in CHANNELS:
                full = np.full(n0, np.nan)
                full[live] = state.channel(ch)
                traj[ch].append(full)
        if (np.abs(state.x_attack - state.prev_attack).max() < eps
                and np.abs(state.x_normal - state.prev_normal).max() < eps):
            converged = True
            break

    return PhaseResult(
        iterations=state.t, converged=converged, final_attack=state.x_attack,
        final_normal=state.x_normal, live=live, detection=detection, removed=removed,
        wall_time=time.perf_counter() - started,
        trajectories={ch: np.array(v) for ch, v in traj.items()} if traj is not None else None)


def write_trajectory_csv(result: PhaseResult, path) -> None:
    """Dump recorded trajectories as ``t,node,channel,value`` rows."""
    if result.trajectories is None:
        raise ValueError("phase was run without record=True")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,node,channel,value\n")
        for ch in CHANNELS:
            for t, row in enumerate(result.trajectories[ch]):
                for node, val in enumerate(row):
                    if not np.isnan(val):
                        fh.write(f"{t},{node},{ch},{float(val)!r}\n")

"""Adaptive-threshold outlier detection with neighbourhood voting.

Every node keeps a threshold ``lambda_i`` that shrinks with the spread of
its neighbourhood, flags neighbours that deviate by at least that much,
and the flags are pooled into a majority verdict.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .attacks import CHANNELS
from .topology import Graph

ATTACKER_NEIGHBORHOOD = "attacker-neighborhood"
COMMON_NEIGHBORS_PLUS_SELF = "common-neighbors-plus-self"
POLICIES = (ATTACKER_NEIGHBORHOOD, COMMON_NEIGHBORS_PLUS_SELF)

_TINY = 1e-12


@dataclass
class OutlierState:
    """Per-node thresholds, deviation sums and current flags."""

    lam: np.ndarray
    prev_deviation_sum: np.ndarray
    flags: list = field(default_factory=list)
    deviations: list = field(default_factory=list)


def _neighbour_deviations(g: Graph, x: list, i: int) -> dict:
    xi = x[i]
    return {j: abs(x[j] - xi) for j in g.neighbors(i)}


def init_thresholds(x0, g: Graph, beta: float = 1.0) -> OutlierState:
    """``lambda_i(0) = beta * mean |x_j(0) - x_i(0)|`` over neighbours.

    Nodes whose neighbourhood is flat start at ``lambda_i = beta``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x0, dtype=float).tolist()
    lam = np.empty(g.n)
    sums = np.empty(g.n)
    devs = []
    for i in range(g.n):
        d = _neighbour_deviations(g, x, i)
        s = sum(d.values())
        mean = s / len(d) if d else 0.0
        lam[i] = beta * mean if mean > 0 else beta
        sums[i] = s
        devs.append(d)
    return OutlierState(lam=lam, prev_deviation_sum=sums,
                        flags=[set() for _ in range(g.n)], deviations=devs)


def update_threshold(lam: float, dev_sum_t: float, dev_sum_t1: float) -> float:
    """Rescale ``lam`` by the ratio of successive deviation sums.

    A vanishing previous sum holds the threshold.
    """
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    if dev_sum_t < _TINY:
        return lam
    return lam * (dev_sum_t1 / dev_sum_t)


def flag_suspicious(i: int, x_i: float, neighbor_values: dict, lambda_i: float) -> set:
    """Neighbours whose deviation from ``x_i`` is at least ``lambda_i``."""
    if lambda_i < 0:
        raise ValueError("threshold must be non-negative")
    return {j for j, xj in neighbor_values.items() if abs(xj - x_i) >= lambda_i}


def vote_candidates(flags_by_observer: dict, g: Graph, values=None,
                    policy: str = ATTACKER_NEIGHBORHOOD) -> dict:
    """Nodes that pass the vote, mapped to their reported deviation.

    When ``values`` is given, an observer's flag on ``j`` also carries the
    side ``j`` lies on, and only flags agreeing on that side are pooled.
    The reported deviation is the mean ``|x_j - x_i|`` over the agreeing
    flaggers (``nan`` without values).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown voter policy {policy!r}")
    x = None if values is None else np.asarray(values, dtype=float).tolist()
    accused = {}
    for i, flagged in flags_by_observer.items():
        for j in flagged:
            accused.setdefault(j, []).append(i)

    def side(i, j):
        return 0 if x is None else (x[j] > x[i]) - (x[j] < x[i])

    out = {}
    for j, flaggers in accused.items():
        groups = {}
        for i in flaggers:
            groups.setdefault(side(i, j), []).append(i)
        best = None
        for members in groups.values():
            member_set = set(members)
            if policy == ATTACKER_NEIGHBORHOOD:
                ok = len(members) > g.degrees[j] / 2
            else:
                ok = False
                nj = set(g.neighbors(j))
                for i in members:
                    common = set(g.neighbors(i)) & nj
                    votes = len((common | {i}) & member_set)
                    if votes > math.ceil(len(common) / 2):
                        ok = True
                        break
            if ok and (best is None or len(members) > len(best)):
                best = members
        if best is not None:
            out[j] = (float(np.mean([abs(x[j] - x[i]) for i in best]))
                      if x is not None else math.nan)
    return out


def majority_verdict(flags_by_observer: dict, g: Graph, values=None,
                     policy: str = ATTACKER_NEIGHBORHOOD) -> int | None:
    """Accused node with the largest deviation among those passing the vote.

    Args:
        flags_by_observer: Observer id to the set of neighbours it flags.
        g: Current graph.
        values: Current states, used for side agreement and tie-breaks.
            Without them ties go to the lowest node id.
        policy: ``attacker-neighborhood`` (strict majority of the
            accused node's neighbours) or ``common-neighbors-plus-self``
            (the observer plus the common neighbours of observer and
            accused, needing more than ``ceil(B / 2)`` votes).
    """
    cand = vote_candidates(flags_by_observer, g, values, policy)
    if not cand:
        return None
    if values is None:
        return min(cand)
    return max(sorted(cand), key=lambda j: cand[j])


def soft_update(x_i: float, trusted: dict, suspicious: dict, gain: float, a: float = 2.0) -> float:
    """Consensus step that down-weights suspicious neighbours by ``1/a``."""
    if gain <= 0:
        raise ValueError("gain must be positive")
    if a <= 1:
        raise ValueError("a must exceed 1")
    pull = sum(xj - x_i for xj in trusted.values())
    weak = sum(xj - x_i for xj in suspicious.values())
    return x_i + gain * pull + (gain / a) * weak


class _ChannelTracker:
    """Thresholds, flags and verdict confirmation for one channel."""

    def __init__(self, g: Graph, x, beta: float, persistence: int):
        self.state = init_thresholds(x, g, beta)
        self.history = deque(maxlen=persistence + 1)
        self.leader = None
        self.streak = 0
        self.pending = None

    def refresh(self, g: Graph, x: list) -> None:
        st = self.state
        for i in range(g.n):
            nb = {j: x[j] for j in g.neighbors(i)}
            s = sum(abs(v - x[i]) for v in nb.values())
            st.lam[i] = update_threshold(st.lam[i], st.prev_deviation_sum[i], s)
            st.prev_deviation_sum[i] = s
            st.flags[i] = flag_suspicious(i, x[i], nb, st.lam[i])

    def flag_all(self, g: Graph, x: list) -> None:
        st = self.state
        for i in range(g.n):
            nb = {j: x[j] for j in g.neighbors(i)}
            st.flags[i] = flag_suspicious(i, x[i], nb, st.lam[i])


class OutlierDetector:
    """Mitigation hook running the outlier method on both channels.

    A node becomes the *leader* when it passes the vote with the largest
    reported deviation. The verdict fires once the same leader has held
    for ``persistence`` further iterations and its deviation sits within
    ``decay_tolerance`` of its peak over that window. An honest
    node that momentarily sticks out is pulled back by averaging, so its
    deviation decays. A node fed by an external input does not decay.

    Args:
        beta: Initial threshold scale.
        policy: Voter policy, see :func:`majority_verdict`.
        persistence: Iterations a leader must hold.
        decay_tolerance: Allowed relative shrink of the leader's deviation.
        delayed_exchange: Tally the flags of the previous iteration.
        soft: Replace the plain update with :func:`soft_update`.
        gain: Soft-update gain, default ``1/(d+1)``.
        a: Soft-update attenuation of suspicious neighbours.
        channels: Channels to watch.
        trace: Keep per-iteration ``(t, channel, node, lambda, flags)`` rows.
    """

    def __init__(self, beta: float = 1.0, policy: str = ATTACKER_NEIGHBORHOOD,
                 persistence: int = 10, decay_tolerance: float = 0.05,
                 delayed_exchange: bool = False, soft: bool = False,
                 gain: float | None = None, a: float = 2.0,
                 channels=CHANNELS, trace: bool = False):
        if policy not in POLICIES:
            raise ValueError(f"unknown voter policy {policy!r}")
        if persistence < 0:
            raise ValueError("persistence must be >= 0")
        if not 0 <= decay_tolerance < 1:
            raise ValueError("decay_tolerance must lie in [0, 1)")
        self.beta = beta
        self.policy = policy
        self.persistence = persistence
        self.decay_tolerance = decay_tolerance
        self.delayed_exchange = delayed_exchange
        self.soft = soft
        self.gain = gain
        self.a = a
        self.channels = tuple(channels)
        self.rows = [] if trace else None
        self.armed = False

    def start(self, w, states: dict) -> None:
        self.graph = w.graph
        self.armed = True
        self.trackers = {}
        for ch in self.channels:
            x = np.asarray(states[ch], dtype=float).tolist()
            tr = _ChannelTracker(self.graph, x, self.beta, self.persistence)
            tr.flag_all(self.graph, x)
            self.trackers[ch] = tr
            self._record(0, ch)
            self._vote(tr, x)

    def step(self, w, channel: str, x: np.ndarray):
        if not (self.soft and self.armed and channel in self.trackers):
            return None
        g = w.graph
        gain = self.gain if self.gain is not None else 1.0 / (g.max_degree + 1)
        flags = self.trackers[channel].state.flags
        xl = x.tolist()
        out = np.empty(g.n)
        for i in range(g.n):
            trusted = {j: xl[j] for j in g.neighbors(i) if j not in flags[i]}
            suspicious = {j: xl[j] for j in flags[i]}
            out[i] = soft_update(xl[i], trusted, suspicious, gain, self.a)
        return out

    def observe(self, t: int, states: dict):
        if not self.armed:
            return None
        best = None
        for ch in self.channels:
            tr = self.trackers[ch]
            x = np.asarray(states[ch], dtype=float).tolist()
            tr.refresh(self.graph, x)
            self._record(t, ch)
            hit = self._vote(tr, x)
            if hit is not None and (best is None or hit[1] > best[1]):
                best = (hit[0], hit[1], ch)
        return best

    def rebuild(self, w, states: dict) -> None:
        # single-attacker scope: stand down after the first removal
        self.graph = w.graph
        self.armed = False

    def _vote(self, tr: _ChannelTracker, x: list):
        flags = {i: set(f) for i, f in enumerate(tr.state.flags)}
        if self.delayed_exchange:
            flags, tr.pending = tr.pending, flags
            if flags is None:
                return None
        cand = vote_candidates(flags, self.graph, x, self.policy)
        if not cand:
            tr.leader, tr.streak = None, 0
            tr.history.clear()
            return None
        lead = max(sorted(cand), key=lambda j: cand[j])
        if lead == tr.leader:
            tr.streak += 1
        else:
            tr.leader, tr.streak = lead, 1
            tr.history.clear()
        tr.history.append(cand[lead])
        if tr.streak > self.persistence:
            if tr.history[-1] >= (1.0 - self.decay_tolerance) * max(tr.history):
                return lead, cand[lead]
        return None

    def _record(self, t: int, ch: str) -> None:
        if self.rows is None:
            return
        st = self.trackers[ch].state
        for i in range(self.graph.n):
            self.rows.append((t, ch, i, float(st.lam[i]), ";".join(map(str, sorted(st.flags[i])))))

    def write_trace_csv(self, path) -> None:
        """Write ``t,channel,node,lambda,flags`` rows collected with ``trace=True``."""
        if self.rows is None:
            raise ValueError("detector was created without trace=True")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,channel,node,lambda,flags\n")
            for t, ch, i, lam, fl in self.rows:
                fh.write(f"{t},{ch},{i},{lam!r},{fl}\n")

"""Observer-based fault detection.

Each node runs a full-state observer of the consensus dynamics fed by its
own neighbourhood measurements. The residual ``|x_o(t+1) - W x_o(t)|``
vanishes in an honest network and settles at the size of any external
input a neighbour adds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import CHANNELS
from .topology import Graph

INIT_EXACT = "exact"
INIT_ZERO = "zero"
INIT_LOCAL_MEAN = "local-mean"
INIT_MODES = (INIT_EXACT, INIT_ZERO, INIT_LOCAL_MEAN)


@dataclass
class ObserverEntry:
    """Observer matrices and state for node ``node``.

    Attributes:
        node: Observing node.
        observed: Ascending indices of the node and its neighbours.
        C: Selection matrix, ``(deg + 1) x N``.
        G: ``-W[:, observed]``.
        K: ``C.T``.
        L: ``I - K C``.
        z: Observer state.
        x_o: Latest state estimate (``None`` before the first step).
    """

    node: int
    observed: np.ndarray
    C: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    x_o: np.ndarray | None = field(default=None, repr=False)

    def literal_next(self, w, y) -> np.ndarray:
        """``(W + G C) z - G y``, the equivalent update in observer form."""
        W = w.entries if hasattr(w, "entries") else w
        return (W + self.G @ self.C) @ self.z - self.G @ np.asarray(y, dtype=float)


@dataclass(frozen=True)
class Residual:
    """Entrywise residual magnitudes at one iteration."""

    values: np.ndarray
    iteration: int


def build_observer(w, g: Graph, i: int, init: str = INIT_EXACT, x0=None) -> ObserverEntry:
    """Construct the observer of node ``i``.

    Args:
        w: Weight matrix (``WeightMatrix`` or array).
        g: Graph ``w`` was built from.
        i: Observing node.
        init: Initial estimate of unobserved entries. ``exact`` uses
            ``x0`` as shared before the phase starts, ``zero`` uses
            zeros and ``local-mean`` uses the mean of the observed
            entries. Observed entries are overwritten by the first
            measurement in every mode.
        x0: Initial network state, required by ``exact`` and
            ``local-mean``.
    """
    if init not in INIT_MODES:
        raise ValueError(f"unknown observer init {init!r}")
    W = w.entries if hasattr(w, "entries") else np.asarray(w, dtype=float)
    n = g.n
    if not 0 <= i < n:
        raise ValueError(f"node {i} not in graph")
    obs = np.array(g.observed_set(i))
    C = np.zeros((len(obs), n))
    C[np.arange(len(obs)), obs] = 1.0
    K = C.T.copy()
    L = np.eye(n) - K @ C
    G = -W[:, obs]
    if init == INIT_ZERO:
        z = np.zeros(n)
    else:
        if x0 is None:
            raise ValueError(f"init {init!r} needs x0")
        x0 = np.asarray(x0, dtype=float)
        z = x0.copy() if init == INIT_EXACT else np.full(n, x0[obs].mean())
    return ObserverEntry(node=i, observed=obs, C=C, G=G, K=K, L=L, z=z)


def observer_step(entry: ObserverEntry, y_i, w) -> tuple[np.ndarray, np.ndarray]:
    """Advance one iteration from measurement ``y_i`` of the current state.

    Computes ``x_o = L z + K y`` and ``z_next = W x_o``, stores both on
    ``entry`` and returns ``(z_next, x_o)``.
    """
    y = np.asarray(y_i, dtype=float)
    if y.shape != (len(entry.observed),):
        raise ValueError(f"measurement has shape {y.shape}, expected ({len(entry.observed)},)")
    W = w.entries if hasattr(w, "entries") else w
    x_o = entry.L @ entry.z + entry.K @ y
    z_next = W @ x_o
    entry.x_o = x_o
    entry.z = z_next
    return z_next, x_o


def residual(x_o_next, w, x_o, iteration: int = 0) -> Residual:
    """``|x_o_next - W x_o|`` entrywise."""
    W = w.entries if hasattr(w, "entries") else w
    return Residual(values=np.abs(np.asarray(x_o_next) - W @ np.asarray(x_o)), iteration=iteration)


def detect(res: Residual, tau: float, persistence: int, history: np.ndarray,
           subjects=None) -> int | None:
    """Accuse the node whose residual has exceeded ``tau`` long enough.

    Args:
        res: Current residual.
        tau: Residual threshold.
        persistence: Consecutive iterations above ``tau`` required.
        history: Integer run-length counters, one per node, updated in
            place.
        subjects: Indices that may be accused (a node's neighbours). All
            nodes when omitted.

    Returns:
        The qualifying node with the largest residual, or ``None``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if persistence < 1:
        raise ValueError("persistence must be >= 1")
    over = res.values > tau
    history[:] = np.where(over, history + 1, 0)
    ok = history >= persistence
    if subjects is not None:
        mask = np.zeros_like(ok)
        mask[list(subjects)] = True
        ok &= mask
    if not ok.any():
        return None
    vals = np.where(ok, res.values, -np.inf)
    return int(np.argmax(vals))


class FaultDetector:
    """Mitigation hook giving every node an observer on each channel.

    Args:
        tau: Residual threshold.
        persistence: Consecutive iterations above ``tau``.
        init: Observer initial estimate, see :func:`build_observer`.
        channels: Channels to watch.
        trace: Keep ``(t, channel, observer, subject, value)`` rows for
            nonzero residual entries.
    """

    def __init__(self, tau: float = 1e-3, persistence: int = 3, init: str = INIT_EXACT,
                 channels=CHANNELS, trace: bool = False):
        if init not in INIT_MODES:
            raise ValueError(f"unknown observer init {init!r}")
        if tau <= 0 or persistence < 1:
            raise ValueError("tau must be positive and persistence >= 1")
        self.tau = tau
        self.persistence = persistence
        self.init = init
        self.channels = tuple(channels)
        self.rows = [] if trace else None
        self.armed = False

    def start(self, w, states: dict) -> None:
        self.w = w
        self.armed = True
        self._build(states)

    def _build(self, states: dict) -> None:
        g = self.w.graph
        self.bank = {}
        for ch in self.channels:
            x = np.asarray(states[ch], dtype=float)
            entries = []
            for i in range(g.n):
                e = build_observer(self.w, g, i, self.init, x)
                observer_step(e, x[e.observed], self.w)
                entries.append((e, np.zeros(g.n, dtype=int), g.neighbors(i)))
            self.bank[ch] = entries

    def step(self, w, channel, x):
        return None

    def observe(self, t: int, states: dict):
        if not self.armed:
            return None
        best = None
        for ch in self.channels:
            x = states[ch]
            for e, hist, nbrs in self.bank[ch]:
                prev = e.x_o
                z_prev = e.z
                _, x_o = observer_step(e, x[e.observed], self.w)
                # z_prev is W @ prev, so this equals residual(x_o, W, prev)
                res = Residual(values=np.abs(x_o - z_prev), iteration=t - 1)
                if self.rows is not None:
                    for j in np.flatnonzero(res.values):
                        self.rows.append((t - 1, ch, e.node, int(j), float(res.values[j])))
                j = detect(res, self.tau, self.persistence, hist, nbrs)
                if j is not None and (best is None or res.values[j] > best[1]):
                    best = (j, float(res.values[j]), ch)
        return best

    def rebuild(self, w, states: dict) -> None:
        # single-attacker scope: stand down after the first removal
        self.w = w
        self.armed = False

    def write_trace_csv(self, path) -> None:
        """Write ``t,channel,observer,subject,value`` rows collected with ``trace=True``."""
        if self.rows is None:
            raise ValueError("detector was created without trace=True")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,channel,observer,subject,value\n")
            for t, ch, i, j, v in self.rows:
                fh.write(f"{t},{ch},{i},{j},{v!r}\n")

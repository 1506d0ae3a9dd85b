"""Byzantine behaviours for a single compromised NIDS module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ATTACK = "attack"
NORMAL = "normal"
CHANNELS = (ATTACK, NORMAL)


@dataclass(frozen=True)
class ConstantTransmission:
    """Always transmit ``c``; ``c_normal`` defaults to ``c``."""

    c: float = -10.0
    c_normal: float | None = None


@dataclass(frozen=True)
class AdditiveDisruption:
    """Add a fixed input to the honest value on every iteration."""

    u_attack: float = 0.5
    u_normal: float = 0.0


@dataclass(frozen=True)
class InitialStateFalsification:
    """Add ``delta`` once, on the first active iteration."""

    delta: float = 1.0
    delta_normal: float = 0.0


@dataclass(frozen=True)
class AttackModel:
    """Which node lies, how, and from when.

    Attributes:
        kind: One of the three behaviour dataclasses above.
        target: Compromised node id.
        start_iteration: First iteration at which the behaviour applies.
    """

    kind: ConstantTransmission | AdditiveDisruption | InitialStateFalsification
    target: int
    start_iteration: int = 0

    def __post_init__(self):
        for v in vars(self.kind).values():
            if v is not None and not math.isfinite(v):
                raise ValueError(f"attack magnitude must be finite, got {v}")
        if self.start_iteration < 0:
            raise ValueError("start_iteration must be >= 0")


def apply_attack(model: AttackModel, t: int, honest_next: float, channel: str) -> float:
    """Value the attacker transmits at iteration ``t`` on ``channel``.

    Args:
        model: The attack.
        t: Iteration producing the value (0 for the first update).
        honest_next: What an honest node would have sent.
        channel: ``"attack"`` or ``"normal"``.
    """
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    if t < model.start_iteration:
        return honest_next
    kind = model.kind
    if isinstance(kind, ConstantTransmission):
        if channel == NORMAL and kind.c_normal is not None:
            return kind.c_normal
        return kind.c
    if isinstance(kind, AdditiveDisruption):
        return honest_next + (kind.u_attack if channel == ATTACK else kind.u_normal)
    if isinstance(kind, InitialStateFalsification):
        if t != model.start_iteration:
            return honest_next
        return honest_next + (kind.delta if channel == ATTACK else kind.delta_normal)
    raise TypeError(f"unsupported attack kind {type(kind).__name__}")


def select_target(n: int, seed) -> int:
    """Uniformly random node in ``[0, n)``, deterministic per seed."""
    if n < 2:
        raise ValueError(f"need at least two nodes, got {n}")
    return int(np.random.default_rng(seed).integers(n))

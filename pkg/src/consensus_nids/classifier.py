"""Naive Bayes log-likelihoods for NSL-KDD style connection records."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

N_FEATURES = 41
CATEGORICAL = (1, 2, 3)  # protocol_type, service, flag
DOS_LABELS = frozenset({"back", "land", "neptune", "pod", "smurf", "teardrop"})
NORMAL_LABEL = "normal"
LOG_RANGE = (-55.0, -20.0)

FEATURE_NAMES = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
    "num_compromised", "root_shell", "su_attempted", "num_root", "num_file_creations",
    "num_shells", "num_access_files", "num_outbound_cmds", "is_host_login",
    "is_guest_login", "count", "srv_count", "serror_rate", "srv_serror_rate",
    "rerror_rate", "srv_rerror_rate", "same_srv_rate", "diff_srv_rate",
    "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count",
    "dst_host_same_srv_rate", "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate", "dst_host_serror_rate", "dst_host_srv_serror_rate",
    "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)


class ParseError(ValueError):
    """A record line could not be parsed."""

    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class TrainingError(ValueError):
    """Training data lacks one of the two classes."""


@dataclass(frozen=True)
class FeatureRecord:
    """One connection record: 41 features, label, optional difficulty."""

    features: tuple
    label: str
    difficulty: int | None = None

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {len(self.features)}")
        if not self.label:
            raise ValueError("empty label")

    @property
    def is_attack(self) -> bool:
        return self.label != NORMAL_LABEL


@dataclass(frozen=True)
class LikelihoodPair:
    """Log-likelihoods of a record under the attack and normal hypotheses."""

    log_pa: float
    log_pn: float


def parse_records(stream: Iterable[str], skip_bad: bool = False) -> list[FeatureRecord]:
    """Parse comma-separated NSL-KDD lines (42 or 43 fields).

    Args:
        stream: Text lines; blank lines are ignored.
        skip_bad: Log and skip malformed lines instead of raising.

    Raises:
        ParseError: On a malformed line unless ``skip_bad``.
    """
    out = []
    for no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            out.append(_parse_line(line, no))
        except ParseError as exc:
            if not skip_bad:
                raise
            logger.warning("skipping %s", exc)
    return out


def _parse_line(line: str, no: int) -> FeatureRecord:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) not in (N_FEATURES + 1, N_FEATURES + 2):
        raise ParseError(no, f"expected {N_FEATURES + 1} or {N_FEATURES + 2} fields, got {len(parts)}")
    feats = []
    for k, p in enumerate(parts[:N_FEATURES]):
        if k in CATEGORICAL:
            feats.append(p)
            continue
        try:
            feats.append(float(p))
        except ValueError:
            raise ParseError(no, f"feature {FEATURE_NAMES[k]} is not numeric: {p!r}") from None
    label = parts[N_FEATURES].rstrip(".")
    if not label:
        raise ParseError(no, "empty label")
    difficulty = None
    if len(parts) == N_FEATURES + 2:
        try:
            difficulty = int(parts[-1])
        except ValueError:
            raise ParseError(no, f"difficulty is not an integer: {parts[-1]!r}") from None
    return FeatureRecord(tuple(feats), label, difficulty)


def filter_dos(records, dos_labels=DOS_LABELS) -> list[FeatureRecord]:
    """Keep normal traffic and denial-of-service attacks."""
    return [r for r in records if r.label == NORMAL_LABEL or r.label in dos_labels]


@dataclass
class NaiveBayesModel:
    """Per-feature class-conditional tables.

    Categorical tables map value to smoothed probability. Numeric tables
    hold equal-width bin edges and smoothed bin probabilities. ``floor``
    is the probability of a value never seen in training (or outside the
    binned range).
    """

    features: tuple
    counts: dict
    tables: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"features": list(self.features), "counts": self.counts,
                           "tables": self.tables}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NaiveBayesModel":
        d = json.loads(text)
        return cls(features=tuple(d["features"]), counts=d["counts"], tables=d["tables"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "NaiveBayesModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def prob(self, feature: int, value, cls_name: str) -> float:
        """Smoothed ``P(value | class)`` for one feature."""
        t = self.tables[str(feature)]
        c = t["classes"][cls_name]
        if t["kind"] == "categorical":
            return c["probs"].get(str(value), c["floor"])
        edges = t["edges"]
        v = float(value)
        if not edges[0] <= v <= edges[-1]:
            return c["floor"]
        b = min(int(np.searchsorted(edges, v, side="right")) - 1, len(edges) - 2)
        return c["probs"][b]


def _split(records):
    attack = [r for r in records if r.is_attack]
    normal = [r for r in records if not r.is_attack]
    return attack, normal


def train(records, n_bins: int = 10, features=None) -> NaiveBayesModel:
    """Fit Laplace-smoothed class-conditional tables.

    Args:
        records: Labelled training records.
        n_bins: Equal-width bins per numeric feature.
        features: Feature indices to use; all 41 by default.

    Raises:
        TrainingError: If either class has no records.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    features = tuple(range(N_FEATURES)) if features is None else tuple(sorted(features))
    attack, normal = _split(records)
    if not attack or not normal:
        raise TrainingError("training data needs both attack and normal records")
    groups = {"attack": attack, "normal": normal}
    model = NaiveBayesModel(features=features,
                            counts={"attack": len(attack), "normal": len(normal)})
    for k in features:
        if k in CATEGORICAL:
            support = sorted({r.features[k] for r in records})
            table = {"kind": "categorical", "classes": {}}
            for name, rows in groups.items():
                cnt = {v: 0 for v in support}
                for r in rows:
                    cnt[r.features[k]] += 1
                denom = len(rows) + len(support)
                table["classes"][name] = {
                    "probs": {v: (c + 1) / denom for v, c in cnt.items()},
                    "floor": 1 / denom,
                }
        else:
            vals = np.array([r.features[k] for r in records], dtype=float)
            lo, hi = float(vals.min()), float(vals.max())
            if hi == lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, n_bins + 1)
            table = {"kind": "numeric", "edges": edges.tolist(), "classes": {}}
            for name, rows in groups.items():
                v = np.array([r.features[k] for r in rows], dtype=float)
                hist, _ = np.histogram(v, bins=edges)
                denom = len(rows) + n_bins
                table["classes"][name] = {
                    "probs": ((hist + 1) / denom).tolist(),
                    "floor": 1 / denom,
                }
        model.tables[str(k)] = table
    return model


def feature_log_terms(model: NaiveBayesModel, record: FeatureRecord) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature ``log P(o_j | h)`` for both classes."""
    pa = np.array([math.log(model.prob(k, record.features[k], "attack")) for k in model.features])
    pn = np.array([math.log(model.prob(k, record.features[k], "normal")) for k in model.features])
    return pa, pn


def log_likelihoods(model: NaiveBayesModel, record: FeatureRecord) -> LikelihoodPair:
    """Sum of per-feature log-likelihoods under each hypothesis."""
    pa, pn = feature_log_terms(model, record)
    return LikelihoodPair(float(math.fsum(pa)), float(math.fsum(pn)))


def synthetic_pair(ground_truth: str, seed, margin=(0.5, 5.0),
                   bounds=LOG_RANGE) -> LikelihoodPair:
    """Random likelihood pair consistent with ``ground_truth``.

    The gap between the two values is drawn from ``margin``; both values
    lie in ``bounds``. ``attack`` puts ``log_pa`` on top.
    """
    if ground_truth not in ("attack", "normal"):
        raise ValueError(f"unknown ground truth {ground_truth!r}")
    lo, hi = bounds
    m_lo, m_hi = margin
    if not 0 < m_lo <= m_hi < hi - lo:
        raise ValueError(f"margin {margin} does not fit in {bounds}")
    rng = np.random.default_rng(seed)
    gap = rng.uniform(m_lo, m_hi)
    top = rng.uniform(lo + gap, hi)
    low = top - gap
    if ground_truth == "attack":
        return LikelihoodPair(float(top), float(low))
    return LikelihoodPair(float(low), float(top))

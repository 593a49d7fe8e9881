"""Dialogue-level rewards: task success (TS) and interaction quality (IQ)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

from .errors import ValidationError

TURN_PENALTY = -1
SUCCESS_BONUS = 20
IQ_STEP = 5
N_BUCKETS = 5


@dataclass(frozen=True)
class EpisodeOutcome:
    turns: int
    success: bool = False
    iq: int | None = None


@dataclass(frozen=True)
class EpisodeFeatures:
    """What an IQ estimator may look at once the dialogue has ended."""

    turns: int
    progress: float  # fraction of slots correctly acquired
    success: bool


class IqEstimator(Protocol):
    def estimate(self, features: EpisodeFeatures) -> int: ...


def reward_ts(outcome: EpisodeOutcome) -> int:
    if outcome.turns < 0:
        raise ValidationError("turn count must be non-negative")
    return outcome.turns * TURN_PENALTY + SUCCESS_BONUS * int(bool(outcome.success))


def reward_iq(outcome: EpisodeOutcome) -> int:
    if outcome.turns < 0:
        raise ValidationError("turn count must be non-negative")
    iq = outcome.iq
    if iq is None or isinstance(iq, bool) or int(iq) != iq or not 1 <= iq <= 5:
        raise ValidationError(f"iq must be an integer in 1..5, got {iq!r}")
    return outcome.turns * TURN_PENALTY + (int(iq) - 1) * IQ_STEP


def progress_bucket(progress: float) -> int:
    if not 0.0 <= progress <= 1.0:
        raise ValidationError(f"progress {progress} outside [0, 1]")
    return min(int(progress * N_BUCKETS), N_BUCKETS - 1)


class TableIqEstimator:
    """IQ looked up from the progress bucket (five equal bins of [0, 1])."""

    def __init__(self, buckets):
        buckets = list(buckets)
        if len(buckets) != N_BUCKETS:
            raise ValidationError(f"need exactly {N_BUCKETS} buckets, got {len(buckets)}")
        self.buckets = tuple(min(5, max(1, int(b))) for b in buckets)

    def estimate(self, features: EpisodeFeatures) -> int:
        return self.buckets[progress_bucket(features.progress)]


def table_iq_estimator(spec) -> TableIqEstimator:
    """Build from ``{"buckets": [iq, ...]}``."""
    try:
        buckets = spec["buckets"]
    except (KeyError, TypeError):
        raise ValidationError("estimator spec needs a 'buckets' list") from None
    return TableIqEstimator(buckets)


def load_iq_estimator(path) -> TableIqEstimator:
    with open(path) as fh:
        return table_iq_estimator(json.load(fh))

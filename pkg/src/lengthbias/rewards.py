"""Composite verifiable reward: accuracy + format + overlong penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .policy import EOS, Query
from .tasks import MARK, RESERVED, free_length_verifier

Verifier = Callable[[Query, Sequence[int]], bool]
FormatRule = Callable[[Sequence[int]], bool]

ACCURACY_REWARD = 1.0
FORMAT_REWARD = 0.5


@dataclass(frozen=True)
class LengthPenaltyConfig:
    l_max: int = 256
    l_buffer: int = 32
    penalty_scale: float = 0.3

    def __post_init__(self):
        if self.l_max <= 0 or self.l_buffer <= 0:
            raise ValueError("l_max and l_buffer must be positive")
        if self.l_buffer >= self.l_max:
            raise ValueError("l_buffer must be smaller than l_max")


@dataclass(frozen=True)
class RewardBreakdown:
    accuracy: float
    format: float
    overlong: float

    @property
    def total(self) -> float:
        return self.accuracy + self.format + self.overlong


def single_marker_format(response: Sequence[int]) -> bool:
    """Exactly one marker, then at least one answer token, then EOS."""
    resp = list(response)
    if not resp or resp[-1] != EOS or resp.count(MARK) != 1:
        return False
    after = resp[resp.index(MARK) + 1 : -1]
    return len(after) >= 1 and all(t >= RESERVED for t in after)


def accuracy_reward(query: Query, response: Sequence[int], verifier: Verifier = free_length_verifier) -> float:
    # an unextractable answer is simply wrong
    return ACCURACY_REWARD if verifier(query, response) else 0.0


def format_reward(response: Sequence[int], format_rule: FormatRule = single_marker_format) -> float:
    return FORMAT_REWARD if format_rule(response) else 0.0


def overlong_reward(length: int, cfg: LengthPenaltyConfig) -> float:
    """Linear penalty over the last ``l_buffer`` tokens before ``l_max``.

    ``min(0, ((l_max - l_buffer) - length) / l_buffer * penalty_scale)``
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    if length > cfg.l_max:
        raise ValueError(f"length {length} exceeds l_max {cfg.l_max}; truncate before scoring")
    excess = (cfg.l_max - cfg.l_buffer) - length
    if excess >= 0:
        return 0.0
    return excess / cfg.l_buffer * cfg.penalty_scale


def total_reward(
    query: Query,
    response: Sequence[int],
    cfg: LengthPenaltyConfig,
    verifier: Verifier = free_length_verifier,
    format_rule: FormatRule = single_marker_format,
) -> RewardBreakdown:
    return RewardBreakdown(
        accuracy=accuracy_reward(query, response, verifier),
        format=format_reward(response, format_rule),
        overlong=overlong_reward(len(response), cfg),
    )

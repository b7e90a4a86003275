"""Trajectories, groups and group-relative advantage normalisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .policy import PolicyParams, Query, context_rows, token_log_probs
from .rewards import RewardBreakdown


@dataclass(eq=False)
class Trajectory:
    """One sampled response with its behaviour-policy and current log-probs.

    ``rows`` holds the policy row that emitted each token; it is only needed
    for gradients.
    """

    tokens: np.ndarray
    old_logprobs: np.ndarray
    new_logprobs: np.ndarray | None = None
    reward: RewardBreakdown | None = None
    advantage: float = 0.0
    query_class: int = 0
    rows: np.ndarray | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.old_logprobs = np.asarray(self.old_logprobs, dtype=np.float64)
        if self.new_logprobs is None:
            self.new_logprobs = self.old_logprobs.copy()
        self.new_logprobs = np.asarray(self.new_logprobs, dtype=np.float64)
        n = self.tokens.size
        if n < 1:
            raise ValueError("trajectory must contain at least one token")
        if self.old_logprobs.shape != (n,) or self.new_logprobs.shape != (n,):
            raise ValueError("tokens, old_logprobs and new_logprobs must have equal length")
        if self.rows is not None:
            self.rows = np.asarray(self.rows, dtype=np.int64)

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    @classmethod
    def from_sample(
        cls,
        params: PolicyParams,
        query: Query,
        tokens: Sequence[int],
        old_logprobs: Sequence[float],
        reward: RewardBreakdown | None = None,
    ) -> "Trajectory":
        return cls(
            tokens=np.asarray(tokens, dtype=np.int64),
            old_logprobs=np.asarray(old_logprobs, dtype=np.float64),
            reward=reward,
            query_class=query.class_id,
            rows=context_rows(params, list(tokens), query.class_id),
        )

    def recompute(self, params: PolicyParams, temperature: float = 1.0) -> None:
        """Refresh ``new_logprobs`` under ``params``."""
        if self.rows is None:
            self.new_logprobs = token_log_probs(params, self.tokens.tolist(), self.query_class, temperature)
        else:
            self.new_logprobs = params.log_probs_table(temperature)[self.rows, self.tokens]


@dataclass(eq=False)
class Group:
    query: Query
    trajectories: list[Trajectory]
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate: bool = False

    @classmethod
    def from_trajectories(
        cls, query: Query, trajectories: list[Trajectory], eps_std: float = 1e-8
    ) -> "Group":
        """Score-normalise a set of rewarded trajectories and attach advantages."""
        rewards = [t.reward.total for t in trajectories]
        adv, degenerate = compute_advantages(rewards, eps_std)
        for t, a in zip(trajectories, adv):
            t.advantage = float(a)
        return cls(query, trajectories, adv, degenerate)


def compute_advantages(rewards: Sequence[float], eps_std: float = 1e-8) -> tuple[np.ndarray, bool]:
    """Standardise rewards within one group.

    Uses the population (divide-by-G) standard deviation. Groups whose std
    falls below ``eps_std`` are flagged degenerate and get all-zero
    advantages.

    Returns:
        (advantages, degenerate)
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least 2 rewards")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if eps_std < 0:
        raise ValueError("eps_std must be non-negative")
    centered = r - r.mean()
    std = np.sqrt(np.mean(centered**2))
    if std < eps_std or std == 0.0:
        return np.zeros_like(r), True
    return centered / std, False

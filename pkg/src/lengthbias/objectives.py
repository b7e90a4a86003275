"""Clipped surrogate objectives (GRPO, GSPO, LUSPO) and their exact gradients.

All objectives are written for maximisation. A batch is a list of groups;
the batch value is the unweighted mean over groups of each group's
``(1/G) * sum_i term_i``:

* GRPO  term_i = (1/|y_i|) sum_t min(w_t A_i, clip(w_t) A_i)      (token ratios)
* GSPO  term_i = min(s_i A_i, clip(s_i) A_i)                       (sequence ratio)
* LUSPO term_i = min(s_i A_i, clip(s_i) A_i) * |y_i|

with ``s_i = exp(mean_t(log pi - log pi_old))`` and the clip band
``[1 - eps_low, 1 + eps_high]``. Clipped items sit on the flat branch of the
min and contribute zero gradient.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .advantage import Group, Trajectory
from .policy import PolicyParams, accumulate_log_prob_grads


class Algorithm(str, enum.Enum):
    GRPO = "grpo"
    GSPO = "gspo"
    LUSPO = "luspo"


# GRPO uses token ratios, which spread far wider than sequence ratios.
DEFAULT_EPS = {
    Algorithm.GRPO: (0.2, 0.2),
    Algorithm.GSPO: (2e-3, 2.5e-3),
    Algorithm.LUSPO: (2e-3, 2.5e-3),
}


@dataclass(frozen=True)
class ObjectiveConfig:
    algorithm: Algorithm = Algorithm.GSPO
    eps_low: float | None = None
    eps_high: float | None = None
    clipping: bool = True

    def __post_init__(self):
        alg = Algorithm(self.algorithm)
        object.__setattr__(self, "algorithm", alg)
        lo, hi = DEFAULT_EPS[alg]
        if self.eps_low is None:
            object.__setattr__(self, "eps_low", lo)
        if self.eps_high is None:
            object.__setattr__(self, "eps_high", hi)
        for name in ("eps_low", "eps_high"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass
class ObjectiveReport:
    value: float
    per_trajectory_values: list[float]
    clip_mask: list = field(repr=False)
    clipped_pos: int = 0
    clipped_neg: int = 0
    n_items: int = 0


def token_ratio(traj: Trajectory, t: int) -> float:
    if not 0 <= t < traj.length:
        raise IndexError(f"token index {t} outside trajectory of length {traj.length}")
    with np.errstate(over="ignore"):
        r = float(np.exp(traj.new_logprobs[t] - traj.old_logprobs[t]))
    if not np.isfinite(r) or r <= 0.0:
        raise FloatingPointError(f"non-finite token ratio at index {t}: {r}")
    return r


def token_ratios(traj: Trajectory) -> np.ndarray:
    with np.errstate(over="ignore"):
        r = np.exp(traj.new_logprobs - traj.old_logprobs)
    bad = ~np.isfinite(r) | (r <= 0.0)
    if np.any(bad):
        raise FloatingPointError(f"non-finite token ratio at index {int(np.argmax(bad))}")
    return r


def sequence_ratio(traj: Trajectory) -> float:
    """Length-normalised sequence ratio, exponentiated from the mean log-ratio."""
    if traj.length < 1:
        raise ValueError("empty trajectory")
    with np.errstate(over="ignore"):
        s = float(np.exp(np.mean(traj.new_logprobs - traj.old_logprobs)))
    if not np.isfinite(s) or s <= 0.0:
        raise FloatingPointError(f"non-finite sequence ratio: {s}")
    return s


def _clip_terms(ratio, advantage, eps_low: float, eps_high: float, clipping: bool = True):
    ratio = np.asarray(ratio, dtype=np.float64)
    unclipped = ratio * advantage
    if not clipping:
        return unclipped, np.zeros(ratio.shape, dtype=bool)
    clipped_term = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high) * advantage
    is_clipped = clipped_term < unclipped
    return np.minimum(unclipped, clipped_term), is_clipped


def clip_ratio(ratio: float, advantage: float, cfg: ObjectiveConfig) -> tuple[float, bool]:
    """``min(r*A, clip(r)*A)`` and whether the clipped branch was taken."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    term, clipped = _clip_terms(ratio, advantage, cfg.eps_low, cfg.eps_high, cfg.clipping)
    return float(term), bool(clipped)


def _new_lps(traj: Trajectory, params: PolicyParams | None, temperature: float) -> np.ndarray:
    if params is None:
        return traj.new_logprobs
    return params.log_probs_table(temperature)[traj.rows, traj.tokens]


def _evaluate(
    groups: Sequence[Group],
    cfg: ObjectiveConfig,
    algorithm: Algorithm,
    params: PolicyParams | None = None,
    temperature: float = 1.0,
) -> ObjectiveReport:
    if not groups:
        raise ValueError("empty batch")
    group_values = []
    per_traj: list[float] = []
    mask: list = []
    pos = neg = items = 0
    for g in groups:
        if len(g.trajectories) == 0:
            raise ValueError("group without trajectories")
        terms = []
        for traj in g.trajectories:
            A = traj.advantage
            log_diff = _new_lps(traj, params, temperature) - traj.old_logprobs
            if algorithm is Algorithm.GRPO:
                eff, clipped = _clip_terms(np.exp(log_diff), A, cfg.eps_low, cfg.eps_high, cfg.clipping)
                term = float(np.mean(eff))
                n_clipped = int(np.count_nonzero(clipped))
                items += traj.length
                mask.append(clipped)
            else:
                s = np.exp(np.mean(log_diff))
                eff, clipped = _clip_terms(s, A, cfg.eps_low, cfg.eps_high, cfg.clipping)
                term = float(eff)
                if algorithm is Algorithm.LUSPO:
                    term *= traj.length
                n_clipped = int(clipped)
                items += 1
                mask.append(bool(clipped))
            if A > 0:
                pos += n_clipped
            elif A < 0:
                neg += n_clipped
            terms.append(term)
        per_traj.extend(terms)
        group_values.append(sum(terms) / len(terms))
    value = sum(group_values) / len(group_values)
    return ObjectiveReport(value, per_traj, mask, pos, neg, items)


def grpo_objective(groups: Sequence[Group], cfg: ObjectiveConfig) -> ObjectiveReport:
    return _evaluate(groups, cfg, Algorithm.GRPO)


def gspo_objective(groups: Sequence[Group], cfg: ObjectiveConfig) -> ObjectiveReport:
    return _evaluate(groups, cfg, Algorithm.GSPO)


def luspo_objective(groups: Sequence[Group], cfg: ObjectiveConfig) -> ObjectiveReport:
    return _evaluate(groups, cfg, Algorithm.LUSPO)


def evaluate_objective(groups: Sequence[Group], cfg: ObjectiveConfig) -> ObjectiveReport:
    """Objective selected by ``cfg.algorithm`` from the stored new log-probs."""
    return _evaluate(groups, cfg, cfg.algorithm)


def objective_at(
    params: PolicyParams, groups: Sequence[Group], cfg: ObjectiveConfig, temperature: float = 1.0
) -> float:
    """Objective value with new log-probs taken from ``params``; groups are not touched."""
    return _evaluate(groups, cfg, cfg.algorithm, params, temperature).value


def per_token_coefficients(traj: Trajectory, cfg: ObjectiveConfig) -> np.ndarray:
    """Weights ``c_t`` with d(term_i)/d(theta) = sum_t c_t * grad log pi(y_t).

    GRPO gives ``w_t A / |y|``, GSPO ``s A / |y|``, LUSPO ``s A``; clipped
    items get 0.
    """
    A = traj.advantage
    L = traj.length
    if cfg.algorithm is Algorithm.GRPO:
        w = token_ratios(traj)
        _, clipped = _clip_terms(w, A, cfg.eps_low, cfg.eps_high, cfg.clipping)
        return np.where(clipped, 0.0, w * A / L)
    s = sequence_ratio(traj)
    _, clipped = _clip_terms(s, A, cfg.eps_low, cfg.eps_high, cfg.clipping)
    if clipped:
        return np.zeros(L)
    coef = s * A if cfg.algorithm is Algorithm.LUSPO else s * A / L
    return np.full(L, coef)


def trajectory_gradient(
    traj: Trajectory, params: PolicyParams, cfg: ObjectiveConfig, temperature: float = 1.0
) -> np.ndarray:
    """Gradient of a single trajectory's surrogate term (before group averaging)."""
    out = np.zeros(params.shape)
    return accumulate_log_prob_grads(
        params, traj.rows, traj.tokens, per_token_coefficients(traj, cfg), out, temperature
    )


def objective_gradient(
    groups: Sequence[Group], cfg: ObjectiveConfig, params: PolicyParams, temperature: float = 1.0
) -> np.ndarray:
    """Exact gradient of the clipped surrogate with respect to the logits.

    ``new_logprobs`` on every trajectory must already be computed under
    ``params``.
    """
    if not groups:
        raise ValueError("empty batch")
    grad = np.zeros(params.shape)
    n_rows = params.shape[0]
    for g in groups:
        scale = 1.0 / (len(g.trajectories) * len(groups))
        for traj in g.trajectories:
            if traj.rows.size and (traj.rows.max() >= n_rows or traj.tokens.max() >= params.vocab_size):
                raise ValueError("trajectory does not fit the parameter table")
            coefs = per_token_coefficients(traj, cfg) * scale
            if np.any(coefs):
                accumulate_log_prob_grads(params, traj.rows, traj.tokens, coefs, grad, temperature)
    return grad

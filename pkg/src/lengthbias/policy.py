"""Tabular autoregressive categorical policy.

The policy is a logit table indexed by a context state and a vocabulary token.
The context state combines a query class id with the last ``context_order``
response tokens (left-padded with a virtual start symbol), so every row is an
independent softmax and log-probabilities and their gradients are exact.

Token id 0 is reserved for end-of-sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

EOS = 0

_FORMAT_TAG = "lengthbias-policy v1"


@dataclass(frozen=True)
class Query:
    """A prompt handed to the policy.

    ``class_id`` selects the block of policy rows used for this query; tasks
    set it from whatever the policy is allowed to condition on.
    """

    id: int
    prompt_tokens: tuple[int, ...]
    task_payload: Any = None
    class_id: int = 0

    def __post_init__(self):
        if len(self.prompt_tokens) == 0:
            raise ValueError("prompt_tokens must be non-empty")
        object.__setattr__(self, "prompt_tokens", tuple(int(t) for t in self.prompt_tokens))


@dataclass(eq=False)
class PolicyParams:
    logits: np.ndarray
    vocab_size: int
    context_order: int = 1
    n_classes: int = 1
    _lse_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2 (EOS plus at least one token)")
        if self.context_order < 0:
            raise ValueError("context_order must be non-negative")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        expected = (num_states(self.vocab_size, self.context_order, self.n_classes), self.vocab_size)
        if self.logits.shape != expected:
            raise ValueError(f"logits shape {self.logits.shape} != expected {expected}")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    @property
    def frozen(self) -> bool:
        return not self.logits.flags.writeable

    def log_probs_table(self, temperature: float = 1.0) -> np.ndarray:
        """Log-softmax of every row at ``temperature``.

        Cached on frozen parameters only, since live parameters mutate in place.
        """
        if self.frozen and temperature in self._lse_cache:
            return self._lse_cache[temperature]
        table = _log_softmax(self.logits / temperature)
        if self.frozen:
            table.flags.writeable = False
            self._lse_cache[temperature] = table
        return table


def num_states(vocab_size: int, context_order: int, n_classes: int = 1) -> int:
    return n_classes * (vocab_size + 1) ** context_order


def init_params(
    vocab_size: int,
    context_order: int = 1,
    n_classes: int = 1,
    scale: float = 0.0,
    rng_seed: int | None = None,
) -> PolicyParams:
    """Zero logits (uniform policy), or Gaussian logits with std ``scale``."""
    shape = (num_states(vocab_size, context_order, n_classes), vocab_size)
    if scale > 0:
        logits = np.random.default_rng(rng_seed).normal(0.0, scale, size=shape)
    else:
        logits = np.zeros(shape)
    return PolicyParams(logits, vocab_size, context_order, n_classes)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _check_token(params: PolicyParams, token: int) -> int:
    token = int(token)
    if not 0 <= token < params.vocab_size:
        raise ValueError(f"token id {token} outside [0, {params.vocab_size})")
    return token


def context_index(params: PolicyParams, context: Sequence[int], query_class: int = 0) -> int:
    """Row index for the state after ``context`` (the response prefix so far)."""
    if not 0 <= query_class < params.n_classes:
        raise ValueError(f"query class {query_class} outside [0, {params.n_classes})")
    base = params.vocab_size + 1
    start = params.vocab_size
    k = params.context_order
    tail = list(context[-k:]) if k > 0 else []
    tail = [start] * (k - len(tail)) + [_check_token(params, t) for t in tail]
    idx = 0
    for t in tail:
        idx = idx * base + t
    return query_class * base**k + idx


def context_rows(params: PolicyParams, response: Sequence[int], query_class: int = 0) -> np.ndarray:
    """Row index used to emit each token of ``response``."""
    return np.array(
        [context_index(params, response[:t], query_class) for t in range(len(response))],
        dtype=np.int64,
    )


def token_log_prob(
    params: PolicyParams,
    context: Sequence[int],
    next: int,
    temperature: float = 1.0,
    query_class: int = 0,
) -> float:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    row = context_index(params, context, query_class)
    nxt = _check_token(params, next)
    return float(params.log_probs_table(temperature)[row, nxt])


def token_log_probs(
    params: PolicyParams,
    response: Sequence[int],
    query_class: int = 0,
    temperature: float = 1.0,
) -> np.ndarray:
    """Per-token log-probabilities of ``response`` (vectorised)."""
    tokens = np.array([_check_token(params, t) for t in response], dtype=np.int64)
    rows = context_rows(params, tokens.tolist(), query_class)
    return params.log_probs_table(temperature)[rows, tokens]


def sequence_log_prob(
    params: PolicyParams, query: Query, response: Sequence[int], temperature: float = 1.0
) -> float:
    if len(response) == 0:
        raise ValueError("response must be non-empty")
    if EOS in list(response)[:-1]:
        raise ValueError("response continues past EOS")
    return float(np.sum(token_log_probs(params, response, query.class_id, temperature)))


def sample_response(
    params: PolicyParams,
    query: Query,
    max_len: int,
    temperature: float = 1.0,
    top_p: float = 1.0,
    rng_seed: int | Sequence[int] | np.random.Generator = 0,
) -> tuple[list[int], np.ndarray]:
    """Sample a response and return it with its per-token log-probabilities.

    Log-probabilities are those of the full temperature-scaled softmax, not
    the nucleus-renormalised sampling distribution.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not 0.0 < top_p <= 1.0:
        raise ValueError("top_p must lie in (0, 1]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    table = params.log_probs_table(temperature)
    tokens: list[int] = []
    logps: list[float] = []
    while len(tokens) < max_len:
        row = table[context_index(params, tokens, query.class_id)]
        tok = _sample_row(row, top_p, rng.random())
        tokens.append(tok)
        logps.append(float(row[tok]))
        if tok == EOS:
            break
    return tokens, np.array(logps)


def _sample_row(log_row: np.ndarray, top_p: float, u: float) -> int:
    probs = np.exp(log_row)
    if top_p >= 1.0:
        cdf = np.cumsum(probs)
        return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(probs) - 1))
    # stable sort keeps ties in token-id order
    order = np.argsort(-probs, kind="stable")
    sorted_p = probs[order]
    before = np.cumsum(sorted_p) - sorted_p
    keep = before < top_p
    if not np.any(keep):
        return int(order[0])
    kept = sorted_p[keep]
    cdf = np.cumsum(kept)
    pick = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(kept) - 1)
    return int(order[keep][pick])


class RowGrad(NamedTuple):
    """Gradient confined to a single logit row."""

    row: int
    values: np.ndarray

    def to_dense(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape)
        out[self.row] = self.values
        return out


def grad_token_log_prob(
    params: PolicyParams,
    context: Sequence[int],
    next: int,
    temperature: float = 1.0,
    query_class: int = 0,
) -> RowGrad:
    """d log pi(next | context) / d logits, nonzero only on the active row."""
    row = context_index(params, context, query_class)
    nxt = _check_token(params, next)
    p = np.exp(params.log_probs_table(temperature)[row])
    g = -p
    g[nxt] += 1.0
    return RowGrad(row, g / temperature)


def accumulate_log_prob_grads(
    params: PolicyParams,
    rows: np.ndarray,
    tokens: np.ndarray,
    coefs: np.ndarray,
    out: np.ndarray,
    temperature: float = 1.0,
) -> np.ndarray:
    """Add ``sum_t coefs[t] * grad log pi(tokens[t] | rows[t])`` into ``out``."""
    probs = np.exp(params.log_probs_table(temperature)[rows])
    contrib = -probs * coefs[:, None]
    contrib[np.arange(len(tokens)), tokens] += coefs
    np.add.at(out, rows, contrib / temperature)
    return out


def snapshot(params: PolicyParams) -> PolicyParams:
    """Frozen deep copy, used as the behaviour policy for one rollout step."""
    logits = params.logits.copy()
    logits.flags.writeable = False
    return PolicyParams(logits, params.vocab_size, params.context_order, params.n_classes)


def save_params(params: PolicyParams, path: str | Path) -> None:
    """Write a text matrix file: a tagged header followed by one row per line.

    Layout::

        # lengthbias-policy v1
        # vocab_size <V>
        # context_order <k>
        # n_classes <C>
        # rows <R>
        <V floats, %.17g>   (R lines)
    """
    header = "\n".join(
        [
            _FORMAT_TAG,
            f"vocab_size {params.vocab_size}",
            f"context_order {params.context_order}",
            f"n_classes {params.n_classes}",
            f"rows {params.logits.shape[0]}",
        ]
    )
    np.savetxt(path, params.logits, fmt="%.17g", header=header)


def load_params(path: str | Path) -> PolicyParams:
    meta: dict[str, int] = {}
    with open(path) as fh:
        first = fh.readline().lstrip("# ").strip()
        if first != _FORMAT_TAG:
            raise ValueError(f"{path}: not a policy file (header {first!r})")
        for _ in range(4):
            key, value = fh.readline().lstrip("# ").split()
            meta[key] = int(value)
    logits = np.loadtxt(path, comments="#", ndmin=2)
    if logits.shape[0] != meta["rows"]:
        raise ValueError(f"{path}: expected {meta['rows']} rows, found {logits.shape[0]}")
    return PolicyParams(logits, meta["vocab_size"], meta["context_order"], meta["n_classes"])

"""Length-neutral synthetic verifiable tasks.

Vocabulary layout (shared by the verifier and reward code)::

    0 EOS    1 MARK (answer marker)    2 SEP    3 FILL    4.. digit tokens

A response is scored only on what follows the single answer marker, so
any amount of filler before the marker is equally acceptable.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .policy import EOS, PolicyParams, Query, num_states

MARK = 1
SEP = 2
FILL = 3
RESERVED = 4


class TaskKind(str, enum.Enum):
    COPY_ANSWER = "copy_answer"
    MODULAR_SUM = "modular_sum"


@dataclass(frozen=True)
class TaskInstance:
    query: Query
    answer_tokens: tuple[int, ...]
    difficulty: int = 0


def modulus(vocab_size: int) -> int:
    m = vocab_size - RESERVED
    if m < 2:
        raise ValueError(f"vocab_size {vocab_size} leaves fewer than 2 digit tokens")
    return m


def digit_token(value: int) -> int:
    return RESERVED + int(value)


def digit_value(token: int) -> int:
    return int(token) - RESERVED


def modular_answer(digits: Sequence[int], mod: int) -> int:
    return int(sum(digits)) % mod


def n_task_classes(kind: TaskKind | str, vocab_size: int, n_addends: int = 2) -> int:
    """Number of policy query classes a dataset of this kind uses."""
    m = modulus(vocab_size)
    return m if TaskKind(kind) is TaskKind.COPY_ANSWER else m**n_addends


def generate_dataset(
    task_kind: TaskKind | str,
    n: int,
    vocab_size: int,
    rng_seed: int = 0,
    n_addends: int = 2,
) -> list[TaskInstance]:
    """Draw ``n`` task instances with uniformly distributed answers.

    COPY_ANSWER prompts are ``[q, a, SEP]`` with answer ``[a]``; the query
    class is the answer digit. MODULAR_SUM prompts are ``[d_1 .. d_k, SEP]``
    with answer ``sum(d) mod m``; the query class enumerates the digit tuple,
    so the policy sees ``m**k`` distinct contexts instead of ``m``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    kind = TaskKind(task_kind)
    m = modulus(vocab_size)
    rng = np.random.default_rng(rng_seed)
    out = []
    for i in range(n):
        if kind is TaskKind.COPY_ANSWER:
            q, a = (int(v) for v in rng.integers(0, m, size=2))
            prompt = (digit_token(q), digit_token(a), SEP)
            answer, cls, difficulty = a, a, 0
        else:
            digits = [int(v) for v in rng.integers(0, m, size=n_addends)]
            prompt = tuple(digit_token(d) for d in digits) + (SEP,)
            answer = modular_answer(digits, m)
            cls = 0
            for d in digits:
                cls = cls * m + d
            difficulty = n_addends - 1
        ans = (digit_token(answer),)
        query = Query(id=i, prompt_tokens=prompt, task_payload=ans, class_id=cls)
        out.append(TaskInstance(query, ans, difficulty))
    return out


def extract_answer(response: Sequence[int]) -> tuple[int, ...] | None:
    """Tokens after the first marker, up to (not including) EOS."""
    resp = list(response)
    if MARK not in resp:
        return None
    tail = resp[resp.index(MARK) + 1 :]
    if EOS in tail:
        tail = tail[: tail.index(EOS)]
    return tuple(tail)


def free_length_verifier(instance: TaskInstance | Query, response: Sequence[int]) -> bool:
    """Accept iff the marker is followed by exactly the answer tokens.

    Filler before the marker is ignored, so correctness never depends on
    response length.
    """
    answer = instance.answer_tokens if isinstance(instance, TaskInstance) else instance.task_payload
    return extract_answer(response) == tuple(answer)


def save_dataset(instances: Iterable[TaskInstance], path: str | Path) -> None:
    """One JSON object per line: id, prompt, answer, class_id, difficulty."""
    with open(path, "w") as fh:
        for inst in instances:
            rec = {
                "id": inst.query.id,
                "prompt": list(inst.query.prompt_tokens),
                "answer": list(inst.answer_tokens),
                "class_id": inst.query.class_id,
                "difficulty": inst.difficulty,
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path: str | Path) -> list[TaskInstance]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ans = tuple(int(t) for t in rec["answer"])
                query = Query(
                    id=int(rec["id"]),
                    prompt_tokens=tuple(rec["prompt"]),
                    task_payload=ans,
                    class_id=int(rec.get("class_id", 0)),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
            out.append(TaskInstance(query, ans, int(rec.get("difficulty", 0))))
    return out


def structured_init(
    vocab_size: int,
    n_classes: int,
    context_order: int = 1,
    mean_filler: float = 16.0,
    stray: float = 1e-3,
) -> PolicyParams:
    """Policy that already speaks the response grammar but not the answers.

    From the start and filler states it emits FILL, stopping with MARK at a
    constant hazard (geometric filler length with mean ``mean_filler``); after
    MARK it picks a digit uniformly; after a digit it emits EOS. Every other
    token keeps probability ``stray`` so all log-probabilities stay finite.
    """
    if context_order < 1:
        raise ValueError("structured init needs context_order >= 1")
    m = modulus(vocab_size)
    hazard = 1.0 / (1.0 + mean_filler)
    base = vocab_size + 1
    per_class = base**context_order
    logits = np.empty((num_states(vocab_size, context_order, n_classes), vocab_size))
    for row in range(per_class):
        last = row % base
        p = np.full(vocab_size, stray)
        if last == MARK:
            p[RESERVED:] = 1.0 / m
        elif last >= RESERVED and last < vocab_size:
            p[EOS] = 1.0
        else:
            p[FILL] = 1.0 - hazard
            p[MARK] = hazard
        logits[row::per_class] = np.log(p / p.sum())
    return PolicyParams(logits, vocab_size, context_order, n_classes)

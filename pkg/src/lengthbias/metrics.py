"""Per-step training metrics and their line-delimited JSON format.

Each line of a metrics file is one JSON object::

    {"step": 0, "mean_len": 18.3, "max_len": 61, "mean_accuracy_reward": 0.17,
     "objective_value": 0.0, "clipped_pos": 3, "clipped_neg": 9,
     "grad_norm": 0.12, "lr": 0.0005, "val_accuracy": null, ...}

Keys after ``lr`` are optional extras; readers must tolerate missing ones.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

# wire name -> attribute name, for fields whose names differ
_WIRE = {"mean_len": "mean_response_length", "max_len": "max_response_length"}
_ATTR = {v: k for k, v in _WIRE.items()}


@dataclass
class StepMetrics:
    step: int
    mean_response_length: float
    max_response_length: int
    mean_accuracy_reward: float
    objective_value: float
    clipped_pos: int
    clipped_neg: int
    grad_norm: float
    lr: float
    val_accuracy: float | None = None
    val_mean_length: float | None = None
    mean_total_reward: float | None = None
    degenerate_groups: int | None = None

    def to_record(self) -> dict:
        return {_ATTR.get(k, k): v for k, v in asdict(self).items()}

    @classmethod
    def from_record(cls, rec: dict) -> "StepMetrics":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in rec.items():
            attr = _WIRE.get(key, key)
            if attr in known:
                kwargs[attr] = value
        return cls(**kwargs)


METRIC_KEYS = [_ATTR.get(f.name, f.name) for f in fields(StepMetrics)]


def dumps(m: StepMetrics) -> str:
    return json.dumps(m.to_record())


def read_metrics(path: str | Path) -> list[StepMetrics]:
    """Parse a metrics file; malformed lines raise ``ValueError`` naming the line."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(StepMetrics.from_record(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed metrics record ({exc})") from exc
    return out


class MetricsWriter:
    """Append records to ``<path>.part`` and rename into place on ``close``.

    If the run fails, ``abort`` removes the partial file so no truncated
    metrics file is ever left under the final name.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._tmp = self.path.with_name(self.path.name + ".part")
        self._fh = open(self._tmp, "w")

    def write(self, m: StepMetrics) -> None:
        self._fh.write(dumps(m) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        self._fh.close()
        self._tmp.unlink(missing_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()
        return False


def write_metrics(history: Iterable[StepMetrics], path: str | Path) -> None:
    with MetricsWriter(path) as w:
        for m in history:
            w.write(m)


def iter_records(history: Iterable[StepMetrics]) -> Iterator[dict]:
    for m in history:
        yield m.to_record()

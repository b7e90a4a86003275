"""Gradient checks, the GSPO-vs-LUSPO length-bias demo, and curve tables."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .advantage import Group, Trajectory, compute_advantages
from .metrics import METRIC_KEYS, MetricsWriter, StepMetrics, read_metrics
from .objectives import Algorithm, ObjectiveConfig, _clip_terms, objective_at, objective_gradient
from .policy import PolicyParams, Query, init_params, sample_response, save_params, snapshot
from .tasks import generate_dataset
from .trainer import TrainConfig, train

FD_STEP = 1e-6
FD_TOL = 1e-6

MISSING = "NA"


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error relative to the larger of the two gradients' max norms."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_batch(
    rng: np.random.Generator,
    algorithm: Algorithm | str,
    n_groups: int = 2,
    group_size: int = 4,
    vocab_size: int = 5,
    n_classes: int = 2,
    max_len: int = 8,
    drift: float | None = None,
    cfg: ObjectiveConfig | None = None,
) -> tuple[PolicyParams, list[Group], ObjectiveConfig]:
    """A random batch sampled from a behaviour policy, plus a nearby current policy.

    ``drift`` is the std of the logit perturbation between the two policies;
    the default puts a fair share of items on both sides of the clip band.
    """
    alg = Algorithm(algorithm)
    cfg = cfg or ObjectiveConfig(alg)
    if drift is None:
        drift = 0.25 if alg is Algorithm.GRPO else 0.01
    old = snapshot(init_params(vocab_size, 1, n_classes, scale=1.0, rng_seed=int(rng.integers(2**31))))
    new = PolicyParams(old.logits + rng.normal(0.0, drift, old.shape), vocab_size, 1, n_classes)
    groups = []
    for gi in range(n_groups):
        q = Query(id=gi, prompt_tokens=(1,), class_id=int(rng.integers(n_classes)))
        trajs = []
        for _ in range(group_size):
            tokens, logps = sample_response(old, q, max_len, rng_seed=rng)
            trajs.append(Trajectory.from_sample(old, q, tokens, logps))
        adv, _ = compute_advantages(rng.normal(size=group_size))
        for t, a in zip(trajs, adv):
            t.advantage = float(a)
            t.recompute(new)
        groups.append(Group(q, trajs, adv, False))
    return new, groups, cfg


def _near_kink(groups: Sequence[Group], cfg: ObjectiveConfig, tol: float = 1e-7) -> bool:
    for g in groups:
        for t in g.trajectories:
            d = t.new_logprobs - t.old_logprobs
            r = np.exp(d) if cfg.algorithm is Algorithm.GRPO else np.exp([np.mean(d)])
            edges = np.array([1 - cfg.eps_low, 1 + cfg.eps_high])
            if np.min(np.abs(r[:, None] - edges[None, :])) < tol:
                return True
    return False


@dataclass
class GradcheckResult:
    algorithm: str
    trials: int
    max_rel_error: float
    worst_trial: int
    clipped_items: int
    total_items: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < FD_TOL


def gradcheck(algorithm: Algorithm | str, trials: int, seed: int = 0, clip_heavy: bool = False) -> GradcheckResult:
    """Analytic objective gradients against central differences on random batches."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    alg = Algorithm(algorithm)
    rng = np.random.default_rng(seed)
    worst, worst_i = 0.0, -1
    clipped = total = 0
    for i in range(trials):
        drift = None if not clip_heavy else (1.0 if alg is Algorithm.GRPO else 0.05)
        while True:
            params, groups, cfg = random_batch(rng, alg, drift=drift)
            if not _near_kink(groups, cfg):
                break
        analytic = objective_gradient(groups, cfg, params)

        def f(logits):
            return objective_at(PolicyParams(logits, params.vocab_size, 1, params.n_classes), groups, cfg)

        numeric = finite_difference_gradient(f, params.logits)
        err = relative_error(analytic, numeric)
        if err > worst or worst_i < 0:
            worst, worst_i = err, i
        for g in groups:
            for t in g.trajectories:
                d = t.new_logprobs - t.old_logprobs
                r = np.exp(d) if alg is Algorithm.GRPO else np.exp(np.mean(d))
                _, c = _clip_terms(r, t.advantage, cfg.eps_low, cfg.eps_high)
                clipped += int(np.count_nonzero(c))
                total += int(np.size(c))
    return GradcheckResult(alg.value, trials, worst, worst_i, clipped, total)


# ---------------------------------------------------------------------------
# length-bias demo

# Length-neutral COPY task with asymmetric clip-higher band; 4 updates per rollout.
DEMO_CONFIG = dict(
    task_kind="copy_answer",
    total_steps=200,
    prompts_per_batch=32,
    mini_batch=8,
    eps_low=2e-3,
    eps_high=2.5e-3,
)
MIN_WINDOW = 10


def window_size(n_steps: int) -> int:
    """Last 20% of steps, at least ``MIN_WINDOW`` (capped at the run length)."""
    return min(n_steps, max(MIN_WINDOW, math.ceil(0.2 * n_steps)))


def recount_clips(ratio_log: Sequence[dict], eps_low: float, eps_high: float) -> tuple[int, int]:
    """Count clipped positive/negative items straight from logged ratios."""
    pos = neg = 0
    for rec in ratio_log:
        for r, a in zip(rec["ratios"], rec["advantages"]):
            if a > 0 and r > 1 + eps_high:
                pos += 1
            elif a < 0 and r < 1 - eps_low:
                neg += 1
    return pos, neg


def summarize(histories: dict[str, list[StepMetrics]]) -> dict:
    out: dict = {"runs": {}}
    n = min(len(h) for h in histories.values()) if histories else 0
    w = window_size(n) if n else 0
    out["n_steps"] = n
    out["window"] = w
    out["insufficient_steps"] = n < 2 * MIN_WINDOW
    for name, h in histories.items():
        lens = [m.mean_response_length for m in h]
        acc = [m.mean_accuracy_reward for m in h]
        out["runs"][name] = {
            "initial_mean_len": float(np.mean(lens[:w])) if w else None,
            "final_mean_len": float(np.mean(lens[-w:])) if w else None,
            "final_accuracy": float(np.mean(acc[-w:])) if w else None,
            "clipped_pos": int(sum(m.clipped_pos for m in h)),
            "clipped_neg": int(sum(m.clipped_neg for m in h)),
        }
    if {"gspo", "luspo"} <= set(out["runs"]) and w:
        g, l = out["runs"]["gspo"], out["runs"]["luspo"]
        out["luspo_over_gspo_length"] = l["final_mean_len"] / g["final_mean_len"]
        out["luspo_longer"] = l["final_mean_len"] > g["final_mean_len"]
        out["gspo_collapsed"] = g["final_mean_len"] < g["initial_mean_len"]
        out["gspo_clip_imbalance"] = g["clipped_neg"] >= g["clipped_pos"]
    return out


def run_logged(
    cfg: TrainConfig,
    out_dir: str | Path,
    dataset=None,
    val_dataset=None,
    log_ratios: bool = False,
):
    """Train with metrics streamed to ``out_dir/metrics.jsonl`` (atomic on success)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = generate_dataset(cfg.task_kind, cfg.n_train, cfg.vocab_size, cfg.rng_seed)
    if val_dataset is None and cfg.n_val > 0:
        val_dataset = generate_dataset(cfg.task_kind, cfg.n_val, cfg.vocab_size, cfg.rng_seed + 1)
    with MetricsWriter(out / "metrics.jsonl") as w:
        result = train(dataset, cfg, val_dataset=val_dataset, on_step=w.write, log_ratios=log_ratios)
    if log_ratios:
        _atomic_write(out / "ratios.jsonl", "".join(json.dumps(r) + "\n" for r in result.ratio_log))
    return result


def biasdemo(out_dir: str | Path, steps: int | None = None, seed: int = 0, **overrides) -> dict:
    """Matched-seed GSPO and LUSPO runs on the length-neutral task.

    Writes ``gspo/`` and ``luspo/`` run directories (metrics, ratio logs,
    checkpoints) plus ``summary.json``.
    """
    out = Path(out_dir)
    base = dict(DEMO_CONFIG, rng_seed=seed, **overrides)
    if steps is not None:
        base["total_steps"] = steps
    histories = {}
    recounts = {}
    for alg in ("gspo", "luspo"):
        cfg = TrainConfig(algorithm=alg, **base)
        res = run_logged(cfg, out / alg, log_ratios=True)
        save_params(res.params, out / alg / "policy.txt")
        histories[alg] = res.history
        obj = cfg.objective
        recounts[alg] = recount_clips(res.ratio_log, obj.eps_low, obj.eps_high)
    summary = summarize(histories)
    for alg, (p, n) in recounts.items():
        run = summary["runs"][alg]
        run["recount_clipped_pos"], run["recount_clipped_neg"] = p, n
        run["recount_matches"] = (p, n) == (run["clipped_pos"], run["clipped_neg"])
    summary["config"] = TrainConfig(algorithm="gspo", **base).to_dict()
    summary["config"].pop("algorithm")
    _atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# curve tables


def _run_names(paths: Sequence[Path]) -> list[str]:
    stems = [p.stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    names = [f"{p.parent.name}/{p.stem}" for p in paths]
    if len(set(names)) == len(names):
        return names
    return [f"run{i}:{p.stem}" for i, p in enumerate(paths)]


def _fmt(v) -> str:
    if v is None:
        return MISSING
    return repr(v)


def report(metrics_paths: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    """Write one tab-separated table per metric: ``step`` then one column per run.

    Runs of different lengths are padded with ``NA``.
    """
    if not metrics_paths:
        raise ValueError("need at least one metrics file")
    paths = [Path(p) for p in metrics_paths]
    runs = [read_metrics(p) for p in paths]
    names = _run_names(paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = sorted({m.step for r in runs for m in r})
    by_step = [{m.step: m.to_record() for m in r} for r in runs]
    written = []
    for key in METRIC_KEYS:
        if key == "step":
            continue
        lines = ["\t".join(["step", *names])]
        for s in steps:
            row = [str(s)] + [_fmt(b[s].get(key)) if s in b else MISSING for b in by_step]
            lines.append("\t".join(row))
        path = out / f"{key}.tsv"
        _atomic_write(path, "\n".join(lines) + "\n")
        written.append(path)
    return written


def read_table(path: str | Path) -> dict[str, dict[int, float | None]]:
    """Parse a curve table back into ``{run: {step: value}}``; ``NA`` becomes None."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        cols: dict[str, dict[int, float | None]] = {name: {} for name in header[1:]}
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            step = int(cells[0])
            for name, cell in zip(header[1:], cells[1:]):
                cols[name][step] = None if cell == MISSING else _parse_num(cell)
    return cols


def _parse_num(cell: str) -> float | int:
    try:
        return int(cell)
    except ValueError:
        return float(cell)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text)
    os.replace(tmp, path)

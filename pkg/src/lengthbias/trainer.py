"""RLVR rollout/optimise loop over the tabular policy."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .advantage import Group, Trajectory
from .metrics import StepMetrics
from .objectives import Algorithm, ObjectiveConfig, _evaluate, objective_gradient, sequence_ratio, token_ratios
from .policy import PolicyParams, sample_response, snapshot
from .rewards import LengthPenaltyConfig, total_reward
from .tasks import TaskInstance, free_length_verifier, n_task_classes, structured_init

logger = logging.getLogger(__name__)

# sub-streams of the run seed, so prompt choice, rollouts and evaluation never share draws
_PROMPTS, _ROLLOUT, _EVAL = 0, 1, 2


class NumericalError(FloatingPointError):
    """Non-finite gradient or parameters; ``diagnostics`` holds the context."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    """Everything a run needs; serialised as a flat JSON object, one key per field."""

    algorithm: str = "gspo"
    eps_low: float | None = None
    eps_high: float | None = None
    prompts_per_batch: int = 16
    group_size: int = 8
    mini_batch: int = 4
    learning_rate: float = 1e-2
    warmup_steps: int = 20
    max_len: int = 256
    temperature: float = 1.0
    top_p: float = 1.0
    total_steps: int = 200
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    l_buffer: int = 32
    penalty_scale: float = 0.3
    eps_std: float = 1e-8
    eval_every: int = 10
    eval_samples: int = 4
    context_order: int = 1
    init_mean_filler: float = 16.0
    init_stray: float = 1e-6
    task_kind: str = "copy_answer"
    vocab_size: int = 10
    n_train: int = 256
    n_val: int = 32
    dataset: str | None = None
    val_dataset: str | None = None

    def __post_init__(self):
        self.algorithm = Algorithm(str(self.algorithm).lower()).value
        self.objective  # validates eps
        if self.group_size < 2:
            raise ValueError("group_size: must be >= 2")
        for name in ("prompts_per_batch", "mini_batch", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be positive")
        if self.prompts_per_batch % self.mini_batch:
            raise ValueError("mini_batch: must divide prompts_per_batch")
        if self.learning_rate < 0:
            raise ValueError("learning_rate: must be non-negative")
        if self.warmup_steps < 0 or self.total_steps < 0:
            raise ValueError("warmup_steps/total_steps: must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature: must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p: must lie in (0, 1]")
        if not self.l_buffer < self.max_len:
            raise ValueError("l_buffer: must be smaller than max_len")
        if not 0 < self.init_stray < 0.01:
            raise ValueError("init_stray: must lie in (0, 0.01)")
        if self.eval_every < 0 or self.eval_samples < 1:
            raise ValueError("eval_every/eval_samples: out of range")

    @property
    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(Algorithm(self.algorithm), self.eps_low, self.eps_high)

    @property
    def length_penalty(self) -> LengthPenaltyConfig:
        return LengthPenaltyConfig(self.max_len, self.l_buffer, self.penalty_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        obj = self.objective
        d["eps_low"], d["eps_high"] = obj.eps_low, obj.eps_high
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"{unknown[0]}: unknown config key")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# Large-scale reference values; the policy and tasks stay tabular, so only the loop sizes change.
REFERENCE_PRESET = dict(
    prompts_per_batch=128,
    group_size=8,
    mini_batch=16,
    learning_rate=1e-6,
    warmup_steps=20,
    top_p=0.7,
    temperature=1.0,
    max_len=4096,
    l_buffer=512,
)


@dataclass
class OptimizerState:
    """AdamW moments for gradient *ascent* on the logit table."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros_like(cls, params: PolicyParams, cfg: TrainConfig | None = None, **kw) -> "OptimizerState":
        if cfg is not None:
            kw = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps, weight_decay=cfg.weight_decay) | kw
        return cls(np.zeros(params.shape), np.zeros(params.shape), **kw)

    def ascend(self, params: PolicyParams, grad: np.ndarray, lr: float) -> None:
        """One in-place AdamW step that increases the objective."""
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step)
        v_hat = self.v / (1 - self.beta2**self.step)
        # decoupled decay acts on the weights, not through the moments
        params.logits *= 1 - lr * self.weight_decay
        params.logits += lr * m_hat / (np.sqrt(v_hat) + self.eps)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up over rollout steps: ``lr * (k+1) / warmup`` for k < warmup."""
    if step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    return cfg.learning_rate


def initial_params(cfg: TrainConfig, dataset: Sequence[TaskInstance]) -> PolicyParams:
    n_classes = max(n_task_classes(cfg.task_kind, cfg.vocab_size), 1 + max(i.query.class_id for i in dataset))
    return structured_init(cfg.vocab_size, n_classes, cfg.context_order, cfg.init_mean_filler, cfg.init_stray)


def _select_prompts(n: int, cfg: TrainConfig, step: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.rng_seed, _PROMPTS, step])
    return rng.choice(n, size=cfg.prompts_per_batch, replace=n < cfg.prompts_per_batch)


def rollout_step(
    params: PolicyParams, dataset: Sequence[TaskInstance], cfg: TrainConfig, step: int = 0
) -> tuple[list[Group], dict]:
    """Snapshot the policy, sample G responses per prompt, score and normalise.

    Prompt ``p`` of step ``k`` draws from its own generator seeded with
    ``(rng_seed, k, p)``, so rollouts do not depend on evaluation order.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    behaviour = snapshot(params)
    penalty = cfg.length_penalty
    groups = []
    for p, idx in enumerate(_select_prompts(len(dataset), cfg, step)):
        inst = dataset[int(idx)]
        rng = np.random.default_rng([cfg.rng_seed, _ROLLOUT, step, p])
        trajs = []
        for _ in range(cfg.group_size):
            tokens, logps = sample_response(behaviour, inst.query, cfg.max_len, cfg.temperature, cfg.top_p, rng)
            reward = total_reward(inst.query, tokens, penalty, free_length_verifier)
            trajs.append(Trajectory.from_sample(behaviour, inst.query, tokens, logps, reward))
        groups.append(Group.from_trajectories(inst.query, trajs, cfg.eps_std))
    lengths = np.array([t.length for g in groups for t in g.trajectories])
    acc = np.array([t.reward.accuracy for g in groups for t in g.trajectories])
    tot = np.array([t.reward.total for g in groups for t in g.trajectories])
    stats = dict(
        mean_len=float(lengths.mean()),
        max_len=int(lengths.max()),
        mean_accuracy_reward=float(acc.mean()),
        mean_total_reward=float(tot.mean()),
        degenerate_groups=sum(g.degenerate for g in groups),
    )
    return groups, stats


def _ratio_record(step: int, mb: int, groups: Sequence[Group], cfg: ObjectiveConfig) -> dict:
    ratios, advs = [], []
    for g in groups:
        for t in g.trajectories:
            if cfg.algorithm is Algorithm.GRPO:
                r = token_ratios(t).tolist()
                ratios.extend(r)
                advs.extend([t.advantage] * len(r))
            else:
                ratios.append(sequence_ratio(t))
                advs.append(t.advantage)
    return {"step": step, "minibatch": mb, "ratios": ratios, "advantages": advs}


def optimize_step(
    params: PolicyParams,
    groups: Sequence[Group],
    cfg: TrainConfig,
    opt: OptimizerState,
    step: int = 0,
    ratio_log: list | None = None,
) -> tuple[PolicyParams, dict]:
    """One pass of mini-batch AdamW ascent over the rollout, in place.

    Old log-probs stay those recorded at sampling time; new log-probs are
    recomputed under the current parameters before every mini-batch.
    """
    obj_cfg = cfg.objective
    n_mb = cfg.prompts_per_batch // cfg.mini_batch
    if len(groups) != cfg.prompts_per_batch:
        raise ValueError(f"expected {cfg.prompts_per_batch} groups, got {len(groups)}")
    lr = lr_at(step, cfg)
    values, norms = [], []
    pos = neg = 0
    for mb in range(n_mb):
        batch = groups[mb * cfg.mini_batch : (mb + 1) * cfg.mini_batch]
        for g in batch:
            for t in g.trajectories:
                t.recompute(params, cfg.temperature)
        report = _evaluate(batch, obj_cfg, obj_cfg.algorithm)
        if ratio_log is not None:
            ratio_log.append(_ratio_record(step, mb, batch, obj_cfg))
        grad = objective_gradient(batch, obj_cfg, params, cfg.temperature)
        if not np.all(np.isfinite(grad)):
            bad = np.argwhere(~np.isfinite(grad))
            raise NumericalError(
                f"non-finite gradient at step {step}, mini-batch {mb}",
                {"step": step, "minibatch": mb, "bad_entries": bad[:10].tolist(), "objective": report.value},
            )
        opt.ascend(params, grad, lr)
        if not np.all(np.isfinite(params.logits)):
            raise NumericalError(f"non-finite parameters after step {step}, mini-batch {mb}", {"step": step})
        values.append(report.value)
        norms.append(float(np.linalg.norm(grad)))
        pos += report.clipped_pos
        neg += report.clipped_neg
    stats = dict(
        objective_value=float(np.mean(values)),
        grad_norm=float(np.mean(norms)),
        clipped_pos=pos,
        clipped_neg=neg,
        lr=lr,
    )
    return params, stats


def evaluate(params: PolicyParams, dataset: Sequence[TaskInstance], cfg: TrainConfig, step: int) -> tuple[float, float]:
    """Sampled accuracy and mean length on a held-out split (avg over ``eval_samples`` draws)."""
    frozen = snapshot(params)
    acc, lens = [], []
    for i, inst in enumerate(dataset):
        rng = np.random.default_rng([cfg.rng_seed, _EVAL, step, i])
        for _ in range(cfg.eval_samples):
            tokens, _ = sample_response(frozen, inst.query, cfg.max_len, cfg.temperature, cfg.top_p, rng)
            acc.append(1.0 if free_length_verifier(inst, tokens) else 0.0)
            lens.append(len(tokens))
    return float(np.mean(acc)), float(np.mean(lens))


@dataclass
class TrainResult:
    params: PolicyParams
    history: list[StepMetrics] = field(default_factory=list)
    ratio_log: list | None = None


def train(
    dataset: Sequence[TaskInstance],
    cfg: TrainConfig,
    params: PolicyParams | None = None,
    val_dataset: Sequence[TaskInstance] | None = None,
    on_step: Callable[[StepMetrics], None] | None = None,
    log_ratios: bool = False,
) -> TrainResult:
    """Run ``cfg.total_steps`` rollout + optimise cycles."""
    if params is None:
        params = initial_params(cfg, dataset)
    opt = OptimizerState.zeros_like(params, cfg)
    result = TrainResult(params, [], [] if log_ratios else None)
    for step in range(cfg.total_steps):
        try:
            groups, roll = rollout_step(params, dataset, cfg, step)
            _, upd = optimize_step(params, groups, cfg, opt, step, result.ratio_log)
        except NumericalError:
            raise
        except Exception as exc:
            raise RuntimeError(f"training aborted at step {step}: {exc}") from exc
        val_acc = val_len = None
        if val_dataset and cfg.eval_every and (step % cfg.eval_every == 0 or step == cfg.total_steps - 1):
            val_acc, val_len = evaluate(params, val_dataset, cfg, step)
        m = StepMetrics(
            step=step,
            mean_response_length=roll["mean_len"],
            max_response_length=roll["max_len"],
            mean_accuracy_reward=roll["mean_accuracy_reward"],
            objective_value=upd["objective_value"],
            clipped_pos=upd["clipped_pos"],
            clipped_neg=upd["clipped_neg"],
            grad_norm=upd["grad_norm"],
            lr=upd["lr"],
            val_accuracy=val_acc,
            val_mean_length=val_len,
            mean_total_reward=roll["mean_total_reward"],
            degenerate_groups=roll["degenerate_groups"],
        )
        logger.debug("step %d len %.2f acc %.3f", step, m.mean_response_length, m.mean_accuracy_reward)
        result.history.append(m)
        if on_step is not None:
            on_step(m)
    return result

"""AdamW training with a linear learning-rate decay and per-task
best-epoch selection.

``train_joint`` interleaves per-task batches (round-robin or
proportional), computes the cross-entropy loss through the task's head,
and steps *only* that task's trainable parameters: the shared encoder,
the TEB when present, and the addressed head. Heads of other tasks are
never part of the graph, so they stay bitwise unchanged.

After every epoch each task is scored on its validation split with its
official metric; the parameter snapshot at each task's best epoch
(earliest epoch on ties) is kept for final evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Example, TaskSpec, Vocabulary, iter_batches, make_batch
from .evaluation.metrics import metric_for
from .models import Model
from .tensor import Tensor

SCHEDULE_POLICIES = ("round_robin", "proportional")


class TrainingError(ValueError):
    """Invalid optimizer configuration or training inputs."""


@dataclass
class OptimConfig:
    """Full-scale defaults follow the reference setup (15 epochs, batch
    64, dropout 0.3, peak lr 2e-5 from the 5e-6..1e-4 search range);
    desk-scale runs override them, in particular with a much larger
    learning rate since the toy encoder trains from scratch."""

    lr_peak: float = 2e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 15
    batch_size: int = 64
    dropout_p: float = 0.3

    def __post_init__(self):
        b1, b2 = self.betas
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise TrainingError(f"optim.betas: must lie in (0, 1), got {self.betas}")
        if self.lr_peak <= 0:
            raise TrainingError(f"optim.lr_peak: must be positive, got {self.lr_peak}")
        if self.eps <= 0:
            raise TrainingError(f"optim.eps: must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise TrainingError(f"optim.weight_decay: must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise TrainingError(f"optim.epochs: must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"optim.batch_size: must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise TrainingError(f"optim.dropout_p: must be in [0, 1), got {self.dropout_p}")


class OptimState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self):
        self.t = 0
        self._slots: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def slot(self, p: Tensor) -> tuple[np.ndarray, np.ndarray]:
        entry = self._slots.get(id(p))
        if entry is None:
            entry = (np.zeros_like(p.data), np.zeros_like(p.data))
            self._slots[id(p)] = entry
        return entry


def adamw_step(params, grads, state: OptimState, lr_t: float, config: OptimConfig) -> None:
    """One decoupled-weight-decay Adam update:
    p <- p - lr_t * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)."""
    if lr_t < 0:
        raise TrainingError(f"adamw_step: lr_t must be >= 0, got {lr_t}")
    if len(params) != len(grads):
        raise TrainingError(f"adamw_step: {len(params)} params vs {len(grads)} grads")
    b1, b2 = config.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise TrainingError(
                f"adamw_step: gradient shape {g.shape} != parameter shape {p.data.shape}"
            )
        m, v = state.slot(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        p.data -= lr_t * (update + config.weight_decay * p.data)


def lr_at(step: int, total_steps: int, lr_peak: float) -> float:
    """Linear decay from lr_peak at step 0 to exactly 0 at total_steps."""
    if total_steps < 1:
        raise TrainingError(f"lr_at: total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise TrainingError(f"lr_at: step {step} outside [0, {total_steps}]")
    return lr_peak * (1.0 - step / total_steps)


@dataclass
class EpochRecord:
    epoch: int
    task: str
    metric: str
    value: float
    lr: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: dict[str, int]
    best_score: dict[str, float]
    best_params: dict[str, dict[str, np.ndarray]]
    model: Model


def evaluate_model(model: Model, examples: list[Example], task_index: int,
                   vocab: Vocabulary, batch_size: int = 256) -> float:
    """Official metric of one task over a list of examples (eval mode)."""
    task = model.registry[task_index]
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        batch = make_batch(chunk, vocab, model.config.max_len, model.variant,
                           task, task_index)
        preds.append(model.predict(batch, task_index))
    golds = np.array([ex.label for ex in examples], dtype=np.int64)
    return metric_for(task)(np.concatenate(preds), golds)


def _interleave(per_task: list[list], policy: str,
                rng: np.random.Generator) -> list[tuple[int, object]]:
    tagged = [[(ti, b) for b in batches] for ti, batches in enumerate(per_task)]
    if policy == "round_robin":
        order: list[tuple[int, object]] = []
        longest = max(len(t) for t in tagged)
        for i in range(longest):
            for t in tagged:
                if i < len(t):
                    order.append(t[i])
        return order
    if policy == "proportional":
        flat = [pair for t in tagged for pair in t]
        perm = rng.permutation(len(flat))
        return [flat[i] for i in perm]
    raise TrainingError(f"schedule_policy: unknown policy {policy!r}")


def train_joint(model: Model, train_sets: list[list[Example]],
                val_sets: list[list[Example]], vocab: Vocabulary,
                optim: OptimConfig, schedule_policy: str = "round_robin",
                seed: int = 0) -> TrainResult:
    """Joint multi-task training; returns per-epoch history and per-task
    best-epoch snapshots."""
    n_tasks = model.registry.n
    if len(train_sets) != n_tasks or len(val_sets) != n_tasks:
        raise TrainingError(
            f"train_joint: expected {n_tasks} train/val sets, "
            f"got {len(train_sets)}/{len(val_sets)}"
        )
    if any(not ds for ds in train_sets) or any(not ds for ds in val_sets):
        raise TrainingError("train_joint: empty dataset for some task")
    if schedule_policy not in SCHEDULE_POLICIES:
        raise TrainingError(f"schedule_policy: unknown policy {schedule_policy!r}")

    root = np.random.SeedSequence(seed)
    shuffle_rng, dropout_rng, policy_rng = (
        np.random.default_rng(s) for s in root.spawn(3)
    )
    batches_per_epoch = sum(
        (len(ds) + optim.batch_size - 1) // optim.batch_size for ds in train_sets
    )
    total_steps = optim.epochs * batches_per_epoch
    state = OptimState()
    history: list[EpochRecord] = []
    best_epoch: dict[str, int] = {}
    best_score: dict[str, float] = {}
    best_params: dict[str, dict[str, np.ndarray]] = {}

    step = 0
    lr_t = optim.lr_peak
    for epoch in range(optim.epochs):
        per_task = [
            iter_batches(train_sets[ti], optim.batch_size, vocab, model.config.max_len,
                         model.variant, model.registry[ti], ti, rng=shuffle_rng)
            for ti in range(n_tasks)
        ]
        for task_index, batch in _interleave(per_task, schedule_policy, policy_rng):
            lr_t = lr_at(step, total_steps, optim.lr_peak)
            logits = model.forward(batch, task_index, training=True,
                                   dropout_p=optim.dropout_p, rng=dropout_rng)
            loss = T.softmax_cross_entropy(logits, batch.labels)
            params = model.trainable_params(task_index)
            T.zero_grads(params)
            T.backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in params]
            adamw_step(params, grads, state, lr_t, optim)
            step += 1

        for ti, task in enumerate(model.registry):
            value = evaluate_model(model, val_sets[ti], ti, vocab)
            history.append(EpochRecord(epoch=epoch, task=task.name,
                                       metric=task.metric, value=value, lr=lr_t))
            if task.name not in best_score or value > best_score[task.name]:
                best_score[task.name] = value
                best_epoch[task.name] = epoch
                best_params[task.name] = model.snapshot()

    return TrainResult(history=history, best_epoch=best_epoch,
                       best_score=best_score, best_params=best_params, model=model)


def select_best_epoch(history: list[EpochRecord], task: str) -> tuple[int, float]:
    """Argmax of the task's metric over epochs; earliest epoch wins ties."""
    scores = [(rec.epoch, rec.value) for rec in history if rec.task == task]
    if not scores:
        raise TrainingError(f"select_best_epoch: no history for task {task!r}")
    best = max(scores, key=lambda pair: (pair[1], -pair[0]))
    return best

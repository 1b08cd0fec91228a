"""Classification metrics and t-distribution confidence intervals.

accuracy, positive-class F1 and macro F1 cover the three official task
metrics. F1 is defined as 0 whenever precision + recall is 0 (the
degenerate no-positives case). 95% intervals use Student's t with n-1
degrees of freedom; quantiles come from a frozen full-precision table up
to df=30 and the normal quantile beyond.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import TaskSpec


class MetricError(ValueError):
    """Prediction/gold vectors are unusable (empty or length-mismatched)."""


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_vectors(preds, golds) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if preds.ndim != 1 or golds.ndim != 1:
        raise MetricError("predictions and golds must be 1-D")
    if preds.shape != golds.shape:
        raise MetricError(f"length mismatch: {preds.shape[0]} predictions "
                          f"vs {golds.shape[0]} golds")
    if preds.size == 0:
        raise MetricError("empty prediction vector")
    return preds, golds


def confusion_counts(preds, golds, positive_class: int) -> ConfusionCounts:
    preds, golds = _as_vectors(preds, golds)
    pp = preds == positive_class
    gp = golds == positive_class
    return ConfusionCounts(
        tp=int(np.sum(pp & gp)),
        fp=int(np.sum(pp & ~gp)),
        fn=int(np.sum(~pp & gp)),
        tn=int(np.sum(~pp & ~gp)),
    )


def accuracy(preds, golds) -> float:
    preds, golds = _as_vectors(preds, golds)
    return float(np.mean(preds == golds))


def f1_positive(preds, golds, positive_class: int) -> float:
    c = confusion_counts(preds, golds, positive_class)
    if c.tp == 0:
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    return 2.0 * precision * recall / (precision + recall)


def f1_macro(preds, golds) -> float:
    """Unweighted mean of per-class F1 over the two classes (each class
    treated as positive in turn)."""
    preds, golds = _as_vectors(preds, golds)
    classes = sorted(set(golds.tolist()) | set(preds.tolist()))
    if len(classes) < 2:
        classes = sorted(set(classes) | {0, 1})
    scores = [f1_positive(preds, golds, c) for c in classes]
    return float(np.mean(scores))


def metric_for(task: TaskSpec):
    """The task's official metric as a (preds, golds) -> float callable."""
    if task.metric == "accuracy":
        return accuracy
    if task.metric == "f1_positive":
        positive = task.positive_index
        return lambda preds, golds: f1_positive(preds, golds, positive)
    if task.metric == "f1_macro":
        return f1_macro
    raise MetricError(f"task {task.name!r}: unknown metric {task.metric!r}")


# Two-sided 95% Student-t quantiles, df = 1..30; normal beyond.
_T_975 = (
    12.706204736432095, 4.302652729696142, 3.182446305284263,
    2.7764451051977987, 2.570581835636314, 2.4469118511449692,
    2.3646242515927844, 2.306004135204166, 2.2621571628540993,
    2.2281388519649385, 2.200985160082949, 2.1788128296634177,
    2.1603686564610127, 2.1447866879169273, 2.131449545559323,
    2.1199052992210112, 2.1098155778331806, 2.10092204024096,
    2.093024054408263, 2.0859634472658364, 2.079613844727662,
    2.0738730679040147, 2.0686576104190406, 2.0638985616280205,
    2.059538552753294, 2.055529438642871, 2.0518305164802833,
    2.048407141795244, 2.045229642132703, 2.0422724563012373,
)
_Z_975 = 1.959963984540054


def t_quantile_975(df: int) -> float:
    if df < 1:
        raise MetricError(f"t quantile needs df >= 1, got {df}")
    if df <= 30:
        return _T_975[df - 1]
    return _Z_975


def ci95_t(samples) -> tuple[float, float]:
    """(mean, half-width) of the 95% confidence interval for the mean,
    using the sample standard deviation and t with n-1 dof."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < 2:
        raise MetricError(f"ci95_t needs at least 2 samples, got shape {samples.shape}")
    n = samples.size
    mean = float(samples.mean())
    s = float(samples.std(ddof=1))
    half = t_quantile_975(n - 1) * s / np.sqrt(n)
    return mean, float(half)

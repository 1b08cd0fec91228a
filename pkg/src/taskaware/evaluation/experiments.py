"""The two evaluation protocols and their report formats.

run_cv aggregates each task's files into one pool, splits it into k
synchronized folds, and for every fold trains a fresh model on the other
k-1 folds (vocabulary rebuilt from that training text only) before
scoring the held-out fold with the task's official metric. The 95%
interval is computed over the fold scores.

run_traintest trains on the official training split (carving out a small
validation share for best-epoch selection) and scores the test split
once per seed; the interval is computed over seed scores. The test split
never contributes to the vocabulary or to epoch selection.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import training as training_mod
from ..data import Example, TaskSpec, Vocabulary, build_vocab, input_tokens
from ..data import kfold as split_kfold
from ..encoder import EncoderConfig
from ..models import Model, TaskRegistry, VARIANTS
from .metrics import ci95_t


@dataclass
class TaskResult:
    task: str
    metric: str
    estimate: float
    half_width: float
    n: int
    scores: list[float]


@dataclass
class MetricReport:
    variant: str
    task_heads: list[str]
    mode: str                       # "cv" | "traintest"
    results: list[TaskResult]
    epoch_log: list[dict] = field(default_factory=list)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _holdout_split(examples: list[Example], fraction: float,
                   rng: np.random.Generator) -> tuple[list[Example], list[Example]]:
    order = rng.permutation(len(examples))
    n_val = max(1, int(round(fraction * len(examples))))
    if n_val >= len(examples):
        raise ValueError(f"validation fraction {fraction} leaves no training data")
    val_idx = set(order[:n_val].tolist())
    train = [examples[i] for i in range(len(examples)) if i not in val_idx]
    val = [examples[i] for i in range(len(examples)) if i in val_idx]
    return train, val


def _train_once(variant: str, registry: TaskRegistry, train_pools: list[list[Example]],
                encoder_opts: dict, optim: "training_mod.OptimConfig",
                teb_units: int | None, schedule_policy: str, run_seed: int,
                val_fraction: float) -> tuple["training_mod.TrainResult", Vocabulary]:
    root = np.random.SeedSequence(run_seed)
    split_rng, init_rng = (np.random.default_rng(s) for s in root.spawn(2))
    train_sets, val_sets = [], []
    for pool in train_pools:
        train, val = _holdout_split(pool, val_fraction, split_rng)
        train_sets.append(train)
        val_sets.append(val)

    max_len = encoder_opts.get("max_len", EncoderConfig.max_len)
    streams = []
    for ti, task in enumerate(registry):
        for ex in train_sets[ti]:
            streams.append(input_tokens(ex, variant, task, max_len))
    vocab = build_vocab(streams, min_count=encoder_opts.get("vocab_min_count", 1))

    opts = {k: v for k, v in encoder_opts.items() if k != "vocab_min_count"}
    config = EncoderConfig(vocab_size=len(vocab), **opts)
    model = Model.build(variant, registry, config, init_rng, teb_units=teb_units)
    result = training_mod.train_joint(
        model, train_sets, val_sets, vocab, optim,
        schedule_policy=schedule_policy, seed=run_seed,
    )
    return result, vocab


def _score_best(result: "training_mod.TrainResult", vocab: Vocabulary,
                test_sets: list[list[Example]]) -> dict[str, float]:
    scores = {}
    model = result.model
    for ti, task in enumerate(model.registry):
        model.restore(result.best_params[task.name])
        scores[task.name] = training_mod.evaluate_model(model, test_sets[ti], ti, vocab)
    return scores


def _epoch_dicts(result: "training_mod.TrainResult", variant: str, mode: str,
                 seed: int, fold: int | None) -> list[dict]:
    out = []
    for rec in result.history:
        entry = asdict(rec)
        entry.update({"variant": variant, "mode": mode, "seed": seed, "fold": fold})
        out.append(entry)
    return out


def _assemble(variant: str, registry: TaskRegistry, mode: str,
              scores: dict[str, list[float]], epoch_log: list[dict]) -> MetricReport:
    results = []
    for task in registry:
        vals = scores[task.name]
        if len(vals) >= 2:
            estimate, half = ci95_t(vals)
        else:
            estimate, half = float(vals[0]), 0.0
        results.append(TaskResult(task=task.name, metric=task.metric,
                                  estimate=estimate, half_width=half,
                                  n=len(vals), scores=[float(v) for v in vals]))
    return MetricReport(variant=variant, task_heads=[t.name for t in registry],
                        mode=mode, results=results, epoch_log=epoch_log)


def _run_jobs(jobs, worker, threads: int):
    """Run (key, payload) jobs, possibly in a thread pool; results come
    back ordered by key so report assembly is deterministic."""
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = dict(zip([key for key, _ in jobs],
                               pool.map(worker, [payload for _, payload in jobs])))
    else:
        outputs = {key: worker(payload) for key, payload in jobs}
    return [outputs[key] for key in sorted(outputs)]


def run_cv(variant: str, tasks: list[TaskSpec], datasets: list[list[Example]],
           encoder_opts: dict, optim: "training_mod.OptimConfig", k: int = 5,
           seeds=(0,), teb_units: int | None = None,
           schedule_policy: str = "round_robin", val_fraction: float = 0.1,
           threads: int = 1) -> MetricReport:
    """k-fold cross-validation over the aggregated per-task pools."""
    registry = TaskRegistry(list(tasks))
    if len(datasets) != registry.n:
        raise ValueError(f"run_cv: {registry.n} tasks but {len(datasets)} datasets")

    jobs = []
    for seed in seeds:
        folds_per_task = [split_kfold(ds, k, seed) for ds in datasets]
        for fold_i in range(k):
            test_sets = [folds[fold_i] for folds in folds_per_task]
            train_pools = [
                [ex for j, fold in enumerate(folds) if j != fold_i for ex in fold]
                for folds in folds_per_task
            ]
            jobs.append(((seed, fold_i), (seed, fold_i, train_pools, test_sets)))

    def worker(payload):
        seed, fold_i, train_pools, test_sets = payload
        result, vocab = _train_once(variant, registry, train_pools, encoder_opts,
                                    optim, teb_units, schedule_policy,
                                    run_seed=_derived_seed(seed, fold_i),
                                    val_fraction=val_fraction)
        return (_score_best(result, vocab, test_sets),
                _epoch_dicts(result, variant, "cv", seed, fold_i))

    scores: dict[str, list[float]] = {t.name: [] for t in registry}
    epoch_log: list[dict] = []
    for fold_scores, log in _run_jobs(jobs, worker, threads):
        for name, value in fold_scores.items():
            scores[name].append(value)
        epoch_log.extend(log)
    return _assemble(variant, registry, "cv", scores, epoch_log)


def run_traintest(variant: str, tasks: list[TaskSpec],
                  train_sets: list[list[Example]], test_sets: list[list[Example]],
                  encoder_opts: dict, optim: "training_mod.OptimConfig",
                  seeds=(0, 1, 2, 3, 4), teb_units: int | None = None,
                  schedule_policy: str = "round_robin", val_fraction: float = 0.1,
                  threads: int = 1) -> MetricReport:
    """Official train/test protocol; the interval spans per-seed scores."""
    registry = TaskRegistry(list(tasks))
    if len(train_sets) != registry.n or len(test_sets) != registry.n:
        raise ValueError(
            f"run_traintest: expected {registry.n} train and test sets, "
            f"got {len(train_sets)}/{len(test_sets)}"
        )
    jobs = [((seed,), seed) for seed in seeds]

    def worker(seed):
        result, vocab = _train_once(variant, registry, train_sets, encoder_opts,
                                    optim, teb_units, schedule_policy,
                                    run_seed=_derived_seed(seed),
                                    val_fraction=val_fraction)
        return (_score_best(result, vocab, test_sets),
                _epoch_dicts(result, variant, "traintest", seed, None))

    scores: dict[str, list[float]] = {t.name: [] for t in registry}
    epoch_log: list[dict] = []
    for seed_scores, log in _run_jobs(jobs, worker, threads):
        for name, value in seed_scores.items():
            scores[name].append(value)
        epoch_log.extend(log)
    return _assemble(variant, registry, "traintest", scores, epoch_log)


# ---------------------------------------------------------------------------
# records and the comparison table


def record_lines(report: MetricReport) -> list[str]:
    lines = []
    for r in report.results:
        entry = {
            "mode": report.mode,
            "variant": report.variant,
            "task_heads": report.task_heads,
            **asdict(r),
        }
        lines.append(json.dumps(entry, sort_keys=True))
    return lines


def write_records(path: str | Path, reports: list[MetricReport]) -> None:
    text = "\n".join(line for rep in reports for line in record_lines(rep))
    Path(path).write_text(text + ("\n" if text else ""), encoding="utf-8")


def load_records(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: malformed record: {exc}") from exc
    return records


def format_report_table(records: list[dict]) -> str:
    """Group records by model variant and task-head combination, one
    column per task showing 'estimate ± half-width'."""
    if not records:
        return "no records\n"
    task_order: list[str] = []
    for rec in records:
        if rec["task"] not in task_order:
            task_order.append(rec["task"])
    variant_rank = {v: i for i, v in enumerate(VARIANTS)}
    groups: dict[tuple, dict[str, dict]] = {}
    for rec in records:
        key = (variant_rank.get(rec["variant"], len(VARIANTS)), rec["variant"],
               tuple(rec["task_heads"]), rec["mode"])
        groups.setdefault(key, {})[rec["task"]] = rec

    header = ["Model", "Task Heads", "Mode"] + [
        f"{t} ({_metric_of(records, t)})" for t in task_order
    ]
    rows = [header]
    for key in sorted(groups):
        _, variant, heads, mode = key
        cells = [variant.upper(), " + ".join(heads), mode]
        for t in task_order:
            rec = groups[key].get(t)
            cells.append(f"{rec['estimate']:.3f} ± {rec['half_width']:.3f}" if rec else "--")
        rows.append(cells)

    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    out = []
    for i, row in enumerate(rows):
        out.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def _metric_of(records: list[dict], task: str) -> str:
    for rec in records:
        if rec["task"] == task:
            return rec["metric"]
    return "?"

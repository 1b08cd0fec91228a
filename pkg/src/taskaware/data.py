"""Corpus handling: tokenization, vocabularies, task-aware input
construction, TSV ingestion, fold splitting, and a synthetic two-task
generator that induces negative transfer.

The tokenizer is a deliberately simple word-level one: lowercase, URLs
and @-mentions collapsed to sentinels, punctuation split off. Models
train from scratch, so there is no pretrained subword vocabulary to
match; vocabularies are rebuilt from training text only (never test
text) to rule out leakage.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "<sep>"
URL_TOKEN = "<url>"
USER_TOKEN = "<user>"

METRICS = ("accuracy", "f1_positive", "f1_macro")

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_USER_RE = re.compile(r"@\w+")
_TOKEN_RE = re.compile(r"<url>|<user>|<sep>|\w+|[^\w\s]")


class DataError(ValueError):
    """Malformed corpus input; the message names the file/row/field."""


@dataclass(frozen=True)
class TaskSpec:
    """A task's identity: name, description text, label set and official metric."""

    name: str
    description_text: str
    labels: tuple[str, ...]
    metric: str
    positive_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.name:
            raise DataError("task.name: must be non-empty")
        if not self.description_text.strip():
            raise DataError(f"task {self.name!r}: description_text must be non-empty")
        if len(self.labels) < 2:
            raise DataError(f"task {self.name!r}: needs at least 2 labels")
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"task {self.name!r}: duplicate labels")
        if self.metric not in METRICS:
            raise DataError(f"task {self.name!r}: unknown metric {self.metric!r}")
        if self.metric == "f1_positive":
            if self.positive_label not in self.labels:
                raise DataError(
                    f"task {self.name!r}: positive_label must be one of {self.labels}"
                )

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def positive_index(self) -> int:
        if self.positive_label is None:
            raise DataError(f"task {self.name!r}: no positive_label configured")
        return self.labels.index(self.positive_label)


@dataclass
class Example:
    id: str
    text: str
    tokens: list[str]
    label: int
    task_index: int = 0


def tokenize(text: str) -> list[str]:
    """Lowercase word-level tokens; URLs -> <url>, @mentions -> <user>,
    punctuation split into single-character tokens."""
    text = _URL_RE.sub(f" {URL_TOKEN} ", text)
    text = _USER_RE.sub(f" {USER_TOKEN} ", text)
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        base = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        merged = dict(base)
        for tok, i in self.token_to_id.items():
            if tok not in base:
                merged[tok] = i
        self.token_to_id = merged

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]


def build_vocab(token_streams, min_count: int = 1) -> Vocabulary:
    """Ids in first-seen order, after the reserved PAD/UNK slots; tokens
    below min_count are dropped (they encode as UNK later)."""
    counts: Counter[str] = Counter()
    order: list[str] = []
    seen: set[str] = set()
    empty = True
    for stream in token_streams:
        empty = False
        for tok in stream:
            counts[tok] += 1
            if tok not in seen:
                seen.add(tok)
                order.append(tok)
    if empty:
        raise DataError("build_vocab: empty corpus")
    mapping: dict[str, int] = {}
    next_id = 2
    for tok in order:
        if counts[tok] >= min_count and tok not in (PAD_TOKEN, UNK_TOKEN):
            mapping[tok] = next_id
            next_id += 1
    return Vocabulary(mapping)


def make_tai_input(ts_tokens: list[str], task: TaskSpec, max_len: int) -> list[str]:
    """[TD tokens] + [<sep>] + [TS tokens], truncating only the TS tail.

    The task description always survives intact; an over-long snippet is
    cut from the right so the total fits max_len.
    """
    td_tokens = tokenize(task.description_text)
    if len(td_tokens) + 1 > max_len:
        raise DataError(
            f"task {task.name!r}: description ({len(td_tokens)} tokens) does not fit "
            f"max_len {max_len}"
        )
    room = max_len - len(td_tokens) - 1
    return td_tokens + [SEP_TOKEN] + ts_tokens[:room]


def input_tokens(example: Example, variant: str, task: TaskSpec, max_len: int) -> list[str]:
    """The token stream a given model variant actually encodes."""
    if variant == "mtl-tai":
        return make_tai_input(example.tokens, task, max_len)
    return example.tokens[:max_len]


# ---------------------------------------------------------------------------
# TSV ingestion

_HEADER = ("id", "text", "label")


def load_tsv(path: str | Path, task: TaskSpec, task_index: int = 0) -> list[Example]:
    """Read one UTF-8 TSV corpus file: header ``id<TAB>text<TAB>label``
    with an optional trailing ``language`` column (non-Spanish rows are
    skipped when present). Labels map through the task's label order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    if tuple(header[:3]) != _HEADER or len(header) > 4 or (
            len(header) == 4 and header[3] != "language"):
        raise DataError(
            f"{path}: header must be id<TAB>text<TAB>label[<TAB>language], got {header}"
        )
    has_lang = len(header) == 4
    examples: list[Example] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != len(header):
            raise DataError(
                f"{path}: row {lineno}: expected {len(header)} fields, got {len(fields)} "
                "(embedded tabs are not allowed)"
            )
        if has_lang and fields[3] != "es":
            continue
        ex_id, text, label = fields[0], fields[1], fields[2]
        if label not in task.labels:
            raise DataError(
                f"{path}: row {lineno}: unknown label {label!r} for task {task.name!r} "
                f"(expected one of {list(task.labels)})"
            )
        examples.append(Example(id=ex_id, text=text, tokens=tokenize(text),
                                label=task.label_index(label), task_index=task_index))
    if not examples:
        raise DataError(f"{path}: no usable rows")
    return examples


def write_tsv(path: str | Path, task: TaskSpec, examples: list[Example]) -> None:
    lines = ["id\ttext\tlabel"]
    for ex in examples:
        if "\t" in ex.id or "\t" in ex.text:
            raise DataError(f"write_tsv: embedded tab in example {ex.id!r}")
        lines.append(f"{ex.id}\t{ex.text}\t{task.labels[ex.label]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# fold splitting


def kfold(examples: list[Example], k: int, seed: int) -> list[list[Example]]:
    """Seeded shuffle then contiguous slices; fold sizes differ by <= 1
    and the folds partition the input."""
    if k < 2:
        raise DataError(f"kfold: k must be >= 2, got {k}")
    if len(examples) < k:
        raise DataError(f"kfold: {len(examples)} examples cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(examples))
    return [[examples[i] for i in chunk] for chunk in np.array_split(order, k)]


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    token_ids: np.ndarray     # int [batch, len]
    mask: np.ndarray          # bool [batch, len]
    labels: np.ndarray        # int [batch]
    task_index: int


def make_batch(examples: list[Example], vocab: Vocabulary, max_len: int,
               variant: str, task: TaskSpec, task_index: int) -> Batch:
    streams = [vocab.encode(input_tokens(ex, variant, task, max_len)) for ex in examples]
    width = max(len(s) for s in streams)
    ids = np.full((len(streams), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(streams), width), dtype=bool)
    for i, s in enumerate(streams):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Batch(token_ids=ids, mask=mask, labels=labels, task_index=task_index)


def iter_batches(examples: list[Example], batch_size: int, vocab: Vocabulary,
                 max_len: int, variant: str, task: TaskSpec, task_index: int,
                 rng: np.random.Generator | None = None) -> list[Batch]:
    pool = list(examples)
    if rng is not None:
        order = rng.permutation(len(pool))
        pool = [pool[i] for i in order]
    return [
        make_batch(pool[i:i + batch_size], vocab, max_len, variant, task, task_index)
        for i in range(0, len(pool), batch_size)
    ]


# ---------------------------------------------------------------------------
# synthetic negative-transfer benchmark

# Private trigger-token family stems, (positive, negative) per task.
_TRIGGER_STEMS = {"task_a": ("zorp", "vexa"), "task_b": ("blim", "quon")}
# Shared trigger stems carry a fixed polarity for *both* tasks, encoded in
# the name: first letter is the task_a polarity, second the task_b one.
# Most shared tokens are anti-aligned (opposite polarities), so pooling
# their semantics across tasks is contradictory, but the two aligned stems
# keep a single sign-flipped axis from resolving the conflict.
_SHARED_STEMS = ("xpn", "xnp", "xpp", "xnn")
_ANTI_SHARE = 0.75           # shared draws favour the anti-aligned stems
# Per-task negation token: when present it flips the example's label, so
# the decision is an XOR of evidence majority and negation presence.
_NEGATION_STEMS = {"task_a": "nixa", "task_b": "nixb"}
# Below 0.5 so the evidence majority stays marginally informative and
# gradient descent can discover the flip incrementally.
_NEGATION_PROB = 0.3
_MAX_TRIGGERS_PER_POLARITY = 6
_EVIDENCE_DRAWS = 5          # odd, so the majority rule never ties
_EVIDENCE_TILT = 0.8         # per-draw probability of the intended polarity
_FILLER_RANGE = (4, 11)


def synthetic_tasks() -> tuple[TaskSpec, TaskSpec]:
    # Description tokens must not collide with trigger tokens, or the TAI
    # prefix itself would inject evidence.
    return (
        TaskSpec(name="task_a", description_text="alpha signal detection",
                 labels=("neg", "pos"), metric="accuracy"),
        TaskSpec(name="task_b", description_text="beta signal detection",
                 labels=("neg", "pos"), metric="accuracy"),
    )


def _family_size(vocab_size: int) -> int:
    # 4 private families + 4 shared families of m tokens each, and at
    # least a handful of fillers.
    return max(1, min(_MAX_TRIGGERS_PER_POLARITY, (vocab_size - 4) // 8))


def trigger_tokens(vocab_size: int) -> dict[str, tuple[list[str], list[str]]]:
    """Per task, the (positive, negative) trigger tokens, shared ones
    included under both tasks with their task-specific polarity."""
    m = _family_size(vocab_size)

    def fam(stem):
        return [f"{stem}{i}" for i in range(m)]

    out: dict[str, tuple[list[str], list[str]]] = {}
    for ti, (name, (pos, neg)) in enumerate(_TRIGGER_STEMS.items()):
        shared_pos = [t for stem in _SHARED_STEMS if stem[1 + ti] == "p" for t in fam(stem)]
        shared_neg = [t for stem in _SHARED_STEMS if stem[1 + ti] == "n" for t in fam(stem)]
        out[name] = (fam(pos) + shared_pos, fam(neg) + shared_neg)
    return out


def synthesize_tasks(n_per_task: int, vocab_size: int, conflict: float,
                     seed: int) -> tuple[tuple[TaskSpec, TaskSpec], list[list[Example]]]:
    """Two binary tasks over a shared token inventory.

    Every example carries a handful of evidence trigger tokens plus
    filler noise; its label is, by construction, the majority polarity of
    that evidence under its own task's polarity assignment, so the label
    stays a deterministic function of the token multiset while still
    requiring the model to weigh several noisy tokens.

    A task-private negation token appears in half the examples and flips
    the label, so the decision is an XOR of evidence majority and
    negation presence rather than a plain weighted vote.

    ``conflict`` is the per-draw probability that an evidence token comes
    from the shared trigger pool instead of the task's private one.
    Shared tokens belong to both tasks' trigger sets, and for most of
    them the polarities disagree: a task_b example whose label is
    positive mostly embeds tokens whose task_a meaning is negative, and
    vice versa. A representation that pools trigger semantics across
    tasks therefore receives contradictory supervision, while each task
    stays perfectly solvable on its own. conflict=0 uses only private
    triggers, making the tasks fully compatible.
    """
    if n_per_task < 16:
        raise DataError(f"synthesize_tasks: n_per_task must be >= 16, got {n_per_task}")
    if not 0.0 <= conflict <= 1.0:
        raise DataError(f"synthesize_tasks: conflict must be in [0, 1], got {conflict}")
    if vocab_size < 8:
        raise DataError(f"synthesize_tasks: degenerate vocab ({vocab_size} < 8 tokens)")

    tasks = synthetic_tasks()
    m = _family_size(vocab_size)
    fillers = [f"w{i:03d}" for i in range(max(4, vocab_size - 8 * m))]
    rng = np.random.default_rng(seed)
    corpora: list[list[Example]] = []
    for task_index, task in enumerate(tasks):
        pos_stem, neg_stem = _TRIGGER_STEMS[task.name]

        def shared_stem(pol: str, anti: bool) -> str:
            foreign = {"p": "n", "n": "p"}[pol] if anti else pol
            letters = (pol, foreign) if task_index == 0 else (foreign, pol)
            return "x" + letters[0] + letters[1]

        intents = np.array([0] * (n_per_task // 2) + [1] * (n_per_task - n_per_task // 2))
        rng.shuffle(intents)
        examples = []
        for i, intent in enumerate(intents):
            tilt = _EVIDENCE_TILT if intent == 1 else 1.0 - _EVIDENCE_TILT
            polarity = rng.random(_EVIDENCE_DRAWS) < tilt
            label = int(polarity.sum() * 2 > _EVIDENCE_DRAWS)
            words = []
            for pol in polarity:
                if rng.random() < conflict:
                    anti = rng.random() < _ANTI_SHARE
                    stem = shared_stem("p" if pol else "n", anti)
                else:
                    stem = pos_stem if pol else neg_stem
                words.append(f"{stem}{int(rng.integers(0, m))}")
            if rng.random() < _NEGATION_PROB:
                words.append(_NEGATION_STEMS[task.name] + "0")
                label = 1 - label
            n_fill = int(rng.integers(*_FILLER_RANGE))
            words.extend(fillers[j] for j in rng.integers(0, len(fillers), n_fill))
            rng.shuffle(words)
            text = " ".join(words)
            examples.append(Example(id=f"{task.name}-{i:05d}", text=text,
                                    tokens=tokenize(text), label=label,
                                    task_index=task_index))
        corpora.append(examples)
    return tasks, corpora

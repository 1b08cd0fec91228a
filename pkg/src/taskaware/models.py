"""The four model variants over a shared encoder.

stl      one task, one head
mtl      shared encoder, one linear head per task
mtl-tai  as mtl, but inputs carry the task-description prefix (built in
         the data pipeline; the model itself is identical to mtl)
mtl-te   as mtl, plus a Task Embedding Block between encoder and heads

The TEB is a single block shared by all tasks: it concatenates the latent
representation with a one-hot task identification vector and pushes the
result through 1-3 learning units (linear + ReLU), each preserving the
latent width. Training updates flow to the encoder, the TEB and only the
head of the task a batch belongs to; all other heads stay untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Batch, TaskSpec
from .encoder import ConfigError, EncoderConfig, encode, init_params
from .manifest import load_arrays, save_arrays
from .tensor import Tensor

VARIANTS = ("stl", "mtl", "mtl-tai", "mtl-te")


@dataclass
class TaskRegistry:
    """Ordered task list; order is fixed for a model's lifetime because
    TIV positions and head indices depend on it."""

    tasks: list[TaskSpec]

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("tasks: need at least one task")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"tasks: duplicate task names in {names}")

    @property
    def n(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i: int) -> TaskSpec:
        return self.tasks[i]

    def index_of(self, name: str) -> int:
        for i, t in enumerate(self.tasks):
            if t.name == name:
                return i
        raise KeyError(name)


@dataclass
class TaskHead:
    weight: Tensor            # [latent_dim, classes]
    bias: Tensor              # [classes]

    @classmethod
    def init(cls, latent_dim: int, classes: int, rng: np.random.Generator) -> "TaskHead":
        w = rng.uniform(-0.05, 0.05, (latent_dim, classes)) / np.sqrt(latent_dim)
        return cls(weight=T.param(w), bias=T.param(np.zeros(classes)))

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class TEBlock:
    """1-3 learning units; the first eats latent+N, every unit emits latent."""

    units: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @classmethod
    def init(cls, latent_dim: int, n_tasks: int, n_units: int,
             rng: np.random.Generator) -> "TEBlock":
        if not 1 <= n_units <= 3:
            raise ConfigError(f"teb_units: must be between 1 and 3, got {n_units}")
        units = []
        fan_in = latent_dim + n_tasks
        for _ in range(n_units):
            # Near-identity on the latent block so an untrained block passes
            # the representation through mostly intact; the task-vector rows
            # start random so different TIVs already separate, and a positive
            # bias keeps most ReLU units live from the first step.
            w = rng.uniform(-0.05, 0.05, (fan_in, latent_dim))
            w[:latent_dim, :] += np.eye(latent_dim)
            w[latent_dim:, :] = rng.uniform(-0.25, 0.25, (fan_in - latent_dim, latent_dim))
            units.append((T.param(w), T.param(np.full(latent_dim, 0.5))))
            fan_in = latent_dim
        return cls(units=units)

    def params(self) -> list[Tensor]:
        return [t for unit in self.units for t in unit]


def one_hot_tiv(task_index: int, n: int) -> Tensor:
    """One-hot task identification vector of width n."""
    if not 0 <= task_index < n:
        raise IndexError(f"task_index {task_index} out of range [0, {n})")
    v = np.zeros(n)
    v[task_index] = 1.0
    return T.tensor(v)


def teb_forward(latent: Tensor, tiv: Tensor, block: TEBlock) -> Tensor:
    """relu(W(latent ++ tiv) + b) through each learning unit in order."""
    h = T.concat(latent, tiv)
    for w, b in block.units:
        if h.shape[-1] != w.shape[0]:
            raise T.ShapeError(
                f"teb_forward: unit expects width {w.shape[0]}, got {h.shape[-1]}"
            )
        h = T.relu(T.add(T.matmul(h, w), b))
    return h


class Model:
    """A variant + encoder parameters + per-task heads (+ TEB for mtl-te)."""

    def __init__(self, variant: str, registry: TaskRegistry, config: EncoderConfig,
                 enc_params: dict[str, Tensor], heads: list[TaskHead],
                 teb: TEBlock | None):
        if variant not in VARIANTS:
            raise ConfigError(f"variant: unknown variant {variant!r}")
        if variant == "stl" and registry.n != 1:
            raise ConfigError(f"variant: stl requires exactly one task, got {registry.n}")
        if variant != "stl" and registry.n < 2:
            raise ConfigError(f"variant: {variant} requires at least 2 tasks")
        if (variant == "mtl-te") != (teb is not None):
            raise ConfigError("teb_units: a TEB is required for mtl-te and only mtl-te")
        self.variant = variant
        self.registry = registry
        self.config = config
        self.enc_params = enc_params
        self.heads = heads
        self.teb = teb

    @classmethod
    def build(cls, variant: str, registry: TaskRegistry, config: EncoderConfig,
              rng: np.random.Generator, teb_units: int | None = None) -> "Model":
        enc_params = init_params(config, rng)
        heads = [TaskHead.init(config.latent_dim, t.n_classes, rng) for t in registry]
        teb = None
        if variant == "mtl-te":
            if teb_units is None:
                raise ConfigError("teb_units: required for mtl-te")
            teb = TEBlock.init(config.latent_dim, registry.n, teb_units, rng)
        elif teb_units is not None:
            raise ConfigError(f"teb_units: not applicable to variant {variant!r}")
        return cls(variant, registry, config, enc_params, heads, teb)

    def forward(self, batch: Batch, task_index: int, *, training: bool = False,
                dropout_p: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
        """Logits [batch, classes] for one task's batch."""
        if not 0 <= task_index < self.registry.n:
            raise IndexError(f"task_index {task_index} out of range [0, {self.registry.n})")
        out = encode(batch.token_ids, batch.mask, self.enc_params, self.config,
                     training=training, dropout_p=dropout_p, rng=rng)
        latent = out.latent
        if self.teb is not None:
            tiv = one_hot_tiv(task_index, self.registry.n)
            tiv_rows = T.tensor(np.tile(tiv.data, (latent.shape[0], 1)))
            latent = teb_forward(latent, tiv_rows, self.teb)
        if training and dropout_p > 0:
            latent = T.dropout(latent, dropout_p, training, rng)
        head = self.heads[task_index]
        return T.add(T.matmul(latent, head.weight), head.bias)

    def predict(self, batch: Batch, task_index: int) -> np.ndarray:
        """Argmax class per row; ties break toward the lowest class index."""
        logits = self.forward(batch, task_index)
        return logits.data.argmax(axis=1)

    def trainable_params(self, task_index: int) -> list[Tensor]:
        """Encoder (+ TEB) parameters plus only the addressed task's head."""
        if not 0 <= task_index < self.registry.n:
            raise IndexError(f"task_index {task_index} out of range [0, {self.registry.n})")
        params = [self.enc_params[k] for k in sorted(self.enc_params)]
        if self.teb is not None:
            params.extend(self.teb.params())
        params.extend(self.heads[task_index].params())
        return params

    def all_params(self) -> dict[str, Tensor]:
        named = {f"encoder.{k}": v for k, v in self.enc_params.items()}
        for i, head in enumerate(self.heads):
            named[f"head{i}.weight"] = head.weight
            named[f"head{i}.bias"] = head.bias
        if self.teb is not None:
            for j, (w, b) in enumerate(self.teb.units):
                named[f"teb.lu{j}.weight"] = w
                named[f"teb.lu{j}.bias"] = b
        return named

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.all_params().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        named = self.all_params()
        if named.keys() != snapshot.keys():
            raise ConfigError("checkpoint: parameter names do not match this model")
        for k, v in named.items():
            v.data[...] = snapshot[k]

    def save(self, path) -> None:
        from dataclasses import asdict

        meta = {
            "kind": "model",
            "variant": self.variant,
            "encoder": asdict(self.config),
            "tasks": [asdict(t) for t in self.registry],
            "teb_units": len(self.teb.units) if self.teb else None,
        }
        save_arrays(path, self.snapshot(), meta)

    @classmethod
    def load(cls, path) -> "Model":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "model":
            raise ConfigError(f"{path}: not a model checkpoint")
        registry = TaskRegistry([TaskSpec(**{**t, "labels": tuple(t["labels"])})
                                 for t in meta["tasks"]])
        config = EncoderConfig(**meta["encoder"])
        model = cls.build(meta["variant"], registry, config,
                          np.random.default_rng(0), teb_units=meta["teb_units"])
        model.restore(arrays)
        return model

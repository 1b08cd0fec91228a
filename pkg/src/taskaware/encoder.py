"""Miniature transformer text encoder.

Token + learned positional embeddings feed a stack of post-norm
self-attention blocks; the latent representation is the concatenation of
masked max pooling and masked mean pooling over the output sequence, so
its width is always twice the hidden size. With ``layers=0`` the encoder
degenerates to pooled (token + position) embeddings, which is handy as a
closed-form check.

Parameters are a flat ``{name: Tensor}`` dict so optimizers, checkpoints
and gradient checks can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .manifest import load_arrays, save_arrays
from .tensor import Tensor


class ConfigError(ValueError):
    """An encoder or model configuration violates its invariants."""


class SequenceError(ValueError):
    """Bad input sequence: empty, over-length, or out-of-vocabulary ids."""


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    max_len: int = 64
    ffn_mult: int = 4

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"encoder.vocab_size: must be >= 2, got {self.vocab_size}")
        if self.hidden < 1 or self.heads < 1 or self.hidden % self.heads != 0:
            raise ConfigError(
                f"encoder.hidden: must be a positive multiple of heads "
                f"(hidden={self.hidden}, heads={self.heads})"
            )
        if self.layers < 0:
            raise ConfigError(f"encoder.layers: must be >= 0, got {self.layers}")
        if self.max_len < 2:
            raise ConfigError(f"encoder.max_len: must be >= 2, got {self.max_len}")
        if self.ffn_mult < 1:
            raise ConfigError(f"encoder.ffn_mult: must be >= 1, got {self.ffn_mult}")

    @property
    def latent_dim(self) -> int:
        return 2 * self.hidden


@dataclass
class EncoderOutput:
    sequence: Tensor          # [batch, len, hidden] (or [len, hidden] for 1-D input)
    latent: Tensor            # [batch, 2*hidden]    (or [2*hidden])
    attentions: list[Tensor] | None = None


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Embeddings ~ U(-0.05, 0.05); linear weights the same scaled by
    1/sqrt(fan_in); biases 0; layer-norm gain 1, bias 0."""

    def emb(*shape):
        return T.param(rng.uniform(-0.05, 0.05, shape))

    def linear(fan_in, fan_out):
        return T.param(rng.uniform(-0.05, 0.05, (fan_in, fan_out)) / np.sqrt(fan_in))

    h, m = config.hidden, config.ffn_mult
    params: dict[str, Tensor] = {
        "tok_emb": emb(config.vocab_size, h),
        "pos_emb": emb(config.max_len, h),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        for name in ("wq", "wk", "wv", "wo"):
            params[p + f"attn.{name}"] = linear(h, h)
            params[p + f"attn.{name[1]}_bias"] = T.param(np.zeros(h))
        params[p + "ln1.gain"] = T.param(np.ones(h))
        params[p + "ln1.bias"] = T.param(np.zeros(h))
        params[p + "ffn.w1"] = linear(h, m * h)
        params[p + "ffn.b1"] = T.param(np.zeros(m * h))
        params[p + "ffn.w2"] = linear(m * h, h)
        params[p + "ffn.b2"] = T.param(np.zeros(h))
        params[p + "ln2.gain"] = T.param(np.ones(h))
        params[p + "ln2.bias"] = T.param(np.zeros(h))
    return params


def param_count(config: EncoderConfig) -> int:
    h, m = config.hidden, config.ffn_mult
    per_layer = 4 * (h * h + h) + 2 * h + (h * m * h + m * h) + (m * h * h + h) + 2 * h
    return config.vocab_size * h + config.max_len * h + config.layers * per_layer


def _attention(x: Tensor, mask: np.ndarray, params: dict[str, Tensor], prefix: str,
               config: EncoderConfig) -> tuple[Tensor, Tensor]:
    b, length, h = x.shape
    heads = config.heads
    d = h // heads

    def project(name):
        out = T.add(T.matmul(x, params[prefix + f"attn.w{name}"]),
                    params[prefix + f"attn.{name}_bias"])
        out = T.reshape(out, (b, length, heads, d))
        return T.transpose(out, (0, 2, 1, 3))      # [b, heads, len, d]

    q, k, v = project("q"), project("k"), project("v")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    attn = T.masked_softmax(scores, mask[:, np.newaxis, np.newaxis, :])
    ctx = T.matmul(attn, v)                        # [b, heads, len, d]
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, length, h))
    out = T.add(T.matmul(ctx, params[prefix + "attn.wo"]), params[prefix + "attn.o_bias"])
    return out, attn


def encode(token_ids: np.ndarray, mask: np.ndarray, params: dict[str, Tensor],
           config: EncoderConfig, *, training: bool = False, dropout_p: float = 0.0,
           rng: np.random.Generator | None = None,
           collect_attention: bool = False) -> EncoderOutput:
    """Run the encoder over a [batch, len] (or [len]) id array.

    PAD positions (mask False) are excluded from attention and pooling,
    so their token values cannot influence the latent representation.
    """
    ids = np.asarray(token_ids)
    mask = np.asarray(mask, dtype=bool)
    single = ids.ndim == 1
    if single:
        ids = ids[np.newaxis, :]
        mask = mask[np.newaxis, :]
    if ids.shape != mask.shape:
        raise SequenceError(f"mask shape {mask.shape} does not match ids {ids.shape}")
    b, length = ids.shape
    if length == 0 or not mask.any(axis=1).all():
        raise SequenceError("every sequence needs at least one valid token")
    if length > config.max_len:
        raise SequenceError(f"sequence length {length} exceeds max_len {config.max_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise SequenceError(
            f"token id out of vocabulary range [0, {config.vocab_size})"
        )

    def drop(t):
        return T.dropout(t, dropout_p, training, rng) if training and dropout_p > 0 else t

    x = T.add(T.embedding_lookup(params["tok_emb"], ids),
              T.embedding_lookup(params["pos_emb"], np.arange(length)))
    x = drop(x)

    attentions: list[Tensor] = []
    for i in range(config.layers):
        prefix = f"layer{i}."
        attn_out, attn = _attention(x, mask, params, prefix, config)
        if collect_attention:
            attentions.append(attn)
        x = T.layer_norm(T.add(x, drop(attn_out)),
                         params[prefix + "ln1.gain"], params[prefix + "ln1.bias"])
        ffn = T.add(T.matmul(T.relu(T.add(T.matmul(x, params[prefix + "ffn.w1"]),
                                          params[prefix + "ffn.b1"])),
                             params[prefix + "ffn.w2"]),
                    params[prefix + "ffn.b2"])
        x = T.layer_norm(T.add(x, drop(ffn)),
                         params[prefix + "ln2.gain"], params[prefix + "ln2.bias"])

    latent = T.concat(T.max_pool(x, mask), T.mean_pool(x, mask))
    if single:
        x = T.reshape(x, (length, config.hidden))
        latent = T.reshape(latent, (config.latent_dim,))
    return EncoderOutput(sequence=x, latent=latent,
                         attentions=attentions if collect_attention else None)


def save_encoder_params(path, params: dict[str, Tensor], config: EncoderConfig) -> None:
    meta = {"kind": "encoder", "config": asdict(config)}
    save_arrays(path, {k: v.data for k, v in params.items()}, meta)


def load_encoder_params(path) -> tuple[dict[str, Tensor], EncoderConfig]:
    arrays, meta = load_arrays(path)
    config = EncoderConfig(**meta["config"])
    return {k: T.param(v) for k, v in arrays.items()}, config

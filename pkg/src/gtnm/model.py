"""Seq2seq method-name model: two encoders and a three-attention decoder.

The code encoder reads the concatenated local / project / doc token stream.
A second encoder reads the project stream alone; its states are reweighted
by a softmax over the invocation bits so that subtokens of methods the body
actually calls dominate. Each decoder layer runs causal self-attention,
cross-attention over the reweighted project states, cross-attention over
the full code states, then a feed-forward block; every sublayer is wrapped
in residual + LayerNorm (post-norm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable

import numpy as np

from . import nn
from .corpus import EncodedExample, LengthConfig
from .nn import AttentionParams, Tensor, tensor

PAD_ID = 0


@dataclass
class ModelConfig:
    layers: int = 6
    d_model: int = 512
    heads: int = 8
    d_ff: int = 2048
    dropout: float = 0.3
    code_vocab: int = 20000
    doc_vocab: int = 10000
    lengths: LengthConfig = field(default_factory=LengthConfig)

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be nonnegative")
        for name in ("d_model", "heads", "d_ff", "code_vocab", "doc_vocab"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ValueError("d_model must divide evenly across heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small configuration for single-core experiments and tests."""
        base = cls(layers=2, d_model=64, heads=4, d_ff=256, dropout=0.0)
        return replace(base, **overrides) if overrides else base

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "d_model": self.d_model,
            "heads": self.heads,
            "d_ff": self.d_ff,
            "dropout": self.dropout,
            "code_vocab": self.code_vocab,
            "doc_vocab": self.doc_vocab,
            "lengths": self.lengths.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["lengths"] = LengthConfig.from_dict(d["lengths"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameters


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int,
            shape: tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _attn_block(rng, names: dict, prefix: str, d: int) -> None:
    for w in ("wq", "wk", "wv", "wo"):
        names[f"{prefix}.{w}"] = _xavier(rng, d, d, (d, d))


def _norm_block(names: dict, prefix: str, d: int) -> None:
    names[f"{prefix}.g"] = np.ones(d, np.float32)
    names[f"{prefix}.b"] = np.zeros(d, np.float32)


def _ffn_block(rng, names: dict, prefix: str, d: int, d_ff: int) -> None:
    names[f"{prefix}.w1"] = _xavier(rng, d, d_ff, (d, d_ff))
    names[f"{prefix}.b1"] = np.zeros(d_ff, np.float32)
    names[f"{prefix}.w2"] = _xavier(rng, d_ff, d, (d_ff, d))
    names[f"{prefix}.b2"] = np.zeros(d, np.float32)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Freshly initialized parameter tensors in a stable name order."""
    rng = np.random.default_rng(seed)
    d, d_ff = config.d_model, config.d_ff
    arrays: dict[str, np.ndarray] = {}
    arrays["code_embed"] = _xavier(rng, config.code_vocab, d, (config.code_vocab, d))
    arrays["doc_embed"] = _xavier(rng, config.doc_vocab, d, (config.doc_vocab, d))
    for stack in ("enc", "penc"):
        for i in range(config.layers):
            _attn_block(rng, arrays, f"{stack}.{i}.attn", d)
            _norm_block(arrays, f"{stack}.{i}.norm1", d)
            _ffn_block(rng, arrays, f"{stack}.{i}.ffn", d, d_ff)
            _norm_block(arrays, f"{stack}.{i}.norm2", d)
    for i in range(config.layers):
        _attn_block(rng, arrays, f"dec.{i}.self", d)
        _norm_block(arrays, f"dec.{i}.norm1", d)
        _attn_block(rng, arrays, f"dec.{i}.cross_pro", d)
        _norm_block(arrays, f"dec.{i}.norm2", d)
        _attn_block(rng, arrays, f"dec.{i}.cross_all", d)
        _norm_block(arrays, f"dec.{i}.norm3", d)
        _ffn_block(rng, arrays, f"dec.{i}.ffn", d, d_ff)
        _norm_block(arrays, f"dec.{i}.norm4", d)
    arrays["out_proj"] = _xavier(rng, d, config.code_vocab, (config.code_vocab, d))
    return {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}


def _attn(params: dict[str, Tensor], prefix: str, heads: int) -> AttentionParams:
    return AttentionParams(
        wq=params[f"{prefix}.wq"],
        wk=params[f"{prefix}.wk"],
        wv=params[f"{prefix}.wv"],
        wo=params[f"{prefix}.wo"],
        heads=heads,
    )


@lru_cache(maxsize=8)
def _position_table(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    dim = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


def positions(length: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal position encodings, shape (length, d_model)."""
    return _position_table(length, d_model)


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    x_loc: np.ndarray
    x_pro: np.ndarray
    x_doc: np.ndarray
    invoked: np.ndarray
    loc_mask: np.ndarray
    pro_mask: np.ndarray
    doc_mask: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray
    y_mask: np.ndarray

    @classmethod
    def from_examples(cls, examples: Iterable[EncodedExample]) -> "Batch":
        ex = list(examples)
        if not ex:
            raise ValueError("empty batch")
        stack = lambda get, dt: np.array([get(e) for e in ex], dtype=dt)
        return cls(
            x_loc=stack(lambda e: e.x_loc, np.int64),
            x_pro=stack(lambda e: e.x_pro, np.int64),
            x_doc=stack(lambda e: e.x_doc, np.int64),
            invoked=stack(lambda e: e.invoked, np.float32),
            loc_mask=stack(lambda e: e.x_loc_mask, bool),
            pro_mask=stack(lambda e: e.x_pro_mask, bool),
            doc_mask=stack(lambda e: e.x_doc_mask, bool),
            y_in=stack(lambda e: e.y_in, np.int64),
            y_out=stack(lambda e: e.y_out, np.int64),
            y_mask=stack(lambda e: e.y_mask, bool),
        )

    @property
    def size(self) -> int:
        return self.x_loc.shape[0]

    def code_mask(self) -> np.ndarray:
        return np.concatenate([self.loc_mask, self.pro_mask, self.doc_mask], axis=1)


# ---------------------------------------------------------------------------
# forward pieces


def invoked_weights(invoked: np.ndarray, pro_mask: np.ndarray) -> np.ndarray:
    """Per-position weights softmax(1 + bits) over non-PAD project slots.

    Rows with no project context at all get all-zero weights, which zeroes
    the reweighted states downstream.
    """
    shifted = np.asarray(invoked, np.float32) + 1.0
    w = nn.softmax(tensor(shifted), mask=np.asarray(pro_mask, bool), allow_empty=True)
    return w.data


def _needs_rng(training: bool, cfg: ModelConfig, rng) -> np.random.Generator:
    if training and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    return rng if rng is not None else np.random.default_rng(0)


def embed_inputs(params, cfg: ModelConfig, batch: Batch, rng=None,
                 training: bool = False) -> tuple[Tensor, Tensor]:
    """Token + position embeddings for the concatenated stream and the
    project-only stream; both scaled by sqrt(d_model)."""
    rng = _needs_rng(training, cfg, rng)
    d = cfg.d_model
    root = math.sqrt(d)
    loc = nn.embedding_lookup(params["code_embed"], batch.x_loc)
    pro = nn.embedding_lookup(params["code_embed"], batch.x_pro)
    doc = nn.embedding_lookup(params["doc_embed"], batch.x_doc)
    cat = nn.scale(nn.concat([loc, pro, doc], axis=1), root)
    total = cat.data.shape[1]
    cat = nn.add(cat, tensor(positions(total, d)))
    cat = nn.dropout(cat, cfg.dropout, rng, training)

    pro_only = nn.scale(nn.embedding_lookup(params["code_embed"], batch.x_pro), root)
    pro_only = nn.add(pro_only, tensor(positions(pro_only.data.shape[1], d)))
    pro_only = nn.dropout(pro_only, cfg.dropout, rng, training)
    return cat, pro_only


def _encoder_layer(params, cfg, prefix: str, x: Tensor, key_mask, rng, training,
                   allow_empty: bool) -> Tensor:
    a = nn.multi_head_attention(x, x, _attn(params, f"{prefix}.attn", cfg.heads),
                                key_mask=key_mask, allow_empty_rows=allow_empty)
    x = nn.layer_norm(nn.add(x, nn.dropout(a, cfg.dropout, rng, training)),
                      params[f"{prefix}.norm1.g"], params[f"{prefix}.norm1.b"])
    f = nn.ffn(x, params[f"{prefix}.ffn.w1"], params[f"{prefix}.ffn.b1"],
               params[f"{prefix}.ffn.w2"], params[f"{prefix}.ffn.b2"])
    return nn.layer_norm(nn.add(x, nn.dropout(f, cfg.dropout, rng, training)),
                         params[f"{prefix}.norm2.g"], params[f"{prefix}.norm2.b"])


def encode_code(params, cfg: ModelConfig, x: Tensor, code_mask: np.ndarray,
                rng=None, training: bool = False) -> Tensor:
    rng = _needs_rng(training, cfg, rng)
    for i in range(cfg.layers):
        x = _encoder_layer(params, cfg, f"enc.{i}", x, code_mask, rng, training,
                           allow_empty=False)
    return x


def encode_project(params, cfg: ModelConfig, pro: Tensor, pro_mask: np.ndarray,
                   invoked: np.ndarray, rng=None, training: bool = False,
                   ) -> tuple[Tensor, np.ndarray]:
    """Project-only encoding reweighted by invocation bits.

    Returns the weighted states and the weight matrix. Examples with no
    project context produce an all-zero state block.
    """
    rng = _needs_rng(training, cfg, rng)
    x = pro
    for i in range(cfg.layers):
        x = _encoder_layer(params, cfg, f"penc.{i}", x, pro_mask, rng, training,
                           allow_empty=True)
    w = invoked_weights(invoked, pro_mask)
    return nn.mul_const(x, w[:, :, None]), w


@dataclass
class EncoderState:
    h_all: Tensor
    h_pro: Tensor
    code_mask: np.ndarray
    pro_mask: np.ndarray


def encode(params, cfg: ModelConfig, batch: Batch, rng=None,
           training: bool = False) -> EncoderState:
    rng = _needs_rng(training, cfg, rng)
    cat, pro = embed_inputs(params, cfg, batch, rng, training)
    code_mask = batch.code_mask()
    h_all = encode_code(params, cfg, cat, code_mask, rng, training)
    h_pro, _ = encode_project(params, cfg, pro, batch.pro_mask, batch.invoked,
                              rng, training)
    return EncoderState(h_all=h_all, h_pro=h_pro, code_mask=code_mask,
                        pro_mask=batch.pro_mask)


def decode(params, cfg: ModelConfig, y_in: np.ndarray, state: EncoderState,
           rng=None, training: bool = False) -> Tensor:
    """Logits over the code vocabulary, shape (batch, target_len, vocab)."""
    rng = _needs_rng(training, cfg, rng)
    d = cfg.d_model
    x = nn.scale(nn.embedding_lookup(params["code_embed"], y_in), math.sqrt(d))
    x = nn.add(x, tensor(positions(y_in.shape[1], d)))
    x = nn.dropout(x, cfg.dropout, rng, training)

    def residual(prefix, inner):
        return nn.layer_norm(nn.add(x, nn.dropout(inner, cfg.dropout, rng, training)),
                             params[f"{prefix}.g"], params[f"{prefix}.b"])

    for i in range(cfg.layers):
        a = nn.multi_head_attention(x, x, _attn(params, f"dec.{i}.self", cfg.heads),
                                    causal=True)
        x = residual(f"dec.{i}.norm1", a)
        a = nn.multi_head_attention(x, state.h_pro,
                                    _attn(params, f"dec.{i}.cross_pro", cfg.heads),
                                    key_mask=state.pro_mask, allow_empty_rows=True)
        x = residual(f"dec.{i}.norm2", a)
        a = nn.multi_head_attention(x, state.h_all,
                                    _attn(params, f"dec.{i}.cross_all", cfg.heads),
                                    key_mask=state.code_mask)
        x = residual(f"dec.{i}.norm3", a)
        f = nn.ffn(x, params[f"dec.{i}.ffn.w1"], params[f"dec.{i}.ffn.b1"],
                   params[f"dec.{i}.ffn.w2"], params[f"dec.{i}.ffn.b2"])
        x = residual(f"dec.{i}.norm4", f)
    return nn.matmul(x, nn.transpose(params["out_proj"], (1, 0)))


def masked_nll(logits: Tensor, y_out: np.ndarray, y_mask: np.ndarray) -> Tensor:
    """Cross-entropy: per-example mean over real target steps, then batch mean."""
    y_mask = np.asarray(y_mask, bool)
    counts = y_mask.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("every example needs at least one unmasked target step")
    batch = y_mask.shape[0]
    weights = (y_mask / counts[:, None] / batch).astype(np.float32)
    picked = nn.gather_last(nn.log_softmax(logits), y_out)
    return nn.sum_all(nn.mul_const(nn.scale(picked, -1.0), weights))


def forward_loss(params, cfg: ModelConfig, batch: Batch, rng=None,
                 training: bool = False) -> Tensor:
    state = encode(params, cfg, batch, rng, training)
    logits = decode(params, cfg, batch.y_in, state, rng, training)
    return masked_nll(logits, batch.y_out, batch.y_mask)

"""Training and inference: Adam with linear warmup, gradient clipping,
deterministic fit/resume, checkpoint serialization, greedy and beam search,
and the top-margin confidence score.

Every random draw comes from a counter-keyed generator (seed, stream,
counter), so an interrupted run resumed from a checkpoint replays exactly
the draws an uninterrupted run would have made.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EncodedExample
from .model import Batch, EncoderState, ModelConfig, decode, encode, forward_loss
from .nn import Tensor, backward
from .tokens import BOS_ID, EOS_ID, PAD_ID

log = logging.getLogger(__name__)

MAGIC = b"GTNM1"


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    base_lr: float = 3e-4
    warmup_steps: int = 4000
    schedule: str = "warmup_constant"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 1.0
    seed: int = 0
    early_stop_em: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epoch or batch size")
        if self.base_lr <= 0 or self.warmup_steps < 0:
            raise ValueError("bad learning-rate settings")
        if self.schedule not in ("warmup_constant", "inverse_sqrt"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "warmup_steps": self.warmup_steps,
            "schedule": self.schedule,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
            "early_stop_em": self.early_stop_em,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate for a 1-based optimizer step: linear warmup, then
    either constant or inverse square-root decay."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    w = cfg.warmup_steps
    if w > 0 and step <= w:
        return cfg.base_lr * (step / w)
    if cfg.schedule == "inverse_sqrt" and w > 0:
        return cfg.base_lr * math.sqrt(w / step)
    return cfg.base_lr


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def fresh(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            t=0,
        )


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = np.float32(max_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm

def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in parameter name order."""
    state.t += 1
    b1, b2 = np.float32(cfg.beta1), np.float32(cfg.beta2)
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / np.float32(c1)
        vhat = v / np.float32(c2)
        p.data -= np.float32(lr) * mhat / (np.sqrt(vhat) + np.float32(cfg.adam_eps))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, Tensor], model_cfg: ModelConfig,
                    extras: dict | None = None, opt: AdamState | None = None) -> None:
    """Write magic, a sorted-key JSON header, then raw little-endian float32
    payloads in header order. Identical state serializes to identical bytes."""
    arrays: dict[str, np.ndarray] = {k: p.data for k, p in params.items()}
    if opt is not None:
        for k in params:
            arrays[f"opt.m.{k}"] = opt.m[k]
        for k in params:
            arrays[f"opt.v.{k}"] = opt.v[k]
    header = {
        "model": model_cfg.to_dict(),
        "tensors": [[k, list(a.shape)] for k, a in arrays.items()],
        "extras": dict(extras or {}),
    }
    if opt is not None:
        header["extras"]["adam_t"] = opt.t
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays.items():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, Tensor], ModelConfig, dict, AdamState | None]:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hlen])
    cfg = ModelConfig.from_dict(header["model"])
    extras = header["extras"]
    offset = 9 + hlen
    params: dict[str, Tensor] = {}
    opt_arrays: dict[str, np.ndarray] = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        a = a.reshape(shape).copy()
        if name.startswith("opt."):
            opt_arrays[name] = a
        else:
            params[name] = Tensor(a, requires_grad=True)
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor payload")
    opt = None
    if opt_arrays:
        opt = AdamState(
            m={k[len("opt.m."):]: a for k, a in opt_arrays.items() if k.startswith("opt.m.")},
            v={k[len("opt.v."):]: a for k, a in opt_arrays.items() if k.startswith("opt.v.")},
            t=int(extras.get("adam_t", 0)),
        )
    return params, cfg, extras, opt


# ---------------------------------------------------------------------------
# decoding


def _target_ids(y_out_row: np.ndarray) -> list[int]:
    return [int(t) for t in y_out_row if t not in (PAD_ID, EOS_ID)]


def greedy_decode(params, cfg: ModelConfig, batch: Batch,
                  max_steps: int | None = None,
                  state: EncoderState | None = None) -> list[list[int]]:
    """Batched argmax decoding; ties go to the lowest token id. Output rows
    stop at (and exclude) the end marker."""
    steps = max_steps if max_steps is not None else cfg.lengths.target + 1
    if state is None:
        state = encode(params, cfg, batch)
    n = state.h_all.data.shape[0]
    y = np.full((n, 1), BOS_ID, np.int64)
    done = np.zeros(n, bool)
    outs: list[list[int]] = [[] for _ in range(n)]
    for _ in range(steps):
        logits = decode(params, cfg, y, state).data[:, -1, :]
        nxt = logits.argmax(axis=-1)
        for i in range(n):
            if done[i]:
                continue
            if nxt[i] == EOS_ID:
                done[i] = True
            else:
                outs[i].append(int(nxt[i]))
        if done.all():
            break
        y = np.concatenate([y, nxt[:, None]], axis=1)
    return outs


@dataclass
class Hypothesis:
    ids: list[int]
    score: float
    done: bool


def _log_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - math.log(np.exp(shifted).sum())


def beam_decode(params, cfg: ModelConfig, batch: Batch, width: int,
                max_steps: int | None = None) -> list[list[Hypothesis]]:
    """Per-example beam search. The score is the sum of step log-probs,
    including the end marker's when one is emitted; ties order by lower
    token ids. Returns hypotheses best-first."""
    if width < 1:
        raise ValueError("beam width must be at least 1")
    steps = max_steps if max_steps is not None else cfg.lengths.target + 1
    full_state = encode(params, cfg, batch)
    results = []
    for i in range(batch.size):
        state = EncoderState(
            h_all=Tensor(full_state.h_all.data[i:i + 1]),
            h_pro=Tensor(full_state.h_pro.data[i:i + 1]),
            code_mask=full_state.code_mask[i:i + 1],
            pro_mask=full_state.pro_mask[i:i + 1],
        )
        beams = [Hypothesis([], 0.0, False)]
        for _ in range(steps):
            if all(h.done for h in beams):
                break
            cands: list[Hypothesis] = [h for h in beams if h.done]
            for h in beams:
                if h.done:
                    continue
                y = np.array([[BOS_ID] + h.ids], np.int64)
                logp = _log_probs(decode(params, cfg, y, state).data[0, -1, :])
                # lexsort keeps the lowest-id-wins rule even when scores tie
                # at the cut, which argpartition would not
                top = np.lexsort((np.arange(logp.size), -logp))[:width]
                for tok in top:
                    tok = int(tok)
                    if tok == EOS_ID:
                        cands.append(Hypothesis(h.ids, h.score + float(logp[tok]), True))
                    else:
                        cands.append(Hypothesis(h.ids + [tok], h.score + float(logp[tok]), False))
            cands.sort(key=lambda h: (-h.score, h.ids))
            beams = cands[:width]
        beams.sort(key=lambda h: (-h.score, h.ids))
        results.append(beams)
    return results


def pcs_confidence(params, cfg: ModelConfig, batch: Batch) -> np.ndarray:
    """Mean top-two probability margin over the steps that emitted subtokens.

    When the very first step emits the end marker, that step's own margin is
    the score, so the value is always defined.
    """
    if cfg.code_vocab < 2:
        raise ValueError("confidence needs at least two output classes")
    if batch.size == 0:
        raise ValueError("empty batch")
    steps = cfg.lengths.target + 1
    state = encode(params, cfg, batch)
    n = batch.size
    y = np.full((n, 1), BOS_ID, np.int64)
    done = np.zeros(n, bool)
    margins: list[list[float]] = [[] for _ in range(n)]
    first_margin = np.zeros(n)
    for step in range(steps):
        logits = decode(params, cfg, y, state).data[:, -1, :]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=-1, keepdims=True)
        part = np.partition(probs, -2, axis=-1)
        margin = part[:, -1] - part[:, -2]
        nxt = logits.argmax(axis=-1)
        if step == 0:
            first_margin = margin.copy()
        for i in range(n):
            if done[i]:
                continue
            if nxt[i] == EOS_ID:
                done[i] = True
            else:
                margins[i].append(float(margin[i]))
        if done.all():
            break
        y = np.concatenate([y, nxt[:, None]], axis=1)
    out = np.zeros(n)
    for i in range(n):
        out[i] = float(np.mean(margins[i])) if margins[i] else float(first_margin[i])
    return out


# ---------------------------------------------------------------------------
# training loop


@dataclass
class FitResult:
    history: list[dict]
    best_valid_loss: float | None
    best_epoch: int | None
    steps: int
    stopped_early: bool


def _eval_loss(params, cfg, examples, batch_size) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        batch = Batch.from_examples(chunk)
        total += forward_loss(params, cfg, batch).item() * len(chunk)
        count += len(chunk)
    return total / count


def _eval_em(params, cfg, examples, batch_size) -> float:
    hits = 0
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        batch = Batch.from_examples(chunk)
        preds = greedy_decode(params, cfg, batch)
        for row, pred in zip(batch.y_out, preds):
            hits += int(pred == _target_ids(row))
    return hits / len(examples)


def fit(
    params: dict[str, Tensor],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_examples: Sequence[EncodedExample],
    valid_examples: Sequence[EncodedExample] = (),
    log_path=None,
    checkpoint_path=None,
    save_policy: str = "best",
    resume_from=None,
    checkpoint_extras: dict | None = None,
) -> FitResult:
    """Train in place. With a checkpoint path, save_policy picks between
    keeping the best-validation-loss state and simply the latest epoch.

    Resuming replays the exact schedule of an uninterrupted run: shuffles
    are keyed by (seed, 1, epoch), dropout by (seed, 2, global step).
    """
    if not train_examples:
        raise ValueError("no training examples")
    if save_policy not in ("best", "last"):
        raise ValueError(f"unknown save policy {save_policy!r}")

    opt = AdamState.fresh(params)
    start_epoch = 0
    step = 0
    if resume_from is not None:
        loaded, loaded_cfg, extras, loaded_opt = load_checkpoint(resume_from)
        if loaded_cfg != model_cfg:
            raise ValueError("checkpoint was trained with a different model configuration")
        for name in params:
            params[name].data = loaded[name].data
        if loaded_opt is not None:
            opt = loaded_opt
        start_epoch = int(extras.get("epoch", -1)) + 1
        step = int(extras.get("step", 0))

    train = list(train_examples)
    valid = list(valid_examples)
    history: list[dict] = []
    best_loss: float | None = None
    best_epoch: int | None = None
    stopped = False
    log_fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            order = np.random.default_rng((train_cfg.seed, 1, epoch)).permutation(len(train))
            epoch_losses = []
            for lo in range(0, len(train), train_cfg.batch_size):
                batch = Batch.from_examples([train[i] for i in order[lo:lo + train_cfg.batch_size]])
                step += 1
                lr = lr_at(step, train_cfg)
                for p in params.values():
                    p.zero_grad()
                rng = np.random.default_rng((train_cfg.seed, 2, step))
                loss = forward_loss(params, model_cfg, batch, rng=rng, training=True)
                backward(loss)
                if train_cfg.clip_norm is not None:
                    clip_gradients(params, train_cfg.clip_norm)
                adam_step(params, opt, lr, train_cfg)
                epoch_losses.append(loss.item())

            row: dict = {
                "epoch": epoch,
                "step": step,
                "lr": lr,
                "train_loss": float(np.mean(epoch_losses)),
                "valid_loss": None,
                "valid_em": None,
            }
            if valid:
                row["valid_loss"] = _eval_loss(params, model_cfg, valid, train_cfg.batch_size)
                row["valid_em"] = _eval_em(params, model_cfg, valid, train_cfg.batch_size)
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()

            monitor = row["valid_loss"] if valid else row["train_loss"]
            improved = best_loss is None or monitor < best_loss
            if improved:
                best_loss = monitor
                best_epoch = epoch
            if checkpoint_path and (save_policy == "last" or improved):
                extras = dict(checkpoint_extras or {})
                extras.update({"epoch": epoch, "step": step})
                save_checkpoint(checkpoint_path, params, model_cfg,
                                extras=extras, opt=opt)
            em = row["valid_em"]
            if train_cfg.early_stop_em is not None and em is not None and em >= train_cfg.early_stop_em:
                stopped = True
                log.info("early stop: exact match %.4f at epoch %d", em, epoch)
                break
    finally:
        if log_fh:
            log_fh.close()
    return FitResult(history=history, best_valid_loss=best_loss,
                     best_epoch=best_epoch, steps=step, stopped_early=stopped)

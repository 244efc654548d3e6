"""Trainer and decoder semantics: exact schedule values, Adam behavior,
byte-stable checkpoints, deterministic and resumable fits, and agreement
between greedy, beam, and brute-force search."""

import json
import math

import numpy as np
import pytest

from gtnm.corpus import EncodedExample, LengthConfig
from gtnm.model import Batch, ModelConfig, decode, encode, forward_loss, init_params
from gtnm.nn import Tensor, backward, tensor
from gtnm.runtime import (
    AdamState,
    TrainConfig,
    adam_step,
    beam_decode,
    clip_gradients,
    fit,
    global_grad_norm,
    greedy_decode,
    lr_at,
    load_checkpoint,
    pcs_confidence,
    save_checkpoint,
)
from gtnm.tokens import BOS_ID, EOS_ID, PAD_ID


def tiny_cfg(**kw):
    base = dict(layers=1, d_model=8, heads=2, d_ff=16, dropout=0.0,
                code_vocab=14, doc_vocab=9,
                lengths=LengthConfig(local=4, infile=2, crossfile=2, doc=2, target=2))
    base.update(kw)
    return ModelConfig(**base)


def synth_examples(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    L = cfg.lengths
    out = []
    for i in range(n):
        tgt = rng.integers(4, cfg.code_vocab, size=L.target).tolist()
        out.append(EncodedExample(
            id=f"synth:{i}",
            x_loc=rng.integers(4, cfg.code_vocab, size=L.local).tolist(),
            x_pro=rng.integers(4, cfg.code_vocab, size=L.pro).tolist(),
            x_doc=rng.integers(4, cfg.doc_vocab, size=L.doc).tolist(),
            y_in=[BOS_ID] + tgt,
            y_out=tgt + [EOS_ID],
            invoked=rng.integers(0, 2, size=L.pro).astype(float).tolist(),
            x_loc_mask=[1] * L.local,
            x_pro_mask=[1] * L.pro,
            x_doc_mask=[1] * L.doc,
            y_mask=[1] * (L.target + 1),
        ))
    return out


class TestLrSchedule:
    def test_peak_is_exact_at_warmup_end(self):
        cfg = TrainConfig(base_lr=3e-4, warmup_steps=4000)
        assert lr_at(4000, cfg) == 3e-4

    def test_midpoint_of_warmup(self):
        cfg = TrainConfig(base_lr=3e-4, warmup_steps=4000)
        assert lr_at(2000, cfg) == 1.5e-4

    def test_constant_after_warmup(self):
        cfg = TrainConfig(base_lr=3e-4, warmup_steps=4000)
        assert lr_at(4001, cfg) == 3e-4
        assert lr_at(100000, cfg) == 3e-4

    def test_continuity_at_boundary(self):
        cfg = TrainConfig(base_lr=3e-4, warmup_steps=4000)
        gap = cfg.base_lr / cfg.warmup_steps
        assert abs(lr_at(4000, cfg) - lr_at(3999, cfg)) <= gap + 1e-12
        assert abs(lr_at(4001, cfg) - lr_at(4000, cfg)) <= gap + 1e-12

    def test_inverse_sqrt_decays(self):
        cfg = TrainConfig(base_lr=3e-4, warmup_steps=100, schedule="inverse_sqrt")
        assert lr_at(100, cfg) == pytest.approx(3e-4)
        assert lr_at(400, cfg) == pytest.approx(1.5e-4)
        assert lr_at(401, cfg) < lr_at(400, cfg)

    def test_zero_warmup_is_flat(self):
        cfg = TrainConfig(base_lr=1e-3, warmup_steps=0)
        assert lr_at(1, cfg) == 1e-3

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            lr_at(-1, TrainConfig())

    def test_unknown_schedule_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(schedule="cosine")


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # with bias correction the first update is lr * sign(gradient)
        w = Tensor(np.array([1.0], np.float32), requires_grad=True)
        w.grad = np.array([2.0], np.float32)
        params = {"w": w}
        state = AdamState.fresh(params)
        adam_step(params, state, lr=0.1, cfg=TrainConfig())
        assert w.data[0] == pytest.approx(0.9, abs=1e-6)

    def test_quadratic_converges(self):
        w = Tensor(np.array([3.0], np.float32), requires_grad=True)
        params = {"w": w}
        state = AdamState.fresh(params)
        cfg = TrainConfig()
        for _ in range(400):
            w.grad = 2.0 * w.data
            adam_step(params, state, lr=0.05, cfg=cfg)
        assert abs(float(w.data[0])) < 0.05

    def test_nonfinite_gradient_rejected(self):
        w = Tensor(np.array([1.0], np.float32), requires_grad=True)
        w.grad = np.array([np.nan], np.float32)
        params = {"w": w}
        with pytest.raises(ValueError, match="w"):
            adam_step(params, AdamState.fresh(params), 0.1, TrainConfig())

    def test_step_counter_advances(self):
        w = Tensor(np.array([1.0], np.float32), requires_grad=True)
        w.grad = np.array([1.0], np.float32)
        params = {"w": w}
        state = AdamState.fresh(params)
        adam_step(params, state, 0.1, TrainConfig())
        adam_step(params, state, 0.1, TrainConfig())
        assert state.t == 2


class TestClipping:
    def test_large_gradients_scaled_to_cap(self):
        a = Tensor(np.zeros(3, np.float32), requires_grad=True)
        b = Tensor(np.zeros(4, np.float32), requires_grad=True)
        a.grad = np.full(3, 4.0, np.float32)
        b.grad = np.full(4, 3.0, np.float32)
        params = {"a": a, "b": b}
        norm = clip_gradients(params, 1.0)
        assert norm == pytest.approx(math.sqrt(3 * 16 + 4 * 9))
        assert global_grad_norm(params) == pytest.approx(1.0, abs=1e-5)

    def test_small_gradients_untouched(self):
        a = Tensor(np.zeros(2, np.float32), requires_grad=True)
        a.grad = np.array([0.3, 0.4], np.float32)
        clip_gradients({"a": a}, 1.0)
        assert np.array_equal(a.grad, np.array([0.3, 0.4], np.float32))


class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        opt = AdamState.fresh(params)
        opt.t = 7
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, params, cfg, extras={"epoch": 3, "step": 12}, opt=opt)
        loaded, cfg2, extras, opt2 = load_checkpoint(p1)
        save_checkpoint(p2, loaded, cfg2,
                        extras={"epoch": extras["epoch"], "step": extras["step"]}, opt=opt2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_round_trip_restores_values(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=5)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, cfg)
        loaded, cfg2, extras, opt = load_checkpoint(path)
        assert cfg2 == cfg and opt is None
        assert set(loaded) == set(params)
        for k in params:
            assert np.array_equal(loaded[k].data, params[k].data)
            assert loaded[k].data.dtype == np.float32

    def test_magic_required(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError, match="not a model checkpoint"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        cfg = tiny_cfg()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, init_params(cfg, seed=0), cfg)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(ValueError, match="trailing bytes"):
            load_checkpoint(path)

    def test_adam_state_round_trip(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=1)
        opt = AdamState.fresh(params)
        opt.m["out_proj"][0, 0] = 0.5
        opt.t = 9
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, cfg, opt=opt)
        _, _, _, opt2 = load_checkpoint(path)
        assert opt2.t == 9
        assert opt2.m["out_proj"][0, 0] == np.float32(0.5)
        assert set(opt2.v) == set(params)


class TestFit:
    def test_history_rows_and_log_file(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        examples = synth_examples(cfg, 12, seed=1)
        log_path = tmp_path / "log.jsonl"
        tc = TrainConfig(epochs=2, batch_size=4, base_lr=1e-3, warmup_steps=3, seed=0)
        result = fit(params, cfg, tc, examples, examples[:4], log_path=log_path)
        assert len(result.history) == 2
        assert result.steps == 6
        row = result.history[0]
        assert set(row) == {"epoch", "step", "lr", "train_loss", "valid_loss", "valid_em"}
        lines = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert lines == result.history

    def test_two_seeded_runs_are_bit_identical(self, tmp_path):
        cfg = tiny_cfg(dropout=0.1)
        examples = synth_examples(cfg, 10, seed=2)
        tc = TrainConfig(epochs=3, batch_size=4, base_lr=1e-3, warmup_steps=5, seed=11)
        paths = []
        for run in ("a", "b"):
            params = init_params(cfg, seed=11)
            fit(params, cfg, tc, examples, examples[:3])
            path = tmp_path / f"{run}.ckpt"
            save_checkpoint(path, params, cfg)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_different_seed_changes_result(self, tmp_path):
        cfg = tiny_cfg(dropout=0.1)
        examples = synth_examples(cfg, 10, seed=2)
        outs = []
        for seed in (1, 2):
            params = init_params(cfg, seed=0)
            tc = TrainConfig(epochs=2, batch_size=4, base_lr=1e-3, warmup_steps=5, seed=seed)
            fit(params, cfg, tc, examples)
            outs.append(params["out_proj"].data.copy())
        assert not np.array_equal(outs[0], outs[1])

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        cfg = tiny_cfg(dropout=0.2)
        examples = synth_examples(cfg, 14, seed=3)
        tc4 = TrainConfig(epochs=4, batch_size=5, base_lr=1e-3, warmup_steps=4, seed=7)

        straight = init_params(cfg, seed=7)
        fit(straight, cfg, tc4, examples, examples[:4])

        interrupted = init_params(cfg, seed=7)
        tc2 = TrainConfig(epochs=2, batch_size=5, base_lr=1e-3, warmup_steps=4, seed=7)
        ckpt = tmp_path / "mid.ckpt"
        fit(interrupted, cfg, tc2, examples, examples[:4],
            checkpoint_path=ckpt, save_policy="last")
        resumed = init_params(cfg, seed=7)
        result = fit(resumed, cfg, tc4, examples, examples[:4], resume_from=ckpt)

        assert [r["epoch"] for r in result.history] == [2, 3]
        for k in straight:
            assert np.array_equal(straight[k].data, resumed[k].data), k

    def test_resume_rejects_other_architecture(self, tmp_path):
        cfg = tiny_cfg()
        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, init_params(cfg, seed=0), cfg, extras={"epoch": 0, "step": 1})
        other = tiny_cfg(d_ff=32)
        with pytest.raises(ValueError, match="different model configuration"):
            fit(init_params(other, seed=0), other, TrainConfig(epochs=1),
                synth_examples(other, 4), resume_from=ckpt)

    def test_best_policy_keeps_best_epoch(self, tmp_path):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=4)
        examples = synth_examples(cfg, 10, seed=5)
        ckpt = tmp_path / "best.ckpt"
        tc = TrainConfig(epochs=3, batch_size=5, base_lr=1e-3, warmup_steps=2, seed=1)
        result = fit(params, cfg, tc, examples, examples[:4], checkpoint_path=ckpt)
        _, _, extras, _ = load_checkpoint(ckpt)
        assert extras["epoch"] == result.best_epoch

    def test_early_stop_on_exact_match(self):
        # four examples are memorized long before the epoch budget runs out
        cfg = tiny_cfg(d_model=16, d_ff=32)
        params = init_params(cfg, seed=6)
        examples = synth_examples(cfg, 4, seed=6)
        tc = TrainConfig(epochs=80, batch_size=4, base_lr=5e-3, warmup_steps=5,
                         seed=3, early_stop_em=1.0)
        result = fit(params, cfg, tc, examples, examples)
        assert result.stopped_early
        assert len(result.history) < 80
        assert result.history[-1]["valid_em"] == 1.0

    def test_empty_training_set_rejected(self):
        cfg = tiny_cfg()
        with pytest.raises(ValueError, match="no training examples"):
            fit(init_params(cfg, 0), cfg, TrainConfig(), [])


class TestGreedy:
    def test_matches_manual_stepping(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=8)
        batch = Batch.from_examples(synth_examples(cfg, 3, seed=9))
        outs = greedy_decode(params, cfg, batch)
        state = encode(params, cfg, batch)
        for i, out in enumerate(outs):
            y = [BOS_ID]
            want = []
            for _ in range(cfg.lengths.target + 1):
                logits = decode(params, cfg, np.array([y], np.int64), _slice_state(state, i))
                nxt = int(logits.data[0, -1].argmax())
                if nxt == EOS_ID:
                    break
                want.append(nxt)
                y.append(nxt)
            assert out == want

    def test_row_length_capped(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=8)
        batch = Batch.from_examples(synth_examples(cfg, 5, seed=10))
        for out in greedy_decode(params, cfg, batch):
            assert len(out) <= cfg.lengths.target + 1


def _slice_state(state, i):
    from gtnm.model import EncoderState
    return EncoderState(
        h_all=Tensor(state.h_all.data[i:i + 1]),
        h_pro=Tensor(state.h_pro.data[i:i + 1]),
        code_mask=state.code_mask[i:i + 1],
        pro_mask=state.pro_mask[i:i + 1],
    )


def brute_force_best(params, cfg, state, steps):
    """Enumerate every possible emission sequence and score it the way the
    beam does: sum of step log-probs, end-marker step included unless the
    length cap cuts the sequence off."""
    finished = []

    def logp_row(prefix):
        y = np.array([[BOS_ID] + prefix], np.int64)
        z = decode(params, cfg, y, state).data[0, -1, :].astype(np.float64)
        z -= z.max()
        return z - math.log(np.exp(z).sum())

    def walk(prefix, score):
        if len(prefix) == steps:
            finished.append((prefix, score))
            return
        lp = logp_row(prefix)
        for tok in range(cfg.code_vocab):
            if tok == EOS_ID:
                finished.append((prefix, score + lp[tok]))
            else:
                walk(prefix + [tok], score + lp[tok])

    walk([], 0.0)
    finished.sort(key=lambda it: (-it[1], it[0]))
    return finished


class TestBeam:
    def test_width_one_equals_greedy(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=12)
        batch = Batch.from_examples(synth_examples(cfg, 20, seed=13))
        greedy = greedy_decode(params, cfg, batch)
        beams = beam_decode(params, cfg, batch, width=1)
        assert [b[0].ids for b in beams] == greedy

    def test_exhaustive_width_matches_brute_force(self):
        cfg = tiny_cfg(code_vocab=6, lengths=LengthConfig(
            local=3, infile=2, crossfile=1, doc=2, target=2))
        params = init_params(cfg, seed=14)
        batch = Batch.from_examples(synth_examples(cfg, 2, seed=15))
        steps = cfg.lengths.target + 1
        state = encode(params, cfg, batch)
        beams = beam_decode(params, cfg, batch, width=200)
        for i in range(batch.size):
            want = brute_force_best(params, cfg, _slice_state(state, i), steps)
            got = beams[i]
            for hyp, (ids, score) in zip(got[:5], want[:5]):
                assert hyp.ids == ids
                assert hyp.score == pytest.approx(score, abs=1e-5)

    def test_wider_beam_never_scores_worse(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=16)
        batch = Batch.from_examples(synth_examples(cfg, 6, seed=17))
        b1 = beam_decode(params, cfg, batch, width=1)
        b4 = beam_decode(params, cfg, batch, width=4)
        for narrow, wide in zip(b1, b4):
            assert wide[0].score >= narrow[0].score - 1e-9

    def test_zero_width_rejected(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        batch = Batch.from_examples(synth_examples(cfg, 1))
        with pytest.raises(ValueError):
            beam_decode(params, cfg, batch, width=0)

    def test_hypotheses_sorted_best_first(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=18)
        batch = Batch.from_examples(synth_examples(cfg, 3, seed=19))
        for beams in beam_decode(params, cfg, batch, width=3):
            scores = [h.score for h in beams]
            assert scores == sorted(scores, reverse=True)


class TestConfidence:
    def test_values_in_unit_interval(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=20)
        batch = Batch.from_examples(synth_examples(cfg, 8, seed=21))
        pcs = pcs_confidence(params, cfg, batch)
        assert pcs.shape == (8,)
        assert np.all(pcs >= 0.0) and np.all(pcs <= 1.0)

    def test_immediate_end_marker_falls_back_to_first_step(self):
        # zero layers and zeroed embeddings make the step-0 logits depend on
        # the position encoding alone; aiming the end marker's output row at
        # that encoding forces an immediate stop
        cfg = tiny_cfg(layers=0)
        params = init_params(cfg, seed=0)
        for t in params.values():
            t.data = np.zeros_like(t.data)
        from gtnm.model import positions
        pos0 = positions(1, cfg.d_model)[0]
        params["out_proj"].data[EOS_ID] = pos0
        batch = Batch.from_examples(synth_examples(cfg, 2, seed=22))
        outs = greedy_decode(params, cfg, batch)
        assert outs == [[], []]
        pcs = pcs_confidence(params, cfg, batch)
        z = np.zeros(cfg.code_vocab)
        z[EOS_ID] = float(pos0 @ pos0)
        p = np.exp(z - z.max())
        p /= p.sum()
        want = np.partition(p, -2)[-1] - np.partition(p, -2)[-2]
        assert np.allclose(pcs, want, atol=1e-5)

    def test_tiny_vocab_rejected(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        batch = Batch.from_examples(synth_examples(cfg, 1))
        degenerate = tiny_cfg(code_vocab=1)
        with pytest.raises(ValueError):
            pcs_confidence(params, degenerate, batch)

"""Command-line pipeline: extract, stats, build-vocab, train, eval, suggest.

Settings resolve flag > config file > built-in default. Report-producing
commands also render PNG figures next to their main output unless told not
to. Exit codes: 0 success, 1 unexpected runtime failure, 2 usage, bad
input, or mismatched artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import corpus, jparse, metrics, plots, runtime, tokens
from .corpus import LengthConfig
from .model import Batch, ModelConfig, init_params
from .tokens import UNK_TOKEN, Vocab


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# settings resolution


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return cfg


def _merge(defaults: dict, file_section: dict, flags: dict) -> dict:
    out = dict(defaults)
    for k, v in file_section.items():
        if k not in out:
            raise CliError(f"unknown config key {k!r}")
        out[k] = v
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


def _lengths_from(args, file_cfg: dict) -> LengthConfig:
    flags = {
        "local": args.max_local,
        "infile": args.max_infile,
        "crossfile": args.max_crossfile,
        "doc": args.max_doc,
        "target": args.max_target,
    }
    merged = _merge(LengthConfig().to_dict(), file_cfg.get("lengths", {}), flags)
    try:
        return LengthConfig.from_dict(merged)
    except ValueError as e:
        raise CliError(f"bad lengths: {e}")


def _train_cfg_from(args, file_cfg: dict) -> runtime.TrainConfig:
    flags = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "base_lr": args.lr,
        "warmup_steps": args.warmup,
        "schedule": args.schedule,
        "clip_norm": None if getattr(args, "no_clip", False) else args.clip_norm,
        "seed": args.seed,
        "early_stop_em": args.early_stop_em,
    }
    merged = _merge(runtime.TrainConfig().to_dict(), file_cfg.get("train", {}), flags)
    if getattr(args, "no_clip", False):
        merged["clip_norm"] = None
    try:
        return runtime.TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad training settings: {e}")


def _model_cfg_from(args, file_cfg: dict, lengths: LengthConfig,
                    code_vocab: int, doc_vocab: int) -> ModelConfig:
    defaults = ModelConfig().to_dict()
    del defaults["lengths"], defaults["code_vocab"], defaults["doc_vocab"]
    section = dict(file_cfg.get("model", {}))
    for k in ("lengths", "code_vocab", "doc_vocab"):
        section.pop(k, None)
    flags = {
        "layers": args.layers,
        "d_model": args.d_model,
        "heads": args.heads,
        "d_ff": args.d_ff,
        "dropout": args.dropout,
    }
    merged = _merge(defaults, section, flags)
    if getattr(args, "desk", False):
        desk = ModelConfig.desk()
        for k in ("layers", "d_model", "heads", "d_ff", "dropout"):
            if flags[k] is None and k not in section:
                merged[k] = getattr(desk, k)
    try:
        return ModelConfig(lengths=lengths, code_vocab=code_vocab,
                           doc_vocab=doc_vocab, **merged)
    except ValueError as e:
        raise CliError(f"bad model settings: {e}")


# ---------------------------------------------------------------------------
# shared loading


def _read_records(path: str) -> list[corpus.MethodRecord]:
    try:
        records = corpus.read_records(path)
    except FileNotFoundError:
        raise CliError(f"records file not found: {path}")
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise CliError(f"cannot parse records file {path}: {e}")
    if not records:
        raise CliError(f"records file {path} holds no records")
    return records


def _load_vocab(path: str, kind: str) -> Vocab:
    try:
        return Vocab.load(path)
    except FileNotFoundError:
        raise CliError(f"{kind} vocabulary not found: {path}")
    except ValueError as e:
        raise CliError(f"bad {kind} vocabulary {path}: {e}")


def _load_checkpoint(path: str):
    try:
        return runtime.load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"model checkpoint not found: {path}")
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise CliError(f"cannot load checkpoint {path}: {e}")


def _check_vocab_hashes(extras: dict, code_vocab: Vocab, doc_vocab: Vocab) -> None:
    for key, vocab, kind in (
        ("code_vocab_hash", code_vocab, "code"),
        ("doc_vocab_hash", doc_vocab, "doc"),
    ):
        want = extras.get(key)
        if want is not None and want != vocab.content_hash():
            raise CliError(
                f"{kind} vocabulary does not match the one the model was trained "
                f"with (hash {vocab.content_hash()[:12]} != {want[:12]})")


def _encode_all(records, code_vocab, doc_vocab, lengths):
    return [corpus.encode_record(r, code_vocab, doc_vocab, lengths) for r in records]


def _figure_path(base: str | Path) -> Path:
    return Path(base).with_suffix(".png")


def render_name(subtokens: list[str]) -> str:
    """Join subtokens back into a camelCase identifier for display."""
    if not subtokens:
        return ""
    head, *rest = subtokens
    parts = [head]
    for tok in rest:
        parts.append(tok if tok == UNK_TOKEN else tok[:1].upper() + tok[1:])
    return "".join(parts)


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args) -> int:
    lengths = _lengths_from(args, _load_config(args.config))
    records: list[corpus.MethodRecord] = []
    n_files = 0
    for project in args.project:
        root = Path(project)
        if not root.is_dir():
            raise CliError(f"project directory not found: {project}")
        idx = jparse.index_project(root, threads=args.threads)
        n_files += len(idx.files)
        records.extend(corpus.build_records(
            idx, lengths, use_crossfile=not args.no_crossfile,
            require_doc=args.require_doc))
    corpus.write_records(records, args.out)
    documented = sum(1 for r in records if r.doc)
    print(f"{n_files} files, {len(records)} records, "
          f"{documented} documented -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    records = _read_records(args.records)
    report = corpus.stats_overlap(records)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.to_table())
    print(f"overlap report -> {args.out}")
    if not args.no_figures:
        fig = plots.overlap_figure(report, _figure_path(args.out))
        print(f"figure -> {fig}")
    return 0


def cmd_build_vocab(args) -> int:
    records = _read_records(args.records)
    code_streams = []
    doc_streams = []
    for r in records:
        code_streams.extend([r.local, r.pro_infile, r.pro_crossfile, r.target])
        doc_streams.append(r.doc)
    code_vocab = tokens.build_vocab(code_streams, args.code_size)
    doc_vocab = tokens.build_vocab(doc_streams, args.doc_size)
    code_vocab.save(args.code_out)
    doc_vocab.save(args.doc_out)
    print(f"code vocabulary: {len(code_vocab)} tokens -> {args.code_out}")
    print(f"doc vocabulary: {len(doc_vocab)} tokens -> {args.doc_out}")
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config(args.config)
    lengths = _lengths_from(args, file_cfg)
    train_cfg = _train_cfg_from(args, file_cfg)
    code_vocab = _load_vocab(args.code_vocab, "code")
    doc_vocab = _load_vocab(args.doc_vocab, "doc")

    records = _read_records(args.records)
    if args.valid_records:
        train_recs = records
        valid_recs = _read_records(args.valid_records)
        test_recs: list[corpus.MethodRecord] = []
    else:
        try:
            train_recs, valid_recs, test_recs = corpus.split_dataset(
                records, mode=args.split_mode, seed=args.split_seed)
        except ValueError as e:
            raise CliError(f"cannot split dataset: {e}")
    if not train_recs:
        raise CliError("training split is empty")
    if args.test_out:
        corpus.write_records(test_recs, args.test_out)
        print(f"{len(test_recs)} held-out records -> {args.test_out}")

    model_cfg = _model_cfg_from(args, file_cfg, lengths,
                                len(code_vocab), len(doc_vocab))
    train_ex = _encode_all(train_recs, code_vocab, doc_vocab, lengths)
    valid_ex = _encode_all(valid_recs, code_vocab, doc_vocab, lengths)
    params = init_params(model_cfg, seed=train_cfg.seed)

    print(f"training on {len(train_ex)} examples "
          f"(valid {len(valid_ex)}, layers {model_cfg.layers}, "
          f"d_model {model_cfg.d_model})")
    result = runtime.fit(
        params, model_cfg, train_cfg, train_ex, valid_ex,
        log_path=args.log,
        checkpoint_path=args.out,
        checkpoint_extras={
            "code_vocab_hash": code_vocab.content_hash(),
            "doc_vocab_hash": doc_vocab.content_hash(),
        },
    )
    for row in result.history[-3:]:
        vl = "n/a" if row["valid_loss"] is None else f"{row['valid_loss']:.4f}"
        em = "n/a" if row["valid_em"] is None else f"{row['valid_em']:.4f}"
        print(f"epoch {row['epoch']}: train {row['train_loss']:.4f} "
              f"valid {vl} em {em}")
    if result.best_epoch is not None:
        print(f"best epoch {result.best_epoch} -> {args.out}")
    if not args.no_figures and result.history:
        fig = plots.training_figure(result.history,
                                    _figure_path(args.log or args.out))
        print(f"figure -> {fig}")
    return 0


def _decode_chunks(params, cfg, examples, batch_size, beam):
    preds: list[list[int]] = []
    pcs: list[float] = []
    for lo in range(0, len(examples), batch_size):
        batch = Batch.from_examples(examples[lo:lo + batch_size])
        if beam > 1:
            hyps = runtime.beam_decode(params, cfg, batch, width=beam)
            preds.extend(h[0].ids for h in hyps)
        else:
            preds.extend(runtime.greedy_decode(params, cfg, batch))
        pcs.extend(runtime.pcs_confidence(params, cfg, batch).tolist())
    return preds, pcs


def cmd_eval(args) -> int:
    params, model_cfg, extras, _ = _load_checkpoint(args.model)
    code_vocab = _load_vocab(args.code_vocab, "code")
    doc_vocab = _load_vocab(args.doc_vocab, "doc")
    _check_vocab_hashes(extras, code_vocab, doc_vocab)
    records = _read_records(args.records)
    examples = _encode_all(records, code_vocab, doc_vocab, model_cfg.lengths)

    preds, pcs = _decode_chunks(params, model_cfg, examples,
                                args.batch_size, args.beam)
    rows = []
    pairs = []
    for record, pred_ids, conf in zip(records, preds, pcs):
        pred = tokens.decode(pred_ids, code_vocab)
        p, r, f1 = metrics.prf1(record.target, pred)
        em = metrics.exact_match(record.target, pred)
        pairs.append((record.target, pred))
        rows.append({
            "id": record.id,
            "target": record.target,
            "pred": pred,
            "precision": p,
            "recall": r,
            "f1": f1,
            "em": int(em),
            "pcs": conf,
        })
    result = metrics.evaluate_corpus(pairs)
    try:
        result.pearson_pcs_f1 = metrics.pearson([r["pcs"] for r in rows],
                                                [r["f1"] for r in rows])
    except ValueError:
        result.pearson_pcs_f1 = None
    Path(args.out).write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    print(result.summary_line())
    print(f"metrics -> {args.out}")
    if args.per_example:
        with open(args.per_example, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        print(f"per-example rows -> {args.per_example}")
    if not args.no_figures:
        fig = plots.eval_figure(rows, _figure_path(args.out))
        print(f"figure -> {fig}")
    return 0


def _find_method(idx: jparse.ProjectIndex, file_arg: str, method: str,
                 line: int | None):
    wanted = Path(file_arg)
    matches = [fm for fm in idx.files
               if Path(fm.path) == wanted or Path(fm.path).resolve() == wanted.resolve()
               or fm.path.endswith(str(wanted))]
    if not matches:
        raise CliError(f"no parsed file matches {file_arg}")
    if len(matches) > 1:
        raise CliError(f"{file_arg} is ambiguous; give a longer path")
    fm = matches[0]
    if method.isdigit():
        # a bare number names the declaration at that line
        candidates = [m for m in fm.methods() if m.line == int(method)]
    else:
        candidates = [m for m in fm.methods() if m.name == method]
        if line is not None:
            candidates = [m for m in candidates if m.line == line]
    if not candidates:
        raise CliError(f"method {method!r} not found in {fm.path}")
    if len(candidates) > 1:
        lines = ", ".join(str(m.line) for m in candidates)
        raise CliError(f"method {method!r} has several declarations "
                       f"(lines {lines}); pick one with --line")
    return fm, candidates[0]


def cmd_suggest(args) -> int:
    params, model_cfg, extras, _ = _load_checkpoint(args.model)
    code_vocab = _load_vocab(args.code_vocab, "code")
    doc_vocab = _load_vocab(args.doc_vocab, "doc")
    _check_vocab_hashes(extras, code_vocab, doc_vocab)

    root = Path(args.project)
    if not root.is_dir():
        raise CliError(f"project directory not found: {args.project}")
    idx = jparse.index_project(root, threads=args.threads)
    fm, m = _find_method(idx, args.file, args.method, args.line)
    crossfile = jparse.extract_crossfile_context(idx, fm) if not args.no_crossfile else []
    record = corpus.build_record(fm, m, crossfile, model_cfg.lengths,
                                 project=root.name, hide_name=m.name)
    if record is None:
        raise CliError(f"{args.method} yields no usable naming example")
    example = corpus.encode_record(record, code_vocab, doc_vocab, model_cfg.lengths)
    batch = Batch.from_examples([example])

    width = max(args.beam, args.top)
    hyps = runtime.beam_decode(params, model_cfg, batch, width=width)[0][: args.top]
    conf = float(runtime.pcs_confidence(params, model_cfg, batch)[0])

    print(f"{fm.path}:{m.line} {m.name}")
    print(f"confidence {conf:.4f}")
    current_rank = None
    for rank, hyp in enumerate(hyps, start=1):
        name = render_name(tokens.decode(hyp.ids, code_vocab))
        marker = ""
        if name == m.name:
            current_rank = rank
            marker = "  (current name)"
        print(f"{rank}. {name or '<empty>'}  score {hyp.score:.4f}{marker}")
    if current_rank is None:
        print(f"current name {m.name!r} is not in the top {len(hyps)}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_length_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-local", type=int, default=None,
                   help="local context budget in subtokens")
    p.add_argument("--max-infile", type=int, default=None)
    p.add_argument("--max-crossfile", type=int, default=None)
    p.add_argument("--max-doc", type=int, default=None)
    p.add_argument("--max-target", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtnm",
        description="Method name recommendation over Java projects.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="parse projects into method records")
    p.add_argument("--project", action="append", required=True,
                   help="project root directory (repeatable)")
    p.add_argument("--out", required=True, help="records JSONL path")
    p.add_argument("--config", default=None, help="JSON settings file")
    p.add_argument("--no-crossfile", action="store_true")
    p.add_argument("--require-doc", action="store_true",
                   help="keep only documented methods")
    p.add_argument("--threads", type=int, default=None)
    _add_length_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", help="context overlap report for records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-vocab", help="frequency vocabularies from records")
    p.add_argument("--records", required=True)
    p.add_argument("--code-out", required=True)
    p.add_argument("--doc-out", required=True)
    p.add_argument("--code-size", type=int, default=20000)
    p.add_argument("--doc-size", type=int, default=10000)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model on extracted records")
    p.add_argument("--records", required=True)
    p.add_argument("--valid-records", default=None,
                   help="explicit validation records (skips the split)")
    p.add_argument("--code-vocab", required=True)
    p.add_argument("--doc-vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="JSONL training log")
    p.add_argument("--config", default=None)
    p.add_argument("--split-mode", default="in_project_file_shuffle",
                   choices=corpus.SPLIT_MODES)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--test-out", default=None,
                   help="write the held-out split to this path")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--d-ff", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--desk", action="store_true",
                   help="small single-core preset for the model")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--schedule", default=None,
                   choices=("warmup_constant", "inverse_sqrt"))
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--early-stop-em", type=float, default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_length_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on held-out records")
    p.add_argument("--records", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--code-vocab", required=True)
    p.add_argument("--doc-vocab", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--per-example", default=None,
                   help="also write one JSONL row per example")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suggest", help="rank candidate names for one method")
    p.add_argument("--project", required=True)
    p.add_argument("--file", required=True, help="Java file within the project")
    p.add_argument("--method", required=True,
                   help="method name, or its declaration line number")
    p.add_argument("--line", type=int, default=None,
                   help="declaration line, for overloaded names")
    p.add_argument("--model", required=True)
    p.add_argument("--code-vocab", required=True)
    p.add_argument("--doc-vocab", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-crossfile", action="store_true")
    p.set_defaults(func=cmd_suggest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Record building, encoding, dataset splits and overlap statistics.

A MethodRecord is the parser-independent unit the model trains on: the
target name as subtokens plus four subtokenized context segments. Encoding
pads each segment to its configured length so every example has the same
layout:

    x = [ local | in-file | cross-file | doc ]      (code vocab, doc vocab)
    x_pro = [ in-file | cross-file ]                 (same ids, own encoder)

The invoked mask carries one bit per project-context subtoken, expanded from
the per-method call bits.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import jparse
from .tokens import BOS_ID, EOS_ID, PAD_ID, Vocab, encode, split_doc_sentence, split_identifier

log = logging.getLogger(__name__)


@dataclass
class LengthConfig:
    local: int = 55
    infile: int = 30
    crossfile: int = 30
    doc: int = 10
    target: int = 5

    def __post_init__(self):
        for name in ("local", "infile", "crossfile", "doc", "target"):
            if getattr(self, name) <= 0:
                raise ValueError(f"length {name} must be positive")

    @property
    def pro(self) -> int:
        return self.infile + self.crossfile

    @property
    def total(self) -> int:
        return self.local + self.infile + self.crossfile + self.doc

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LengthConfig":
        return cls(**d)


@dataclass
class MethodRecord:
    id: str
    project: str
    path: str
    name_raw: str
    target: list[str]
    local: list[str]
    sig_len: int  # leading local subtokens that came from return type + params
    pro_infile: list[str]
    pro_crossfile: list[str]
    doc: list[str]
    invoked_mask: list[int]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MethodRecord":
        return cls(**d)


@dataclass
class EncodedExample:
    id: str
    x_loc: list[int]
    x_pro: list[int]
    x_doc: list[int]
    y_in: list[int]
    y_out: list[int]
    invoked: list[float]
    x_loc_mask: list[float]
    x_pro_mask: list[float]
    x_doc_mask: list[float]
    y_mask: list[float]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncodedExample":
        return cls(**d)


def _pad(ids: list[int], width: int) -> list[int]:
    return ids + [PAD_ID] * (width - len(ids))


def _pack_names(names: list[str], bits: list[int], budget: int) -> tuple[list[str], list[int]]:
    """Subtokenize names in order until the budget; overflow cuts mid-name."""
    toks: list[str] = []
    mask: list[int] = []
    for name, bit in zip(names, bits):
        for sub in split_identifier(name):
            if len(toks) == budget:
                return toks, mask
            toks.append(sub)
            mask.append(bit)
    return toks, mask


def build_record(
    fm: jparse.FileModel,
    m: jparse.MethodDecl,
    crossfile_names: list[str],
    lengths: LengthConfig,
    project: str,
    hide_name: str | None = None,
) -> MethodRecord | None:
    """Record for a single method, or None for constructors and methods
    whose names yield no subtokens.

    hide_name drops matching entries from the in-file and cross-file name
    lists before packing; recommendation for an already-named method must
    not see that name in its own project context.
    """
    if m.is_ctor:
        return None
    target = split_identifier(m.name)
    if not target:
        log.warning("skipping %s:%s: name has no subtokens", fm.path, m.name)
        return None
    target = target[: lengths.target]
    doc_sentence = jparse.extract_doc_context(m)
    doc = split_doc_sentence(doc_sentence)[: lengths.doc] if doc_sentence else []
    sig_entities = ([m.return_type] if m.return_type else []) + [
        t for p in m.params for t in (p.type, p.name)
    ]
    sig_subs = [s for e in sig_entities for s in split_identifier(e)]
    body_subs = [s for e in m.body_identifiers for s in split_identifier(e)]
    local = (sig_subs + body_subs)[: lengths.local]
    sig_len = min(len(sig_subs), lengths.local)
    infile_names = jparse.extract_infile_context(fm, m)
    if hide_name is not None:
        infile_names = [n for n in infile_names if n != hide_name]
        crossfile_names = [n for n in crossfile_names if n != hide_name]
    infile_bits = jparse.detect_invocations(m, infile_names)
    cross_bits = jparse.detect_invocations(m, crossfile_names)
    pro_in, mask_in = _pack_names(infile_names, infile_bits, lengths.infile)
    pro_cross, mask_cross = _pack_names(crossfile_names, cross_bits, lengths.crossfile)
    return MethodRecord(
        id=f"{project}:{fm.path}:{m.name}:{m.line}",
        project=project,
        path=fm.path,
        name_raw=m.name,
        target=target,
        local=local,
        sig_len=sig_len,
        pro_infile=pro_in,
        pro_crossfile=pro_cross,
        doc=doc,
        invoked_mask=mask_in + mask_cross,
    )


def build_records(
    idx: jparse.ProjectIndex,
    lengths: LengthConfig | None = None,
    use_crossfile: bool = True,
    require_doc: bool = False,
) -> list[MethodRecord]:
    """One record per named method; constructors stay context-only.

    A method whose name yields no subtokens is skipped with a diagnostic.
    """
    lengths = lengths or LengthConfig()
    project = Path(idx.root).name
    records: list[MethodRecord] = []
    for fm in idx.files:
        crossfile_names = jparse.extract_crossfile_context(idx, fm) if use_crossfile else []
        for m in fm.methods():
            rec = build_record(fm, m, crossfile_names, lengths, project)
            if rec is None:
                continue
            if require_doc and not rec.doc:
                continue
            records.append(rec)
    return records


def encode_record(
    record: MethodRecord,
    code_vocab: Vocab,
    doc_vocab: Vocab,
    lengths: LengthConfig | None = None,
) -> EncodedExample:
    """Encode one record into fixed-size id segments plus masks.

    Target framing: y_in is BOS followed by the target ids; y_out is the
    target ids followed by EOS. When the raw name was longer than the target
    budget, the EOS is suppressed (the cut is not a real end of name).
    """
    lengths = lengths or LengthConfig()
    loc_ids = encode(record.local[: lengths.local], code_vocab)
    in_ids = encode(record.pro_infile[: lengths.infile], code_vocab)
    cross_ids = encode(record.pro_crossfile[: lengths.crossfile], code_vocab)
    doc_ids = encode(record.doc[: lengths.doc], doc_vocab)

    n_in = len(in_ids)
    bits = [float(b) for b in record.invoked_mask]
    bits_in = bits[:n_in][: lengths.infile]
    bits_cross = bits[len(record.pro_infile):][: lengths.crossfile]

    target = record.target[: lengths.target]
    tgt_ids = encode(target, code_vocab)
    if not tgt_ids:
        raise ValueError(f"record {record.id} has an empty target")
    truncated = len(split_identifier(record.name_raw)) > len(target)
    k = len(tgt_ids)
    width = lengths.target + 1
    y_in = [BOS_ID] + tgt_ids + [PAD_ID] * (width - 1 - k)
    tail = [PAD_ID] if truncated else [EOS_ID]
    y_out = (tgt_ids + tail + [PAD_ID] * (width - k - 1))[:width]
    y_mask = [1.0 if t != PAD_ID else 0.0 for t in y_out]

    def seg_mask(ids: list[int], width: int) -> list[float]:
        return [1.0] * len(ids) + [0.0] * (width - len(ids))

    return EncodedExample(
        id=record.id,
        x_loc=_pad(loc_ids, lengths.local),
        x_pro=_pad(in_ids, lengths.infile) + _pad(cross_ids, lengths.crossfile),
        x_doc=_pad(doc_ids, lengths.doc),
        y_in=y_in,
        y_out=y_out,
        invoked=bits_in + [0.0] * (lengths.infile - len(bits_in))
        + bits_cross + [0.0] * (lengths.crossfile - len(bits_cross)),
        x_loc_mask=seg_mask(loc_ids, lengths.local),
        x_pro_mask=seg_mask(in_ids, lengths.infile) + seg_mask(cross_ids, lengths.crossfile),
        x_doc_mask=seg_mask(doc_ids, lengths.doc),
        y_mask=y_mask,
    )


# ---------------------------------------------------------------------------
# dataset splits

SPLIT_MODES = ("in_project_file_shuffle", "cross_project")


def split_dataset(
    records: list[MethodRecord],
    mode: str,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[MethodRecord], list[MethodRecord], list[MethodRecord]]:
    """Deterministic train/valid/test split by whole files or whole projects.

    in_project_file_shuffle shuffles files and splits the file list by the
    ratios; cross_project does the same over project names and requires at
    least three projects.
    """
    if mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {mode!r}; expected one of {SPLIT_MODES}")
    if len(ratios) != 3:
        raise ValueError("ratios must have three entries")
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be nonnegative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios sum to {sum(ratios)}, expected 1")
    key = (lambda r: r.path) if mode == "in_project_file_shuffle" else (lambda r: r.project)
    units = sorted({key(r) for r in records})
    if mode == "cross_project" and len(units) < 3:
        raise ValueError(f"cross_project split needs >= 3 projects, got {len(units)}")
    rng = np.random.default_rng(seed)
    order = [units[i] for i in rng.permutation(len(units))]
    n = len(order)
    cut1 = int(n * ratios[0])
    cut2 = int(n * (ratios[0] + ratios[1]))
    assign: dict[str, int] = {}
    for pos, unit in enumerate(order):
        assign[unit] = 0 if pos < cut1 else (1 if pos < cut2 else 2)
    splits: tuple[list[MethodRecord], ...] = ([], [], [])
    for r in records:
        splits[assign[key(r)]].append(r)
    return splits


# ---------------------------------------------------------------------------
# overlap statistics

LEVELS = ("identifiers", "return_params", "infile", "crossfile", "doc")


@dataclass
class LevelOverlap:
    pct_any: float | None
    pct_all: float | None
    population: int

    def to_dict(self) -> dict:
        return {"pct_any": self.pct_any, "pct_all": self.pct_all, "population": self.population}


@dataclass
class OverlapReport:
    levels: dict[str, LevelOverlap]
    pct_absent_local_present_project: float | None
    n: int

    def to_dict(self) -> dict:
        out: dict = {name: lv.to_dict() for name, lv in self.levels.items()}
        out["absent_local_present_project"] = {
            "pct": self.pct_absent_local_present_project,
            "population": self.n,
        }
        out["n"] = self.n
        return out

    def to_table(self) -> str:
        rows = [("context", "pct_any", "pct_all", "population")]
        for name in LEVELS:
            lv = self.levels[name]
            rows.append((
                name,
                "n/a" if lv.pct_any is None else f"{lv.pct_any:.2f}",
                "n/a" if lv.pct_all is None else f"{lv.pct_all:.2f}",
                str(lv.population),
            ))
        pct = self.pct_absent_local_present_project
        rows.append((
            "absent_local_present_project",
            "n/a" if pct is None else f"{pct:.2f}",
            "",
            str(self.n),
        ))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = []
        for r in rows:
            lines.append("  ".join(r[c].ljust(widths[c]) for c in range(4)).rstrip())
        return "\n".join(lines)


def _level_sets(record: MethodRecord) -> dict[str, set[str]]:
    return {
        "identifiers": set(record.local[record.sig_len:]),
        "return_params": set(record.local[: record.sig_len]),
        "infile": set(record.pro_infile),
        "crossfile": set(record.pro_crossfile),
        "doc": set(record.doc),
    }


def stats_overlap(records: list[MethodRecord]) -> OverlapReport:
    """Share of methods whose name subtokens appear in each context level.

    pct_any counts methods with at least one target subtoken in the level;
    pct_all requires every target subtoken. The doc level is computed over
    documented methods only. A zero population reports n/a percentages.
    """
    if not records:
        raise ValueError("no records to analyze")
    hits_any = dict.fromkeys(LEVELS, 0)
    hits_all = dict.fromkeys(LEVELS, 0)
    population = dict.fromkeys(LEVELS, 0)
    absent_local_present_project = 0
    for r in records:
        tgt = set(r.target)
        sets = _level_sets(r)
        for name in LEVELS:
            if name == "doc" and not r.doc:
                continue
            population[name] += 1
            inter = tgt & sets[name]
            if inter:
                hits_any[name] += 1
            if inter == tgt:
                hits_all[name] += 1
        local_all = set(r.local)
        project_all = sets["infile"] | sets["crossfile"]
        if not (tgt & local_all) and (tgt & project_all):
            absent_local_present_project += 1
    levels = {}
    for name in LEVELS:
        pop = population[name]
        if pop == 0:
            levels[name] = LevelOverlap(None, None, 0)
        else:
            levels[name] = LevelOverlap(
                100.0 * hits_any[name] / pop, 100.0 * hits_all[name] / pop, pop,
            )
    return OverlapReport(
        levels=levels,
        pct_absent_local_present_project=100.0 * absent_local_present_project / len(records),
        n=len(records),
    )


# ---------------------------------------------------------------------------
# JSONL persistence


def write_records(records: list[MethodRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_records(path: str | Path) -> list[MethodRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(MethodRecord.from_dict(json.loads(line)))
    return out


def write_examples(examples: list[EncodedExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict()) + "\n")


def read_examples(path: str | Path) -> list[EncodedExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(EncodedExample.from_dict(json.loads(line)))
    return out

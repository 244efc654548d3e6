"""Subtoken splitting and vocabulary handling.

Identifiers and documentation sentences are both reduced to lowercase
alphanumeric subtokens before they reach the model. Identifier splitting
follows camelCase / snake_case conventions; every capital inside an
uppercase run is its own subtoken, so "calculateDUFitness" yields
["calculate", "d", "u", "fitness"].
"""

from __future__ import annotations

import hashlib
from collections import Counter
from collections.abc import Iterable
from pathlib import Path

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
BOS_TOKEN = "<BOS>"
EOS_TOKEN = "<EOS>"

SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)


def _is_boundary(prev: str, cur: str) -> bool:
    # Case boundary: aB and AB both split; Ab does not, so the last capital
    # of a run binds to the lowercase tail that follows it.
    if prev.islower() and cur.isupper():
        return True
    if prev.isupper() and cur.isupper():
        return True
    # Letter/digit transitions split in both directions; digit runs stay whole.
    if prev.isalpha() and cur.isdigit():
        return True
    if prev.isdigit() and cur.isalpha():
        return True
    return False


def split_identifier(text: str) -> list[str]:
    """Split an identifier into lowercase subtokens.

    Underscores and any other non-alphanumeric characters separate
    subtokens outright. Returns [] when the input carries no letters
    or digits.
    """
    parts: list[str] = []
    buf: list[str] = []
    prev = ""
    for ch in text:
        if not ch.isalnum():
            if buf:
                parts.append("".join(buf))
                buf = []
            prev = ""
            continue
        if buf and _is_boundary(prev, ch):
            parts.append("".join(buf))
            buf = []
        buf.append(ch)
        prev = ch
    if buf:
        parts.append("".join(buf))
    return [p.lower() for p in parts]


def split_doc_sentence(text: str) -> list[str]:
    """Split a documentation sentence into lowercase words.

    Every non-alphanumeric character acts as whitespace, so punctuation
    and parentheses vanish and hyphenated words split apart.
    """
    cleaned = "".join(ch if ch.isalnum() else " " for ch in text)
    return [w.lower() for w in cleaned.split()]


class Vocab:
    """Dense token<->id mapping with four fixed specials.

    Ids 0..3 are PAD, UNK, BOS, EOS in that order; real tokens follow
    contiguously. Lookups of unknown tokens map to UNK.
    """

    def __init__(self, tokens: Iterable[str]):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ValueError(f"duplicate token in vocab: {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def save(self, path: str | Path) -> None:
        # One token per line; the four specials head the file, so a real
        # token's id is its line number - 1 counting from zero.
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
        while lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"vocab file {path} lacks the special-token header")
        return cls(lines[4:])

    def content_hash(self) -> str:
        payload = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab(streams: Iterable[Iterable[str]], max_size: int) -> Vocab:
    """Build a frequency-ranked vocab capped at max_size ids (specials included).

    Ties in frequency break lexicographically, so rebuilding from the same
    corpus always yields the same table.
    """
    if max_size < len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must be at least {len(SPECIAL_TOKENS)}")
    counts: Counter[str] = Counter()
    for stream in streams:
        counts.update(stream)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
    return Vocab(keep)


def encode(tokens: Iterable[str], vocab: Vocab) -> list[int]:
    """Map tokens to ids; out-of-vocabulary tokens become UNK."""
    return [vocab.id_of(t) for t in tokens]


def decode(ids: Iterable[int], vocab: Vocab) -> list[str]:
    """Map ids back to tokens, dropping PAD/BOS/EOS; UNK keeps its marker."""
    out: list[str] = []
    for i in ids:
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        out.append(vocab.token_of(i))
    return out

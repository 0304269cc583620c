"""Question tokenisation with entity/time mention markers."""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter

import numpy as np

PAD, UNK, POOL, ENT, TIME = "<PAD>", "<UNK>", "<POOL>", "<ENT>", "<TIME>"
SPECIALS = (PAD, UNK, POOL, ENT, TIME)
_WORD_RE = re.compile(r"\w+|[^\w\s]")


def question_tokens(instance) -> list[str]:
    """Tokens of the question with each mention replaced by a marker and its label.

    >>> from types import SimpleNamespace as N
    >>> q = N(question="Who won X in 2001", entities=[{"span": (8, 9), "id": "Q1"}],
    ...       times=[{"span": (13, 17), "year": 2001}])
    >>> question_tokens(q)
    ['<POOL>', 'who', 'won', '<ENT>', 'Q1', 'in', '<TIME>', '2001']
    """
    marks = [(tuple(e["span"]), (ENT, str(e["id"]))) for e in instance.entities]
    marks += [(tuple(t["span"]), (TIME, str(t["year"]))) for t in instance.times]
    marks.sort()
    out, pos = [POOL], 0
    text = instance.question
    for (a, b), pair in marks:
        out.extend(w.lower() for w in _WORD_RE.findall(text[pos:a]))
        out.extend(pair)
        pos = b
    out.extend(w.lower() for w in _WORD_RE.findall(text[pos:]))
    return out


class TokenVocab:
    def __init__(self, tokens: list[str]):
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("token vocabulary must start with the special tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, instances, min_count: int = 1) -> "TokenVocab":
        counts = Counter(tok for inst in instances for tok in question_tokens(inst))
        words = sorted(t for t, c in counts.items() if c >= min_count and t not in SPECIALS)
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.tokens).encode()).hexdigest()[:16]


def pad_batch(id_lists: list[list[int]], max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence (truncating at ``max_len``); returns ids and a validity mask."""
    length = min(max_len, max(len(x) for x in id_lists))
    ids = np.zeros((len(id_lists), length), dtype=np.int64)
    mask = np.zeros((len(id_lists), length), dtype=bool)
    for i, seq in enumerate(id_lists):
        seq = seq[:length]
        ids[i, :len(seq)] = seq
        mask[i, :len(seq)] = True
    return ids, mask

"""Tokenization, vocabulary, pretrained embeddings and genre encoding."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import GENRES, Genre, MovieRecord

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_LENGTH = 10000


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation.

    >>> tokenize("Don't -- STOP!")
    ["don't", 'stop']
    """
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if start < end:
            tokens.append(raw[start:end])
    return tokens


def script_tokens(record: MovieRecord) -> list[str]:
    return [tok for utt in record.script for tok in tokenize(utt)]


def utterance_tokens(record: MovieRecord) -> list[list[str]]:
    return [tokenize(utt) for utt in record.script]


class Vocabulary:
    """Word <-> index map with PAD=0 and UNK=1 reserved."""

    def __init__(self, words: Sequence[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for w in words:
            if w in self.stoi:
                raise ValueError(f"duplicate vocabulary word {w!r}")
            self.stoi[w] = len(self.itos)
            self.itos.append(w)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi and self.stoi[word] > UNK

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def index(self, word: str) -> int:
        i = self.stoi.get(word, UNK)
        return UNK if i == PAD else i

    def words(self) -> list[str]:
        return self.itos[2:]

    def dumps(self) -> str:
        return "".join(f"{w}\t{i}\n" for i, w in enumerate(self.itos))

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        entries = []
        for line in text.splitlines():
            if not line:
                continue
            word, _, idx = line.rpartition("\t")
            entries.append((int(idx), word))
        entries.sort()
        if [i for i, _ in entries] != list(range(len(entries))) or len(entries) < 2:
            raise ValueError("vocabulary indices must be contiguous from 0")
        return cls([w for _, w in entries[2:]])

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_vocabulary(train: Iterable[MovieRecord], min_count: int = 1) -> Vocabulary:
    counts: Counter[str] = Counter()
    n = 0
    for record in train:
        counts.update(script_tokens(record))
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty training set")
    kept = [w for w, c in counts.items() if c >= min_count and w not in (PAD_TOKEN, UNK_TOKEN)]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


@dataclass(frozen=True)
class TokenSequence:
    indices: np.ndarray
    true_length: int

    @property
    def length(self) -> int:
        return len(self.indices)


def encode_sequence(tokens: Sequence[str], vocab: Vocabulary, length: int = DEFAULT_LENGTH) -> TokenSequence:
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    head = tokens[:length]
    indices = np.zeros(length, dtype=np.int64)
    indices[: len(head)] = [vocab.index(t) for t in head]
    return TokenSequence(indices, len(head))


def decode_sequence(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    return [vocab.itos[i] for i in seq.indices[: seq.true_length]]


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    found: int = 0
    missing: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def coverage(self) -> float:
        total = self.found + len(self.missing)
        return self.found / total if total else 0.0


def load_embeddings(path, vocab: Vocabulary, dim: int = 300, dtype=np.float32) -> EmbeddingTable:
    """Fill an embedding matrix from a whitespace-separated ``word v1 ... vd`` file.

    Every line must carry exactly ``dim`` values.  Vocabulary words absent
    from the file, UNK and PAD keep zero rows.
    """
    path = Path(path)
    matrix = np.zeros((len(vocab), dim), dtype=dtype)
    filled = np.zeros(len(vocab), dtype=bool)
    with path.open(encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingError(f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            i = vocab.stoi.get(parts[0])
            if i is None or i <= UNK or filled[i]:
                continue
            try:
                matrix[i] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric value") from None
            filled[i] = True
    missing = tuple(w for i, w in enumerate(vocab.itos) if i > UNK and not filled[i])
    return EmbeddingTable(matrix, int(filled.sum()), missing)


def genre_multi_hot(genres: Iterable[Genre]) -> np.ndarray:
    vec = np.zeros(len(GENRES))
    for g in genres:
        vec[g.index] = 1.0
    if not vec.any():
        raise ValueError("genre set must be non-empty")
    return vec

"""Emotion lexicon and bad-word list features."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EMOTIONS = (
    "anger", "anticipation", "joy", "trust", "disgust",
    "sadness", "surprise", "fear", "positive", "negative",
)
_EMOTION_INDEX = {name: i for i, name in enumerate(EMOTIONS)}


class LexiconError(ValueError):
    pass


class EmotionLexicon:
    """Word -> set of emotion/sentiment categories (fixed category order)."""

    def __init__(self, entries: dict[str, Iterable[str]] | None = None):
        self.entries: dict[str, frozenset[str]] = {}
        for word, cats in (entries or {}).items():
            for cat in cats:
                self.add(word, cat)

    def add(self, word: str, category: str) -> None:
        if category not in _EMOTION_INDEX:
            raise LexiconError(f"unknown emotion category {category!r}")
        word = word.lower()
        self.entries[word] = self.entries.get(word, frozenset()) | {category}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, word: str) -> frozenset[str]:
        return self.entries.get(word, frozenset())

    def __eq__(self, other) -> bool:
        return isinstance(other, EmotionLexicon) and self.entries == other.entries

    def dumps(self) -> str:
        lines = []
        for word in sorted(self.entries):
            for cat in EMOTIONS:
                if cat in self.entries[word]:
                    lines.append(f"{word}\t{cat}\t1\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text: str, source: str = "<string>") -> "EmotionLexicon":
        lex = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r").split("\t")
            if len(parts) != 3:
                raise LexiconError(f"{source}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            word, cat, flag = parts
            if flag.strip() not in ("0", "1"):
                raise LexiconError(f"{source}:{lineno}: flag must be 0 or 1, got {flag!r}")
            if cat not in _EMOTION_INDEX:
                raise LexiconError(f"{source}:{lineno}: unknown emotion category {cat!r}")
            if flag.strip() == "1":
                lex.add(word, cat)
        return lex


def load_emotion_lexicon(path) -> EmotionLexicon:
    path = Path(path)
    return EmotionLexicon.loads(path.read_text(encoding="utf-8"), str(path))


def emotion_vector(tokens: Sequence[str], lexicon: EmotionLexicon) -> np.ndarray:
    """Share of tokens carrying each of the ten categories."""
    vec = np.zeros(len(EMOTIONS))
    if not tokens:
        return vec
    for word, n in Counter(tokens).items():
        for cat in lexicon[word]:
            vec[_EMOTION_INDEX[cat]] += n
    return vec / len(tokens)


class BadWordList:
    def __init__(self, entries: Iterable[str]):
        self.entries = frozenset(e for e in (" ".join(x.lower().split()) for x in entries) if e)
        if not self.entries:
            raise LexiconError("bad-word list is empty")
        self.phrases = {tuple(e.split()) for e in self.entries}
        self.max_len = max(len(p) for p in self.phrases)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def matches(self, tokens: Sequence[str]) -> list[tuple[int, str]]:
        """(start position, entry) for every occurrence, longest entry first at each start."""
        found = []
        for i in range(len(tokens)):
            for n in range(min(self.max_len, len(tokens) - i), 0, -1):
                gram = tuple(tokens[i:i + n])
                if gram in self.phrases:
                    found.append((i, " ".join(gram)))
        return found

    def covered(self, tokens: Sequence[str]) -> np.ndarray:
        if self.max_len == 1:
            return np.fromiter((t in self.entries for t in tokens), dtype=bool, count=len(tokens))
        mask = np.zeros(len(tokens), dtype=bool)
        for start, entry in self.matches(tokens):
            mask[start:start + entry.count(" ") + 1] = True
        return mask


def load_bad_words(paths: Iterable) -> BadWordList:
    entries = []
    for path in paths:
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    entries.append(line)
    return BadWordList(entries)


def bad_word_ratio(tokens: Sequence[str], bad_words: BadWordList) -> float:
    """Fraction of tokens covered by a bad-word entry (phrases cover all their tokens)."""
    if not tokens:
        raise ValueError("bad_word_ratio needs a non-empty token list")
    return float(bad_words.covered(tokens).sum()) / len(tokens)

"""Metrics and error-analysis tables: weighted F1, confusion, per-genre F1,
emotion profiles, attention word rankings and bad-word ratios."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import GENRES, Genre, MovieRecord, Rating
from .lexicon import EMOTIONS, BadWordList

N_CLASSES = len(Rating)


def _check_aligned(gold, predicted):
    if len(gold) != len(predicted):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(predicted)} predicted")


def confusion(gold: Sequence[int], predicted: Sequence[int], n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = gold, columns = predicted."""
    _check_aligned(gold, predicted)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return cm


def row_normalized(cm: np.ndarray) -> np.ndarray:
    sums = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, sums, out=np.zeros(cm.shape), where=sums > 0)


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    # 2PR/(P+R) simplifies to 2TP/(support+predicted); zero when nothing is gold or predicted
    return np.divide(2 * tp, denom, out=np.zeros(len(tp)), where=denom > 0)


def weighted_f1_from_confusion(cm: np.ndarray) -> float:
    support = cm.sum(axis=1)
    total = support.sum()
    if total == 0:
        raise ValueError("weighted F1 of an empty set")
    # divide once at the end so perfect predictions give exactly 1.0
    return float(np.dot(support, per_class_f1(cm)) / total)


def weighted_f1(gold: Sequence[int], predicted: Sequence[int]) -> float:
    _check_aligned(gold, predicted)
    if len(gold) == 0:
        raise ValueError("weighted F1 of an empty set")
    return weighted_f1_from_confusion(confusion(gold, predicted))


def per_genre_f1(records: Sequence[MovieRecord], predicted: Sequence[int]) -> dict[Genre, float]:
    """Weighted F1 restricted to each genre's members; multi-genre movies count in every genre."""
    _check_aligned(records, predicted)
    groups: dict[Genre, list[int]] = defaultdict(list)
    for i, record in enumerate(records):
        for g in record.genres:
            groups[g].append(i)
    out = {}
    for g in GENRES:
        if g in groups:
            idx = groups[g]
            out[g] = weighted_f1([int(records[i].rating) for i in idx], [int(predicted[i]) for i in idx])
    return out


def emotion_profile(records: Sequence[MovieRecord], predicted: Sequence[int],
                    emotions: Sequence[np.ndarray]) -> dict[tuple[Rating, bool], np.ndarray]:
    """Mean emotion vector per (gold class, prediction correct); empty groups are absent."""
    _check_aligned(records, predicted)
    groups: dict[tuple[Rating, bool], list[np.ndarray]] = defaultdict(list)
    for record, pred, emo in zip(records, predicted, emotions):
        groups[(record.rating, int(pred) == int(record.rating))].append(np.asarray(emo, dtype=np.float64))
    return {key: np.mean(groups[key], axis=0) for key in sorted(groups)}


def top_k(scores: Mapping[str, float], k: int) -> list[tuple[str, float]]:
    """Descending score, ties by word."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def attention_groups(gold: Sequence[int], predicted: Sequence[int], rating: Rating) -> tuple[list[int], list[int]]:
    r = int(rating)
    tp = [i for i, (g, p) in enumerate(zip(gold, predicted)) if g == r and p == r]
    err = [i for i, (g, p) in enumerate(zip(gold, predicted)) if (g == r) != (p == r)]
    return tp, err


def attention_word_report(records: Sequence[MovieRecord], predicted: Sequence[int],
                          tokens: Sequence[Sequence[str]], attention: Sequence[np.ndarray],
                          k: int = 10) -> dict[tuple[Rating, str], list[tuple[str, float]]]:
    """Top-k words by mean attention weight, pooled over occurrences, for TP and FN+FP per class.

    ``tokens[i]`` are the real (non-PAD) tokens the model saw for record ``i``,
    aligned with ``attention[i]``.
    """
    _check_aligned(records, predicted)
    gold = [int(r.rating) for r in records]
    report = {}
    for rating in Rating:
        for label, members in zip(("TP", "FN+FP"), attention_groups(gold, predicted, rating)):
            sums: dict[str, float] = defaultdict(float)
            counts: Counter[str] = Counter()
            for i in members:
                toks, weights = tokens[i], attention[i]
                if len(toks) != len(weights):
                    raise ValueError(f"record {records[i].id!r}: {len(toks)} tokens vs {len(weights)} weights")
                for tok, w in zip(toks, weights):
                    sums[tok] += float(w)
                    counts[tok] += 1
            report[(rating, label)] = top_k({w: sums[w] / counts[w] for w in sums}, k)
    return report


@dataclass
class BadWordTable:
    top: list[tuple[str, float]]
    negativity: float
    total_tokens: int


def bad_word_table(tokens_by_class: Mapping[Rating, Iterable[Sequence[str]]], bad_words: BadWordList,
                   k: int = 10) -> dict[Rating, BadWordTable]:
    """Per class: merge scripts, ratio(entry) = occurrences / class tokens, plus overall negativity."""
    out = {}
    for rating, scripts in tokens_by_class.items():
        occurrences: Counter[str] = Counter()
        covered = total = 0
        for toks in scripts:
            total += len(toks)
            occurrences.update(entry for _, entry in bad_words.matches(toks))
            covered += int(bad_words.covered(toks).sum())
        if total == 0:
            out[rating] = BadWordTable([], 0.0, 0)
            continue
        out[rating] = BadWordTable(top_k({w: n / total for w, n in occurrences.items()}, k), covered / total, total)
    return out


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class_f1: np.ndarray
    weighted_f1: float
    per_genre_f1: dict[Genre, float]
    emotion_profiles: dict[tuple[Rating, bool], np.ndarray] = field(default_factory=dict)
    attention_words: dict[tuple[Rating, str], list[tuple[str, float]]] = field(default_factory=dict)
    bad_word_tables: dict[Rating, BadWordTable] = field(default_factory=dict)


def build_report(records: Sequence[MovieRecord], predicted: Sequence[int], *,
                 emotions: Sequence[np.ndarray] | None = None,
                 tokens: Sequence[Sequence[str]] | None = None,
                 attention: Sequence[np.ndarray] | None = None,
                 bad_words: BadWordList | None = None, k: int = 10,
                 full_tokens: Sequence[Sequence[str]] | None = None) -> EvalReport:
    """Assemble every table that the supplied inputs allow.

    ``tokens`` must align with ``attention``; bad-word ratios use
    ``full_tokens`` (untruncated scripts) when given, else ``tokens``.
    """
    gold = [int(r.rating) for r in records]
    predicted = [int(p) for p in predicted]
    cm = confusion(gold, predicted)
    report = EvalReport(cm, per_class_f1(cm), weighted_f1_from_confusion(cm), per_genre_f1(records, predicted))
    if emotions is not None:
        report.emotion_profiles = emotion_profile(records, predicted, emotions)
    if tokens is not None and attention is not None:
        report.attention_words = attention_word_report(records, predicted, tokens, attention, k)
    bad_tokens = full_tokens if full_tokens is not None else tokens
    if bad_words is not None and bad_tokens is not None:
        by_class: dict[Rating, list] = {r: [] for r in Rating}
        for record, toks in zip(records, bad_tokens):
            by_class[record.rating].append(toks)
        report.bad_word_tables = bad_word_table({r: v for r, v in by_class.items() if v}, bad_words, k)
    return report


# -- serialization -----------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Tab-separated table with a header row; floats printed with six decimals."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_report(report: EvalReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, header, rows):
        p = out / name
        write_table(p, header, rows)
        paths.append(p)

    support = report.confusion.sum(axis=1)
    emit("metrics.tsv", ["metric", "class", "value", "support"],
         [("weighted_f1", "all", report.weighted_f1, int(support.sum()))]
         + [("f1", r.label, float(report.per_class_f1[r]), int(support[r])) for r in Rating])
    emit("confusion.tsv", ["gold\\predicted"] + [r.label for r in Rating],
         [[g.label] + [int(x) for x in report.confusion[g]] for g in Rating])
    emit("per_genre_f1.tsv", ["genre", "weighted_f1"],
         [(g.value, f) for g, f in report.per_genre_f1.items()])
    emit("emotion_profile.tsv", ["class", "group"] + list(EMOTIONS),
         [[r.label, "correct" if ok else "incorrect"] + [float(x) for x in vec]
          for (r, ok), vec in report.emotion_profiles.items()])
    emit("attention_words.tsv", ["class", "group", "rank", "word", "mean_weight"],
         [(r.label, grp, i + 1, w, s) for (r, grp), words in report.attention_words.items()
          for i, (w, s) in enumerate(words)])
    emit("bad_words.tsv", BAD_WORD_HEADER, bad_word_rows(report.bad_word_tables))
    return paths


BAD_WORD_HEADER = ["class", "rank", "word", "ratio"]


def bad_word_rows(tables: Mapping[Rating, BadWordTable]) -> list[tuple]:
    """Rank 0 carries the class's overall negativity, ranks 1..k the top entries."""
    rows = []
    for r, table in tables.items():
        rows.append((r.label, 0, "*ALL*", table.negativity))
        rows += [(r.label, i + 1, w, s) for i, (w, s) in enumerate(table.top)]
    return rows

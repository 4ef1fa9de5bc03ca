"""Movie corpus: records, rating/genre taxonomies, loading and stratified splits."""

from __future__ import annotations

import enum
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus operations."""


class Rating(enum.IntEnum):
    G = 0
    PG = 1
    PG13 = 2
    R = 3
    NC17 = 4

    @property
    def label(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str) -> "Rating":
        key = text.strip().upper().replace("-", "").replace(" ", "")
        try:
            return cls[key]
        except KeyError:
            raise CorpusError(f"unknown rating label {text!r}") from None


_DISPLAY = {Rating.G: "G", Rating.PG: "PG", Rating.PG13: "PG-13", Rating.R: "R", Rating.NC17: "NC-17"}


class Genre(enum.Enum):
    ACTION = "Action"
    ADVENTURE = "Adventure"
    ANIMATION = "Animation"
    BIOGRAPHY = "Biography"
    COMEDY = "Comedy"
    CRIME = "Crime"
    DOCUMENTARY = "Documentary"
    DRAMA = "Drama"
    FAMILY = "Family"
    FANTASY = "Fantasy"
    FILM_NOIR = "Film-Noir"
    HISTORY = "History"
    HORROR = "Horror"
    MUSIC = "Music"
    MUSICAL = "Musical"
    MYSTERY = "Mystery"
    NEWS = "News"
    ROMANCE = "Romance"
    SCI_FI = "Science-Fiction"
    SHORT = "Short"
    SPORT = "Sport"
    THRILLER = "Thriller"
    WAR = "War"
    WESTERN = "Western"

    @property
    def index(self) -> int:
        return _GENRE_INDEX[self]

    @classmethod
    def parse(cls, text: str) -> "Genre":
        key = _GENRE_ALIASES.get(text.strip().lower())
        if key is None:
            raise CorpusError(f"unknown genre {text!r}")
        return key


GENRES: tuple[Genre, ...] = tuple(Genre)
_GENRE_INDEX = {g: i for i, g in enumerate(GENRES)}
_GENRE_ALIASES = {g.value.lower(): g for g in GENRES}
_GENRE_ALIASES.update({"sci-fi": Genre.SCI_FI, "science fiction": Genre.SCI_FI, "film noir": Genre.FILM_NOIR})


@dataclass(frozen=True)
class MovieRecord:
    id: str
    title: str
    script: tuple[str, ...]
    genres: tuple[Genre, ...]
    directors: tuple[str, ...]
    rating: Rating

    def __post_init__(self):
        if not self.id:
            raise CorpusError("record id must be non-empty")
        if not self.genres:
            raise CorpusError(f"record {self.id!r}: genres must be non-empty")
        if not any(u.strip() for u in self.script):
            raise CorpusError(f"record {self.id!r}: script is empty")

    @property
    def text(self) -> str:
        return "\n".join(self.script)

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "title": self.title,
                "rating": self.rating.name,
                "genres": [g.value for g in self.genres],
                "directors": list(self.directors),
                "script": list(self.script),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_obj(cls, obj: dict) -> "MovieRecord":
        if not isinstance(obj, dict):
            raise CorpusError("record must be an object")
        for key in ("id", "title", "rating"):
            if not isinstance(obj.get(key), str):
                raise CorpusError(f"field {key!r} must be a string")
        for key in ("genres", "directors", "script"):
            value = obj.get(key)
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise CorpusError(f"field {key!r} must be an array of strings")
        genres = tuple(dict.fromkeys(Genre.parse(g) for g in obj["genres"]))
        return cls(
            id=obj["id"],
            title=obj["title"],
            script=tuple(obj["script"]),
            genres=genres,
            directors=tuple(obj["directors"]),
            rating=Rating.parse(obj["rating"]),
        )


@dataclass
class LoadStats:
    skipped: int = 0
    duplicates: int = 0
    errors: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[MovieRecord]
    validation: list[MovieRecord]
    test: list[MovieRecord]
    seed: int


def load_corpus(path, strict: bool = True, stats: LoadStats | None = None) -> list[MovieRecord]:
    """Read a JSON-lines corpus.

    In strict mode the first malformed line raises ``CorpusError`` naming the
    line number; duplicates raise as well.  In lenient mode bad lines are
    skipped, duplicate ids keep the first occurrence, and both are tallied in
    ``stats`` when given.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    stats = stats if stats is not None else LoadStats()
    records: list[MovieRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = MovieRecord.from_obj(json.loads(line))
            except (json.JSONDecodeError, CorpusError) as exc:
                msg = f"{path}:{lineno}: {exc}"
                if strict:
                    raise CorpusError(msg) from exc
                stats.skipped += 1
                stats.errors.append(msg)
                continue
            if record.id in seen:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: duplicate id {record.id!r}")
                stats.duplicates += 1
                continue
            seen.add(record.id)
            records.append(record)
    if strict and not records:
        raise CorpusError(f"{path}: no records")
    if stats.skipped or stats.duplicates:
        log.warning("%s: skipped %d malformed lines, %d duplicate ids", path, stats.skipped, stats.duplicates)
    return records


def write_corpus(records: Iterable[MovieRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Per-class allocation: nearest integer to ratio * n, at least one item per held-out split.

    Rounding (rather than flooring) keeps every split's share within 1/n of
    the requested ratio; train takes the remainder.
    """
    if n < 3:
        raise CorpusError(f"class with {n} members cannot populate all three splits")
    n_valid = max(1, math.floor(ratios[1] * n + 0.5))
    n_test = max(1, math.floor(ratios[2] * n + 0.5))
    if n_valid + n_test >= n:
        n_valid = n_test = 1
    return n - n_valid - n_test, n_valid, n_test


def stratified_split(corpus: Sequence[MovieRecord], ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise CorpusError(f"ratios must be three non-negative fractions summing to 1, got {ratios}")
    by_class: dict[Rating, list[MovieRecord]] = {r: [] for r in Rating}
    for record in sorted(corpus, key=lambda r: r.id):
        by_class[record.rating].append(record)
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for rating in Rating:
        members = by_class[rating]
        if not members:
            continue
        n_train, n_valid, _ = split_sizes(len(members), ratios)
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        train += shuffled[:n_train]
        valid += shuffled[n_train:n_train + n_valid]
        test += shuffled[n_train + n_valid:]
    return DatasetSplit(train, valid, test, seed)


def class_distribution(corpus: Iterable[MovieRecord]) -> tuple[dict[Rating, int], dict[Genre, int]]:
    ratings = Counter({r: 0 for r in Rating})
    genres = Counter({g: 0 for g in GENRES})
    for record in corpus:
        ratings[record.rating] += 1
        genres.update(record.genres)
    return dict(ratings), dict(genres)


SPLIT_FILES = ("train.jsonl", "valid.jsonl", "test.jsonl")


def write_split(split: DatasetSplit, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, (split.train, split.validation, split.test)):
        write_corpus(part, out / name)


def read_split(split_dir, seed: int = 0) -> DatasetSplit:
    d = Path(split_dir)
    parts = [load_corpus(d / name, strict=True) for name in SPLIT_FILES]
    return DatasetSplit(*parts, seed=seed)

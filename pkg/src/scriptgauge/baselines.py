"""Comparison systems: bad-word-ratio thresholds, one-vs-rest linear SVM, and a text CNN encoder."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import GENRES, MovieRecord, Rating
from .evaluation import weighted_f1
from .lexicon import EmotionLexicon, emotion_vector
from .numerics import Parameter
from .text import utterance_tokens

log = logging.getLogger(__name__)

N_CLASSES = len(Rating)


# -- threshold model ---------------------------------------------------

@dataclass(frozen=True)
class ThresholdModel:
    thresholds: tuple[float, float, float, float]

    def __post_init__(self):
        t = self.thresholds
        if len(t) != 4 or any(a > b for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must be four non-decreasing values, got {t}")

    def predict(self, ratio: float) -> Rating:
        return threshold_predict(self, ratio)


def threshold_predict(model: ThresholdModel, ratio: float) -> Rating:
    """Half-open intervals: ratio equal to a cut point goes to the higher class."""
    return Rating(int(np.searchsorted(model.thresholds, ratio, side="right")))


def threshold_candidates(ratios: Sequence[float]) -> np.ndarray:
    distinct = np.unique(np.asarray(ratios, dtype=np.float64))
    mids = (distinct[:-1] + distinct[1:]) / 2
    return np.unique(np.concatenate([[0.0], mids, [1.0]]))


def interval_f1_terms(ratios, labels, cands):
    """Cumulative class counts along the padded cut axis.

    Position 0 is -inf, positions 1..m are ``cands`` and m+1 is +inf;
    ``below[c, p]`` counts class-c items with ratio under the cut at ``p``, so an
    interval [lo, hi) holds ``below[:, hi] - below[:, lo]``.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    m = len(cands)
    below = np.zeros((N_CLASSES, m + 2), dtype=np.int64)
    for c in range(N_CLASSES):
        rc = np.sort(ratios[labels == c])
        below[c, 1:m + 1] = np.searchsorted(rc, cands, side="left")
        below[c, m + 1] = len(rc)
    return below, below.sum(axis=0)


def fit_thresholds(pairs: Sequence[tuple[float, Rating]], tie_tol: float = 1e-12) -> ThresholdModel:
    """Exact maximizer of training weighted F1 over monotone 4-tuples of candidate cut points.

    The objective is a sum of per-class terms, each depending only on its two
    neighbouring cuts, so dynamic programming over the chain of cuts finds
    the same optimum as enumerating every tuple.  Ties (within ``tie_tol``)
    go to the lexicographically smallest tuple.
    """
    if not pairs:
        raise ValueError("fit_thresholds needs training pairs")
    ratios = [float(r) for r, _ in pairs]
    labels = [int(y) for _, y in pairs]
    cands = threshold_candidates(ratios)
    m = len(cands)
    below, below_all = interval_f1_terms(ratios, labels, cands)
    n = len(pairs)
    support = below[:, -1].astype(np.float64)
    weight = support / n

    # positions in the padded cut axis: 0 = -inf, 1..m = candidates, m+1 = +inf
    def term(c, lo, hi):
        tp = below[c, hi] - below[c, lo]
        pred = below_all[hi] - below_all[lo]
        denom = support[c] + pred
        return weight[c] * np.divide(2.0 * tp, denom, out=np.zeros(np.broadcast(tp, denom).shape),
                                     where=denom > 0)

    idx = np.arange(1, m + 1)

    def row(c, k, nxt):
        # class c occupies [cands[k], cands[j]) for every j >= k, plus the best tail from j
        r = term(c, idx[k], idx) + nxt
        r[:k] = -np.inf
        return r

    def best_rows(c, nxt, chunk=512):
        out = np.empty(m)
        for lo in range(0, m, chunk):
            ks = np.arange(lo, min(lo + chunk, m))
            block = term(c, idx[ks][:, None], idx[None, :]) + nxt[None, :]
            block[idx[None, :] < idx[ks][:, None]] = -np.inf
            out[ks] = block.max(axis=1)
        return out

    # tail[c][k]: best contribution of classes c..NC17 when class c starts at candidate k
    tail = {4: term(4, idx, m + 1).astype(np.float64)}
    for c in (3, 2, 1):
        tail[c] = best_rows(c, tail[c + 1])
    total = term(0, 0, idx) + tail[1]
    k = int(np.flatnonzero(total >= total.max() - tie_tol)[0])
    chosen = [k]
    for c in (1, 2, 3):
        r = row(c, k, tail[c + 1])
        k = int(np.flatnonzero(r >= tail[c][k] - tie_tol)[0])
        chosen.append(k)
    return ThresholdModel(tuple(float(cands[k]) for k in chosen))


def threshold_f1(model: ThresholdModel, pairs: Sequence[tuple[float, Rating]]) -> float:
    return weighted_f1([int(y) for _, y in pairs], [int(model.predict(r)) for r, _ in pairs])


# -- linear SVM --------------------------------------------------------

class SvmFeaturizer:
    """Unigram+bigram counts (L2-normalized per document), genre and director indicators, emotions."""

    def __init__(self, lexicon: EmotionLexicon | None = None):
        self.lexicon = lexicon
        self.ngram_index: dict[str, int] = {}
        self.director_index: dict[str, int] = {}

    @staticmethod
    def ngrams(record: MovieRecord) -> Counter:
        counts: Counter[str] = Counter()
        for toks in utterance_tokens(record):
            counts.update(toks)
            counts.update(f"{a} {b}" for a, b in zip(toks, toks[1:]))
        return counts

    def fit(self, records: Sequence[MovieRecord]) -> "SvmFeaturizer":
        grams, directors = set(), set()
        for record in records:
            grams.update(self.ngrams(record))
            directors.update(record.directors)
        self.ngram_index = {g: i for i, g in enumerate(sorted(grams))}
        self.director_index = {d: i for i, d in enumerate(sorted(directors))}
        return self

    @property
    def dim(self) -> int:
        n_emo = 10 if self.lexicon is not None else 0
        return len(self.ngram_index) + len(GENRES) + len(self.director_index) + n_emo

    def transform(self, records: Sequence[MovieRecord]) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        off_genre = len(self.ngram_index)
        off_dir = off_genre + len(GENRES)
        off_emo = off_dir + len(self.director_index)
        for i, record in enumerate(records):
            counts = self.ngrams(record)
            known = [(self.ngram_index[g], c) for g, c in counts.items() if g in self.ngram_index]
            norm = np.sqrt(sum(c * c for _, c in known)) or 1.0
            for j, c in known:
                rows.append(i), cols.append(j), vals.append(c / norm)
            for g in record.genres:
                rows.append(i), cols.append(off_genre + g.index), vals.append(1.0)
            for d in record.directors:
                if d in self.director_index:
                    rows.append(i), cols.append(off_dir + self.director_index[d]), vals.append(1.0)
            if self.lexicon is not None:
                toks = [t for u in utterance_tokens(record) for t in u]
                for j, x in enumerate(emotion_vector(toks, self.lexicon)):
                    if x:
                        rows.append(i), cols.append(off_emo + j), vals.append(float(x))
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(records), self.dim))


@dataclass
class SvmModel:
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray  # (n_classes,)
    C: float
    featurizer: SvmFeaturizer | None = None

    def decision(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights.T) + self.bias

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision(X), axis=1)

    def predict_records(self, records: Sequence[MovieRecord]) -> np.ndarray:
        return self.predict(self.featurizer.transform(records))


def hinge_objective(w, b, X, y, lam) -> float:
    """lam/2 (|w|^2 + b^2) + mean hinge loss for labels in {-1, +1}."""
    margins = y * (np.asarray(X @ w).ravel() + b)
    return 0.5 * lam * (float(w @ w) + b * b) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def fit_binary_svm(X, y, lam: float, epochs: int, rng, batch_size: int = 32):
    """Mini-batch Pegasos subgradient descent; returns the iterate with the lowest objective.

    The bias acts as a weight on a constant feature, so it is shrunk and
    projected along with ``w``; an unregularized bias takes unbounded steps
    of size 1/(lam t) when C is large.  The start point w = 0, b = 0 is itself
    a candidate, so the returned objective never exceeds the zero-vector one.
    """
    n, dim = X.shape
    w, b = np.zeros(dim), 0.0
    best = (hinge_objective(w, b, X, y, lam), w.copy(), b)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            t += 1
            eta = 1.0 / (lam * (t + 1))
            Xb, yb = X[idx], y[idx]
            active = yb * (np.asarray(Xb @ w).ravel() + b) < 1.0
            w *= 1.0 - eta * lam
            b *= 1.0 - eta * lam
            if active.any():
                coef = yb[active] / len(idx)
                w += eta * np.asarray(Xb[active].T @ coef).ravel()
                b += eta * float(coef.sum())
            norm = np.sqrt(float(w @ w) + b * b)
            if norm > radius:
                w *= radius / norm
                b *= radius / norm
        obj = hinge_objective(w, b, X, y, lam)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    return best[1], best[2]


def svm_train(X, labels, C: float, epochs: int = 30, seed: int = 0) -> SvmModel:
    if X.shape[1] == 0:
        raise ValueError("feature dimension is 0")
    labels = np.asarray(labels, dtype=int)
    n = X.shape[0]
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    W = np.zeros((N_CLASSES, X.shape[1]))
    bias = np.zeros(N_CLASSES)
    for c in range(N_CLASSES):
        y = np.where(labels == c, 1.0, -1.0)
        W[c], bias[c] = fit_binary_svm(X, y, lam, epochs, rng)
    return SvmModel(W, bias, C)


def svm_fit(train: Sequence[MovieRecord], validation: Sequence[MovieRecord],
            C_grid: Sequence[float] = (1, 10, 100, 1000), lexicon: EmotionLexicon | None = None,
            epochs: int = 30, seed: int = 0) -> SvmModel:
    """Train one model per C and keep the best by validation weighted F1 (first on ties)."""
    if not C_grid:
        raise ValueError("C grid is empty")
    train = sorted(train, key=lambda r: r.id)  # order-independent given the seed
    feat = SvmFeaturizer(lexicon).fit(train)
    X, y = feat.transform(train), [int(r.rating) for r in train]
    Xv, yv = feat.transform(validation), [int(r.rating) for r in validation]
    best, best_f1 = None, -1.0
    for C in C_grid:
        model = svm_train(X, y, C, epochs=epochs, seed=seed)
        f1 = weighted_f1(yv, model.predict(Xv).tolist())
        log.info("svm C=%g validation weighted F1 %.4f", C, f1)
        if f1 > best_f1:
            best, best_f1 = model, f1
    best.featurizer = feat
    return best


# -- CNN encoder -------------------------------------------------------

@dataclass(frozen=True)
class CnnConfig:
    widths: tuple[int, ...] = (3, 4, 5)
    filters: int = 100


class CnnEncoder:
    """Valid 1-d convolutions of several widths, ReLU, global max pooling; replaces LSTM+attention."""

    def __init__(self, d_emb: int, widths=(3, 4, 5), filters: int = 100, rng=None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = tuple(widths)
        self.filters = filters
        self.W = []
        self.b = []
        for k in self.widths:
            bound = 1.0 / np.sqrt(k * d_emb)
            self.W.append(Parameter(f"conv{k}.W", rng.uniform(-bound, bound, (k * d_emb, filters)).astype(dtype)))
            self.b.append(Parameter(f"conv{k}.b", np.zeros(filters, dtype=dtype), decay=False))

    @property
    def out_dim(self) -> int:
        return self.filters * len(self.widths)

    def params(self) -> list[Parameter]:
        return [p for pair in zip(self.W, self.b) for p in pair]

    @staticmethod
    def windows(x: np.ndarray, k: int) -> np.ndarray:
        T, d = x.shape
        return np.lib.stride_tricks.sliding_window_view(x, (k, d)).reshape(T - k + 1, k * d)

    def encode(self, x: np.ndarray):
        if x.shape[0] < max(self.widths):
            raise ValueError(f"sequence of {x.shape[0]} tokens is shorter than kernel width {max(self.widths)}")
        pooled, cache = [], []
        for k, W, b in zip(self.widths, self.W, self.b):
            win = self.windows(x, k)
            act = np.maximum(win @ W.value + b.value, 0)
            arg = np.argmax(act, axis=0)
            pooled.append(act[arg, np.arange(self.filters)])
            cache.append((win, act, arg))
        return np.concatenate(pooled), None, cache

    def backward(self, dr: np.ndarray, cache) -> list[np.ndarray]:
        grads = []
        cols = np.arange(self.filters)
        for j, (win, act, arg) in enumerate(cache):
            dp = dr[j * self.filters:(j + 1) * self.filters]
            dconv = np.zeros_like(act)
            dconv[arg, cols] = dp * (act[arg, cols] > 0)
            grads.append(win.T @ dconv)
            grads.append(dconv.sum(axis=0))
        return grads


def cnn_forward(model, seq, emo, genre):
    """Probabilities of a classifier whose encoder is a ``CnnEncoder``."""
    if not isinstance(model.encoder, CnnEncoder):
        raise TypeError("model does not use the CNN encoder")
    probs, _ = model.forward(seq, emo, genre, mode="infer")
    return probs

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from oracles import threshold_brute_force
from synth import keyword_corpus
from scriptgauge.baselines import (CnnEncoder, SvmFeaturizer, ThresholdModel, fit_binary_svm, fit_thresholds,
                                   hinge_objective, svm_fit, svm_train, threshold_candidates, threshold_f1,
                                   threshold_predict)
from scriptgauge.corpus import Genre, MovieRecord, Rating
from scriptgauge.lexicon import EmotionLexicon
from scriptgauge.model import ModelConfig, RatingClassifier
from scriptgauge.text import Vocabulary, encode_sequence

# -- threshold model ---------------------------------------------------

T = ThresholdModel((0.1, 0.2, 0.3, 0.4))


def test_threshold_boundaries():
    assert threshold_predict(T, 0.0) is Rating.G
    assert threshold_predict(T, 1.0) is Rating.NC17
    assert threshold_predict(T, 0.2) is Rating.PG13
    assert threshold_predict(T, 0.1999) is Rating.PG


def test_threshold_model_requires_monotone():
    with pytest.raises(ValueError):
        ThresholdModel((0.2, 0.1, 0.3, 0.4))


@given(st.tuples(*[st.floats(0, 1)] * 4), st.floats(0, 1), st.floats(0, 1))
def test_threshold_predict_monotone(cuts, a, b):
    model = ThresholdModel(tuple(sorted(cuts)))
    lo, hi = min(a, b), max(a, b)
    assert threshold_predict(model, lo) <= threshold_predict(model, hi)


def test_candidates_are_midpoints_plus_ends():
    assert threshold_candidates([0.2, 0.1, 0.2, 0.4]).tolist() == pytest.approx([0.0, 0.15, 0.3, 1.0])


def test_separable_data_fits_perfectly():
    rng = np.random.default_rng(0)
    pairs = [(float(rng.uniform(c * 0.02 + 0.001, c * 0.02 + 0.019)), Rating(c)) for c in range(5) for _ in range(6)]
    model = fit_thresholds(pairs)
    assert all(model.predict(r) == y for r, y in pairs)
    assert threshold_f1(model, pairs) == 1.0


def test_fit_matches_enumeration_with_ties_and_missing_classes():
    rng = np.random.default_rng(42)
    for trial in range(15):
        n = int(rng.integers(1, 31))
        ratios = rng.choice(np.round(rng.uniform(0, 0.05, 6), 3), n)  # many duplicate ratios
        labels = rng.integers(0, 5, n) if trial % 3 else rng.integers(2, 4, n)
        model = fit_thresholds(list(zip(ratios, (Rating(int(y)) for y in labels))))
        best, best_tuple = threshold_brute_force(ratios, labels, threshold_candidates(ratios))
        assert threshold_f1(model, list(zip(ratios, labels))) == pytest.approx(best, abs=1e-12)
        assert model.thresholds == best_tuple


def test_fit_thresholds_rejects_empty():
    with pytest.raises(ValueError):
        fit_thresholds([])


# -- SVM ---------------------------------------------------------------

def test_binary_hinge_bound_and_two_class_toy():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(-2, 0.3, (20, 2)), rng.normal(2, 0.3, (20, 2))])
    labels = np.array([1] * 20 + [3] * 20)
    for C in (1, 10, 100, 1000):
        model = svm_train(sp.csr_matrix(X), labels, C, epochs=50, seed=0)
        assert (model.predict(X) == labels).all()
        y = np.where(labels == 1, 1.0, -1.0)
        lam = 1.0 / (C * len(X))
        w, b = fit_binary_svm(sp.csr_matrix(X), y, lam, 20, np.random.default_rng(0))
        assert hinge_objective(w, b, X, y, lam) <= hinge_objective(np.zeros(2), 0.0, X, y, lam)


def test_svm_zero_dimension_rejected():
    with pytest.raises(ValueError, match="dimension"):
        svm_train(sp.csr_matrix((3, 0)), [0, 1, 2], 1.0)


def test_svm_is_invariant_to_training_order():
    train = keyword_corpus(4, seed=3)
    valid = keyword_corpus(2, seed=4, prefix="v")
    shuffled = [train[i] for i in np.random.default_rng(5).permutation(len(train))]
    a = svm_fit(train, valid, (1, 10), epochs=10, seed=7)
    b = svm_fit(shuffled, valid, (1, 10), epochs=10, seed=7)
    Xv = a.featurizer.transform(valid)
    assert a.C == b.C and np.array_equal(a.decision(Xv), b.decision(b.featurizer.transform(valid)))


def test_svm_keyword_corpus_fits_training_set():
    train = keyword_corpus(6, seed=1)
    model = svm_fit(train, train, epochs=30)
    assert (model.predict_records(train) == [int(r.rating) for r in train]).all()


def test_featurizer_layout():
    a = MovieRecord("a", "t", ("Hello there", "general kenobi"), (Genre.SCI_FI,), ("Lucas",), Rating.PG)
    b = MovieRecord("b", "t", ("hello hello",), (Genre.DRAMA,), ("Other",), Rating.R)
    feat = SvmFeaturizer(EmotionLexicon({"hello": ["joy"]})).fit([a])
    assert "there general" not in feat.ngram_index  # bigrams never cross utterances
    assert {"hello there", "general kenobi"} <= set(feat.ngram_index)
    X = feat.transform([a, b]).toarray()
    n_grams = len(feat.ngram_index)
    assert X[0, :n_grams] @ X[0, :n_grams] == pytest.approx(1.0)
    assert X[0, n_grams + Genre.SCI_FI.index] == 1.0 and X[1, n_grams + Genre.DRAMA.index] == 1.0
    assert X[0, n_grams + 24] == 1.0 and X[1, n_grams + 24: n_grams + 25].sum() == 0  # unseen director
    assert X[1, -10 + 2] == 1.0  # joy share of "hello hello"
    assert X.shape[1] == feat.dim


# -- CNN ---------------------------------------------------------------

def cnn_model(seed=0, seq_len=12, d=4):
    vocab = Vocabulary([f"w{i}" for i in range(8)])
    emb = np.random.default_rng(seed).normal(size=(len(vocab), d))
    cfg = ModelConfig(seq_len=seq_len, d_emb=d, d_dense=4, encoder="cnn", cnn_widths=(3, 4, 5), cnn_filters=6,
                      dtype="float64", use_emotion=False, seed=seed)
    return RatingClassifier(cfg, vocab, emb), vocab


def test_cnn_zero_embeddings_give_bias_only_output():
    model, vocab = cnn_model()
    model.embedding[...] = 0.0
    genre = np.zeros(24)
    genre[3] = 1
    outs = []
    for toks in (["w1"] * 6, ["w2", "w3", "w4", "w5", "w6", "w7", "w2"]):
        x = model.embedding[encode_sequence(toks, vocab, 12).indices[: len(toks)]]
        pooled, _, _ = model.encoder.encode(x)
        assert np.array_equal(pooled, np.maximum(np.concatenate([b.value for b in model.encoder.b]), 0))
        outs.append(model.forward(encode_sequence(toks, vocab, 12), None, genre)[0])
    assert np.array_equal(outs[0], outs[1])


def test_cnn_translation_invariance():
    enc = CnnEncoder(3, (2, 3), 5, np.random.default_rng(1), np.float64)
    rng = np.random.default_rng(2)
    pattern = rng.normal(size=(3, 3)) * 5
    base = np.zeros((10, 3))
    a, b = base.copy(), base.copy()
    a[1:4] = pattern
    b[6:9] = pattern
    assert np.allclose(enc.encode(a)[0], enc.encode(b)[0], rtol=0, atol=1e-15)


def test_cnn_pad_extension_and_errors():
    short, vocab = cnn_model(seq_len=8)
    long, _ = cnn_model(seq_len=30)
    toks = ["w1", "w2", "w3", "w4", "w5", "w6"]
    genre = np.eye(24)[0]
    p1, _ = short.forward(encode_sequence(toks, vocab, 8), None, genre)
    p2, _ = long.forward(encode_sequence(toks, vocab, 30), None, genre)
    assert np.array_equal(p1, p2) and abs(p1.sum() - 1) < 1e-12
    with pytest.raises(ValueError, match="shorter than kernel width"):
        short.forward(encode_sequence(["w1", "w2"], vocab, 8), None, genre)

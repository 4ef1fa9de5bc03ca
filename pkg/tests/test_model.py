import math

import numpy as np
import pytest

from harness import full_model_check
from scriptgauge.corpus import Genre, MovieRecord, Rating
from scriptgauge.lexicon import EmotionLexicon
from scriptgauge.model import (CheckpointError, ConfigMismatchError, Example, LstmAttentionEncoder, ModelConfig,
                               RatingClassifier, TrainingDiverged, load_checkpoint, save_checkpoint, train)
from scriptgauge.text import TokenSequence, Vocabulary, encode_sequence

VOCAB = Vocabulary([f"w{i}" for i in range(10)])


def small_model(seed=0, seq_len=8, dtype="float64", **kw):
    rng = np.random.default_rng(seed + 1000)
    emb = rng.normal(size=(len(VOCAB), kw.pop("d_emb", 4)))
    cfg = ModelConfig(seq_len=seq_len, d_emb=emb.shape[1], d_hidden=kw.pop("d_hidden", 5),
                      d_dense=kw.pop("d_dense", 4), dtype=dtype, seed=seed, **kw)
    return RatingClassifier(cfg, VOCAB, emb, EmotionLexicon({"w2": ["joy"]}))


def example(model, tokens, label=0, seed=0):
    rng = np.random.default_rng(seed)
    seq = encode_sequence(tokens, VOCAB, model.config.seq_len)
    return Example(seq, rng.uniform(0, 0.3, 10), (rng.random(24) < 0.3).astype(float), label)


def random_examples(model, n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        T = int(rng.integers(1, model.config.seq_len + 1))
        out.append(example(model, [f"w{j}" for j in rng.integers(0, 10, T)], int(rng.integers(0, 5)), seed + i))
    return out


# -- forward -----------------------------------------------------------

def test_forward_output_contract(backend):
    model = small_model()
    for ex in random_examples(model, 20):
        probs, alpha = model.forward(ex.seq, ex.emotion, ex.genre)
        assert probs.shape == (5,) and (probs > 0).all() and abs(probs.sum() - 1) < 1e-12
        assert alpha.shape == (ex.seq.true_length,) and abs(alpha.sum() - 1) < 1e-12


def test_single_step_attention(backend):
    enc = LstmAttentionEncoder(3, 4, np.random.default_rng(0), np.float64)
    r, alpha, cache = enc.encode(np.random.default_rng(1).normal(size=(1, 3)))
    assert alpha.tolist() == [1.0]
    assert np.array_equal(r, cache[3][0])


def test_identical_hidden_states_give_uniform_attention(backend):
    enc = LstmAttentionEncoder(3, 4, np.random.default_rng(0), np.float64)
    for p in (enc.W_in, enc.W_rec, enc.b):  # zero-weight LSTM: every h_t is the same
        p.value[...] = 0.0
    x = np.tile(np.random.default_rng(2).normal(size=3), (7, 1))
    _, alpha, cache = enc.encode(x)
    assert np.ptp(cache[3], axis=0).max() == 0.0
    np.testing.assert_allclose(alpha, np.full(7, 1 / 7), rtol=0, atol=1e-15)


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_hand_set_two_step_lstm_matches_scalar_oracle(backend):
    d, H = 2, 2
    enc = LstmAttentionEncoder(d, H, np.random.default_rng(0), np.float64)
    enc.W_in.value[...] = np.array([[0.5, -0.3, 0.2, 0.1, 0.4, -0.2, 0.3, 0.6],
                                    [-0.1, 0.2, 0.7, -0.5, 0.05, 0.3, -0.4, 0.2]])
    enc.W_rec.value[...] = np.array([[0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, -0.8],
                                     [-0.2, 0.1, 0.3, -0.1, 0.2, 0.4, -0.5, 0.3]])
    enc.b.value[...] = [0.0, 0.1, 1.0, 1.0, -0.1, 0.2, 0.0, 0.05]
    enc.W_h.value[...] = [[0.3, -0.7], [0.9, 0.2]]
    enc.b_h.value[...] = [0.1, -0.2]
    enc.v.value[...] = [1.5, -0.5]
    x = [[1.0, -2.0], [0.5, 0.25]]
    r, alpha, _ = enc.encode(np.array(x))

    Wi, Wr, b = enc.W_in.value.tolist(), enc.W_rec.value.tolist(), enc.b.value.tolist()
    h, c, hs = [0.0, 0.0], [0.0, 0.0], []
    for t in range(2):
        pre = [sum(x[t][k] * Wi[k][j] for k in range(d)) + sum(h[k] * Wr[k][j] for k in range(H)) + b[j]
               for j in range(4 * H)]
        i = [_sig(pre[j]) for j in range(H)]
        f = [_sig(pre[H + j]) for j in range(H)]
        g = [math.tanh(pre[2 * H + j]) for j in range(H)]
        o = [_sig(pre[3 * H + j]) for j in range(H)]
        c = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
        h = [o[j] * math.tanh(c[j]) for j in range(H)]
        hs.append(h)
    Wh, bh, v = enc.W_h.value.tolist(), enc.b_h.value.tolist(), enc.v.value.tolist()
    scores = [sum(v[m] * math.tanh(sum(hs[t][k] * Wh[k][m] for k in range(H)) + bh[m]) for m in range(H))
              for t in range(2)]
    z = [math.exp(s) for s in scores]
    ref_alpha = [e / sum(z) for e in z]
    ref_r = [sum(ref_alpha[t] * hs[t][k] for t in range(2)) for k in range(H)]
    np.testing.assert_allclose(alpha, ref_alpha, rtol=0, atol=1e-14)
    np.testing.assert_allclose(r, ref_r, rtol=0, atol=1e-14)


def test_pad_extension_changes_nothing(backend):
    short, long = small_model(3, seq_len=6), small_model(3, seq_len=40)
    for s_ex, tokens in zip(random_examples(short, 15, seed=4), range(15)):
        toks = [VOCAB.itos[i] for i in s_ex.seq.indices[: s_ex.seq.true_length]]
        l_seq = encode_sequence(toks, VOCAB, 40)
        p1, a1 = short.forward(s_ex.seq, s_ex.emotion, s_ex.genre)
        p2, a2 = long.forward(l_seq, s_ex.emotion, s_ex.genre)
        assert (l_seq.indices[len(toks):] == 0).all() and len(a2) == len(toks)
        np.testing.assert_allclose(a1, a2, rtol=0, atol=1e-6)
        np.testing.assert_allclose(p1, p2, rtol=0, atol=1e-6)


def test_forward_rejects_mismatched_features_and_indices():
    model = small_model()
    ex = example(model, ["w1", "w2"])
    with pytest.raises(ConfigMismatchError):
        model.forward(ex.seq, None, ex.genre)
    bad = TokenSequence(np.array([99, 0, 0, 0, 0, 0, 0, 0]), 1)
    with pytest.raises(ConfigMismatchError):
        model.forward(bad, ex.emotion, ex.genre)


def test_float32_attention_sums_to_one(backend):
    model = small_model(dtype="float32", seq_len=30)
    for ex in random_examples(model, 30, seed=9):
        _, alpha = model.forward(ex.seq, ex.emotion, ex.genre)
        assert alpha.dtype == np.float32 and abs(float(alpha.sum()) - 1) <= 1e-6


# -- batch norm / dropout ----------------------------------------------

def test_batch_norm_normalizes_in_train_mode():
    model = small_model(5, d_dense=6)
    model.b1.value[...] = 50.0  # keep every unit in the linear part of the ReLU
    model.W1.value *= 10.0  # var(xhat) = var / (var + eps), so the batch needs var >> 0.1
    _, _, cache = model.forward_batch(random_examples(model, 16, seed=1), train=True, dropout=False)
    assert (cache.A1 > 0).all() and (cache.A1.var(axis=0) > 0.5).all()
    np.testing.assert_allclose(cache.xhat.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(cache.xhat.var(axis=0), 1.0, atol=1e-4)


def test_batch_norm_running_average_update():
    model = small_model(5)
    batch = random_examples(model, 6, seed=2)
    _, _, cache = model.forward_batch(batch, train=True, dropout=False)
    Y = np.maximum(cache.A1, 0)
    np.testing.assert_allclose(model.running_mean, 0.1 * Y.mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(model.running_var, 0.9 + 0.1 * Y.var(axis=0, ddof=1), atol=1e-15)


def test_infer_mode_is_deterministic_and_leaves_state():
    model = small_model(dropout_rate=0.5)
    batch = random_examples(model, 5)
    before = model.running_mean.copy()
    p1, _, _ = model.forward_batch(batch)
    p2, _, _ = model.forward_batch(batch)
    assert np.array_equal(p1, p2) and np.array_equal(before, model.running_mean)


def test_dropout_expectation_matches_no_dropout_logits():
    model = small_model(11, dropout_rate=0.5, d_dense=6)
    ex = example(model, ["w3", "w4", "w5"], seed=3)
    _, _, ref = model.forward_batch([ex], train=False, dropout=False)
    ref_logits = ref.D @ model.W2.value + model.b2.value
    samples = []
    for _ in range(10):
        _, _, cache = model.forward_batch([ex] * 1000, train=False, dropout=True)
        samples.append(cache.D @ model.W2.value + model.b2.value)
    logits = np.concatenate(samples)
    assert logits.shape[0] >= 10_000
    se = logits.std(axis=0, ddof=1) / math.sqrt(len(logits))
    assert (np.abs(logits.mean(axis=0) - ref_logits[0]) <= 3 * se).all()


# -- loss / backward ---------------------------------------------------

def test_l2_term_is_exactly_the_penalty():
    batch = None
    losses = {}
    for lam in (0.0, 0.3):
        model = small_model(2, l2_lambda=lam)
        batch = batch or random_examples(model, 4)
        probs, _, _ = model.forward_batch(batch)
        losses[lam] = model.loss(probs, [ex.label for ex in batch])
    weights = [p for p in model.params() if p.decay]
    assert {p.name for p in weights} == {"lstm.W_in", "lstm.W_rec", "att.W_h", "att.v", "dense1.W", "dense2.W"}
    penalty = sum(float(np.sum(p.value ** 2)) for p in weights)
    assert losses[0.3] - losses[0.0] == pytest.approx(0.3 * penalty, rel=0, abs=1e-13)


def test_empty_batch_rejected():
    model = small_model()
    with pytest.raises(ValueError):
        model.forward_batch([])
    with pytest.raises(ValueError):
        model.backward(None, [])


@pytest.mark.parametrize("train_bn", [False, True])
def test_full_model_grad_check_small_config(train_bn, backend):
    err, _ = full_model_check(0, train_bn, shape=(3, 4, 3))
    assert err < 1e-5


def test_cnn_variant_grad_check(backend):
    worst = max(full_model_check(seed, seed % 2 == 1, encoder="cnn")[0] for seed in range(10))
    assert worst < 1e-5


def test_threaded_batch_is_bitwise_identical(backend):
    results = []
    for threads in (1, 3):
        model = small_model(4, threads=threads)
        batch = random_examples(model, 7, seed=8)
        labels = [ex.label for ex in batch]
        model.zero_grad()
        probs, _, cache = model.forward_batch(batch, train=True, dropout=True)
        model.backward(cache, labels)
        results.append([probs] + [p.grad.copy() for p in model.params()])
    for a, b in zip(*results):
        assert np.array_equal(a, b)


# -- training ----------------------------------------------------------

def _train_pair(model, n=12, seed=0):
    return random_examples(model, n, seed), random_examples(model, 6, seed + 100)


def test_training_is_deterministic(backend):
    runs = []
    for _ in range(2):
        model = small_model(6, learning_rate=0.01, epochs=4, batch_size=4, dropout_rate=0.3, dtype="float32")
        res = train(model, _train_pair(model))
        runs.append((res.history, [p.value.copy() for p in model.params()]))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(a, b) for a, b in zip(runs[0][1], runs[1][1]))


def test_best_epoch_is_first_maximum():
    model = small_model(7, learning_rate=0.02, epochs=8, batch_size=4)
    res = train(model, _train_pair(model))
    f1s = [h.val_f1 for h in res.history]
    assert res.best_epoch == int(np.argmax(f1s)) + 1 and res.best_val_f1 == max(f1s)
    assert len(res.history) == 8


def test_divergence_guard():
    model = small_model(8, learning_rate=0.01, epochs=2)
    model.W2.value[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train(model, _train_pair(model))


# -- prediction --------------------------------------------------------

def record(i, script, rating=Rating.PG):
    return MovieRecord(f"r{i}", "t", (script,), (Genre.DRAMA,), (), rating)


def test_uniform_logits_model_predicts_uniform():
    model = small_model()
    model.W2.value[...] = 0.0
    model.b2.value[...] = 0.0
    for pred in model.predict([record(i, "w1 w2 w3 zz") for i in range(5)]):
        np.testing.assert_allclose(pred.probs, 0.2, rtol=0, atol=1e-15)


def test_argmax_invariant_under_logit_shift():
    model = small_model(3)
    records = [record(i, " ".join(f"w{j}" for j in range(i % 7 + 1))) for i in range(12)]
    before = [p.rating for p in model.predict(records)]
    model.b2.value += 17.0
    assert [p.rating for p in model.predict(records)] == before


def test_predict_rejects_tokenless_script():
    model = small_model()
    with pytest.raises(ValueError, match="no tokens"):
        model.predict([record(0, "... !!! --")])


# -- checkpoints -------------------------------------------------------

def test_checkpoint_round_trip_includes_optimizer(tmp_path):
    model = small_model(9, learning_rate=0.01, epochs=2, batch_size=4)
    train(model, _train_pair(model))
    save_checkpoint(model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.config == model.config and loaded.vocab == model.vocab and loaded.lexicon == model.lexicon
    for a, b in zip(model.params(), loaded.params()):
        assert a.value.dtype == b.value.dtype and np.array_equal(a.value, b.value)
    assert loaded.optimizer.t == model.optimizer.t
    assert all(np.array_equal(model.optimizer.m[k], loaded.optimizer.m[k]) for k in model.optimizer.m)


def test_truncated_and_corrupted_checkpoints(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "t.ckpt")
    flipped = bytearray(blob)
    flipped[100] ^= 0xFF
    (tmp_path / "c.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "c.ckpt")


def test_version_mismatch(tmp_path):
    import hashlib
    import struct
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = bytearray(path.read_bytes()[:-32])
    data[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(data) + hashlib.sha256(bytes(data)).digest())
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(path)


def test_feature_config_mismatch(tmp_path):
    model = small_model(use_genre=True)
    save_checkpoint(model, tmp_path / "m.ckpt")
    with pytest.raises(ConfigMismatchError, match="genre"):
        load_checkpoint(tmp_path / "m.ckpt", use_genre=False)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    ex = example(loaded, ["w1"])
    with pytest.raises(ConfigMismatchError):
        loaded.forward(ex.seq, ex.emotion, None)


# -- configuration -----------------------------------------------------

def test_config_text_round_trip_and_overrides():
    cfg = ModelConfig(seq_len=7, learning_rate=3e-4, use_genre=False, cnn_widths=(2, 3))
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    text = "L = 50\nlr = 0.001\nhidden = 32  # comment\ndropout = 0.4\nuse_emotion = false\n"
    parsed = ModelConfig.from_text(text, d_hidden=64)
    assert (parsed.seq_len, parsed.learning_rate, parsed.d_hidden, parsed.dropout_rate, parsed.use_emotion) == \
        (50, 0.001, 64, 0.4, False)
    with pytest.raises(ValueError, match="unknown config key"):
        ModelConfig.from_text("bogus = 1")


def test_defaults_follow_the_documented_setup():
    cfg = ModelConfig()
    assert (cfg.seq_len, cfg.d_emb, cfg.d_dense, cfg.batch_size, cfg.epochs) == (10000, 300, 128, 16, 200)
    assert (cfg.bn_momentum, cfg.bn_eps, cfg.clip_norm, cfg.l2_lambda) == (0.9, 1e-5, 5.0, 1e-4)
    enc = LstmAttentionEncoder(3, 2, np.random.default_rng(0), np.float64)
    assert enc.b.value.tolist() == [0, 0, 1, 1, 0, 0, 0, 0]


def test_floored_probability_contributes_no_gradient():
    model = small_model(seed=3, l2_lambda=0.0)
    batch = random_examples(model, 3, seed=3)
    model.W2.value[...] *= 0.0
    model.b2.value[...] = [-80.0, 0, 0, 0, 0]  # class 0 probability far below the floor
    for ex in batch:
        ex.label = 0
    model.zero_grad()
    _, _, cache = model.forward_batch(batch, train=False, dropout=False)
    model.backward(cache, [0, 0, 0], train_bn=False)
    assert not model.b2.grad.any() and not model.W2.grad.any() and not model.encoder.params()[0].grad.any()

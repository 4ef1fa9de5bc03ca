"""LSTM + additive-attention rating classifier with emotion/genre fusion.

Backward passes are written by hand per layer; ``numerics.grad_check``
verifies them in float64.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import io
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .corpus import DatasetSplit, MovieRecord, Rating
from .lexicon import EMOTIONS, EmotionLexicon, emotion_vector
from .numerics import PROB_FLOOR, Adam, Parameter, clip_global_norm, l2_penalty, spawn_rngs
from .text import GENRES, TokenSequence, Vocabulary, encode_sequence, genre_multi_hot, script_tokens

log = logging.getLogger(__name__)

N_EMOTIONS = len(EMOTIONS)
N_GENRES = len(GENRES)


class ConfigMismatchError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    seq_len: int = 10000
    d_emb: int = 300
    d_hidden: int = 256
    d_dense: int = 128
    n_classes: int = 5
    dropout_rate: float = 0.3
    learning_rate: float = 1e-5
    l2_lambda: float = 1e-4
    epochs: int = 200
    batch_size: int = 16
    use_emotion: bool = True
    use_genre: bool = True
    seed: int = 0
    min_count: int = 1
    clip_norm: float = 5.0
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    dtype: str = "float32"
    encoder: str = "lstm"
    cnn_widths: tuple = (3, 4, 5)
    cnn_filters: int = 100
    threads: int = 1

    ALIASES = {"L": "seq_len", "lr": "learning_rate", "dropout": "dropout_rate", "hidden": "d_hidden"}

    def __post_init__(self):
        self.cnn_widths = tuple(int(w) for w in self.cnn_widths)
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if min(self.seq_len, self.d_emb, self.d_hidden, self.d_dense, self.batch_size) < 1:
            raise ValueError("dimensions and batch size must be positive")
        if self.n_classes != len(Rating):
            raise ValueError(f"n_classes must be {len(Rating)}")
        if self.dtype not in ("float32", "float64", "longdouble"):
            raise ValueError(f"dtype must be float32, float64 or longdouble, got {self.dtype!r}")
        if self.encoder not in ("lstm", "cnn"):
            raise ValueError(f"unknown encoder {self.encoder!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}\n")
        return "".join(lines)

    @classmethod
    def parse_items(cls, items: dict[str, str]) -> dict:
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        out = {}
        for raw_key, raw in items.items():
            key = cls.ALIASES.get(raw_key, raw_key)
            if key not in types:
                raise ValueError(f"unknown config key {raw_key!r}")
            default = getattr(defaults, key)
            raw = raw.strip()
            if isinstance(default, bool):
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"{key}: expected a boolean, got {raw!r}")
                out[key] = raw.lower() in ("true", "1", "yes")
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            elif isinstance(default, tuple):
                out[key] = tuple(int(x) for x in raw.split(",") if x.strip())
            else:
                out[key] = raw
        return out

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ModelConfig":
        items = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            items[key.strip()] = value
        values = cls.parse_items(items)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


@dataclass
class Example:
    """Model-ready features of one movie."""
    seq: TokenSequence
    emotion: np.ndarray | None
    genre: np.ndarray | None
    label: int = -1
    id: str = ""


def attention_weights(hidden: np.ndarray, W_h: np.ndarray, b_h: np.ndarray, v: np.ndarray,
                      mask: np.ndarray | None = None) -> np.ndarray:
    """alpha = softmax(v . tanh(W_h h_i + b_h)) over rows of ``hidden``; masked rows get 0."""
    scores = np.tanh(hidden @ W_h + b_h) @ v
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    scores = np.where(mask, scores, -np.inf)
    e = np.where(mask, np.exp(scores - scores[mask].max()), 0.0)
    return e / e.sum()


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class LstmAttentionEncoder:
    """Single-layer unidirectional LSTM followed by additive attention pooling."""

    def __init__(self, d_emb: int, d_hidden: int, rng, dtype):
        H = d_hidden
        self.H = H
        b = np.zeros(4 * H, dtype=dtype)
        b[H:2 * H] = 1.0  # forget gate
        self.W_in = Parameter("lstm.W_in", _uniform(rng, d_emb, (d_emb, 4 * H), dtype))
        self.W_rec = Parameter("lstm.W_rec", _uniform(rng, H, (H, 4 * H), dtype))
        self.b = Parameter("lstm.b", b, decay=False)
        self.W_h = Parameter("att.W_h", _uniform(rng, H, (H, H), dtype))
        self.b_h = Parameter("att.b_h", np.zeros(H, dtype=dtype), decay=False)
        self.v = Parameter("att.v", _uniform(rng, H, (H,), dtype))

    @property
    def out_dim(self) -> int:
        return self.H

    def params(self) -> list[Parameter]:
        return [self.W_in, self.W_rec, self.b, self.W_h, self.b_h, self.v]

    def encode(self, x: np.ndarray):
        T, H = x.shape[0], self.H
        dtype = self.W_in.value.dtype
        xproj = np.ascontiguousarray(x @ self.W_in.value + self.b.value, dtype=dtype)
        gates = np.empty((T, 4 * H), dtype=dtype)
        cells = np.empty((T, H), dtype=dtype)
        hidden = np.empty((T, H), dtype=dtype)
        kernels.for_dtype(dtype).lstm_forward(xproj, np.ascontiguousarray(self.W_rec.value), gates, cells, hidden)
        u = np.tanh(hidden @ self.W_h.value + self.b_h.value)
        scores = u @ self.v.value
        e = np.exp(scores - scores.max())
        alpha = e / e.sum()
        r = alpha @ hidden
        return r, alpha, (x, gates, cells, hidden, u, alpha)

    def backward(self, dr: np.ndarray, cache) -> list[np.ndarray]:
        x, gates, cells, hidden, u, alpha = cache
        dalpha = hidden @ dr
        dhidden = np.outer(alpha, dr)
        dscores = alpha * (dalpha - alpha @ dalpha)
        dv = u.T @ dscores
        dz = np.outer(dscores, self.v.value) * (1.0 - u * u)
        dW_h = hidden.T @ dz
        db_h = dz.sum(axis=0)
        dhidden += dz @ self.W_h.value.T
        dpre = np.empty_like(gates)
        kernels.for_dtype(gates.dtype).lstm_backward(
            np.ascontiguousarray(self.W_rec.value), gates, cells,
            np.ascontiguousarray(dhidden, dtype=gates.dtype), dpre)
        dW_in = x.T @ dpre
        db = dpre.sum(axis=0)
        dW_rec = hidden[:-1].T @ dpre[1:]
        return [dW_in, dW_rec, db, dW_h, db_h, dv]


def make_encoder(config: ModelConfig, rng):
    if config.encoder == "lstm":
        return LstmAttentionEncoder(config.d_emb, config.d_hidden, rng, config.np_dtype)
    from .baselines import CnnEncoder
    return CnnEncoder(config.d_emb, config.cnn_widths, config.cnn_filters, rng, config.np_dtype)


@dataclass
class BatchCache:
    encoder_caches: list
    Z: np.ndarray
    A1: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    mask: np.ndarray
    D: np.ndarray
    probs: np.ndarray


@dataclass
class Prediction:
    id: str
    rating: Rating
    probs: np.ndarray
    attention: np.ndarray | None
    tokens: list[str] = field(default_factory=list)


class RatingClassifier:
    """Embedding (frozen) -> encoder -> [r | emotion | genre] -> dense/ReLU -> BN -> dropout -> softmax."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, embedding: np.ndarray,
                 lexicon: EmotionLexicon | None = None):
        if embedding.shape != (len(vocab), config.d_emb):
            raise ConfigMismatchError(
                f"embedding shape {embedding.shape} does not match vocabulary size {len(vocab)} x d_emb {config.d_emb}")
        if config.use_emotion and lexicon is None:
            raise ConfigMismatchError("use_emotion requires an emotion lexicon")
        self.config = config
        self.vocab = vocab
        self.lexicon = lexicon if config.use_emotion else None
        dtype = config.np_dtype
        self.embedding = np.array(embedding, dtype=dtype)
        self.embedding[0] = 0.0
        init_rng, self.dropout_rng = spawn_rngs(config.seed, 2)
        self.encoder = make_encoder(config, init_rng)
        F = self.fusion_dim
        D, C = config.d_dense, config.n_classes
        self.W1 = Parameter("dense1.W", _uniform(init_rng, F, (F, D), dtype))
        self.b1 = Parameter("dense1.b", np.zeros(D, dtype=dtype), decay=False)
        self.gamma = Parameter("bn.gamma", np.ones(D, dtype=dtype), decay=False)
        self.beta = Parameter("bn.beta", np.zeros(D, dtype=dtype), decay=False)
        self.W2 = Parameter("dense2.W", _uniform(init_rng, D, (D, C), dtype))
        self.b2 = Parameter("dense2.b", np.zeros(C, dtype=dtype), decay=False)
        self.running_mean = np.zeros(D, dtype=dtype)
        self.running_var = np.ones(D, dtype=dtype)
        self.optimizer: Adam | None = None

    # -- structure -----------------------------------------------------

    @property
    def fusion_dim(self) -> int:
        c = self.config
        return self.encoder.out_dim + N_EMOTIONS * c.use_emotion + N_GENRES * c.use_genre

    def params(self) -> list[Parameter]:
        return self.encoder.params() + [self.W1, self.b1, self.gamma, self.beta, self.W2, self.b2]

    def buffers(self) -> dict[str, np.ndarray]:
        return {"bn.running_mean": self.running_mean, "bn.running_var": self.running_var}

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    # -- features ------------------------------------------------------

    def featurize(self, record: MovieRecord, tokens: list[str] | None = None) -> Example:
        tokens = script_tokens(record) if tokens is None else tokens
        if not tokens:
            raise ValueError(f"record {record.id!r}: script has no tokens")
        seq = encode_sequence(tokens, self.vocab, self.config.seq_len)
        emo = emotion_vector(tokens, self.lexicon) if self.config.use_emotion else None
        genre = genre_multi_hot(record.genres) if self.config.use_genre else None
        return Example(seq, emo, genre, int(record.rating), record.id)

    def check_features(self, has_emotion: bool, has_genre: bool) -> None:
        c = self.config
        if c.use_emotion != has_emotion or c.use_genre != has_genre:
            raise ConfigMismatchError(
                f"model expects emotion={c.use_emotion}, genre={c.use_genre}; "
                f"pipeline provides emotion={has_emotion}, genre={has_genre}")

    # -- forward / backward --------------------------------------------

    def _embed(self, seq: TokenSequence) -> np.ndarray:
        if seq.true_length < 1:
            raise ValueError("sequence has no tokens")
        idx = seq.indices[: seq.true_length]
        if idx.max() >= len(self.vocab):
            raise ConfigMismatchError("sequence index outside the model vocabulary")
        return self.embedding[idx]

    def _fusion_input(self, R: np.ndarray, batch: Sequence[Example]) -> np.ndarray:
        parts = [R]
        c = self.config
        for ex in batch:
            self.check_features(ex.emotion is not None, ex.genre is not None)
        if c.use_emotion:
            parts.append(np.stack([ex.emotion for ex in batch]).astype(R.dtype))
        if c.use_genre:
            parts.append(np.stack([ex.genre for ex in batch]).astype(R.dtype))
        return np.concatenate(parts, axis=1)

    def _map(self, fn, items):
        if self.config.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.config.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def forward_batch(self, batch: Sequence[Example], train: bool = False,
                      dropout: bool | None = None) -> tuple[np.ndarray, list, BatchCache]:
        """Class probabilities (B, C), per-example attention, and the backward cache.

        ``train`` selects batch statistics in batch norm and updates the running
        averages; ``dropout`` defaults to ``train``.
        """
        if not batch:
            raise ValueError("empty batch")
        c = self.config
        dropout = train if dropout is None else dropout
        encoded = self._map(lambda ex: self.encoder.encode(self._embed(ex.seq)), list(batch))
        R = np.stack([e[0] for e in encoded])
        attention = [e[1] for e in encoded]
        Z = self._fusion_input(R, batch)
        A1 = Z @ self.W1.value + self.b1.value
        Y = np.maximum(A1, 0)
        if train:
            mu = Y.mean(axis=0)
            var = Y.var(axis=0)
            m = c.bn_momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mu
            unbiased = var * len(batch) / (len(batch) - 1) if len(batch) > 1 else var
            self.running_var[...] = m * self.running_var + (1 - m) * unbiased
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + c.bn_eps)
        xhat = (Y - mu) * inv_std
        O = self.gamma.value * xhat + self.beta.value
        if dropout and c.dropout_rate > 0:
            keep = 1.0 - c.dropout_rate
            mask = (self.dropout_rng.random(O.shape) < keep).astype(O.dtype) / O.dtype.type(keep)
        else:
            mask = np.ones_like(O)
        D = O * mask
        logits = D @ self.W2.value + self.b2.value
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        cache = BatchCache([e[2] for e in encoded], Z, A1, xhat, inv_std, mask, D, probs)
        return probs, attention, cache

    def loss(self, probs: np.ndarray, labels: Sequence[int]) -> float:
        acc = np.promote_types(probs.dtype, np.float64)
        picked = probs[np.arange(len(labels)), labels].astype(acc)
        ce = np.mean(-np.log(np.maximum(picked, acc.type(PROB_FLOOR))))
        return ce + acc.type(self.config.l2_lambda) * l2_penalty(self.params(), acc)

    def backward(self, cache: BatchCache, labels: Sequence[int], train_bn: bool = True) -> None:
        """Accumulate gradients of mean cross-entropy + L2 into every parameter."""
        B = len(labels)
        if B == 0:
            raise ValueError("backward on an empty batch")
        lam = self.config.l2_lambda
        dlogits = cache.probs.copy()
        dlogits[np.arange(B), labels] -= 1.0
        # below the floor the loss term is constant, so it contributes no gradient
        dlogits[cache.probs[np.arange(B), labels] < PROB_FLOOR] = 0.0
        dlogits /= B
        self.W2.grad += cache.D.T @ dlogits
        self.b2.grad += dlogits.sum(axis=0)
        dO = (dlogits @ self.W2.value.T) * cache.mask
        self.gamma.grad += (dO * cache.xhat).sum(axis=0)
        self.beta.grad += dO.sum(axis=0)
        dxhat = dO * self.gamma.value
        if train_bn:
            dY = cache.inv_std / B * (B * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
        else:
            dY = dxhat * cache.inv_std
        dA1 = dY * (cache.A1 > 0)
        self.W1.grad += cache.Z.T @ dA1
        self.b1.grad += dA1.sum(axis=0)
        dR = (dA1 @ self.W1.value.T)[:, : self.encoder.out_dim]
        grads = self._map(lambda item: self.encoder.backward(*item), list(zip(dR, cache.encoder_caches)))
        enc_params = self.encoder.params()
        for g in grads:  # fixed order keeps the reduction deterministic
            for p, gp in zip(enc_params, g):
                p.grad += gp
        if lam:
            for p in self.params():
                if p.decay:
                    p.grad += 2.0 * lam * p.value

    # -- inference -----------------------------------------------------

    def forward(self, seq: TokenSequence, emotion=None, genre=None, mode: str = "infer"):
        """Single-example forward: (probabilities, attention weights over real tokens)."""
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        probs, attention, _ = self.forward_batch([Example(seq, emotion, genre)], train=(mode == "train"))
        return probs[0], attention[0]

    def predict_examples(self, examples: Sequence[Example], batch_size: int = 64):
        out = []
        for i in range(0, len(examples), batch_size):
            probs, attention, _ = self.forward_batch(examples[i:i + batch_size], train=False)
            out.extend(zip(probs, attention))
        return out

    def predict(self, records: Sequence[MovieRecord]) -> list[Prediction]:
        tokens = [script_tokens(r) for r in records]
        examples = [self.featurize(r, t) for r, t in zip(records, tokens)]
        preds = []
        for record, toks, (probs, att) in zip(records, tokens, self.predict_examples(examples)):
            preds.append(Prediction(record.id, Rating(int(np.argmax(probs))), probs, att,
                                    toks[: self.config.seq_len]))
        return preds

    # -- state ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {p.name: p.value for p in self.params()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {p.name: p.value for p in self.params()}
        own.update(self.buffers())
        for name, target in own.items():
            if name not in state:
                raise ConfigMismatchError(f"checkpoint lacks tensor {name!r}")
            src = np.asarray(state[name])
            if src.size != target.size:
                raise ConfigMismatchError(f"tensor {name!r}: size {src.size} != expected {target.size}")
            target[...] = src.reshape(target.shape)


# -- training ----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float


@dataclass
class TrainResult:
    model: RatingClassifier
    best_epoch: int
    best_val_f1: float
    history: list[EpochRecord]


def make_batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        # a singleton batch has zero variance under batch norm
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def train_step(model: RatingClassifier, batch: Sequence[Example]) -> float:
    labels = [ex.label for ex in batch]
    model.zero_grad()
    probs, _, cache = model.forward_batch(batch, train=True)
    loss = model.loss(probs, labels)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss}")
    model.backward(cache, labels)
    clip_global_norm(model.params(), model.config.clip_norm)
    model.optimizer.step()
    return loss


def train(model: RatingClassifier, split: DatasetSplit | tuple, config: ModelConfig | None = None,
          stop_at: float | None = None, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train with Adam and keep the epoch with the best validation weighted F1 (earliest on ties).

    ``split`` is a ``DatasetSplit`` of records or a pair of already featurized
    (train, validation) example lists.  ``stop_at`` ends training early once
    validation F1 reaches that value.
    """
    from .evaluation import weighted_f1

    config = config or model.config
    if isinstance(split, DatasetSplit):
        train_ex = [model.featurize(r) for r in split.train]
        val_ex = [model.featurize(r) for r in split.validation]
    else:
        train_ex, val_ex = split
    if not train_ex or not val_ex:
        raise ValueError("training and validation sets must be non-empty")
    shuffle_rng = spawn_rngs(config.seed, 3)[2]
    model.optimizer = Adam(model.params(), lr=config.learning_rate)
    val_gold = [ex.label for ex in val_ex]
    best_f1, best_epoch, best_state = -1.0, -1, None
    history = []
    for epoch in range(1, config.epochs + 1):
        losses, sizes = [], []
        for idx in make_batches(len(train_ex), config.batch_size, shuffle_rng):
            losses.append(train_step(model, [train_ex[i] for i in idx]))
            sizes.append(len(idx))
        preds = [int(np.argmax(p)) for p, _ in model.predict_examples(val_ex)]
        val_f1 = weighted_f1(val_gold, preds)
        rec = EpochRecord(epoch, float(np.average(losses, weights=sizes)), val_f1)
        history.append(rec)
        log.info("epoch %d loss %.6f val_f1 %.4f", epoch, rec.train_loss, val_f1)
        if on_epoch:
            on_epoch(rec)
        if val_f1 > best_f1:
            best_f1, best_epoch = val_f1, epoch
            best_state = copy.deepcopy(model.state_dict())
        if stop_at is not None and val_f1 >= stop_at:
            break
    model.load_state_dict(best_state)
    return TrainResult(model, best_epoch, best_f1, history)


# -- checkpoints -------------------------------------------------------

MAGIC = b"SGAUGECK"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _tensor_block(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"tensor {name!r}: dtype {arr.dtype} cannot be stored (float32/float64 only)")
        rows, cols = (1, arr.size) if arr.ndim <= 1 else arr.shape
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<BII", code, rows, cols))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return buf.getvalue()


def _read_tensors(payload: bytes) -> dict[str, np.ndarray]:
    (count,) = struct.unpack_from("<I", payload, 0)
    pos, out = 4, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos:pos + n].decode("utf-8")
        pos += n
        code, rows, cols = struct.unpack_from("<BII", payload, pos)
        pos += 9
        dt = _DTYPES[code]
        size = rows * cols * dt.itemsize
        out[name] = np.frombuffer(payload[pos:pos + size], dtype=dt).reshape(rows, cols).copy()
        pos += size
    return out


def save_checkpoint(model: RatingClassifier, path) -> None:
    """Write config, vocabulary, lexicon and all tensors; trailing SHA-256 over the rest."""
    tensors = {"embedding": model.embedding}
    tensors.update(model.state_dict())
    if model.optimizer is not None:
        tensors.update(model.optimizer.state())
        tensors["adam.t"] = np.array([model.optimizer.t], dtype=np.float64)
    body = io.BytesIO()
    body.write(MAGIC + struct.pack("<I", FORMAT_VERSION))
    body.write(_section(b"CONF", model.config.to_text().encode("utf-8")))
    body.write(_section(b"VOCB", model.vocab.dumps().encode("utf-8")))
    if model.lexicon is not None:
        body.write(_section(b"LEXN", model.lexicon.dumps().encode("utf-8")))
    body.write(_section(b"TENS", _tensor_block(tensors)))
    data = body.getvalue()
    Path(path).write_bytes(data + hashlib.sha256(data).digest())


def load_checkpoint(path, use_emotion: bool | None = None, use_genre: bool | None = None) -> RatingClassifier:
    """Read a checkpoint; optional feature flags are checked against the stored config."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: checksum mismatch (file truncated)")
    data, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(data).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupted or truncated)")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a scriptgauge checkpoint")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    pos, sections = len(MAGIC) + 4, {}
    while pos < len(data):
        tag = data[pos:pos + 4]
        (n,) = struct.unpack_from("<Q", data, pos + 4)
        sections[tag] = data[pos + 12:pos + 12 + n]
        pos += 12 + n
    config = ModelConfig.from_text(sections[b"CONF"].decode("utf-8"))
    if use_emotion is not None and use_emotion != config.use_emotion or \
            use_genre is not None and use_genre != config.use_genre:
        raise ConfigMismatchError(
            f"checkpoint expects emotion={config.use_emotion}, genre={config.use_genre}; "
            f"pipeline provides emotion={use_emotion}, genre={use_genre}")
    vocab = Vocabulary.loads(sections[b"VOCB"].decode("utf-8"))
    lexicon = EmotionLexicon.loads(sections[b"LEXN"].decode("utf-8")) if b"LEXN" in sections else None
    tensors = _read_tensors(sections[b"TENS"])
    model = RatingClassifier(config, vocab, tensors["embedding"], lexicon)
    model.load_state_dict(tensors)
    adam = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    if adam:
        model.optimizer = Adam(model.params(), lr=config.learning_rate)
        model.optimizer.t = int(adam["adam.t"][0, 0])
        for p in model.params():
            model.optimizer.m[p.name][...] = adam[f"adam.m.{p.name}"].reshape(p.value.shape)
            model.optimizer.v[p.name][...] = adam[f"adam.v.{p.name}"].reshape(p.value.shape)
    return model

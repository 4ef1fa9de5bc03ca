"""Small numerical substrate: parameters, stable softmax, loss, Adam and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    decay: bool = True  # included in the L2 penalty

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: gradient shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over positions where ``mask`` is true; masked positions get exactly 0."""
    scores = np.where(mask, scores, -np.inf)
    top = np.max(scores, axis=-1, keepdims=True)
    e = np.where(mask, np.exp(scores - top), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, gold: int) -> float:
    return float(-np.log(max(float(probs[gold]), PROB_FLOOR)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def l2_penalty(params: Sequence[Parameter], dtype=np.float64):
    """Sum of squared entries of the decayed (weight) parameters."""
    total = dtype(0) if isinstance(dtype, type) else np.dtype(dtype).type(0)
    for p in params:
        if p.decay:
            v = p.value.astype(dtype)
            total += np.sum(v * v)
    return total


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    total = float(np.sqrt(sum(np.sum(p.grad.astype(np.float64) ** 2) for p in params)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p in self.params:
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.value -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.value.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent counter-based (Philox) streams derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a, dtype=np.longdouble), np.asarray(n, dtype=np.longdouble)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(f: Callable[[], float], params: Sequence[Parameter], h: float = 1e-5,
               compute_grads: Callable[[], None] | None = None,
               reference: Sequence[Parameter] | None = None) -> list[GradCheckResult]:
    """Compare analytic gradients in ``params[i].grad`` with central differences of ``f``.

    ``compute_grads``, when given, is called first to populate the gradients.
    ``f`` reads the values of ``reference`` (default: ``params`` themselves);
    pass a wider-precision twin there to keep the difference quotient's
    rounding noise, about ulp(f) / 2h, below the float64 gradients under test.
    """
    if compute_grads is not None:
        compute_grads()
    reference = params if reference is None else reference
    results = []
    for p, ref in zip(params, reference, strict=True):
        if p.value.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 parameters, {p.name} is {p.value.dtype}")
        if ref.value.shape != p.value.shape or np.finfo(ref.value.dtype).eps > np.finfo(np.float64).eps:
            raise TypeError(f"{ref.name}: reference must match shape and be at least float64")
        analytic = p.grad.astype(np.float64)
        flat = ref.value.reshape(-1)
        numeric = np.zeros(flat.size, dtype=ref.value.dtype)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
        numeric = numeric.reshape(p.value.shape)
        err = relative_error(analytic, numeric)
        if not err.size:
            results.append(GradCheckResult(p.name, 0.0, (), 0.0, 0.0))
            continue
        k = int(np.argmax(err))
        idx = tuple(int(x) for x in np.unravel_index(k, err.shape))
        results.append(GradCheckResult(p.name, float(err.max()), idx,
                                       float(analytic.reshape(-1)[k]), float(numeric.reshape(-1)[k])))
    return results

"""Minimal dense reverse-mode differentiation on top of numpy.

A :class:`Tape` records every differentiable op executed on it together
with a closure computing the op's vector-Jacobian product. Parameters live
in a :class:`ParamStore`; calling :meth:`Tape.backward` pushes gradients
into the store, and :func:`adam_step` consumes them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

DTYPES = {"float64": np.float64, "float32": np.float32}


class Tensor:
    """A value on the tape. ``grad`` is filled in by :meth:`Tape.backward`."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool = False):
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class ParamStore:
    """Named parameter matrices with gradient and Adam moment buffers."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, copy=True)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, value in self.params.items():
            out.add(name, value.astype(dtype))
        return out

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


def softmax_vec(a: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-D vector."""
    a = np.asarray(a, dtype=float)
    e = np.exp(a - a.max())
    return e / e.sum()


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class Tape:
    """Ordered record of differentiable ops.

    With ``grad=False`` nothing is recorded, which is what inference uses.
    """

    def __init__(self, grad: bool = True):
        self.grad_enabled = grad
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._leaves: list[tuple[Tensor, ParamStore, str]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    # leaves

    def constant(self, value) -> Tensor:
        return Tensor(np.asarray(value))

    def param(self, store: ParamStore, name: str) -> Tensor:
        t = Tensor(store.params[name], requires_grad=self.grad_enabled)
        if self.grad_enabled:
            self._leaves.append((t, store, name))
        return t

    def _record(self, value: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
        needs = self.grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(value, requires_grad=needs)
        if needs:
            self._nodes.append((out, parents, vjp))
        return out

    # ops

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        return self._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def affine(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
            raise ValueError(f"affine shape mismatch x{x.shape} W{w.shape} b{b.shape}")
        xv, wv = x.value, w.value
        return self._record(
            xv @ wv + b.value,
            (x, w, b),
            lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)),
        )

    def add(self, *xs: Tensor) -> Tensor:
        if len(xs) == 1:
            return xs[0]
        shape = xs[0].shape
        if any(x.shape != shape for x in xs):
            raise ValueError("add requires equal shapes")
        total = xs[0].value.copy()
        for x in xs[1:]:
            total += x.value
        return self._record(total, tuple(xs), lambda g: (g,) * len(xs))

    def leaky_relu(self, x: Tensor, alpha: float = 0.01) -> Tensor:
        if not 0.0 < alpha < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")
        slope = np.where(x.value > 0, 1.0, alpha).astype(x.value.dtype)
        return self._record(x.value * slope, (x,), lambda g: (g * slope,))

    def sigmoid(self, x: Tensor) -> Tensor:
        s = _stable_sigmoid(x.value)
        return self._record(s, (x,), lambda g: (g * s * (1.0 - s),))

    def softmax_rows(self, x: Tensor) -> Tensor:
        """Row-wise softmax; a 1×k row gives the vector softmax."""
        y = _softmax_rows(x.value)

        def vjp(g):
            return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

        return self._record(y, (x,), vjp)

    def concat(self, xs: Sequence[Tensor]) -> Tensor:
        """Column-wise concatenation."""
        widths = [x.shape[1] for x in xs]
        cuts = np.cumsum(widths)[:-1]
        value = np.concatenate([x.value for x in xs], axis=1)
        return self._record(value, tuple(xs), lambda g: tuple(np.split(g, cuts, axis=1)))

    def dropout(self, x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        if not training or p == 0.0:
            return x
        keep = (rng.random(x.shape) >= p).astype(x.value.dtype) / (1.0 - p)
        return self._record(x.value * keep, (x,), lambda g: (g * keep,))

    def spmm(self, a: sp.spmatrix, x: Tensor) -> Tensor:
        """Constant sparse matrix times a dense tensor."""
        at = a.T.tocsr()
        return self._record(np.asarray(a @ x.value), (x,), lambda g: (np.asarray(at @ g),))

    def mix(self, weights: Tensor, zs: Sequence[Tensor]) -> Tensor:
        """Per-row convex combination: ``sum_k weights[:, k] * zs[k]``."""
        w = weights.value
        if w.shape[1] != len(zs):
            raise ValueError("one weight column per mixed tensor required")
        zv = [z.value for z in zs]
        out = w[:, 0:1] * zv[0]
        for k in range(1, len(zv)):
            out = out + w[:, k : k + 1] * zv[k]

        def vjp(g):
            dw = np.stack([(g * z).sum(axis=1) for z in zv], axis=1)
            return (dw,) + tuple(w[:, k : k + 1] * g for k in range(len(zv)))

        return self._record(out, (weights, *zs), vjp)

    def sum(self, x: Tensor) -> Tensor:
        return self._record(np.asarray(x.value.sum()), (x,), lambda g: (np.full_like(x.value, g),))

    def cross_entropy(self, logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
        """Mean negative log-likelihood over the rows selected by ``mask``."""
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ValueError("cross_entropy: empty mask")
        z = logits.value[idx]
        y = np.asarray(labels)[idx].astype(np.int64)
        if y.min() < 0 or y.max() >= z.shape[1]:
            raise ValueError("cross_entropy: masked rows carry invalid labels")
        shifted = z - z.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(idx.size), y].mean()

        def vjp(g):
            d = np.exp(logp)
            d[np.arange(idx.size), y] -= 1.0
            full = np.zeros_like(logits.value)
            full[idx] = d * (g / idx.size)
            return (full,)

        return self._record(np.asarray(loss, dtype=logits.value.dtype), (logits,), vjp)

    # reverse pass

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into every store touched on this tape."""
        if not self._nodes or self._nodes[-1][0] is not loss:
            raise RuntimeError("backward() needs the loss to be the last recorded op; run forward first")
        if loss.value.size != 1:
            raise ValueError("loss must be a scalar")
        for node, _, _ in self._nodes:
            node.grad = None
        for leaf, _, _ in self._leaves:
            leaf.grad = None
        loss.grad = np.ones_like(loss.value)
        for out, parents, vjp in reversed(self._nodes):
            if out.grad is None:
                continue
            for parent, g in zip(parents, vjp(out.grad)):
                if not parent.requires_grad or g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        for leaf, store, name in self._leaves:
            if leaf.grad is not None:
                store.grads[name] += leaf.grad


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Bias-corrected Adam with L2 weight decay folded into the gradient."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = store.grads[name]
        if weight_decay:
            g = g + weight_decay * p
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def grad_check(
    fragment: Callable[[Tape, ParamStore], Tensor],
    store: ParamStore,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max relative error between backward() and central finite differences.

    ``fragment`` builds a scalar loss on the given tape from the store's
    parameters; it must be deterministic (reseed any rng inside it). The
    per-entry error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    store.zero_grad()
    tape = Tape()
    tape.backward(fragment(tape, store))
    analytic = {k: g.copy() for k, g in store.grads.items()}

    worst = 0.0
    for name, p in store.params.items():
        if p.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        flat = p.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fragment(Tape(grad=False), store).value)
            flat[i] = orig - h
            down = float(fragment(Tape(grad=False), store).value)
            flat[i] = orig
            num[i] = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        if flat.size:
            worst = max(worst, float(np.max(np.abs(a - num) / denom)))
    store.zero_grad()
    return worst

"""A small fully connected ReLU network with hand-written gradients.

Parameters are a list of ``(W, b)`` pairs with ``W`` of shape
``(fan_in, fan_out)``.  Hidden layers use ReLU, the output layer is linear.
"""

from __future__ import annotations

from typing import Callable, List, Sequence, Tuple

import numpy as np

from .errors import TrainingDiverged

Params = List[Tuple[np.ndarray, np.ndarray]]

ADAM_DEFAULTS = dict(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
SGD_DEFAULT_LR = 0.1


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> Params:
    """He-normal weights and zero biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params.append((w, np.zeros(fan_out)))
    return params


def forward(params: Params, x: np.ndarray):
    """Return ``(output, cache)``; ``cache`` holds each layer's input and pre-activation."""
    cache = []
    a = x
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = a @ w + b
        cache.append((a, z))
        a = z if i == last else np.maximum(z, 0.0)
    return a, cache


def backward(params: Params, cache, dout: np.ndarray) -> Params:
    grads = [None] * len(params)
    g = dout
    for i in range(len(params) - 1, -1, -1):
        a_in, z = cache[i]
        if i != len(params) - 1:
            g = g * (z > 0)
        w, _ = params[i]
        grads[i] = (a_in.T @ g, g.sum(axis=0))
        if i:
            g = g @ w.T
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Per-sample cross-entropy and its gradient w.r.t. the logits."""
    logp = log_softmax(logits)
    rows = np.arange(len(labels))
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return losses, grad


def squared_error(out: np.ndarray, target: np.ndarray):
    diff = out - target
    return np.sum(diff * diff, axis=1), 2.0 * diff


class Adam:
    def __init__(self, params: Params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t) for pair in params for t in pair]
        self.v = [np.zeros_like(t) for pair in params for t in pair]
        self.t = 0

    def step(self, params: Params, grads: Params, progress: float) -> Params:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        flat = [t for pair in params for t in pair]
        gflat = [g for pair in grads for g in pair]
        new = []
        for i, (p, g) in enumerate(zip(flat, gflat)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            new.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return list(zip(new[0::2], new[1::2]))


class SGD:
    """Plain SGD; the rate is divided by 10 at 50% and again at 75% of training."""

    def __init__(self, params: Params, lr=0.1):
        self.lr = lr

    def rate(self, progress: float) -> float:
        if progress >= 0.75:
            return self.lr / 100
        if progress >= 0.5:
            return self.lr / 10
        return self.lr

    def step(self, params: Params, grads: Params, progress: float) -> Params:
        lr = self.rate(progress)
        return [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(params, grads)]


def make_optimizer(name: str, params: Params, lr=None):
    if name == "adam":
        return Adam(params, lr=ADAM_DEFAULTS["lr"] if lr is None else lr)
    if name == "sgd":
        return SGD(params, lr=SGD_DEFAULT_LR if lr is None else lr)
    raise ValueError(f"unknown optimizer {name!r}")


# batch objective: (network output, row indices of the batch) -> (mean loss, d loss / d output)
Objective = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


def epoch_batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i : i + batch] for i in range(0, n, batch)]


def train(
    params: Params,
    x: np.ndarray,
    objective: Objective,
    epochs: int,
    batch: int,
    optimizer: str,
    lr,
    rng: np.random.Generator,
    batches=None,
):
    """Mini-batch training loop.

    ``batches(epoch)`` may supply the index batches for an epoch; by default
    rows are reshuffled with ``rng`` every epoch.  Returns the trained
    parameters and the per-epoch mean training loss.
    """
    opt = make_optimizer(optimizer, params, lr)
    history = []
    total_steps = 0
    for epoch in range(epochs):
        chunks = batches(epoch) if batches is not None else epoch_batches(len(x), batch, rng)
        epoch_loss, seen = 0.0, 0
        for k, idx in enumerate(chunks):
            out, cache = forward(params, x[idx])
            loss, dout = objective(out, idx)
            if not np.isfinite(loss) or not np.all(np.isfinite(dout)):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}, batch {k}", batch=total_steps)
            grads = backward(params, cache, dout)
            params = opt.step(params, grads, epoch / epochs)
            epoch_loss += loss * len(idx)
            seen += len(idx)
            total_steps += 1
        history.append(epoch_loss / seen)
    for w, b in params:
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise TrainingDiverged("non-finite parameters after training")
    return params, history


def flatten(params: Params) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params])

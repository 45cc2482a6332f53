"""Small dense networks with hand-written gradients, plus Adam and a
finite-difference gradient checker.

Everything here is plain numpy and single-threaded, so training is bitwise
reproducible for a fixed seed. Hidden layers use tanh; output layers are
linear and zero-initialized, which keeps initial predictions at zero and
makes class-indexed parameter slices symmetric at the start of training.
"""

from __future__ import annotations

import numpy as np


class MLP:
    """Feed-forward net: tanh hidden layers, linear output.

    Parameters are stored as a flat list [W0, b0, W1, b1, ...] with W of
    shape (out, in). Forward/backward operate on (batch, dim) arrays.
    """

    def __init__(
        self,
        sizes: list[int],
        rng: np.random.Generator | None = None,
        zero_input_cols: slice | None = None,
    ):
        self.sizes = list(sizes)
        self.params: list[np.ndarray] = []
        n_layers = len(sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            if rng is None or i == n_layers - 1:
                w = np.zeros((fan_out, fan_in))
            else:
                w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
            if i == 0 and zero_input_cols is not None:
                w[:, zero_input_cols] = 0.0
            self.params.append(w)
            self.params.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping per-layer activations for backward."""
        acts = [x]
        h = x
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ w.T + b
            if i < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], dy: np.ndarray):
        """Backpropagate dL/dy; returns (grads aligned with params, dL/dx)."""
        grads: list[np.ndarray] = [np.empty(0)] * len(self.params)
        n_layers = len(self.sizes) - 1
        delta = dy
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                delta = delta * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.params[2 * i]
        return grads, delta

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, params: list[np.ndarray]) -> None:
        for dst, src in zip(self.params, params):
            dst[...] = src


class Adam:
    """Adam over a list of arrays, with snapshot/restore for backtracking."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)

    def snapshot(self):
        if self.m is None:
            return (None, None, self.t)
        return ([m.copy() for m in self.m], [v.copy() for v in self.v], self.t)

    def restore(self, snap) -> None:
        m, v, t = snap
        self.m = None if m is None else [a.copy() for a in m]
        self.v = None if v is None else [a.copy() for a in v]
        self.t = t


def flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays]) if arrays else np.empty(0)


def assign_flat(arrays: list[np.ndarray], flat: np.ndarray) -> None:
    offset = 0
    for a in arrays:
        a[...] = flat[offset : offset + a.size].reshape(a.shape)
        offset += a.size


def max_relative_gradient_error(
    loss_fn,
    params: list[np.ndarray],
    analytic: list[np.ndarray],
    eps: float,
    n_coords: int = 60,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients to central differences at sampled coords.

    `loss_fn()` must be a deterministic function of `params` (the arrays are
    perturbed in place and restored). Relative error uses a 1e-5 floor so
    that float roundoff on near-zero coordinates does not register.
    """
    total = sum(p.size for p in params)
    if total == 0:
        return 0.0
    if rng is None:
        rng = np.random.default_rng(0x5EED)
    n = min(n_coords, total)
    coords = rng.choice(total, size=n, replace=False)
    flat_grad = flatten(analytic)

    worst = 0.0
    for c in coords:
        offset = 0
        for p in params:
            if c < offset + p.size:
                idx = np.unravel_index(c - offset, p.shape)
                orig = p[idx]
                p[idx] = orig + eps
                lo_hi = loss_fn()
                p[idx] = orig - eps
                lo_lo = loss_fn()
                p[idx] = orig
                numeric = (lo_hi - lo_lo) / (2.0 * eps)
                a = flat_grad[c]
                denom = max(abs(a), abs(numeric), 1e-5)
                worst = max(worst, abs(a - numeric) / denom)
                break
            offset += p.size
    return float(worst)


def descend(
    params: list[np.ndarray],
    run_epoch,
    eval_loss,
    epochs: int,
    learning_rate: float,
    divergence_cls,
) -> list[float]:
    """Generic epoch loop: Adam inside `run_epoch`, with loss backtracking.

    After each epoch the deterministic `eval_loss()` is compared with the
    previous value; on an increase the epoch is undone and the learning rate
    halved, so the recorded history never increases. Raises `divergence_cls`
    with the epoch index if the loss goes non-finite.
    """
    adam = Adam()
    lr = learning_rate
    loss = eval_loss()
    if not np.isfinite(loss):
        raise divergence_cls(0)
    history = [float(loss)]
    for epoch in range(epochs):
        saved = [p.copy() for p in params]
        opt_saved = adam.snapshot()
        run_epoch(epoch, adam, lr)
        loss = eval_loss()
        if not np.isfinite(loss):
            raise divergence_cls(epoch)
        if loss > history[-1] + 1e-12:
            for p, s in zip(params, saved):
                p[...] = s
            adam.restore(opt_saved)
            lr *= 0.5
            history.append(history[-1])
        else:
            history.append(float(loss))
    return history

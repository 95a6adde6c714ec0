"""Pure NumPy implementation of the dense-MLP kernels.

This is the reference backend. The compiled backend in ``_mlp_c.pyx``
implements the same functions with identical semantics; both operate on a
flat float64 parameter vector laid out layer by layer as

    W_0 (row-major fan_in x fan_out), b_0, W_1, b_1, ..., W_last, b_last

for the dimension chain ``dims = (input_dim, hidden..., num_classes)``.
Hidden activations are ReLU, the loss is mean softmax cross-entropy.
"""

from __future__ import annotations

import numpy as np


def _layer_offsets(dims: tuple[int, ...]) -> list[tuple[int, int, int, int]]:
    """Per layer: (weight offset, bias offset, fan_in, fan_out)."""
    out = []
    off = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        out.append((off, off + fan_in * fan_out, fan_in, fan_out))
        off += fan_in * fan_out + fan_out
    return out


def param_count(dims: tuple[int, ...]) -> int:
    return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


def _unpack(values: np.ndarray, dims: tuple[int, ...]):
    layers = []
    for w_off, b_off, fan_in, fan_out in _layer_offsets(dims):
        w = values[w_off : w_off + fan_in * fan_out].reshape(fan_in, fan_out)
        b = values[b_off : b_off + fan_out]
        layers.append((w, b))
    return layers


def _forward(values, dims, X):
    """Return (pre-activations z per layer, activations a per layer)."""
    layers = _unpack(values, dims)
    zs, acts = [], [X]
    a = X
    for idx, (w, b) in enumerate(layers):
        z = a @ w + b
        zs.append(z)
        a = np.maximum(z, 0.0) if idx < len(layers) - 1 else z
        acts.append(a)
    return zs, acts


def logits(values: np.ndarray, dims: tuple[int, ...], X: np.ndarray) -> np.ndarray:
    """Class scores for each row of X, shape (batch, num_classes)."""
    _, acts = _forward(values, dims, X)
    return acts[-1]


def _loss_from_logits(z: np.ndarray, y: np.ndarray) -> float:
    shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    picked = shift[np.arange(z.shape[0]), y]
    return float(np.mean(lse - picked))


def loss_value(values, dims, X, y) -> float:
    """Mean softmax cross-entropy of the batch."""
    return _loss_from_logits(logits(values, dims, X), y)


def loss_grad(values, dims, X, y):
    """Return (loss, gradient) with the gradient flattened like ``values``."""
    batch = X.shape[0]
    zs, acts = _forward(values, dims, X)
    z_out = zs[-1]
    shift = z_out - z_out.max(axis=1, keepdims=True)
    expz = np.exp(shift)
    probs = expz / expz.sum(axis=1, keepdims=True)
    lse = np.log(expz.sum(axis=1))
    loss = float(np.mean(lse - shift[np.arange(batch), y]))

    grad = np.zeros_like(values)
    layers = _unpack(values, dims)
    offsets = _layer_offsets(dims)

    # dL/dz at the output, then walk the layers backwards.
    dz = probs.copy()
    dz[np.arange(batch), y] -= 1.0
    dz /= batch
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        w_off, b_off, fan_in, fan_out = offsets[idx]
        a_prev = acts[idx]
        grad[w_off : w_off + fan_in * fan_out] = (a_prev.T @ dz).ravel()
        grad[b_off : b_off + fan_out] = dz.sum(axis=0)
        if idx > 0:
            da = dz @ w.T
            dz = da * (zs[idx - 1] > 0.0)
    return loss, grad


def sgd_steps_inplace(values, dims, X, y, eta, num_steps) -> float:
    """Run ``num_steps`` SGD steps on the same batch, mutating ``values``.

    Returns the loss evaluated before the first step.
    """
    first_loss = 0.0
    for step in range(num_steps):
        loss, grad = loss_grad(values, dims, X, y)
        if step == 0:
            first_loss = loss
        values -= eta * grad
    return first_loss

"""Small tanh MLP on flat parameter vectors, with hand-rolled backprop.

Hidden layers use tanh, the output layer is linear. Parameters live in a
single flat float64 vector; the layout is per layer (weight matrix
row-major, then bias), first layer first. Supports both a summed gradient
(value-function regression) and per-sample gradients (per-step policy
score vectors).
"""

from __future__ import annotations

import numpy as np

from . import linalg


class Mlp:
    def __init__(self, in_dim: int, out_dim: int, hidden: tuple[int, ...] = ()):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("in_dim and out_dim must be >= 1")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = tuple(int(h) for h in hidden)
        sizes = [in_dim, *self.hidden, out_dim]
        self.layer_dims = list(zip(sizes[1:], sizes[:-1]))  # (out, in) per layer
        self.num_params = sum(o * i + o for o, i in self.layer_dims)

    def init_params(self, rng: linalg.SeededRng, out_scale: float = 0.01,
                    hidden_gain: float = 1.0) -> np.ndarray:
        """Orthogonal-ish init: hidden layers scaled by hidden_gain, output
        layer by out_scale, biases zero."""
        chunks = []
        n_layers = len(self.layer_dims)
        for k, (o, i) in enumerate(self.layer_dims):
            g = rng.standard_normal((o, i))
            u, _, vt = np.linalg.svd(g, full_matrices=False)
            w = u @ vt  # orthonormal rows or columns, whichever is smaller
            scale = out_scale if k == n_layers - 1 else hidden_gain
            chunks.append((scale * w).ravel())
            chunks.append(np.zeros(o))
        return np.concatenate(chunks)

    def unflatten(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {theta.shape}")
        layers = []
        pos = 0
        for o, i in self.layer_dims:
            w = theta[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = theta[pos:pos + o]
            pos += o
            layers.append((w, b))
        return layers

    def flatten(self, layers) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])

    def forward(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Outputs for a batch x of shape (n, in_dim) or a single (in_dim,)."""
        out, _ = self.forward_cache(theta, x)
        return out

    def forward_cache(self, theta, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        layers = self.unflatten(theta)
        acts = [h]  # inputs of each layer
        for k, (w, b) in enumerate(layers):
            z = h @ w.T + b
            h = z if k == len(layers) - 1 else np.tanh(z)
            acts.append(h)
        out = h[0] if single else h
        return out, acts

    def grad_params(self, theta, cache, d_out: np.ndarray) -> np.ndarray:
        """Flat gradient summed over the batch, given d(loss)/d(output)."""
        layers = self.unflatten(theta)
        grads = [None] * len(layers)
        delta = np.asarray(d_out, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta[None, :]
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            h_in = cache[k]
            gw = delta.T @ h_in
            gb = delta.sum(axis=0)
            grads[k] = (gw, gb)
            if k > 0:
                delta = (delta @ w) * (1.0 - cache[k] ** 2)
        return self.flatten(grads)

    def per_sample_grads(self, theta, cache, d_out: np.ndarray) -> np.ndarray:
        """(n, num_params) gradients, one row per batch element."""
        layers = self.unflatten(theta)
        n = cache[0].shape[0]
        pieces = [None] * len(layers)
        delta = np.asarray(d_out, dtype=np.float64)
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            h_in = cache[k]
            gw = np.einsum("ni,nj->nij", delta, h_in).reshape(n, -1)
            pieces[k] = np.concatenate([gw, delta], axis=1)
            if k > 0:
                delta = (delta @ w) * (1.0 - cache[k] ** 2)
        return np.concatenate(pieces, axis=1)

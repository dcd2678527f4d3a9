"""Small numpy MLPs with hand-written reverse-mode gradients."""

from __future__ import annotations

import numpy as np


class Mlp:
    """Fully connected net, tanh hidden layers and a linear output.

    Parameters live in one flat vector (``params``); weights and biases are
    views into it, so optimizers and finite-difference checks can work on the
    flat vector directly.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None, params: np.ndarray | None = None,
                 out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        n = self.count(self.sizes)
        if params is None:
            params = np.zeros(n)
        elif params.shape != (n,):
            raise ValueError(f"parameter buffer has shape {params.shape}, need ({n},)")
        self.params = params
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.W.append(params[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            self.b.append(params[off:off + fan_out])
            off += fan_out
        if rng is not None:
            self.init(rng, out_scale)

    @staticmethod
    def count(sizes) -> int:
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def init(self, rng: np.random.Generator, out_scale: float = 1.0) -> None:
        for i, W in enumerate(self.W):
            scale = 1.0 / np.sqrt(W.shape[0])
            if i == len(self.W) - 1:
                scale *= out_scale
            W[...] = rng.normal(0.0, scale, size=W.shape)
            self.b[i][...] = 0.0

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray):
        """Return ``(y, cache)``; ``cache[-1]`` is the last hidden activation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_in:
            raise ValueError(f"input has {x.shape[1]} features, net expects {self.n_in}")
        acts = [x]
        h = x
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            h = z if i == last else np.tanh(z)
            if i != last:
                acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, grad_y: np.ndarray, grad_hidden: np.ndarray | None = None):
        """Gradients of a scalar whose partials w.r.t. the output are ``grad_y``.

        ``grad_hidden`` adds upstream gradient flowing into the last hidden
        activation. Returns ``(flat parameter gradient, input gradient)``.
        """
        grad = np.zeros_like(self.params)
        gW, gb = [], []
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            gW.append(grad[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            gb.append(grad[off:off + fan_out])
            off += fan_out
        g = np.atleast_2d(grad_y)
        for i in range(len(self.W) - 1, -1, -1):
            h_in = acts[i]
            gW[i][...] = h_in.T @ g
            gb[i][...] = g.sum(axis=0)
            g = g @ self.W[i].T
            if i > 0:
                if i == len(self.W) - 1 and grad_hidden is not None:
                    g = g + grad_hidden
                g = g * (1.0 - h_in * h_in)
        if grad_hidden is not None and len(self.W) == 1:
            raise ValueError("net has no hidden layer to receive grad_hidden")
        return grad, g


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, params: np.ndarray, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, max_grad_norm: float | None = 0.5):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.m = np.zeros_like(params)
        self.v = np.zeros_like(params)
        self.t = 0

    def step(self, grad: np.ndarray, ascent: bool = False) -> None:
        g = -grad if ascent else grad
        if self.max_grad_norm is not None:
            norm = float(np.linalg.norm(g))
            if norm > self.max_grad_norm:
                g = g * (self.max_grad_norm / norm)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        self.params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    def load_state_dict(self, d: dict) -> None:
        self.m = np.asarray(d["m"], dtype=float)
        self.v = np.asarray(d["v"], dtype=float)
        self.t = int(d["t"])

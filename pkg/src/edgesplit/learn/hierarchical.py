"""Layer-by-layer stochastic partition policy.

A shared encoder maps state features to an embedding; sub-network l reads
that embedding together with the previous sub-network's last hidden
activation ``e^(l-1)`` and emits H two-way head logits plus one three-way
FFN logit group. ``e^(0)`` is zero.
"""

from __future__ import annotations

import numpy as np

from .mlp import Mlp


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def gumbel_softmax_sample(logits: np.ndarray, tau: float, rng: np.random.Generator, hard: bool = True):
    """Gumbel-perturbed tempered softmax over the last axis.

    Returns ``(relaxed, symbol, log_prob)``. The discrete symbol is the
    argmax of the perturbed logits, so its law is ``softmax(logits)`` for any
    temperature; ``log_prob`` is taken under that categorical. With
    ``hard=False`` the symbol is still reported but the relaxed sample is the
    primary output.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=float)
    u = rng.random(logits.shape)
    g = -np.log(-np.log(np.clip(u, 1e-300, 1.0)))
    pert = logits + g
    relaxed = softmax(pert / tau)
    symbol = np.argmax(pert, axis=-1)
    logp = np.take_along_axis(log_softmax(logits), np.expand_dims(symbol, -1), axis=-1)[..., 0]
    return relaxed, symbol, logp


class HierarchicalPolicy:
    def __init__(self, n_features: int, L: int, H: int, hidden: int = 64, d_enc: int = 32, d_e: int = 16,
                 rng: np.random.Generator | None = None, out_scale: float = 0.01):
        self.n_features, self.L, self.H = n_features, L, H
        self.hidden, self.d_enc, self.d_e = hidden, d_enc, d_e
        self.n_logits = 2 * H + 3
        enc_sizes = [n_features, hidden, d_enc]
        sub_sizes = [d_enc + d_e, d_e, self.n_logits]
        n_enc, n_sub = Mlp.count(enc_sizes), Mlp.count(sub_sizes)
        self.params = np.zeros(n_enc + L * n_sub)
        self.encoder = Mlp(enc_sizes, params=self.params[:n_enc])
        self.subnets = [Mlp(sub_sizes, params=self.params[n_enc + i * n_sub:n_enc + (i + 1) * n_sub])
                        for i in range(L)]
        if rng is not None:
            self.encoder.init(rng)
            for s in self.subnets:
                s.init(rng, out_scale)

    @property
    def action_dim(self) -> int:
        return self.L * (self.H + 1)

    def config(self) -> dict:
        return dict(n_features=self.n_features, L=self.L, H=self.H, hidden=self.hidden,
                    d_enc=self.d_enc, d_e=self.d_e)

    def copy(self) -> "HierarchicalPolicy":
        p = HierarchicalPolicy(**self.config())
        p.params[:] = self.params
        return p

    # forward / log-probabilities

    def forward(self, feats: np.ndarray):
        """Per-layer logits, each of shape (batch, 2H+3), plus a backward cache."""
        feats = np.atleast_2d(feats)
        enc, enc_cache = self.encoder.forward(feats)
        e = np.zeros((enc.shape[0], self.d_e))
        logits, caches = [], []
        for sub in self.subnets:
            y, cache = sub.forward(np.concatenate([enc, e], axis=1))
            logits.append(y)
            caches.append(cache)
            e = cache[-1]
        return logits, (enc_cache, caches)

    def probabilities(self, feats: np.ndarray):
        """Per layer: (head probabilities (batch, H, 2), FFN probabilities (batch, 3))."""
        logits, _ = self.forward(feats)
        out = []
        for z in logits:
            heads = softmax(z[:, :2 * self.H].reshape(-1, self.H, 2))
            out.append((heads, softmax(z[:, 2 * self.H:])))
        return out

    def _groups(self, z: np.ndarray):
        return z[:, :2 * self.H].reshape(-1, self.H, 2), z[:, 2 * self.H:]

    def log_prob_entropy(self, logits, actions: np.ndarray):
        """Joint log-probability and summed group entropy of ``actions``.

        Also returns per-layer local gradients ``(dlogp/dz, dH/dz)``.
        """
        actions = np.atleast_2d(actions).astype(int)
        n = actions.shape[0]
        logp = np.zeros(n)
        ent = np.zeros(n)
        dlogp, dent = [], []
        acts = actions.reshape(n, self.L, self.H + 1)
        for l, z in enumerate(logits):
            zh, zf = self._groups(z)
            lh, lf = log_softmax(zh), log_softmax(zf)
            ph, pf = np.exp(lh), np.exp(lf)
            ah, af = acts[:, l, :self.H], acts[:, l, self.H]
            logp += np.take_along_axis(lh, ah[..., None], axis=2)[..., 0].sum(axis=1)
            logp += lf[np.arange(n), af]
            Hh = -(ph * lh).sum(axis=2)
            Hf = -(pf * lf).sum(axis=1)
            ent += Hh.sum(axis=1) + Hf
            gh = -ph.copy()
            np.put_along_axis(gh, ah[..., None], np.take_along_axis(gh, ah[..., None], axis=2) + 1.0, axis=2)
            gf = -pf.copy()
            gf[np.arange(n), af] += 1.0
            dlogp.append(np.concatenate([gh.reshape(n, -1), gf], axis=1))
            eh = -ph * (lh + Hh[..., None])
            ef = -pf * (lf + Hf[:, None])
            dent.append(np.concatenate([eh.reshape(n, -1), ef], axis=1))
        return logp, ent, dlogp, dent

    def backward(self, cache, grad_logits) -> np.ndarray:
        """Flat parameter gradient given gradients w.r.t. every layer's logits."""
        enc_cache, caches = cache
        grad = np.zeros_like(self.params)
        n_enc = Mlp.count(self.encoder.sizes)
        n_sub = Mlp.count(self.subnets[0].sizes)
        g_enc = 0.0
        g_e = None
        for l in range(self.L - 1, -1, -1):
            gp, gx = self.subnets[l].backward(caches[l], grad_logits[l], g_e)
            grad[n_enc + l * n_sub:n_enc + (l + 1) * n_sub] = gp
            g_enc = g_enc + gx[:, :self.d_enc]
            g_e = gx[:, self.d_enc:]
        gp, _ = self.encoder.backward(enc_cache, g_enc)
        grad[:n_enc] = gp
        return grad

    # acting

    def act(self, feats: np.ndarray, rng: np.random.Generator | None = None, tau: float = 1.0,
            greedy: bool = False):
        """Sample (or take the mode of) one action; returns ``(action vector, log-prob)``."""
        logits, _ = self.forward(np.atleast_2d(feats)[:1])
        action = np.zeros(self.action_dim, dtype=np.int64)
        logp = 0.0
        for l, z in enumerate(logits):
            zh, zf = self._groups(z)
            if greedy:
                sh, sf = np.argmax(zh[0], axis=-1), np.argmax(zf[0])
                lp = (np.take_along_axis(log_softmax(zh[0]), sh[:, None], axis=1).sum()
                      + log_softmax(zf[0])[sf])
            else:
                _, sh, lph = gumbel_softmax_sample(zh[0], tau, rng)
                _, sf, lpf = gumbel_softmax_sample(zf[0], tau, rng)
                lp = lph.sum() + lpf
            base = l * (self.H + 1)
            action[base:base + self.H] = sh
            action[base + self.H] = sf
            logp += float(lp)
        return action, logp

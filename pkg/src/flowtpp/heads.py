"""Categorical prediction heads over a context vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .errors import DimensionMismatch, IndexOutOfRange


@dataclass
class CategoricalHead:
    """Either ``linear(C->V)`` or ``linear(C->D), tanh, linear(D->V)``.

    For the single-layer shape ``W1``/``b1`` are None and ``W2``/``b2`` map the
    context straight to logits.
    """

    W2: np.ndarray
    b2: np.ndarray
    W1: np.ndarray | None = None
    b1: np.ndarray | None = None

    @property
    def V(self):
        return self.W2.shape[0]

    @property
    def C(self):
        return self.W2.shape[1] if self.W1 is None else self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1 is not None

    def forward_rows(self, C):
        """Logits for every row of ``C``; returns (logits, tanh activations or None)."""
        if self.W1 is None:
            return C @ self.W2.T + self.b2, None
        z = np.tanh(C @ self.W1.T + self.b1)
        return z @ self.W2.T + self.b2, z

    def backward_rows(self, C, z, d_logits):
        """Parameter gradients and the gradient w.r.t. the context rows."""
        grads = {"W2": d_logits.T @ (C if z is None else z), "b2": d_logits.sum(axis=0)}
        d = d_logits @ self.W2
        if z is not None:
            d = d * (1.0 - z * z)
            grads["W1"] = d.T @ C
            grads["b1"] = d.sum(axis=0)
            d = d @ self.W1
        return grads, d


def logits(head: CategoricalHead, c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] != head.C:
        raise DimensionMismatch(f"context has length {c.shape}, head expects {head.C}")
    return head.forward_rows(c[None, :])[0][0]


def categorical_nll(lg, target: int) -> float:
    lg = np.asarray(lg, dtype=float)
    if not 0 <= target < lg.shape[0]:
        raise IndexOutOfRange(f"target {target} outside vocabulary of size {lg.shape[0]}")
    return float(logsumexp(lg) - lg[target])


def nll_rows(lg, targets):
    """Per-row cross-entropy and the gradient of each row's loss w.r.t. its logits."""
    logp = log_softmax(lg, axis=1)
    rows = np.arange(len(targets))
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return -logp[rows, targets], grad


def categorical_sample(lg, rng=None, mode: str = "stochastic") -> int:
    """Argmax (ties -> smallest index) or a draw from softmax(lg)."""
    lg = np.asarray(lg, dtype=float)
    if mode == "argmax":
        return int(np.argmax(lg))
    if mode != "stochastic":
        raise ValueError(f"unknown sampling mode {mode!r}")
    p = softmax(lg)
    k = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(k, len(p) - 1)


def conditional_context(c, *conditions, expected: int | None = None) -> np.ndarray:
    """Append the embeddings of already-sampled fields, in the given order.

    ``expected`` is the input width of the head being fed, if known.
    """
    parts = [np.asarray(c, dtype=float).ravel()]
    parts.extend(np.asarray(x, dtype=float).ravel() for x in conditions)
    out = np.concatenate(parts)
    if expected is not None and out.shape[0] != expected:
        raise DimensionMismatch(f"conditioned context has length {out.shape[0]}, head expects {expected}")
    return out

"""Patch scoring, image-level pooling and the multi-label loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor

MODES = ("sigmoid", "softmax")
POOLINGS = ("topk", "avg", "max")


@dataclass
class ClassifierWeights:
    """Patch scorer: optional GELU hidden layer, then a linear read-out.

    ``out_dim`` is 1 when scoring class-conditioned streams (weights shared by
    every class) and C when scoring a single unconditioned stream.
    """

    w_out: Tensor
    b_out: Tensor
    w_hidden: Tensor | None = None
    b_hidden: Tensor | None = None

    @classmethod
    def init(cls, in_dim, rng, hidden=0, out_dim=1, std=0.02):
        if hidden:
            return cls(rng.param((hidden, out_dim), std, name="head.w_out"),
                       Tensor(np.zeros(out_dim), requires_grad=True, name="head.b_out"),
                       rng.param((in_dim, hidden), std, name="head.w_hidden"),
                       Tensor(np.zeros(hidden), requires_grad=True, name="head.b_hidden"))
        return cls(rng.param((in_dim, out_dim), std, name="head.w_out"),
                   Tensor(np.zeros(out_dim), requires_grad=True, name="head.b_out"))

    @property
    def out_dim(self):
        return self.w_out.shape[1]

    def parameters(self):
        ps = [self.w_out, self.b_out]
        if self.w_hidden is not None:
            ps += [self.w_hidden, self.b_hidden]
        return ps


def patch_logits(features, weights, per_stream=True):
    """Raw scores ``[..., s, C]``.

    ``per_stream``: ``features`` is ``[..., C, s, D]`` and each stream yields
    one score.  Otherwise ``features`` is ``[..., s, D]`` and the read-out has
    C columns.
    """
    x = features
    if weights.w_hidden is not None:
        x = T.gelu(T.matmul(x, weights.w_hidden) + weights.b_hidden)
    z = T.matmul(x, weights.w_out) + weights.b_out
    if not per_stream:
        return z
    if weights.out_dim != 1:
        raise ShapeError("per-stream scoring needs a single-output read-out")
    z = T.reshape(z, z.shape[:-1])  # [..., C, s]
    return T.transpose(z)


def patch_classify(features, weights, mode="sigmoid", per_stream=True):
    """Per-patch class scores ``Z [..., s, C]`` in [0, 1].

    ``sigmoid`` scores every class independently (training); ``softmax``
    normalizes across classes per patch.
    """
    if mode not in MODES:
        raise ContractError(f"unknown head mode {mode!r}; expected one of {MODES}")
    z = patch_logits(features, weights, per_stream)
    return T.sigmoid(z) if mode == "sigmoid" else T.softmax(z, axis=-1)


def topk_indices(z, k):
    """Positions of the k largest entries per column, ascending by position.

    Ties go to the lower position.
    """
    order = np.argsort(-z, axis=-2, kind="stable")
    return np.sort(order[..., :k, :], axis=-2)


def _position_mean(z):
    """Mean over axis -2, accumulated strictly in position order.

    NumPy picks pairwise or sequential summation depending on memory layout;
    a fixed order keeps ``topk(s) == avg`` and oracle comparisons bit-exact.
    """
    n = z.shape[-2]
    acc = np.zeros(z.shape[:-2] + z.shape[-1:])
    for i in range(n):
        acc = acc + z.data[..., i, :]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g / n, -2), z.shape).copy(),)

    return T.custom_op(acc / n, (z,), backward)


def topk_pool(z, k):
    """Mean of the k highest patch scores per class: ``[..., s, C] -> [..., C]``."""
    z = T.as_tensor(z)
    s = z.shape[-2]
    if not 1 <= k <= s:
        raise ContractError(f"topk_pool: k={k} outside [1, {s}]")
    idx = topk_indices(z.data, k)
    return _position_mean(T.take_along_axis(z, idx, axis=-2))


def avg_pool(z):
    z = T.as_tensor(z)
    if z.ndim < 2 or z.shape[-2] == 0:
        raise ContractError(f"avg_pool: empty score map {z.shape}")
    return _position_mean(z)


def max_pool(z):
    z = T.as_tensor(z)
    if z.ndim < 2 or z.shape[-2] == 0:
        raise ContractError(f"max_pool: empty score map {z.shape}")
    idx = np.expand_dims(np.argmax(z.data, axis=-2), -2)
    return _position_mean(T.take_along_axis(z, idx, axis=-2))


def pool(z, method="topk", k=4):
    if method == "topk":
        return topk_pool(z, min(k, T.as_tensor(z).shape[-2]))
    if method == "avg":
        return avg_pool(z)
    if method == "max":
        return max_pool(z)
    raise ContractError(f"unknown pooling {method!r}; expected one of {POOLINGS}")


def mce_loss(p, y):
    """Per-class binary cross-entropy averaged over classes (and batch).

    Log arguments are clamped to >= 1e-12, so the loss is finite at saturated
    scores and exactly zero when ``p == y``; the gradient uses the same clamp.
    """
    p = T.as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"mce_loss: scores {p.shape} vs labels {y.shape}")
    eps = T.LOG_EPS
    pos = np.maximum(p.data, eps)
    neg = np.maximum(1.0 - p.data, eps)
    n = p.data.size
    value = -(y * np.log(pos) + (1.0 - y) * np.log(neg)).sum() / n

    def backward(g):
        return (-g * (y / pos - (1.0 - y) / neg) / n,)

    return T.custom_op(value, (p,), backward)

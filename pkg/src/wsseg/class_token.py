"""Learnable per-class tokens appended to encoded patches after the encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor
from .vit import TokenSequence


@dataclass
class ClassTokenBank:
    tokens: Tensor  # [C, H]

    @classmethod
    def init(cls, num_classes, dim, rng, std=1.0):
        return cls(rng.param((num_classes, dim), std=std, name="class_tokens"))

    @property
    def num_classes(self):
        return self.tokens.shape[0]

    @property
    def dim(self):
        return self.tokens.shape[1]


@dataclass
class ConditionedFeatures:
    """``features[..., c, i, :] = concat(p_i, t_c)``, shape ``[..., C, s, e+H]``."""

    features: Tensor
    grid: tuple
    embed_dim: int


def condition(p_out, bank):
    """Pair every patch with every class token by channel concatenation.

    Each of the C streams sees the same patch embeddings with its own token
    appended, so class streams never mix here.
    """
    grid = None
    if isinstance(p_out, TokenSequence):
        grid, p_out = p_out.grid, p_out.tokens
    toks = bank.tokens if isinstance(bank, ClassTokenBank) else T.as_tensor(bank)
    if p_out.ndim < 2 or toks.ndim != 2:
        raise ShapeError(f"condition: patches {p_out.shape}, tokens {toks.shape}")
    *lead, s, e = p_out.shape
    c, h = toks.shape
    if grid is None:
        g = int(round(np.sqrt(s)))
        grid = (g, s // g)
    target = (*lead, c, s)
    patches = T.broadcast_to(T.reshape(p_out, (*lead, 1, s, e)), target + (e,))
    slots = T.broadcast_to(T.reshape(toks, (c, 1, h)), target + (h,))
    return ConditionedFeatures(T.concat([patches, slots], axis=-1), tuple(grid), e)

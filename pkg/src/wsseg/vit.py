"""Patch tokenization and a small pre-norm transformer encoder.

No classification token is appended: the encoder returns patch embeddings
only, and class information is attached afterwards (see ``class_token``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class ViTConfig:
    image_size: int = 48
    patch_size: int = 8
    embed_dim: int = 32
    num_heads: int = 2
    num_blocks: int = 2
    mlp_ratio: int = 4
    dropout_rate: float = 0.0
    layer_scale: float = 0.0  # >0: per-channel residual-branch gains initialized to this

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ShapeError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ShapeError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")

    @property
    def grid(self):
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def num_patches(self):
        g = self.image_size // self.patch_size
        return g * g

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * 3


@dataclass
class TokenSequence:
    """Patch embeddings ``[..., s, e]`` in row-major raster order."""

    tokens: Tensor
    grid: tuple

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.shape[-2] != rows * cols:
            raise ShapeError(f"{self.tokens.shape[-2]} tokens do not fill a {rows}x{cols} grid")

    ordering = "row-major"


def patchify(image, patch_size):
    """Split ``[..., H, W, 3]`` into ``[..., s, patch_size**2 * 3]`` patches.

    Patches are listed row-major over the grid; inside a patch the pixels are
    row-major and the channel varies fastest.
    """
    image = T.as_tensor(image)
    *lead, h, w, ch = image.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    nl = len(lead)
    x = T.reshape(image, (*lead, gh, patch_size, gw, patch_size, ch))
    axes = list(range(nl)) + [nl, nl + 2, nl + 1, nl + 3, nl + 4]
    x = T.transpose(x, axes)
    return T.reshape(x, (*lead, gh * gw, patch_size * patch_size * ch))


def embed(patches, w_embed, pos_embed, grid=None):
    if patches.shape[-1] != w_embed.shape[0]:
        raise ShapeError(f"embed: patch dim {patches.shape[-1]} vs W_embed {w_embed.shape}")
    if pos_embed.shape != (patches.shape[-2], w_embed.shape[1]):
        raise ShapeError(f"embed: pos_embed {pos_embed.shape} does not match "
                         f"{(patches.shape[-2], w_embed.shape[1])}")
    if grid is None:
        g = int(round(np.sqrt(patches.shape[-2])))
        grid = (g, g)
    return TokenSequence(T.matmul(patches, w_embed) + pos_embed, tuple(grid))


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = T.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, axis=-1, keepdims=True)
    return xc / T.sqrt(var + eps) * gamma + beta


def _split_heads(x, num_heads):
    *lead, s, e = x.shape
    x = T.reshape(x, (*lead, s, num_heads, e // num_heads))
    nl = len(lead)
    return T.transpose(x, list(range(nl)) + [nl + 1, nl, nl + 2])


def _merge_heads(x):
    *lead, h, s, dh = x.shape
    nl = len(lead)
    x = T.transpose(x, list(range(nl)) + [nl + 1, nl, nl + 2])
    return T.reshape(x, (*lead, s, h * dh))


def self_attention(x, p, num_heads, return_weights=False):
    """Multi-head attention; each head scales scores by 1/sqrt(e/num_heads)."""
    e = x.shape[-1]
    dh = e // num_heads
    q = _split_heads(T.matmul(x, p["w_q"]) + p["b_q"], num_heads)
    k = _split_heads(T.matmul(x, p["w_k"]) + p["b_k"], num_heads)
    v = _split_heads(T.matmul(x, p["w_v"]) + p["b_v"], num_heads)
    scores = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(_merge_heads(T.matmul(weights, v)), p["w_o"]) + p["b_o"]
    return (out, weights) if return_weights else out


def _dropout(x, rate, rng):
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def transformer_block(x, p, num_heads, dropout_rate=0.0, rng=None):
    a = self_attention(layer_norm(x, p["ln1_g"], p["ln1_b"]), p, num_heads)
    if "ls1" in p:
        a = a * p["ls1"]
    h = x + _dropout(a, dropout_rate, rng)
    m = T.gelu(T.matmul(layer_norm(h, p["ln2_g"], p["ln2_b"]), p["w_fc1"]) + p["b_fc1"])
    m = T.matmul(m, p["w_fc2"]) + p["b_fc2"]
    if "ls2" in p:
        m = m * p["ls2"]
    return h + _dropout(m, dropout_rate, rng)


def init_vit_params(cfg, rng):
    """Weights and positional embeddings ~ N(0, 0.02); biases 0; LayerNorm gains 1."""
    e, hid = cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio

    def zeros(*shape, name):
        return Tensor(np.zeros(shape), requires_grad=True, name=name)

    def ones(*shape, name):
        return Tensor(np.ones(shape), requires_grad=True, name=name)

    params = {
        "w_embed": rng.param((cfg.patch_dim, e), name="w_embed"),
        "pos_embed": rng.param((cfg.num_patches, e), name="pos_embed"),
        "blocks": [],
    }
    for b in range(cfg.num_blocks):
        pre = f"block{b}."
        blk = {}
        for key in ("q", "k", "v", "o"):
            blk[f"w_{key}"] = rng.param((e, e), name=pre + f"w_{key}")
            blk[f"b_{key}"] = zeros(e, name=pre + f"b_{key}")
        blk["ln1_g"], blk["ln1_b"] = ones(e, name=pre + "ln1_g"), zeros(e, name=pre + "ln1_b")
        blk["ln2_g"], blk["ln2_b"] = ones(e, name=pre + "ln2_g"), zeros(e, name=pre + "ln2_b")
        blk["w_fc1"] = rng.param((e, hid), name=pre + "w_fc1")
        blk["b_fc1"] = zeros(hid, name=pre + "b_fc1")
        blk["w_fc2"] = rng.param((hid, e), name=pre + "w_fc2")
        blk["b_fc2"] = zeros(e, name=pre + "b_fc2")
        if cfg.layer_scale > 0:
            for key in ("ls1", "ls2"):
                blk[key] = Tensor(np.full(e, cfg.layer_scale), requires_grad=True, name=pre + key)
        params["blocks"].append(blk)
    params["ln_f_g"] = ones(e, name="ln_f_g")
    params["ln_f_b"] = zeros(e, name="ln_f_b")
    return params


def vit_parameters(params):
    out = [params["w_embed"], params["pos_embed"]]
    for blk in params["blocks"]:
        out.extend(blk.values())
    if "ln_f_g" in params:
        out += [params["ln_f_g"], params["ln_f_b"]]
    return out


def encode(image, cfg, params, rng=None):
    """Image ``[..., H, W, 3]`` to refined patch embeddings ``[..., s, e]``.

    A final LayerNorm follows the last block; with zero blocks the output is
    the raw patch embedding.
    """
    if len(params["blocks"]) != cfg.num_blocks:
        raise ShapeError(f"expected {cfg.num_blocks} blocks, got {len(params['blocks'])}")
    image = T.as_tensor(image)
    grid = (image.shape[-3] // cfg.patch_size, image.shape[-2] // cfg.patch_size)
    x = embed(patchify(image, cfg.patch_size), params["w_embed"], params["pos_embed"], grid).tokens
    for blk in params["blocks"]:
        x = transformer_block(x, blk, cfg.num_heads, cfg.dropout_rate, rng)
    if cfg.num_blocks:
        x = layer_norm(x, params["ln_f_g"], params["ln_f_b"])
    return TokenSequence(x, grid)

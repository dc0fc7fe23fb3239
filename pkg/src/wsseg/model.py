"""End-to-end patch scorer: encoder, class conditioning, context fusion, head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .bilstm import BiLSTMParams, FusionParams, contextual_fusion
from .class_token import ClassTokenBank, condition
from .head import ClassifierWeights, mce_loss, patch_logits, pool
from .tensor import Rng, ShapeError
from .vit import ViTConfig, encode, init_vit_params, vit_parameters


@dataclass
class ModelConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    num_classes: int = 3
    token_dim: int | None = None      # default e // 4
    hidden_dim: int | None = None     # default (e + H) // 2
    head_hidden: int = 32
    use_class_token: bool = True
    use_bilstm: bool = True
    pooling: str = "topk"
    k: int = 4

    def __post_init__(self):
        if self.token_dim is None:
            self.token_dim = self.vit.embed_dim // 4
        if self.hidden_dim is None:
            self.hidden_dim = max(1, self.feature_dim // 2)

    @property
    def feature_dim(self):
        """Width of the features entering context fusion and the head."""
        tok = self.token_dim if self.use_class_token else 0
        return self.vit.embed_dim + (tok or 0)


class Model:
    """All learnable state plus the forward pass.

    With class tokens, the C class streams are scored by one shared head.
    Without them there is a single stream and the head has C outputs.
    """

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = Rng(seed)
        self.vit = init_vit_params(cfg.vit, rng)
        dim = cfg.feature_dim
        self.bank = (ClassTokenBank.init(cfg.num_classes, cfg.token_dim, rng)
                     if cfg.use_class_token else None)
        if cfg.use_bilstm:
            self.lstm_h = BiLSTMParams.init(dim, cfg.hidden_dim, rng, prefix="bilstm_h")
            self.lstm_v = BiLSTMParams.init(dim, cfg.hidden_dim, rng, prefix="bilstm_v")
            self.fusion = FusionParams.init(cfg.hidden_dim, dim, rng)
        else:
            self.lstm_h = self.lstm_v = self.fusion = None
        out_dim = 1 if cfg.use_class_token else cfg.num_classes
        self.head = ClassifierWeights.init(dim, rng, hidden=cfg.head_hidden, out_dim=out_dim)

    def parameters(self):
        ps = vit_parameters(self.vit)
        if self.bank is not None:
            ps.append(self.bank.tokens)
        if self.cfg.use_bilstm:
            ps += self.lstm_h.parameters() + self.lstm_v.parameters() + self.fusion.parameters()
        ps += self.head.parameters()
        return ps

    def named_parameters(self):
        out = []
        for p in self.parameters():
            if p.name is None:
                raise RuntimeError("unnamed parameter")
            out.append((p.name, p))
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise RuntimeError("duplicate parameter names")
        return out

    def state_dict(self):
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        T.zero_grad(self.parameters())

    # -- forward --------------------------------------------------------
    def features(self, images, rng=None):
        """Head input: ``[B, C, s, D]`` with class tokens, else ``[B, s, D]``.

        Pass ``rng`` to enable encoder dropout (training only).
        """
        seq = encode(images, self.cfg.vit, self.vit, rng)
        if self.bank is not None:
            x = condition(seq, self.bank).features
        else:
            x = seq.tokens
        if self.cfg.use_bilstm:
            x = contextual_fusion(x, seq.grid, self.lstm_h, self.lstm_v, self.fusion).features
        return x, seq.grid

    def logits(self, images, rng=None):
        x, grid = self.features(images, rng)
        return patch_logits(x, self.head, per_stream=self.bank is not None), grid

    def scores(self, images, mode="sigmoid", rng=None):
        """Per-patch class scores ``Z [B, s, C]``."""
        z, _ = self.logits(images, rng)
        return T.sigmoid(z) if mode == "sigmoid" else T.softmax(z, axis=-1)

    def image_scores(self, images, rng=None):
        return pool(self.scores(images, rng=rng), self.cfg.pooling, self.cfg.k)

    def loss(self, images, labels, rng=None):
        return mce_loss(self.image_scores(images, rng), labels)

    def with_pos_embed_grid(self, grid):
        """Positional embeddings bilinearly resized to another patch grid."""
        from .pseudo_label import upsample_bilinear

        g0 = self.cfg.vit.grid
        if tuple(grid) == tuple(g0):
            return self.vit["pos_embed"]
        pe = self.vit["pos_embed"].data.reshape(g0[0], g0[1], -1)
        return T.Tensor(upsample_bilinear(pe, grid).reshape(grid[0] * grid[1], -1))

"""Finite-difference sweep over every differentiable operation and the full model."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .bilstm import BiLSTMParams, FusionParams, LSTMCellParams, contextual_fusion, run_direction
from .class_token import ClassTokenBank, condition
from .head import ClassifierWeights, avg_pool, max_pool, mce_loss, patch_classify, topk_pool
from .model import Model, ModelConfig
from .tensor import Rng, Tensor
from .vit import ViTConfig, embed, init_vit_params, layer_norm, patchify, self_attention, \
    transformer_block

# At step 1e-3 the O(h^2) truncation error of central differences exceeds
# rel 1e-4 near stationary points of smooth ops; 1e-5 keeps it near 1e-11.
STEP = 1e-5


def _weights(rng, shape):
    return Tensor(rng.normal(shape))


def _elementwise(rng):
    w = _weights(rng, (3, 4))
    return {
        "add": lambda x: (x + x * x) * w,
        "sub": lambda x: (x - Tensor(np.ones(4))) * x,
        "mul": lambda x: x * x * w,
        "div": lambda x: x / (x * x + 1.0),
        "neg": lambda x: -(x * w),
        "exp": T.exp,
        "log": lambda x: T.log(x * x + 0.5),
        "sigmoid": T.sigmoid,
        "tanh": T.tanh,
        "gelu": T.gelu,
        "power": lambda x: T.power(x * x + 1.0, 1.5),
        "sqrt": lambda x: T.sqrt(x * x + 1.0),
        "matmul": lambda x: T.matmul(x, T.transpose(x)),
        "sum": lambda x: T.sum(x * w, axis=1),
        "mean": lambda x: T.mean(x * x, axis=0),
        "softmax": lambda x: T.softmax(x, axis=-1) * w,
        "reshape": lambda x: T.reshape(x, (4, 3)) * T.reshape(w, (4, 3)),
        "transpose": lambda x: T.transpose(x) * T.transpose(w),
        "concat": lambda x: T.concat([x, x * x], axis=1) * T.concat([w, w], axis=1),
        "getitem": lambda x: x[1:, ::2] * x[1:, ::2],
        "slice": lambda x: T.slice_axis(x * x, 1, 3),
        "take": lambda x: T.take(x, [2, 0, 0], axis=0) * w,
        "take_along": lambda x: T.take_along_axis(
            x, np.array([[0, 1, 0, 2], [2, 2, 1, 0]]), 0) * x[:2],
        "broadcast": lambda x: T.broadcast_to(T.reshape(x, (1, 3, 4)), (2, 3, 4)) * T.stack(
            [w, w * 2.0]),
        "stack": lambda x: T.stack([x, x * x], axis=0) * T.stack([w, w]),
        "where": lambda x: T.where(w.data > 0, x * x, x * 3.0),
    }


def _composite(rng):
    """Module-level ops; each maps a ``[3, 4]`` input to a tensor."""
    vcfg = ViTConfig(image_size=16, patch_size=8, embed_dim=4, num_heads=2, num_blocks=1,
                     mlp_ratio=2, layer_scale=0.5)
    vp = init_vit_params(vcfg, rng)
    for name, p in vp.items():
        if isinstance(p, Tensor):
            p.data = rng.normal(p.shape) * 0.5 + (1.0 if name.endswith(("gamma", "ls1", "ls2"))
                                                   else 0.0)
    block = vp["blocks"][0]
    cell = LSTMCellParams.init(4, 3, rng, std=0.5)
    bh = BiLSTMParams.init(4, 2, rng, prefix="h")
    bv = BiLSTMParams.init(4, 2, rng, prefix="v")
    fu = FusionParams.init(2, 4, rng, std=0.5)
    for p in bh.parameters() + bv.parameters():
        p.data = rng.normal(p.shape) * 0.5
    bank = ClassTokenBank.init(2, 3, rng)
    head = ClassifierWeights.init(4, rng, hidden=5, std=0.5)
    y = np.array([1.0, 0.0, 1.0, 1.0])
    w_embed = Tensor(rng.normal((3, 4)))
    pos = Tensor(rng.normal((4, 4)))
    gamma, beta = Tensor(rng.normal(4)), Tensor(rng.normal(4))

    return {
        "layer_norm": lambda x: layer_norm(x, gamma, beta),
        "self_attention": lambda x: self_attention(x, block, 2),
        "transformer_block": lambda x: transformer_block(x, block, 2),
        "patchify_embed": lambda x: embed(patchify(T.reshape(x, (2, 2, 3)), 1), w_embed,
                                          pos).tokens,
        "lstm_forward": lambda x: run_direction(x, cell, "forward"),
        "lstm_backward": lambda x: run_direction(x, cell, "backward"),
        "contextual_fusion": lambda x: contextual_fusion(x, (1, 3), bh, bv, fu).features,
        "class_token": lambda x: condition(T.slice_axis(x, 0, 1, -1) * x, bank).features,
        "patch_classify": lambda x: patch_classify(T.stack([x, x * x]), head),
        "topk_pool": lambda x: topk_pool(x, 2),
        "max_pool": max_pool,
        "avg_pool": avg_pool,
        "mce_loss": lambda x: mce_loss(T.sigmoid(T.reshape(x, (12,))[:4]), y),
    }


@dataclass
class SweepResult:
    failures: list = field(default_factory=list)
    checked: int = 0
    seconds: float = 0.0

    @property
    def passed(self):
        return not self.failures


def op_sweep(seeds=range(20), step=STEP):
    """Gradcheck each op on a random ``[3, 4]`` input per seed."""
    out = SweepResult()
    t0 = time.perf_counter()
    for seed in seeds:
        rng = Rng(seed)
        ops = {**_elementwise(rng), **_composite(rng)}
        for name, fn in ops.items():
            x = Tensor(rng.normal((3, 4)), requires_grad=True)
            w = Tensor(rng.normal(fn(x).shape))
            rep = T.gradcheck(lambda t: T.sum(fn(t) * w), x, step=step)
            out.checked += 1
            if not rep.passed:
                out.failures.append((name, seed, rep))
    out.seconds = time.perf_counter() - t0
    return out


def toy_model_config():
    """2x2 patch grid, every component switched on."""
    vit = ViTConfig(image_size=4, patch_size=2, embed_dim=8, num_heads=2, num_blocks=1,
                    mlp_ratio=2, layer_scale=0.5)
    return ModelConfig(vit, num_classes=2, token_dim=2, hidden_dim=3, head_hidden=4, k=2)


def model_gradcheck(seed, step=STEP, probe=None):
    """Gradcheck of the MCE loss against every parameter and the input image.

    ``probe`` caps the number of randomly chosen entries checked per tensor;
    None checks every entry.
    """
    rng = np.random.default_rng(seed)
    model = Model(toy_model_config(), seed=seed)
    for p in model.parameters():
        # larger weights than the init so no gradient is trivially tiny
        p.data = rng.normal(size=p.shape) * 0.3
    images = Tensor(rng.random((2, 4, 4, 3)), requires_grad=True)
    labels = np.array([[1.0, 0.0], [1.0, 1.0]])

    def loss(_):
        return model.loss(images, labels)

    failures = []
    for name, p in model.named_parameters() + [("image", images)]:
        idx = None
        if probe is not None and p.data.size > probe:
            idx = sorted(rng.choice(p.data.size, probe, replace=False).tolist())
        rep = T.gradcheck(loss, p, step=step, indices=idx)
        if not rep.passed:
            failures.append((name, seed, rep))
    return failures


def model_sweep(seeds=range(20), step=STEP, probe=8, full_seeds=(0,)):
    """Every entry for ``full_seeds``; ``probe`` random entries per tensor otherwise."""
    out = SweepResult()
    t0 = time.perf_counter()
    for seed in seeds:
        out.failures += model_gradcheck(seed, step, None if seed in full_seeds else probe)
        out.checked += 1
    out.seconds = time.perf_counter() - t0
    return out

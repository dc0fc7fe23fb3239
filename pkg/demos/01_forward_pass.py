"""
From pixels to patch scores
===========================

One untrained model, one random image, and the shape of every intermediate.
"""
import numpy as np

from wsseg import Config, Model
from wsseg.class_token import condition
from wsseg.vit import encode, patchify

cfg = Config()
model = Model(cfg.model_config(), seed=0)
image = np.random.default_rng(0).random((cfg.image_size, cfg.image_size, 3))

# 48x48 pixels cut into 8x8 patches: a 6x6 grid of 192-dim vectors
print("patches", patchify(image, cfg.patch_size).shape)

# the encoder keeps one embedding per patch, raster order
seq = encode(image, model.cfg.vit, model.vit)
print("encoded", seq.tokens.shape, "grid", seq.grid)

# every patch is paired with every class token: C streams of width e + H
streams = condition(seq, model.bank)
print("conditioned", streams.features.shape)

# after context fusion and the shared head: one score per patch and class
z = model.scores(image[None]).data[0]
print("patch scores", z.shape, "range", z.min().round(4), z.max().round(4))
print("image scores", model.image_scores(image[None]).data[0].round(3))

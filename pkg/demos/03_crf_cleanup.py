"""
Dense CRF on a noisy probability map
====================================

Two flat regions, a handful of pixels whose scores point the wrong way.
Mean-field inference with appearance and smoothness kernels flips them back.
"""
import numpy as np

from wsseg.pseudo_label import CrfConfig, argmax_mask, crf_refine

size = 16
rng = np.random.default_rng(0)
image = np.zeros((size, size, 3))
image[:, size // 2:] = 0.9
image += rng.normal(0, 0.02, image.shape)

truth = np.ones((size, size), dtype=np.uint8)
truth[:, size // 2:] = 2
probs = np.full((size, size, 3), 0.1)
probs[truth == 1, 1] = 0.8
probs[truth == 2, 2] = 0.8
for r, c in [(3, 3), (10, 5), (4, 12), (12, 13)]:
    wrong = 3 - truth[r, c]
    probs[r, c] = 0.1
    probs[r, c, wrong] = 0.8

before = argmax_mask(probs)
after = argmax_mask(crf_refine(probs, image, CrfConfig(iterations=5)))
print("wrong pixels before:", int((before != truth).sum()))
print("wrong pixels after: ", int((after != truth).sum()))

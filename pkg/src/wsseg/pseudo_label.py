"""Patch scores to pixel masks: upsampling, background, argmax, dense CRF."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ContractError, ShapeError

IGNORE = 255


@dataclass
class CrfConfig:
    iterations: int = 10
    spatial_std: float = 3.0
    bilateral_spatial_std: float = 32.0
    bilateral_color_std: float = 0.25
    spatial_weight: float = 3.0
    bilateral_weight: float = 5.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("crf iterations must be >= 1")
        for name in ("spatial_std", "bilateral_spatial_std", "bilateral_color_std"):
            if getattr(self, name) <= 0:
                raise ContractError(f"crf {name} must be positive")
        if self.spatial_weight < 0 or self.bilateral_weight < 0:
            raise ContractError("crf weights must be non-negative")


def _interp_matrix(n_in, n_out):
    """Row-stochastic ``[n_out, n_in]`` bilinear weights, half-pixel centers."""
    r = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    r[np.arange(n_out), lo] += 1.0 - w
    r[np.arange(n_out), hi] += w
    return r


def upsample_bilinear(z_grid, target):
    """Resize ``[gh, gw, C]`` to ``[H, W, C]`` (align_corners=False)."""
    z_grid = np.asarray(z_grid, dtype=np.float64)
    h, w = target
    if h <= 0 or w <= 0:
        raise ShapeError(f"upsample target must be positive, got {target}")
    if z_grid.ndim == 2:
        z_grid = z_grid[..., None]
    ry = _interp_matrix(z_grid.shape[0], h)
    rx = _interp_matrix(z_grid.shape[1], w)
    return np.einsum("hg,gkc,wk->hwc", ry, z_grid, rx)


def make_probmap(up, tau=0.45):
    """Prepend a constant background score ``tau`` and renormalize per pixel.

    A pixel goes to background unless some class scores strictly above tau.
    """
    if not 0 < tau < 1:
        raise ContractError(f"background threshold must be in (0, 1), got {tau}")
    up = np.asarray(up, dtype=np.float64)
    bg = np.full(up.shape[:-1] + (1,), tau)
    pm = np.concatenate([bg, up], axis=-1)
    return pm / pm.sum(axis=-1, keepdims=True)


def argmax_mask(pm):
    """Per-pixel label; ties resolve to the lowest channel (background first)."""
    return np.argmax(pm, axis=-1).astype(np.uint8)


def _gaussians(img, cfg, rows=None):
    """Spatial and bilateral Gaussians between ``rows`` and every pixel, self included."""
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    col = img.reshape(h * w, -1).astype(np.float64)
    sel = slice(None) if rows is None else rows
    d_pos = ((pos[sel, None, :] - pos[None, :, :]) ** 2).sum(-1)
    d_col = ((col[sel, None, :] - col[None, :, :]) ** 2).sum(-1)
    g_s = np.exp(-d_pos / (2 * cfg.spatial_std ** 2))
    g_b = np.exp(-d_pos / (2 * cfg.bilateral_spatial_std ** 2)
                 - d_col / (2 * cfg.bilateral_color_std ** 2))
    return g_s, g_b


_DENSE_LIMIT = 4096
_CHUNK = 1024


def _row_chunks(n):
    for start in range(0, n, _CHUNK):
        yield np.arange(start, min(n, start + _CHUNK))


def _kernel_norms(img, cfg):
    """``1/sqrt(row sum)`` of each Gaussian, for symmetric normalization."""
    n = img.shape[0] * img.shape[1]
    d_s, d_b = np.empty(n), np.empty(n)
    for rows in _row_chunks(n):
        g_s, g_b = _gaussians(img, cfg, rows)
        d_s[rows], d_b[rows] = g_s.sum(1), g_b.sum(1)
    return 1.0 / np.sqrt(d_s), 1.0 / np.sqrt(d_b)


def _pairwise_kernel(img, cfg, rows=None, norms=None):
    """Weighted sum of the two symmetrically normalized Gaussians, zero diagonal.

    Normalizing each Gaussian by its row sums keeps the message scale
    independent of image size, which is what the conventional weights assume.
    """
    n = img.shape[0] * img.shape[1]
    n_s, n_b = norms if norms is not None else _kernel_norms(img, cfg)
    idx = np.arange(n) if rows is None else rows
    g_s, g_b = _gaussians(img, cfg, rows)
    k = cfg.spatial_weight * n_s[idx, None] * g_s * n_s[None, :]
    k += cfg.bilateral_weight * n_b[idx, None] * g_b * n_b[None, :]
    k[np.arange(len(idx)), idx] = 0.0
    return k


def crf_refine(pm, image, cfg=None):
    """Mean-field inference on a fully connected CRF with Potts compatibility.

    Unaries are ``-log pm``; the pairwise kernel is a weighted sum of a
    spatial Gaussian and a bilateral (position and color) Gaussian, each
    symmetrically normalized and evaluated exactly over all pixel pairs.
    """
    cfg = cfg or CrfConfig()
    pm = np.asarray(pm, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if pm.shape[:2] != image.shape[:2]:
        raise ShapeError(f"crf: probmap {pm.shape[:2]} vs image {image.shape[:2]}")
    h, w, L = pm.shape
    n = h * w
    unary = np.log(np.maximum(pm.reshape(n, L), 1e-12))
    if cfg.spatial_weight == 0 and cfg.bilateral_weight == 0:
        q = np.exp(unary - unary.max(1, keepdims=True))
        return (q / q.sum(1, keepdims=True)).reshape(h, w, L)

    norms = _kernel_norms(image, cfg)
    dense = _pairwise_kernel(image, cfg, norms=norms) if n <= _DENSE_LIMIT else None
    q = pm.reshape(n, L).copy()
    for _ in range(cfg.iterations):
        if dense is not None:
            msg = dense @ q
        else:
            msg = np.empty_like(q)
            for rows in _row_chunks(n):
                msg[rows] = _pairwise_kernel(image, cfg, rows, norms) @ q
        logits = unary + msg
        logits -= logits.max(1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(1, keepdims=True)
    return q.reshape(h, w, L)


def scores_to_probmap(z, grid, size, tau=0.45):
    """Patch scores ``[s, C]`` to a pixel probability map ``[H, W, C+1]``."""
    z = np.asarray(z, dtype=np.float64)
    up = upsample_bilinear(z.reshape(grid[0], grid[1], -1), size)
    return make_probmap(np.clip(up, 0.0, 1.0), tau)


# -- mask files ------------------------------------------------------------
def save_mask(path, mask):
    from PIL import Image

    mask = np.asarray(mask)
    allowed = (mask <= 254) | (mask == IGNORE)
    if mask.dtype.kind not in "ui" or not allowed.all():
        raise ContractError("mask values must be integers in 0..254 or 255")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def load_mask(path):
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "P":
            return np.array(im, dtype=np.uint8)
        return np.array(im.convert("L"), dtype=np.uint8)


def write_palette(path, class_names, colors=None):
    """Sidecar listing ``label name r g b``, one per line."""
    lines = ["# label name r g b"]
    names = ["background"] + list(class_names)
    for i, name in enumerate(names):
        rgb = (0, 0, 0) if colors is None or i == 0 else colors[i - 1]
        lines.append(f"{i} {name} {rgb[0]} {rgb[1]} {rgb[2]}")
    lines.append(f"{IGNORE} ignore 255 255 255")
    Path(path).write_text("\n".join(lines) + "\n")

"""Training, pseudo-mask inference, evaluation, ablations and scaling timing."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import Config, ConfigError
from .data import load_image, load_images, load_voc_manifest
from .head import mce_loss, pool
from .metrics import evaluate
from .model import Model
from .optim import Adam, LrSchedule
from .pseudo_label import (argmax_mask, crf_refine, load_mask, save_mask, scores_to_probmap,
                           write_palette)

log = logging.getLogger(__name__)

LOSS_HEADER = ["epoch", "lr", "loss", "precision", "recall", "accuracy"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    loss_path: Path | None = None
    seconds: float = 0.0


def label_stats(p, y, threshold=0.5):
    """Image-level precision, recall and per-entry accuracy of thresholded scores."""
    pred = np.asarray(p) >= threshold
    y = np.asarray(y) > 0.5
    tp = (pred & y).sum()
    precision = tp / pred.sum() if pred.sum() else 1.0
    recall = tp / y.sum() if y.sum() else 1.0
    return float(precision), float(recall), float((pred == y).mean())


def save_model(path, model, cfg):
    checkpoint.save(path, model.state_dict(), cfg.to_text())


def load_model(path):
    arrays, text = checkpoint.load(path)
    cfg = Config.from_text(text, env=False)
    model = Model(cfg.model_config(), seed=cfg.seed)
    model.load_state_dict(arrays)
    return model, cfg


def train_arrays(cfg, images, labels, out_dir=None, log_every=0, on_epoch=None):
    """Minibatch MCE training on in-memory arrays.

    Only images and image-level labels enter here; there is no mask argument.
    A checkpoint is written after every finite epoch, so a non-finite loss
    leaves the last good one in place.  ``on_epoch(epoch, model, row)`` is
    called after each epoch; returning True stops training.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(images) != len(labels) or len(images) == 0:
        raise TrainingError("need matching, non-empty image and label arrays")
    model = Model(cfg.model_config(), seed=cfg.seed)
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    sched = LrSchedule(cfg.warm_lr, cfg.warm_epochs, cfg.main_lr)
    order_rng = np.random.default_rng(cfg.seed + 7919)
    drop_rng = T.Rng(cfg.seed + 104729) if cfg.dropout_rate > 0 else None
    out_dir = Path(out_dir) if out_dir else None
    ckpt = loss_path = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt, loss_path = out_dir / "checkpoint.bin", out_dir / "loss.csv"
        with open(loss_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOSS_HEADER)
    history = []
    t0 = time.perf_counter()
    n = len(images)
    for epoch in range(cfg.epochs):
        lr = sched(epoch)
        perm = order_rng.permutation(n)
        total = 0.0
        scores = np.zeros_like(labels)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            opt.zero_grad()
            p = model.image_scores(images[idx], drop_rng)
            loss = mce_loss(p, labels[idx])
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}; "
                                    f"last good checkpoint kept at {ckpt}")
            T.backward(loss)
            opt.step(lr)
            total += loss.item() * len(idx)
            scores[idx] = p.data
        prec, rec, acc = label_stats(scores, labels)
        row = [epoch, lr, total / n, prec, rec, acc]
        history.append(dict(zip(LOSS_HEADER, row)))
        if out_dir:
            with open(loss_path, "a", newline="") as fh:
                csv.writer(fh).writerow([epoch, repr(lr), repr(total / n), repr(prec),
                                         repr(rec), repr(acc)])
            save_model(ckpt, model, cfg)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d lr %.0e loss %.4f acc %.3f", epoch, lr, total / n, acc)
        if on_epoch is not None and on_epoch(epoch, model, history[-1]):
            break
        if cfg.target_accuracy and acc >= cfg.target_accuracy and epoch >= cfg.warm_epochs:
            break
    return TrainResult(model, history, ckpt, loss_path, time.perf_counter() - t0)


def train(cfg, out_dir=None, manifest=None, log_every=0):
    """Train from the configured dataset split; ground-truth masks are never opened."""
    if manifest is None:
        if not cfg.data_root:
            raise ConfigError("config has no data_root")
        manifest = load_voc_manifest(cfg.data_root, cfg.train_split)
    manifest = manifest.without_masks()
    images = load_images(manifest, cfg.image_size)
    return train_arrays(cfg, images, manifest.label_matrix(), out_dir, log_every)


# -- inference ---------------------------------------------------------------
def _forward_scores(model, images, infer_size=0):
    """Sigmoid patch scores ``[N, s, C]`` and the patch grid used."""
    cfg = model.cfg.vit
    images = np.asarray(images, dtype=np.float64)
    size = images.shape[1]
    if infer_size and infer_size != size:
        from PIL import Image

        if infer_size % cfg.patch_size:
            raise T.ShapeError(f"infer size {infer_size} not divisible by patch size "
                               f"{cfg.patch_size}")
        images = np.stack([
            np.asarray(Image.fromarray((im * 255).round().astype(np.uint8))
                       .resize((infer_size, infer_size), Image.BILINEAR), np.float64) / 255.0
            for im in images])
        size = infer_size
    elif size % cfg.patch_size:
        raise T.ShapeError(f"image size {size} not divisible by patch size {cfg.patch_size}")
    g = size // cfg.patch_size
    saved = model.vit["pos_embed"]
    model.vit["pos_embed"] = model.with_pos_embed_grid((g, g))
    try:
        with T.no_grad():
            out = []
            for start in range(0, len(images), 16):
                out.append(model.scores(images[start:start + 16]).data)
    finally:
        model.vit["pos_embed"] = saved
    z = np.concatenate(out) if out else np.zeros((0, g * g, model.cfg.num_classes))
    return z, (g, g)


def predict_masks(model, images, cfg, crf=True):
    """BPM and (optionally) CRF-refined masks plus the raw patch scores."""
    images = np.asarray(images, dtype=np.float64)
    z, grid = _forward_scores(model, images, cfg.infer_size)
    bpm, refined = [], []
    crf_cfg = cfg.crf_config()
    for img, zi in zip(images, z):
        pm = scores_to_probmap(zi, grid, img.shape[:2], cfg.bg_threshold)
        bpm.append(argmax_mask(pm))
        if crf:
            refined.append(argmax_mask(crf_refine(pm, img, crf_cfg)))
    return z, bpm, (refined if crf else None)


def infer(checkpoint_path, manifest, out_dir, crf=None, infer_size=None):
    """Write BPM masks, optional CRF masks, and score dumps for each image."""
    model, cfg = load_model(checkpoint_path)
    if infer_size is not None:
        cfg = cfg.replace(infer_size=infer_size)
    crf = cfg.crf if crf is None else crf
    out = Path(out_dir)
    for sub in ("bpm", "scores") + (("crf",) if crf else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_palette(out / "palette.txt", manifest.class_names)
    for rec in manifest.records:
        img = load_image(rec.image_path)
        z, bpm, refined = predict_masks(model, img[None], cfg, crf)
        save_mask(out / "bpm" / f"{rec.image_id}.png", bpm[0])
        if crf:
            save_mask(out / "crf" / f"{rec.image_id}.png", refined[0])
        p = pool(T.Tensor(z[0]), cfg.pooling, cfg.k).data
        np.savez(out / "scores" / f"{rec.image_id}.npz", Z=z[0], p=p)
    return out


def evaluate_dirs(pred_dir, manifest, num_classes=None):
    """mIoU of ``<pred_dir>/<id>.png`` against the manifest's ground truth."""
    pred_dir = Path(pred_dir)
    preds, gts = [], []
    for rec in manifest.records:
        if rec.mask_path is None:
            continue
        p = pred_dir / f"{rec.image_id}.png"
        if not p.exists():
            log.warning("no prediction for %s", rec.image_id)
            continue
        preds.append(load_mask(p))
        gts.append(load_mask(rec.mask_path))
    n = (num_classes or manifest.num_classes) + 1
    return evaluate(preds, gts, n, ["background"] + list(manifest.class_names))


# -- experiments ---------------------------------------------------------------
@dataclass
class SuiteResult:
    accuracy: float
    bpm_miou: float
    crf_miou: float | None
    epochs: int
    seconds: float
    model: Model | None = None


def run_suite(cfg, train_set, val_set, crf=True):
    """Train on ``train_set`` and score the val split (labels and masks)."""
    train_imgs, train_y = train_set
    val_imgs, val_y, val_masks = val_set
    res = train_arrays(cfg, train_imgs, train_y)
    z, bpm, refined = predict_masks(res.model, val_imgs, cfg, crf)
    p = pool(T.Tensor(z), cfg.pooling, cfg.k).data
    _, _, acc = label_stats(p, val_y)
    n = cfg.num_classes + 1
    bpm_miou = evaluate(bpm, val_masks, n).miou
    crf_miou = evaluate(refined, val_masks, n).miou if crf else None
    return SuiteResult(acc, bpm_miou, crf_miou, len(res.history), res.seconds, res.model)


def load_split(root, split, image_size):
    man = load_voc_manifest(root, split)
    imgs = load_images(man, image_size)
    masks = [load_mask(r.mask_path) for r in man.records] if all(
        r.mask_path for r in man.records) else None
    return man, imgs, man.label_matrix(), masks


ABLATION_ROWS = [
    ("baseline", False, False, "topk"),
    ("class_token", True, False, "topk"),
    ("bilstm", False, True, "topk"),
    ("full", True, True, "topk"),
    ("pool_avg", True, True, "avg"),
    ("pool_max", True, True, "max"),
]


def ablate(cfg, seeds=(0, 1, 2), out_path=None, rows=ABLATION_ROWS, crf=False):
    """Train each variant under the same seeds and tabulate val mIoU."""
    man, tr_imgs, tr_y, _ = load_split(cfg.data_root, cfg.train_split, cfg.image_size)
    _, va_imgs, va_y, va_masks = load_split(cfg.data_root, cfg.val_split, cfg.image_size)
    if va_masks is None:
        raise TrainingError("validation split needs ground-truth masks")
    results = []
    for name, tok, lstm, pooling in rows:
        for seed in seeds:
            rcfg = cfg.replace(use_class_token=tok, use_bilstm=lstm, pooling=pooling, seed=seed)
            r = run_suite(rcfg, (tr_imgs, tr_y), (va_imgs, va_y, va_masks), crf=crf)
            results.append(dict(variant=name, class_token=tok, bilstm=lstm, pooling=pooling,
                                seed=seed, accuracy=r.accuracy, miou=r.bpm_miou,
                                crf_miou=r.crf_miou, epochs=r.epochs))
            log.info("%s seed %d: acc %.3f mIoU %.3f", name, seed, r.accuracy, r.bpm_miou)
    if out_path:
        write_ablation_table(out_path, results)
    return results


def summarize_ablation(results):
    out = {}
    for r in results:
        out.setdefault(r["variant"], []).append(r["miou"])
    return {k: float(np.mean(v)) for k, v in out.items()}


def write_ablation_table(path, results):
    keys = ["variant", "class_token", "bilstm", "pooling", "seed", "accuracy", "miou",
            "crf_miou", "epochs"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in results:
            w.writerow([r[k] if r[k] is not None else "" for k in keys])
        for name, m in summarize_ablation(results).items():
            w.writerow([name, "", "", "", "mean", "", repr(m), "", ""])


# -- scaling ----------------------------------------------------------------
def attention_kernel(x):
    """Single-head softmax(X X^T / sqrt(e)) X in plain numpy; quadratic in s."""
    scores = x @ x.T / np.sqrt(x.shape[-1])
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ x


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_scaling(sizes=((32, 64), (64, 64)), dim=16, hidden=8, repeats=5, seed=0):
    """Median wall time of context fusion and of dense attention per grid size."""
    from .bilstm import BiLSTMParams, FusionParams, contextual_fusion

    rng = T.Rng(seed)
    ph = BiLSTMParams.init(dim, hidden, rng, prefix="h")
    pv = BiLSTMParams.init(dim, hidden, rng, prefix="v")
    fu = FusionParams.init(hidden, dim, rng)
    rows = []
    for grid in sizes:
        s = grid[0] * grid[1]
        x = rng.normal((s, dim))
        with T.no_grad():
            t_fusion = _median_time(lambda: contextual_fusion(T.Tensor(x), grid, ph, pv, fu),
                                    repeats)
        t_attn = _median_time(lambda: attention_kernel(x), repeats)
        rows.append(dict(s=s, fusion_seconds=t_fusion, attention_seconds=t_attn))
    return rows

"""Synthetic shape scenes, VOC-layout manifests and image file I/O.

Generated datasets use the VOC directory layout, so one loader serves both::

    root/JPEGImages/<id>.png            RGB image
    root/SegmentationClass/<id>.png     ground-truth labels (evaluation only)
    root/Annotations/<id>.xml           object names -> image-level labels
    root/ImageSets/Segmentation/<split>.txt
    root/classes.txt                    one foreground class name per line
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

SHAPES = ("disk", "square", "triangle", "ring", "bar", "cross")
COLORS = (
    (0.85, 0.20, 0.20),
    (0.20, 0.75, 0.25),
    (0.20, 0.35, 0.90),
    (0.90, 0.85, 0.20),
    (0.80, 0.25, 0.80),
    (0.20, 0.80, 0.85),
)
IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".ppm", ".pgm")


class DataError(RuntimeError):
    pass


# -- image I/O -------------------------------------------------------------
def load_image(path):
    """RGB image as float64 ``[H, W, 3]`` in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(img):
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img):
    """Write PNG or binary PPM/PGM depending on the suffix."""
    arr = to_uint8(img) if np.asarray(img).dtype.kind == "f" else np.asarray(img, np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    path = Path(path)
    fmt = {".ppm": "PPM", ".pgm": "PPM", ".png": "PNG"}.get(path.suffix.lower())
    Image.fromarray(arr, mode=mode).save(path, format=fmt)


# -- synthetic scenes ------------------------------------------------------
def shape_mask(kind, size, cy, cx, r, vertical=False):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy ** 2 + dx ** 2 <= r ** 2
    if kind == "square":
        a = 0.8 * r
        return (np.abs(dy) <= a) & (np.abs(dx) <= a)
    if kind == "triangle":
        top, bottom = -r, 0.8 * r
        frac = (dy - top) / (bottom - top)
        return (dy >= top) & (dy <= bottom) & (np.abs(dx) <= frac * r)
    if kind == "ring":
        d2 = dy ** 2 + dx ** 2
        return (d2 <= r ** 2) & (d2 >= (0.55 * r) ** 2)
    if kind == "bar":
        if vertical:
            dy, dx = dx, dy
        return (np.abs(dy) <= 0.35 * r) & (np.abs(dx) <= r)
    if kind == "cross":
        t = 0.3 * r
        return ((np.abs(dy) <= t) & (np.abs(dx) <= r)) | ((np.abs(dx) <= t) & (np.abs(dy) <= r))
    raise ValueError(f"unknown shape {kind!r}")


def _background(rng, size):
    base = rng.uniform(0.3, 0.6)
    yy, xx = np.mgrid[0:size, 0:size] / size
    gy, gx = rng.uniform(-0.1, 0.1, size=2)
    freq, phase = rng.uniform(4, 10), rng.uniform(0, 2 * np.pi)
    angle = rng.uniform(0, np.pi)
    stripes = 0.04 * np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) * 2 * np.pi + phase)
    lum = base + gy * yy + gx * xx + stripes
    tint = rng.uniform(-0.03, 0.03, size=3)
    img = lum[..., None] + tint + rng.normal(0, 0.03, size=(size, size, 3))
    return img


def render_scene(rng, size=48, num_classes=3, p_class=0.4, p_extra=0.3):
    """One image, its label mask (0 = background) and its label set.

    Each class appears independently with probability ``p_class`` (empty sets
    are redrawn); every present class gets one shape, plus sometimes a second
    instance, never more than three shapes in total.  Shapes do not overlap.
    """
    if not 1 <= num_classes <= len(SHAPES):
        raise ValueError(f"num_classes must be in 1..{len(SHAPES)}")
    while True:
        present = [c for c in range(num_classes) if rng.random() < p_class]
        if present:
            break
    instances = list(present)
    while len(instances) < 3 and rng.random() < p_extra:
        instances.append(present[int(rng.integers(len(present)))])
    instances = instances[:3]

    img = _background(rng, size)
    mask = np.zeros((size, size), dtype=np.uint8)
    occupied = np.zeros((size, size), dtype=bool)
    placed = set()
    for c in instances:
        for _ in range(200):
            r = rng.uniform(0.15, 0.21) * size
            cy, cx = rng.uniform(r, size - 1 - r, size=2)
            m = shape_mask(SHAPES[c], size, cy, cx, r, vertical=bool(rng.random() < 0.5))
            grown = m.copy()
            grown[1:] |= m[:-1]
            grown[:-1] |= m[1:]
            grown[:, 1:] |= grown[:, :-1]
            grown[:, :-1] |= grown[:, 1:]
            if m.sum() and not (grown & occupied).any():
                break
        else:
            continue
        color = np.clip(np.array(COLORS[c]) + rng.uniform(-0.08, 0.08, size=3), 0, 1)
        img[m] = color + rng.normal(0, 0.03, size=(int(m.sum()), 3))
        mask[m] = c + 1
        occupied |= m
        placed.add(c)
    labels = frozenset(placed)
    if labels != frozenset(present):
        # extra instances never change the set; a missing class means placement failed
        return render_scene(rng, size, num_classes, p_class, p_extra)
    return np.clip(img, 0, 1), mask, labels


def _annotation_xml(image_id, size, names):
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = f"{image_id}.png"
    sz = ET.SubElement(root, "size")
    for tag, val in (("width", size), ("height", size), ("depth", 3)):
        ET.SubElement(sz, tag).text = str(val)
    for name in names:
        obj = ET.SubElement(ET.SubElement(root, "object"), "name")
        obj.text = name
    return ET.tostring(root, encoding="unicode")


def gen_synthetic(root, seed, n, image_size=48, classes=3, split="train"):
    """Write ``n`` seeded scenes under ``root`` in VOC layout; returns the ids."""
    root = Path(root)
    from .pseudo_label import save_mask, write_palette

    names = list(SHAPES[:classes])
    for sub in ("JPEGImages", "SegmentationClass", "Annotations", "ImageSets/Segmentation"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text("\n".join(names) + "\n")
    write_palette(root / "palette.txt", names,
                  [tuple(int(round(255 * v)) for v in col) for col in COLORS[:classes]])
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n):
        image_id = f"{split}_{i:05d}"
        img, mask, labels = render_scene(rng, image_size, classes)
        save_image(root / "JPEGImages" / f"{image_id}.png", img)
        save_mask(root / "SegmentationClass" / f"{image_id}.png", mask)
        present = [names[c] for c in sorted(labels)]
        (root / "Annotations" / f"{image_id}.xml").write_text(
            _annotation_xml(image_id, image_size, present))
        ids.append(image_id)
    (root / "ImageSets" / "Segmentation" / f"{split}.txt").write_text(
        "".join(f"{i}\n" for i in ids))
    return ids


# -- manifests -------------------------------------------------------------
@dataclass(frozen=True)
class Record:
    image_id: str
    image_path: Path
    labels: frozenset
    mask_path: Path | None = None


@dataclass
class DatasetManifest:
    records: list
    class_names: list = field(default_factory=list)

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.records)

    def without_masks(self):
        """Copy safe to hand to training: ground-truth mask paths removed."""
        return DatasetManifest([replace(r, mask_path=None) for r in self.records],
                               list(self.class_names))

    def label_matrix(self):
        y = np.zeros((len(self.records), self.num_classes))
        for i, r in enumerate(self.records):
            for c in r.labels:
                y[i, c] = 1.0
        return y


def _find_image(folder, image_id):
    for ext in IMAGE_EXTS:
        p = folder / f"{image_id}{ext}"
        if p.exists():
            return p
    return None


def _read_class_table(root):
    for name in ("classes.txt", "class_names.txt", "labels.txt"):
        p = root / name
        if p.exists():
            names = [ln.strip() for ln in p.read_text().splitlines() if ln.strip()]
            if names and names[0].lower() in ("background", "__background__"):
                names = names[1:]
            return names
    return None


def load_voc_manifest(root, split="train"):
    """Image ids, paths and image-level labels from a VOC-style directory.

    Labels come from ``Annotations/<id>.xml`` object names, or from the
    classes present in ``SegmentationClass/<id>.png`` when no XML exists.
    Missing masks are fine; they are only needed for evaluation.
    """
    root = Path(root)
    missing = []
    img_dir = root / "JPEGImages"
    if not img_dir.is_dir():
        missing.append("JPEGImages/")
    list_file = None
    for cand in (root / "ImageSets" / "Segmentation" / f"{split}.txt",
                 root / "ImageSets" / "Main" / f"{split}.txt"):
        if cand.exists():
            list_file = cand
            break
    if list_file is None:
        missing.append(f"ImageSets/Segmentation/{split}.txt")
    names = _read_class_table(root)
    if names is None:
        missing.append("classes.txt")
    if missing:
        raise DataError(f"{root}: not a VOC-style dataset, missing {', '.join(missing)}")

    index = {n: i for i, n in enumerate(names)}
    ids = [ln.split()[0] for ln in list_file.read_text().splitlines() if ln.strip()]
    seen = set()
    dups = sorted({i for i in ids if i in seen or seen.add(i)})
    if dups:
        raise DataError(f"{list_file}: duplicate image ids {dups}")

    from .pseudo_label import IGNORE, load_mask

    records = []
    for image_id in ids:
        img = _find_image(img_dir, image_id)
        if img is None:
            raise DataError(f"image for id {image_id!r} not found in {img_dir}")
        mask = _find_image(root / "SegmentationClass", image_id)
        xml = root / "Annotations" / f"{image_id}.xml"
        if xml.exists():
            objs = [o.findtext("name", "").strip() for o in ET.parse(xml).getroot().iter("object")]
            unknown = sorted({o for o in objs if o not in index})
            if unknown:
                raise DataError(f"{xml}: unknown class names {unknown}")
            labels = frozenset(index[o] for o in objs)
        elif mask is not None:
            vals = np.unique(load_mask(mask))
            labels = frozenset(int(v) - 1 for v in vals if v not in (0, IGNORE))
        else:
            raise DataError(f"no annotation or mask for id {image_id!r}")
        if any(c >= len(names) for c in labels):
            raise DataError(f"id {image_id!r}: class id out of range")
        records.append(Record(image_id, img, labels, mask))
    return DatasetManifest(records, names)


def load_images(manifest, size=None):
    """Stack the manifest's images into ``[N, H, W, 3]``."""
    imgs = []
    for r in manifest.records:
        img = load_image(r.image_path)
        if size is not None and img.shape[:2] != (size, size):
            with Image.open(r.image_path) as im:
                img = np.asarray(im.convert("RGB").resize((size, size), Image.BILINEAR),
                                 dtype=np.float64) / 255.0
        imgs.append(img)
    return np.stack(imgs) if imgs else np.zeros((0, size or 0, size or 0, 3))

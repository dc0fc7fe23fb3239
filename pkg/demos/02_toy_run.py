"""
A short weakly supervised run
=============================

Generate shape scenes, train on image-level labels only, then turn patch
scores into pseudo masks and score them against the hidden ground truth.
A few epochs are enough to see the pipeline move; the acceptance suite runs
the full schedule.
"""
import tempfile
from pathlib import Path

from wsseg import Config
from wsseg.data import gen_synthetic, load_voc_manifest
from wsseg.pipeline import evaluate_dirs, infer, train

root = Path(tempfile.mkdtemp())
gen_synthetic(root / "data", seed=1, n=64, split="train")
gen_synthetic(root / "data", seed=2, n=16, split="val")

cfg = Config(epochs=10, warm_epochs=10, data_root=str(root / "data"))
res = train(cfg, root / "run")
for row in res.history[::3]:
    print("epoch {epoch:2d}  loss {loss:.3f}  label acc {accuracy:.3f}".format(**row))

val = load_voc_manifest(root / "data", "val")
infer(res.checkpoint_path, val, root / "masks", crf=True)
for kind in ("bpm", "crf"):
    report = evaluate_dirs(root / "masks" / kind, val)
    print(kind, "mIoU", round(report.miou, 3))
print(report.table())

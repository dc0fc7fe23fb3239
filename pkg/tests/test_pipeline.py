import csv

import numpy as np
import pytest
from PIL import Image

from wsseg import pipeline
from wsseg import tensor as T
from wsseg.data import load_images, load_voc_manifest
from wsseg.model import Model
from wsseg.pipeline import (ABLATION_ROWS, TrainingError, ablate, bench_scaling, evaluate_dirs,
                            infer, label_stats, load_model, predict_masks, train, train_arrays)
from wsseg.pseudo_label import argmax_mask, load_mask, scores_to_probmap


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestTrain:
    def test_one_epoch_and_reload(self, tiny_cfg, tmp_path):
        res = train(tiny_cfg.replace(epochs=1), tmp_path)
        rows = read_rows(res.loss_path)
        assert rows[0] == pipeline.LOSS_HEADER and len(rows) == 2
        model, cfg = load_model(res.checkpoint_path)
        assert cfg == tiny_cfg.replace(epochs=1)
        x = np.random.default_rng(0).random((3, 16, 16, 3))
        with T.no_grad():
            a = res.model.scores(x).data
            b = model.scores(x).data
        assert a.tobytes() == b.tobytes()

    def test_lr_schedule_logged(self, tiny_cfg, tmp_path):
        res = train(tiny_cfg.replace(epochs=4, warm_epochs=2), tmp_path)
        lrs = [float(r[1]) for r in read_rows(res.loss_path)[1:]]
        assert lrs == [1e-3, 1e-3, 1e-4, 1e-4]

    def test_reproducible(self, tiny_cfg, tmp_path):
        for d in ("a", "b"):
            train(tiny_cfg.replace(epochs=2), tmp_path / d)
        for name in ("checkpoint.bin", "loss.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_never_opens_masks(self, tiny_cfg, tiny_root, tmp_path, monkeypatch):
        opened = []
        real_open = Image.open

        def spy(fp, *a, **kw):
            opened.append(str(fp))
            return real_open(fp, *a, **kw)

        monkeypatch.setattr(Image, "open", spy)
        man = load_voc_manifest(tiny_root, "train")
        opened.clear()  # label parsing may read masks when XML is absent; training may not
        assert all(r.mask_path is not None for r in man.records)
        train(tiny_cfg.replace(epochs=1), tmp_path, manifest=man)
        assert opened and not any("SegmentationClass" in p for p in opened)

    def test_nonfinite_loss_keeps_last_checkpoint(self, tiny_cfg, tiny_root, tmp_path):
        man = load_voc_manifest(tiny_root, "train")
        x, y = load_images(man, 16), man.label_matrix()

        def poison(epoch, model, row):
            model.head.b_out.data = np.array([np.nan])

        with pytest.raises(TrainingError, match="non-finite"):
            train_arrays(tiny_cfg.replace(epochs=3), x, y, tmp_path, on_epoch=poison)
        model, _ = load_model(tmp_path / "checkpoint.bin")
        assert all(np.isfinite(p.data).all() for p in model.parameters())
        assert len(read_rows(tmp_path / "loss.csv")) == 2

    def test_target_accuracy_stops(self, tiny_cfg, tiny_root):
        man = load_voc_manifest(tiny_root, "train")
        x, y = load_images(man, 16), man.label_matrix()
        res = train_arrays(tiny_cfg.replace(epochs=5, warm_epochs=0, target_accuracy=0.01), x, y)
        assert len(res.history) == 1

    def test_callback_stops(self, tiny_cfg, tiny_root):
        man = load_voc_manifest(tiny_root, "train")
        res = train_arrays(tiny_cfg.replace(epochs=5), load_images(man, 16), man.label_matrix(),
                           on_epoch=lambda e, m, r: e == 1)
        assert len(res.history) == 2

    def test_input_validation(self, tiny_cfg):
        with pytest.raises(TrainingError):
            train_arrays(tiny_cfg, np.zeros((0, 16, 16, 3)), np.zeros((0, 3)))

    def test_label_stats(self):
        p = np.array([[0.9, 0.2], [0.6, 0.7]])
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert label_stats(p, y) == (2 / 3, 1.0, 0.75)


class TestInfer:
    @pytest.fixture
    def trained(self, tiny_cfg, tmp_path):
        return train(tiny_cfg.replace(epochs=1), tmp_path / "run").checkpoint_path

    def test_crf_off_is_argmax_of_upsample(self, trained, tiny_root):
        model, cfg = load_model(trained)
        man = load_voc_manifest(tiny_root, "val")
        imgs = load_images(man, 16)
        z, bpm, refined = predict_masks(model, imgs, cfg, crf=False)
        assert refined is None
        for zi, m in zip(z, bpm):
            ref = argmax_mask(scores_to_probmap(zi, (2, 2), (16, 16), cfg.bg_threshold))
            assert np.array_equal(m, ref)

    def test_outputs_and_determinism(self, trained, tiny_root, tmp_path):
        man = load_voc_manifest(tiny_root, "val")
        for d in ("a", "b"):
            infer(trained, man, tmp_path / d, crf=True)
        for sub in ("bpm", "crf"):
            for rec in man.records:
                a = (tmp_path / "a" / sub / f"{rec.image_id}.png").read_bytes()
                assert a == (tmp_path / "b" / sub / f"{rec.image_id}.png").read_bytes()
        dump = np.load(tmp_path / "a" / "scores" / f"{man.records[0].image_id}.npz")
        assert dump["Z"].shape == (4, 3) and dump["p"].shape == (3,)
        assert (tmp_path / "a" / "palette.txt").exists()

    def test_crf_off_writes_no_crf_dir(self, trained, tiny_root, tmp_path):
        infer(trained, load_voc_manifest(tiny_root, "val"), tmp_path, crf=False)
        assert not (tmp_path / "crf").exists()

    def test_larger_infer_size(self, trained, tiny_root, tmp_path):
        man = load_voc_manifest(tiny_root, "val")
        infer(trained, man, tmp_path, crf=False, infer_size=32)
        mask = load_mask(tmp_path / "bpm" / f"{man.records[0].image_id}.png")
        assert mask.shape == (16, 16)
        z = np.load(tmp_path / "scores" / f"{man.records[0].image_id}.npz")["Z"]
        assert z.shape == (16, 3)

    def test_bad_infer_size(self, trained):
        model, cfg = load_model(trained)
        with pytest.raises(T.ShapeError):
            pipeline._forward_scores(model, np.zeros((1, 16, 16, 3)), infer_size=20)

    def test_evaluate_dirs(self, trained, tiny_root, tmp_path, caplog):
        man = load_voc_manifest(tiny_root, "val")
        infer(trained, man, tmp_path, crf=False)
        (tmp_path / "bpm" / f"{man.records[0].image_id}.png").unlink()
        rep = evaluate_dirs(tmp_path / "bpm", man)
        assert "no prediction" in caplog.text
        assert rep.gt_pixels.sum() == 3 * 16 * 16


class TestAblationWiring:
    @pytest.mark.parametrize("tok,lstm", [(t, b) for t in (True, False) for b in (True, False)])
    def test_score_shapes_match_full_model(self, tiny_cfg, tok, lstm):
        x = np.random.default_rng(1).random((2, 16, 16, 3))
        full = Model(tiny_cfg.model_config())
        var = Model(tiny_cfg.replace(use_class_token=tok, use_bilstm=lstm).model_config())
        assert var.scores(x).shape == full.scores(x).shape == (2, 4, 3)
        assert var.image_scores(x).shape == (2, 3)
        assert (var.bank is None) == (not tok) and (var.fusion is None) == (not lstm)

    def test_ablate_table(self, tiny_cfg, tmp_path):
        out = tmp_path / "ablation.csv"
        results = ablate(tiny_cfg.replace(epochs=1), seeds=(0,), out_path=out)
        assert [r["variant"] for r in results] == [r[0] for r in ABLATION_ROWS]
        rows = read_rows(out)
        assert rows[0][:3] == ["variant", "class_token", "bilstm"]
        assert len(rows) == 1 + 2 * len(ABLATION_ROWS)
        assert all(0 <= r["miou"] <= 1 for r in results)


def test_bench_scaling_rows():
    rows = bench_scaling(sizes=((2, 4), (4, 4)), dim=4, hidden=2, repeats=1)
    assert [r["s"] for r in rows] == [8, 16]
    assert all(r["fusion_seconds"] > 0 and r["attention_seconds"] > 0 for r in rows)

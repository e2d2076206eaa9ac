import numpy as np
import pytest

from frxa import datasets as D
from frxa import models as M
from frxa import tensor as T
from frxa import training as TR


class FakeRng:
    """Scripted stand-in for a numpy Generator."""

    def __init__(self, crop=4, coin=0.9):
        self.crop = crop
        self.coin = coin

    def integers(self, lo, hi):
        return self.crop

    def random(self):
        return self.coin


def make_param(value, id="p"):
    return T.Parameter(np.asarray(value, dtype=np.float32).reshape(1, 1, 1, 1), id)


class TestAdam:
    def test_zero_gradient_never_moves_parameters(self):
        p = make_param(2.5)
        state = TR.AdamState()
        for _ in range(5):
            TR.adam_step([p], [np.zeros_like(p.data)], state, lr=0.05)
        assert float(p.data.reshape(())) == 2.5

    def test_first_step_is_signed_lr(self):
        p = make_param(1.0)
        state = TR.AdamState()
        g = np.full((1, 1, 1, 1), 0.3, dtype=np.float32)
        TR.adam_step([p], [g], state, lr=0.05)
        # bias-corrected first step: -lr * g / (|g| + eps) ~ -0.05
        assert abs(float(p.data.reshape(())) - 0.95) < 1e-6
        assert state.t == 1

    def test_quadratic_converges(self):
        # minimize f(w) = w^2 from w0 = 1 with the scripted oracle run
        p = make_param(1.0)
        state = TR.AdamState()
        for _ in range(200):
            g = 2.0 * p.data
            TR.adam_step([p], [g.astype(np.float32)], state, lr=0.05)
        assert abs(float(p.data.reshape(()))) < 0.1

    def test_shape_mismatch(self):
        p = make_param(1.0)
        with pytest.raises(T.ShapeError):
            TR.adam_step([p], [np.zeros((1, 2, 1, 1), dtype=np.float32)], TR.AdamState(), 0.05)


class TestNormStats:
    def test_hand_values(self):
        imgs = [np.full((2, 2), 255, dtype=np.uint8), np.zeros((2, 2), dtype=np.uint8)]
        stats = TR.compute_norm_stats(imgs)
        assert abs(stats.mean - 0.5) < 1e-12
        assert abs(stats.std - 0.5) < 1e-12

    def test_constant_set_gets_unit_std(self):
        stats = TR.compute_norm_stats([np.full((4, 4), 100, dtype=np.uint8)])
        assert stats.std == 1.0


class TestAugmentation:
    def test_degenerate_randomness_equals_eval(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(50, 50), dtype=np.uint8)
        stats = TR.NormStats(mean=0.4, std=0.3)
        train_out = TR.augment_train(img, FakeRng(crop=4, coin=0.9), stats)
        eval_out = TR.augment_eval(img, stats)
        np.testing.assert_array_equal(train_out, eval_out)

    def test_flip_is_involution(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(40, 40), dtype=np.uint8)
        stats = TR.NormStats(mean=0.0, std=1.0)
        unflipped = TR.augment_train(img, FakeRng(crop=2, coin=0.9), stats)
        flipped = TR.augment_train(img, FakeRng(crop=2, coin=0.1), stats)
        np.testing.assert_array_equal(flipped[:, ::-1], unflipped)

    def test_constant_image_normalizes_to_constant(self):
        stats = TR.NormStats(mean=0.25, std=0.5)
        out = TR.augment_eval(np.full((30, 30), 200, dtype=np.uint8), stats)
        expect = (200 / 255.0 - 0.25) / 0.5
        assert out.shape == (64, 64)
        np.testing.assert_allclose(out, expect, rtol=1e-6)

    def test_eval_center_crop_of_64_input(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
        stats = TR.NormStats(mean=0.0, std=1.0)
        out = TR.augment_eval(img, stats)
        full = TR.bilinear_resize(img, 72, 72)
        np.testing.assert_allclose(out, (full[4:68, 4:68] / 255.0).astype(np.float32))

    def test_eval_deterministic(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(48, 48), dtype=np.uint8)
        stats = TR.NormStats(mean=0.1, std=0.9)
        a = TR.augment_eval(img, stats)
        b = TR.augment_eval(img, stats)
        assert a.tobytes() == b.tobytes()


class TestPrepareBase:
    def test_region_crop_applied(self):
        ds = D.generate_synthetic(2, 2, "mouth", seed=0)
        face = ds.faces[0]
        out = TR.prepare_base_image(face, "mouth", padding=True)
        assert out.shape[0] == out.shape[1]  # padded square
        assert out.shape[0] < 64  # genuinely cropped

    def test_whole_face_without_landmarks_uses_full_image(self):
        face = D.LabeledFace(
            image=np.zeros((30, 40), dtype=np.uint8), label=0,
            class_names=("a", "b"), landmarks=None,
        )
        out = TR.prepare_base_image(face, "whole_face", padding=False)
        assert out.shape == (30, 40)

    def test_other_region_without_landmarks_fails(self):
        face = D.LabeledFace(
            image=np.zeros((30, 40), dtype=np.uint8), label=0,
            class_names=("a", "b"), landmarks=None,
        )
        with pytest.raises(TR.TrainingError, match="landmarks"):
            TR.prepare_base_image(face, "mouth", padding=False)

    def test_no_padding_keeps_aspect(self):
        face = D.LabeledFace(
            image=np.zeros((30, 60), dtype=np.uint8), label=0,
            class_names=("a", "b"), landmarks=None,
        )
        out = TR.prepare_base_image(face, None, padding=False)
        assert out.shape == (30, 60)


TINY_ARCH = M.ClassifierConfig(conv_plan=((4,), (8,)), num_classes=2, input_size=64)


def tiny_train(tmp_path=None, runs=1, epochs=2, seed=0, dataset=None):
    ds = dataset or D.generate_synthetic(2, 10, "mouth", seed=1)
    cfg = TR.TrainConfig(
        max_epochs=epochs, batch_size=8, runs=runs, seed=seed, lr0=0.01,
    )
    log_path = None if tmp_path is None else str(tmp_path / "train.log")
    ckpt = TR.train("classifier", ds, "mouth", cfg, arch=TINY_ARCH, log_path=log_path)
    return ckpt, log_path


class TestTrainLoop:
    def test_fixed_seed_checkpoints_bit_identical(self, tmp_path):
        a, _ = tiny_train()
        b, _ = tiny_train()
        pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_epoch_zero_loss_reproducible_without_augmentation(self):
        ds = D.generate_synthetic(2, 10, "mouth", seed=1)
        cfg = TR.TrainConfig(max_epochs=1, batch_size=8, runs=1, seed=3, augmentation=False)
        a = TR.train("classifier", ds, "mouth", cfg, arch=TINY_ARCH)
        b = TR.train("classifier", ds, "mouth", cfg, arch=TINY_ARCH)
        assert a.log["epochs"][0] == b.log["epochs"][0]

    def test_log_file_and_lr_monotone(self, tmp_path):
        ds = D.generate_synthetic(2, 10, "mouth", seed=1)
        cfg = TR.TrainConfig(
            max_epochs=8, batch_size=8, runs=1, seed=0, lr0=0.02,
            lr_patience=1, min_lr=1e-4,
        )
        ckpt = TR.train(
            "classifier", ds, "mouth", cfg, arch=TINY_ARCH,
            log_path=str(tmp_path / "t.log"),
        )
        lines = (tmp_path / "t.log").read_text().strip().splitlines()
        lrs = [float(ln.split("lr=")[1].split()[0]) for ln in lines]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert all(lr >= 1e-4 for lr in lrs)

    def test_selected_accuracy_is_max_over_runs(self):
        ckpt, _ = tiny_train(runs=2, epochs=2, seed=7)
        best = max(r["best_test_accuracy"] for r in ckpt.log["runs"])
        assert ckpt.best_test_accuracy == best
        assert ckpt.log["runs"][ckpt.log["selected_run"]]["best_test_accuracy"] == best

    def test_checkpoint_records_protocol(self):
        ckpt, _ = tiny_train()
        assert ckpt.region == "mouth"
        assert ckpt.kind == "classifier"
        assert ckpt.padding is True
        assert ckpt.class_names == ("class0", "class1")

    def test_empty_split_rejected(self):
        ds = D.generate_synthetic(2, 10, "mouth", seed=1)
        for f in ds.faces:
            f.split = "train"
        ds.manifest.counts = D._count_matrix(ds.faces, ds.class_names)
        with pytest.raises(TR.TrainingError, match="non-empty"):
            TR.train("classifier", ds, "mouth", TR.TrainConfig(runs=1), arch=TINY_ARCH)

    def test_class_missing_from_train_rejected(self):
        ds = D.generate_synthetic(2, 5, "mouth", seed=1)
        for f in ds.faces:
            if f.label == 1:
                f.split = "test"
        with pytest.raises(TR.TrainingError, match="absent from train"):
            TR.train("classifier", ds, "mouth", TR.TrainConfig(runs=1), arch=TINY_ARCH)

    def test_arch_class_count_must_match(self):
        ds = D.generate_synthetic(3, 5, "mouth", seed=1)
        with pytest.raises(TR.TrainingError, match="classes"):
            TR.train("classifier", ds, "mouth", TR.TrainConfig(runs=1), arch=TINY_ARCH)


class TestCheckpointFormat:
    def test_roundtrip_bit_exact_arrays(self, tmp_path):
        ckpt, _ = tiny_train()
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        again = TR.ModelCheckpoint.load(p)
        assert again.kind == ckpt.kind
        assert again.class_names == ckpt.class_names
        assert list(again.arrays) == list(ckpt.arrays)
        for key in ckpt.arrays:
            assert again.arrays[key].tobytes() == ckpt.arrays[key].tobytes()
        assert again.best_test_accuracy == ckpt.best_test_accuracy

    def test_magic_and_header(self, tmp_path):
        ckpt, _ = tiny_train()
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        raw = p.read_bytes()
        assert raw[:5] == b"FRXA1"
        import struct

        (hlen,) = struct.unpack("<I", raw[5:9])
        import json

        header = json.loads(raw[9 : 9 + hlen].decode("utf-8"))
        assert header["kind"] == "classifier"
        assert header["format_version"] == 1

    def test_rebuilt_model_reproduces_predictions(self, tmp_path):
        ds = D.generate_synthetic(2, 10, "mouth", seed=1)
        ckpt, _ = tiny_train(dataset=ds)
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        model_a = ckpt.build_model()
        model_b = TR.ModelCheckpoint.load(p).build_model()
        base = [TR.prepare_base_image(f, "mouth", True) for f in ds.split("test")]
        pa = TR.predict_labels(model_a, base, ckpt.stats)
        pb = TR.predict_labels(model_b, base, ckpt.stats)
        np.testing.assert_array_equal(pa, pb)

    def test_truncated_file_rejected(self, tmp_path):
        ckpt, _ = tiny_train()
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        raw = p.read_bytes()
        (tmp_path / "cut.ckpt").write_bytes(raw[:-5])
        with pytest.raises(TR.CheckpointError, match="truncated"):
            TR.ModelCheckpoint.load(tmp_path / "cut.ckpt")

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOPE!" + bytes(8))
        with pytest.raises(TR.CheckpointError, match="magic"):
            TR.ModelCheckpoint.load(p)

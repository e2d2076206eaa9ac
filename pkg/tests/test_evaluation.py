import numpy as np
import pytest

from frxa import datasets as D
from frxa import evaluation as E
from frxa import models as M
from frxa import training as TR

TINY_ARCH = M.ClassifierConfig(conv_plan=((4,), (8,)), num_classes=2, input_size=64)
TINY_VIS = M.VisualizerConfig(
    initial_channels=4, blocks=2, layers_per_block=2, growth_rate=3,
    num_classes=2, input_size=64,
)


@pytest.fixture(scope="module")
def tiny_setup():
    ds = D.generate_synthetic(2, 10, "mouth", seed=1)
    cfg = TR.TrainConfig(max_epochs=2, batch_size=8, runs=1, seed=0, lr0=0.01)
    clf = TR.train("classifier", ds, "mouth", cfg, arch=TINY_ARCH)
    vis = TR.train("visualizer", ds, "mouth", cfg, arch=TINY_VIS)
    return ds, clf, vis


class TestConfusionMatrix:
    def test_perfect_predictions(self):
        m = E.ConfusionMatrix.from_predictions([0, 1, 2, 1], [0, 1, 2, 1], ("a", "b", "c"))
        assert m.accuracy == 1.0
        np.testing.assert_array_equal(np.diag(m.counts), [1, 2, 1])
        assert m.counts.sum() == np.trace(m.counts)

    def test_counting_example(self):
        # 10 samples of class 0: 7 right, 3 predicted as class 2
        true = [0] * 10
        pred = [0] * 7 + [2] * 3
        m = E.ConfusionMatrix.from_predictions(true, pred, ("a", "b", "c"))
        np.testing.assert_array_equal(m.counts[0], [7, 0, 3])
        assert m.accuracy == 0.7

    def test_empty_class_row_normalizes_to_zeros(self):
        m = E.ConfusionMatrix.from_predictions([0, 0], [0, 1], ("a", "b"))
        norm = m.normalized_rows
        np.testing.assert_array_equal(norm[1], [0.0, 0.0])
        np.testing.assert_allclose(norm[0].sum(), 1.0)

    def test_accuracy_is_trace_over_total(self):
        rng = np.random.default_rng(0)
        true = rng.integers(0, 4, size=200)
        pred = rng.integers(0, 4, size=200)
        m = E.ConfusionMatrix.from_predictions(true, pred, ("a", "b", "c", "d"))
        assert m.accuracy == np.trace(m.counts) / 200

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        true = rng.integers(0, 3, size=100)
        pred = rng.integers(0, 3, size=100)
        m = E.ConfusionMatrix.from_predictions(true, pred, ("a", "b", "c"))
        perm = np.array([2, 0, 1])  # relabel classes
        m2 = E.ConfusionMatrix.from_predictions(perm[true], perm[pred], ("c", "a", "b"))
        np.testing.assert_array_equal(m2.counts[np.ix_(perm, perm)], m.counts)

    def test_masked_class_rule(self):
        # class "c" masked: its row leaves; leakage into it stays as errors
        true = [0, 0, 0, 1, 1, 2]
        pred = [0, 1, 2, 1, 2, 2]
        m = E.ConfusionMatrix.from_predictions(true, pred, ("a", "b", "c"))
        sub, acc = m.masked("c")
        assert sub.class_names == ("a", "b")
        np.testing.assert_array_equal(sub.counts, [[1, 1], [0, 1]])
        assert acc == pytest.approx(2 / 5)  # 5 kept-class samples, 2 correct

    def test_row_sums_equal_support(self):
        m = E.ConfusionMatrix.from_predictions([0, 1, 1, 1], [1, 1, 0, 1], ("a", "b"))
        np.testing.assert_array_equal(m.support(), [1, 3])

    def test_image_rendering(self):
        m = E.ConfusionMatrix.from_predictions([0, 1], [0, 1], ("a", "b"))
        img = m.to_image(cell=4)
        assert img.shape == (8, 8) and img.dtype == np.uint8
        assert img[0, 0] == 255 and img[0, 7] == 0


class TestEvaluate:
    def test_deterministic(self, tiny_setup):
        ds, clf, _ = tiny_setup
        acc1, m1 = E.evaluate(clf, ds)
        acc2, m2 = E.evaluate(clf, ds)
        assert acc1 == acc2
        np.testing.assert_array_equal(m1.counts, m2.counts)

    def test_matrix_support_matches_split(self, tiny_setup):
        ds, clf, _ = tiny_setup
        _, m = E.evaluate(clf, ds, split="test")
        assert m.total == len(ds.split("test"))

    def test_class_mismatch_rejected(self, tiny_setup):
        ds, clf, _ = tiny_setup
        other = D.generate_synthetic(3, 4, "mouth", seed=2)
        with pytest.raises(E.EvaluationError, match="classes"):
            E.evaluate(clf, other)


class TestCompareRegions:
    def test_fixed_order_with_absent_rows(self, tiny_setup):
        ds, clf, _ = tiny_setup
        report = E.compare_regions({"mouth": clf}, ds)
        names = [name for name, _, _ in report.rows]
        assert names == list(E.REGION_ORDER)
        assert names[-1] == "whole_face"
        assert report.accuracy_of("mouth") is not None
        assert report.accuracy_of("eyes") is None
        text = report.to_text()
        assert "absent" in text and "mouth" in text

    def test_masked_class_flag(self, tiny_setup):
        ds, clf, _ = tiny_setup
        report = E.compare_regions({"mouth": clf}, ds, masked_class="class1")
        assert report.masked_class == "class1"
        _, _, matrix = report.rows[0]
        assert matrix.class_names == ("class0",)

    def test_unknown_region_rejected(self, tiny_setup):
        ds, clf, _ = tiny_setup
        with pytest.raises(E.EvaluationError, match="unknown region"):
            E.compare_regions({"cheeks": clf}, ds)


class TestExportFeatures:
    def test_export_layout(self, tiny_setup, tmp_path):
        ds, _, vis = tiny_setup
        out = tmp_path / "features.tsv"
        E.export_features(vis, ds, "test", out)
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# classes: class0,class1")
        header = lines[1].split("\t")
        k = vis.build_model().config.feature_channels
        assert header[:2] == ["source_id", "label"]
        assert len(header) == k + 2
        assert len(lines) - 2 == len(ds.split("test"))
        first = lines[2].split("\t")
        assert first[0] == ds.split("test")[0].source_id

    def test_identical_inputs_identical_rows(self, tiny_setup, tmp_path):
        ds, _, vis = tiny_setup
        twin = D.Dataset(
            faces=[ds.split("test")[0], ds.split("test")[0]], manifest=ds.manifest
        )
        out = tmp_path / "twin.tsv"
        E.export_features(vis, twin, "test", out)
        lines = out.read_text().splitlines()
        assert lines[2].split("\t")[1:] == lines[3].split("\t")[1:]

    def test_classifier_checkpoint_rejected(self, tiny_setup, tmp_path):
        ds, clf, _ = tiny_setup
        with pytest.raises(E.EvaluationError, match="visualizer"):
            E.export_features(clf, ds, "test", tmp_path / "x.tsv")

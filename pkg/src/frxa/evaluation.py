"""Accuracy, confusion matrices, per-region comparison and feature export."""

from dataclasses import dataclass, field

import numpy as np

from . import models as M
from .datasets import IngestError
from .regions import REGION_ORDER
from .training import prepare_base_image, predict_labels


class EvaluationError(ValueError):
    """Checkpoint and dataset disagree, or inputs are malformed."""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows = true class, cols = predicted
    class_names: tuple

    @classmethod
    def from_predictions(cls, true_labels, predicted, class_names):
        c = len(class_names)
        counts = np.zeros((c, c), dtype=np.int64)
        for t, p in zip(np.asarray(true_labels), np.asarray(predicted)):
            counts[int(t), int(p)] += 1
        return cls(counts=counts, class_names=tuple(class_names))

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def accuracy(self):
        total = self.total
        correct = int(np.trace(self.counts))
        return correct / total if total else 0.0

    @property
    def normalized_rows(self):
        sums = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        nonzero = sums[:, 0] > 0
        out[nonzero] = self.counts[nonzero] / sums[nonzero]
        return out

    def support(self):
        return self.counts.sum(axis=1)

    def masked(self, class_name):
        """Drop one class's row and column (e.g. the FER+ contempt caveat).

        Samples of the masked true class leave the evaluation entirely;
        kept-class samples predicted into the masked class stay in the
        denominator as errors.
        """
        if class_name not in self.class_names:
            raise EvaluationError(f"{class_name!r} not among classes {self.class_names}")
        i = self.class_names.index(class_name)
        keep = [j for j in range(len(self.class_names)) if j != i]
        sub = self.counts[np.ix_(keep, keep)]
        kept_total = int(self.counts[keep].sum())  # includes leakage into the masked column
        correct = int(np.trace(sub))
        accuracy = correct / kept_total if kept_total else 0.0
        names = tuple(n for n in self.class_names if n != class_name)
        return ConfusionMatrix(counts=sub, class_names=names), accuracy

    def to_text(self):
        width = max(9, max(len(n) for n in self.class_names) + 1)
        lines = ["true\\pred".ljust(width) + "".join(n.rjust(width) for n in self.class_names)]
        for i, name in enumerate(self.class_names):
            row = "".join(str(int(v)).rjust(width) for v in self.counts[i])
            lines.append(name.ljust(width) + row)
        lines.append(f"accuracy {self.accuracy:.6f} ({int(np.trace(self.counts))}/{self.total})")
        return "\n".join(lines)

    def to_image(self, cell=24):
        """Row-normalized matrix as a grayscale grid, one square per cell."""
        norm = self.normalized_rows
        c = len(self.class_names)
        img = np.zeros((c * cell, c * cell), dtype=np.uint8)
        for i in range(c):
            for j in range(c):
                img[i * cell : (i + 1) * cell, j * cell : (j + 1) * cell] = int(
                    round(255 * norm[i, j])
                )
        return img


def evaluate(checkpoint, dataset, split="test", region=None):
    """Deterministic evaluation pass: accuracy plus the confusion matrix."""
    if tuple(checkpoint.class_names) != tuple(dataset.class_names):
        raise EvaluationError(
            f"checkpoint classes {checkpoint.class_names} do not match "
            f"dataset classes {tuple(dataset.class_names)}"
        )
    faces = dataset.split(split)
    if not faces:
        raise EvaluationError(f"split {split!r} is empty")
    region = region if region is not None else checkpoint.region
    model = checkpoint.build_model()
    base = [
        prepare_base_image(f, region, checkpoint.padding, checkpoint.margin) for f in faces
    ]
    preds = predict_labels(model, base, checkpoint.stats)
    labels = np.array([f.label for f in faces], dtype=np.int64)
    matrix = ConfusionMatrix.from_predictions(labels, preds, dataset.class_names)
    return matrix.accuracy, matrix


@dataclass
class RegionReport:
    dataset_name: str
    split: str
    class_names: tuple
    rows: list = field(default_factory=list)  # (region, accuracy or None, matrix or None)
    masked_class: str = None

    def accuracy_of(self, region):
        for name, acc, _ in self.rows:
            if name == region:
                return acc
        raise KeyError(region)

    def to_text(self):
        lines = [
            f"dataset: {self.dataset_name}  split: {self.split}",
            f"classes: {', '.join(self.class_names)}",
        ]
        if self.masked_class:
            lines.append(f"masked class: {self.masked_class}")
        lines.append("")
        lines.append("region        accuracy")
        for name, acc, _ in self.rows:
            shown = f"{acc * 100:7.2f}%" if acc is not None else "  absent"
            lines.append(f"{name:<13} {shown}")
        for name, acc, matrix in self.rows:
            if matrix is None:
                continue
            lines.append("")
            lines.append(f"[{name}]")
            lines.append(matrix.to_text())
        return "\n".join(lines) + "\n"


def compare_regions(checkpoints, dataset, split="test", masked_class=None):
    """Evaluate one checkpoint per region into a fixed-order report.

    ``checkpoints`` maps region name -> ModelCheckpoint; missing regions
    are reported as absent.  All checkpoints must share the dataset's
    class list.
    """
    for name, ckpt in checkpoints.items():
        if name not in REGION_ORDER:
            raise EvaluationError(f"unknown region {name!r} in checkpoints")
        if tuple(ckpt.class_names) != tuple(dataset.class_names):
            raise EvaluationError(
                f"checkpoint for {name!r} has classes {ckpt.class_names}, "
                f"dataset has {tuple(dataset.class_names)}"
            )
    report = RegionReport(
        dataset_name=dataset.manifest.name,
        split=split,
        class_names=tuple(dataset.class_names),
        masked_class=masked_class,
    )
    for region in REGION_ORDER:
        ckpt = checkpoints.get(region)
        if ckpt is None:
            report.rows.append((region, None, None))
            continue
        _, matrix = evaluate(ckpt, dataset, split=split, region=region)
        if masked_class:
            matrix, accuracy = matrix.masked(masked_class)
        else:
            accuracy = matrix.accuracy
        report.rows.append((region, accuracy, matrix))
    return report


def export_features(checkpoint, dataset, split, out_path, batch_size=64):
    """Write one row per sample: source_id, label, then the K pooled features."""
    if checkpoint.kind != "visualizer":
        raise EvaluationError(f"feature export needs a visualizer, got {checkpoint.kind!r}")
    if tuple(checkpoint.class_names) != tuple(dataset.class_names):
        raise EvaluationError("checkpoint classes do not match dataset classes")
    faces = dataset.split(split)
    if not faces:
        raise EvaluationError(f"split {split!r} is empty")
    model = checkpoint.build_model()
    base = [
        prepare_base_image(f, checkpoint.region, checkpoint.padding, checkpoint.margin)
        for f in faces
    ]
    from .training import augment_eval, batch_from_crops

    feature_rows = []
    for lo in range(0, len(base), batch_size):
        chunk = base[lo : lo + batch_size]
        batch = batch_from_crops([augment_eval(img, checkpoint.stats) for img in chunk])
        feature_rows.append(M.bottleneck_features(model, batch))
    feats = np.concatenate(feature_rows, axis=0)
    k = feats.shape[1]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("# classes: " + ",".join(dataset.class_names) + "\n")
        fh.write("source_id\tlabel\t" + "\t".join(f"f{j:03d}" for j in range(k)) + "\n")
        for face, row in zip(faces, feats):
            values = "\t".join(f"{v:.8g}" for v in row)
            fh.write(f"{face.source_id}\t{face.label}\t{values}\n")
    return out_path

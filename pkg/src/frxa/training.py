"""Training protocol: augmentation, Adam, plateau lr decay, early stopping,
multi-run model selection and bit-exact checkpoints.

Each training makes ``runs`` independent seeded passes (seed + run_index)
and keeps the parameters of the best test-accuracy epoch of the best run.
The learning rate starts at 0.05 and is halved after ``lr_patience``
evaluations without test-accuracy improvement; a run stops early after
``stop_patience`` epochs without improvement.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import models as M
from . import tensor as T
from .imageio import bilinear_resize
from .regions import DEFAULT_MARGIN, extract_region, pad_to_square

RESIZE_SIDE = 72
CROP_SIDE = 64
CHECKPOINT_MAGIC = b"FRXA1"


class TrainingError(RuntimeError):
    """Dataset or configuration unusable for training."""


class DivergenceError(RuntimeError):
    """Loss became non-finite during optimization."""


class CheckpointError(ValueError):
    """Checkpoint bytes do not follow the declared format."""


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.05
    max_epochs: int = 100
    batch_size: int = 32
    runs: int = 5
    lr_decay_factor: float = 0.5
    lr_patience: int = 3
    stop_patience: int = 10
    min_lr: float = 1e-5
    seed: int = 0
    augmentation: bool = True
    padding: bool = True

    def __post_init__(self):
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise TrainingError(f"lr_decay_factor must be in (0, 1), got {self.lr_decay_factor}")
        if self.min_lr <= 0.0:
            raise TrainingError(f"min_lr must be positive, got {self.min_lr}")
        if self.lr_patience < 1 or self.stop_patience < 1:
            raise TrainingError("patience values must be >= 1")
        if self.lr0 <= 0.0 or self.max_epochs < 1 or self.batch_size < 1 or self.runs < 1:
            raise TrainingError("lr0, max_epochs, batch_size and runs must be positive")


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    """First/second moment estimates per parameter id plus the step count."""

    def __init__(self, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if lr <= 0.0:
        raise TrainingError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise T.ShapeError(f"{len(params)} params vs {len(grads)} grads")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise T.ShapeError(f"{p.id}: grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m.setdefault(p.id, np.zeros_like(p.data))
        v = state.v.setdefault(p.id, np.zeros_like(p.data))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data[...] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


# ---------------------------------------------------------------------------
# preprocessing and augmentation

@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


def compute_norm_stats(images):
    """Pixel mean/std of [0, 1] scaled images, over every pixel of the set."""
    total = 0.0
    total_sq = 0.0
    count = 0
    for img in images:
        x = np.asarray(img, dtype=np.float64) / 255.0
        total += x.sum()
        total_sq += (x * x).sum()
        count += x.size
    if count == 0:
        raise TrainingError("cannot compute normalization statistics of an empty set")
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return NormStats(mean=mean, std=float(np.sqrt(var) if var > 1e-12 else 1.0))


def prepare_base_image(face, region, padding, margin=DEFAULT_MARGIN):
    """Region crop (when a region and landmarks exist) plus optional padding.

    ``region=None`` uses the full image; ``whole_face`` without landmarks
    falls back to the full image since the crop would cover it anyway.
    """
    if region is None:
        img = face.image
    elif face.landmarks is None:
        if region == "whole_face" or getattr(region, "name", None) == "whole_face":
            img = face.image
        else:
            name = getattr(region, "name", region)
            raise TrainingError(
                f"sample {face.source_id!r} has no landmarks; cannot crop region {name!r}"
            )
    else:
        img = extract_region(face.image, face.landmarks, region, margin=margin).pixels
    return pad_to_square(img) if padding else img


def _normalize(crop, stats):
    return ((crop / 255.0 - stats.mean) / stats.std).astype(np.float32)


def augment_train(image, rng, stats):
    """Resize to 72, random 64 crop, coin-flip horizontal mirror, normalize."""
    img = bilinear_resize(image, RESIZE_SIDE, RESIZE_SIDE)
    oy = int(rng.integers(0, RESIZE_SIDE - CROP_SIDE + 1))
    ox = int(rng.integers(0, RESIZE_SIDE - CROP_SIDE + 1))
    crop = img[oy : oy + CROP_SIDE, ox : ox + CROP_SIDE]
    if rng.random() < 0.5:
        crop = crop[:, ::-1]
    return _normalize(crop, stats)


def augment_eval(image, stats):
    """Resize to 72, center 64 crop, normalize; fully deterministic."""
    img = bilinear_resize(image, RESIZE_SIDE, RESIZE_SIDE)
    off = (RESIZE_SIDE - CROP_SIDE) // 2
    crop = img[off : off + CROP_SIDE, off : off + CROP_SIDE]
    return _normalize(crop, stats)


def batch_from_crops(crops):
    return np.stack(crops).reshape(len(crops), 1, CROP_SIDE, CROP_SIDE)


def predict_labels(model, base_images, stats, batch_size=64):
    """Deterministic argmax predictions with evaluation preprocessing."""
    preds = np.empty(len(base_images), dtype=np.int64)
    for lo in range(0, len(base_images), batch_size):
        chunk = base_images[lo : lo + batch_size]
        batch = batch_from_crops([augment_eval(img, stats) for img in chunk])
        probs = model.predict_proba(batch)
        preds[lo : lo + len(chunk)] = probs.argmax(axis=1)
    return preds


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class ModelCheckpoint:
    kind: str
    arch: dict
    class_names: tuple
    region: str
    padding: bool
    margin: float
    norm_mean: float
    norm_std: float
    arrays: dict  # id -> float32 ndarray, insertion order is the manifest order
    best_test_accuracy: float
    log: dict = field(default_factory=dict)
    format_version: int = 1

    def save(self, path):
        header = {
            "format_version": self.format_version,
            "kind": self.kind,
            "arch": self.arch,
            "class_names": list(self.class_names),
            "region": self.region,
            "padding": bool(self.padding),
            "margin": self.margin,
            "norm_mean": self.norm_mean,
            "norm_std": self.norm_std,
            "best_test_accuracy": self.best_test_accuracy,
            "log": self.log,
            "tensors": [
                {"id": key, "shape": list(arr.shape)} for key, arr in self.arrays.items()
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for arr in self.arrays.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise CheckpointError(f"cannot read {path}: {exc}") from exc
        if data[:5] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {data[:5]!r}")
        (hlen,) = struct.unpack("<I", data[5:9])
        try:
            header = json.loads(data[9 : 9 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable header") from exc
        offset = 9 + hlen
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = data[offset : offset + 4 * n]
            if len(raw) != 4 * n:
                raise CheckpointError(f"{path}: truncated tensor {entry['id']}")
            arrays[entry["id"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            offset += 4 * n
        if offset != len(data):
            raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
        return cls(
            kind=header["kind"],
            arch=header["arch"],
            class_names=tuple(header["class_names"]),
            region=header.get("region"),
            padding=header.get("padding", True),
            margin=header.get("margin", DEFAULT_MARGIN),
            norm_mean=header["norm_mean"],
            norm_std=header["norm_std"],
            arrays=arrays,
            best_test_accuracy=header.get("best_test_accuracy", float("nan")),
            log=header.get("log", {}),
            format_version=header.get("format_version", 1),
        )

    @property
    def stats(self):
        return NormStats(mean=self.norm_mean, std=self.norm_std)

    def build_model(self):
        if self.kind == "classifier":
            cfg = M.ClassifierConfig(
                conv_plan=tuple(tuple(s) for s in self.arch["conv_plan"]),
                num_classes=self.arch["num_classes"],
                input_size=self.arch["input_size"],
            )
            model = M.build_classifier(cfg)
        elif self.kind == "visualizer":
            cfg = M.VisualizerConfig(
                initial_channels=self.arch["initial_channels"],
                blocks=self.arch["blocks"],
                layers_per_block=self.arch["layers_per_block"],
                growth_rate=self.arch["growth_rate"],
                compression=self.arch["compression"],
                num_classes=self.arch["num_classes"],
                input_size=self.arch["input_size"],
            )
            model = M.build_visualizer(cfg)
        else:
            raise CheckpointError(f"unknown architecture kind {self.kind!r}")
        model.load_state(self.arrays)
        return model


def _arch_dict(kind, cfg):
    if kind == "classifier":
        return {
            "conv_plan": [list(s) for s in cfg.conv_plan],
            "num_classes": cfg.num_classes,
            "input_size": cfg.input_size,
        }
    return {
        "initial_channels": cfg.initial_channels,
        "blocks": cfg.blocks,
        "layers_per_block": cfg.layers_per_block,
        "growth_rate": cfg.growth_rate,
        "compression": cfg.compression,
        "num_classes": cfg.num_classes,
        "input_size": cfg.input_size,
    }


# ---------------------------------------------------------------------------
# the training loop

def _build(kind, arch, seed):
    if kind == "classifier":
        return M.build_classifier(arch, init_seed=seed)
    if kind == "visualizer":
        return M.build_visualizer(arch, init_seed=seed)
    raise TrainingError(f"unknown model kind {kind!r}")


def train(model_kind, dataset, region, config, arch=None, margin=DEFAULT_MARGIN,
          log_path=None):
    """Run the full protocol and return the winning checkpoint.

    ``region`` may be a region name, a RegionSpec or None (full images).
    ``arch`` defaults to the standard configuration sized for the dataset's
    class count.
    """
    train_faces = dataset.split("train")
    test_faces = dataset.split("test")
    if not train_faces or not test_faces:
        raise TrainingError(
            f"need non-empty train and test splits, got {len(train_faces)}/{len(test_faces)}"
        )
    class_names = dataset.class_names
    present = {f.label for f in dataset.faces}
    train_present = {f.label for f in train_faces}
    missing = sorted(present - train_present)
    if missing:
        raise TrainingError(f"classes {missing} present in dataset but absent from train split")

    if arch is None:
        if model_kind == "classifier":
            arch = M.ClassifierConfig(num_classes=len(class_names))
        else:
            arch = M.VisualizerConfig(num_classes=len(class_names))
    if arch.num_classes != len(class_names):
        raise TrainingError(
            f"arch has {arch.num_classes} classes but dataset has {len(class_names)}"
        )

    region_name = getattr(region, "name", region)
    base_train = [prepare_base_image(f, region, config.padding, margin) for f in train_faces]
    base_test = [prepare_base_image(f, region, config.padding, margin) for f in test_faces]
    train_labels = np.array([f.label for f in train_faces], dtype=np.int64)
    test_labels = np.array([f.label for f in test_faces], dtype=np.int64)
    stats = compute_norm_stats(base_train)

    log_lines = []
    run_summaries = []
    winner = None  # (best_acc, run, state_arrays, epoch_lines)

    for run in range(config.runs):
        rng = np.random.default_rng(config.seed + run)
        model = _build(model_kind, arch, config.seed + run)
        adam = AdamState()
        params = model.trainable_parameters()
        lr = config.lr0
        best_acc = -1.0
        best_state = None
        best_epoch = -1
        stale_lr = 0
        stale_stop = 0
        epoch_lines = []

        for epoch in range(config.max_epochs):
            order = rng.permutation(len(base_train))
            loss_total = 0.0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo : lo + config.batch_size]
                crops = []
                for i in idx:
                    if config.augmentation:
                        crops.append(augment_train(base_train[i], rng, stats))
                    else:
                        crops.append(augment_eval(base_train[i], stats))
                batch = batch_from_crops(crops)
                logits = model.forward_logits(batch, training=True)
                loss, _ = L.softmax_cross_entropy(logits, train_labels[idx])
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise DivergenceError(
                        f"run {run} epoch {epoch}: loss became {loss_value}"
                    )
                model.zero_grad()
                T.backward(loss)
                adam_step(params, [p.grad for p in params], adam, lr)
                loss_total += loss_value * len(idx)
            train_loss = loss_total / len(order)
            preds = predict_labels(model, base_test, stats)
            test_acc = float((preds == test_labels).mean())
            line = (
                f"run={run} epoch={epoch} lr={lr:.6g} "
                f"train_loss={train_loss:.6f} test_acc={test_acc:.6f}"
            )
            epoch_lines.append(line)

            if test_acc > best_acc:
                best_acc = test_acc
                best_epoch = epoch
                best_state = {k: v.copy() for k, v in model.state_entries()}
                stale_lr = 0
                stale_stop = 0
            else:
                stale_lr += 1
                stale_stop += 1
                if stale_lr >= config.lr_patience:
                    lr = max(lr * config.lr_decay_factor, config.min_lr)
                    stale_lr = 0
                if stale_stop >= config.stop_patience:
                    break

        log_lines.extend(epoch_lines)
        run_summaries.append(
            {
                "run": run,
                "best_test_accuracy": best_acc,
                "best_epoch": best_epoch,
                "epochs": len(epoch_lines),
            }
        )
        if winner is None or best_acc > winner[0]:
            winner = (best_acc, run, best_state, epoch_lines)

    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")

    best_acc, best_run, best_state, winner_lines = winner
    return ModelCheckpoint(
        kind=model_kind,
        arch=_arch_dict(model_kind, arch),
        class_names=tuple(class_names),
        region=region_name,
        padding=config.padding,
        margin=margin,
        norm_mean=stats.mean,
        norm_std=stats.std,
        arrays={k: np.asarray(v, dtype=np.float32) for k, v in best_state.items()},
        best_test_accuracy=best_acc,
        log={"runs": run_summaries, "selected_run": best_run, "epochs": winner_lines},
    )

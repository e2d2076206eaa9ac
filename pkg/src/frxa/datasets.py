"""Dataset ingestion, synthetic generation and the on-disk sample store.

Ingestors consume the three public datasets' published formats and apply
their selection rules: FER+ majority-vote filtering (a sample is dropped
when the winning emotion holds less than half of the emotion votes),
RAF-DB single-label pass-through, and the ExpW confidence filter with a
stratified 4:1 split.  The synthetic generators build desk-scale datasets
with known structure for protocol experiments.

A prepared store is a directory of PGM images plus .lmk sidecars, a
samples.tsv index and a manifest.json.
"""

import csv
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import imageio
from . import regions as R

FERPLUS_CLASSES = (
    "neutral", "happiness", "surprise", "sadness", "anger", "disgust", "fear", "contempt",
)
BASIC7_CLASSES = FERPLUS_CLASSES[:7]

# official label numbering -> canonical class order above
RAF_LABEL_TO_CANONICAL = {1: 2, 2: 6, 3: 5, 4: 1, 5: 3, 6: 4, 7: 0}
EXPW_LABEL_TO_CANONICAL = {0: 4, 1: 5, 2: 6, 3: 1, 4: 3, 5: 2, 6: 0}

# published train/test totals used for the discrepancy flags
EXPECTED_TOTALS = {"ferplus": (30268, 3404), "rafdb": (12271, 3068), "expw": (26701, 6673)}


class IngestError(ValueError):
    """Input files violate the dataset's published format or alignment."""


@dataclass
class LabeledFace:
    image: np.ndarray  # (H, W) uint8
    label: int
    class_names: tuple
    landmarks: object = None  # LandmarkSet68 or None
    split: str = "train"
    source_id: str = ""

    def __post_init__(self):
        if not 0 <= self.label < len(self.class_names):
            raise IngestError(
                f"label {self.label} out of range for {len(self.class_names)} classes"
            )
        if self.split not in ("train", "test"):
            raise IngestError(f"split must be train or test, got {self.split!r}")


@dataclass
class DatasetManifest:
    name: str
    class_names: tuple
    counts: dict  # split -> per-class list
    filter_params: dict = field(default_factory=dict)
    split_seed: int = None
    discrepancies: list = field(default_factory=list)

    def totals(self):
        return {split: int(sum(row)) for split, row in self.counts.items()}

    def validate(self):
        for split, row in self.counts.items():
            if len(row) != len(self.class_names):
                raise IngestError(f"{split} counts have {len(row)} entries, "
                                  f"expected {len(self.class_names)}")
            if any(c < 0 for c in row):
                raise IngestError(f"negative count in {split}: {row}")

    def to_json(self):
        return json.dumps(
            {
                "name": self.name,
                "class_names": list(self.class_names),
                "counts": {k: list(map(int, v)) for k, v in self.counts.items()},
                "filter_params": self.filter_params,
                "split_seed": self.split_seed,
                "discrepancies": list(self.discrepancies),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            name=d["name"],
            class_names=tuple(d["class_names"]),
            counts=d["counts"],
            filter_params=d.get("filter_params", {}),
            split_seed=d.get("split_seed"),
            discrepancies=list(d.get("discrepancies", [])),
        )


@dataclass
class Dataset:
    faces: list
    manifest: DatasetManifest

    @property
    def class_names(self):
        return self.manifest.class_names

    def split(self, name):
        return [f for f in self.faces if f.split == name]


def _count_matrix(faces, class_names):
    counts = {"train": [0] * len(class_names), "test": [0] * len(class_names)}
    for f in faces:
        counts[f.split][f.label] += 1
    return counts


def _check_expected_totals(manifest):
    expected = EXPECTED_TOTALS.get(manifest.name)
    if expected is None:
        return
    got = manifest.totals()
    for split, want in zip(("train", "test"), expected):
        if got.get(split, 0) != want:
            manifest.discrepancies.append(
                f"{split} total {got.get(split, 0)} differs from published {want}"
            )


# ---------------------------------------------------------------------------
# FER+

def _read_csv_rows(path):
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def _parse_pixels(text, row_index):
    parts = text.split()
    if len(parts) != 48 * 48:
        raise IngestError(
            f"pixel row {row_index}: expected {48 * 48} values, got {len(parts)}"
        )
    out = np.empty(48 * 48, dtype=np.uint8)
    for j, tok in enumerate(parts):
        try:
            v = int(tok)
        except ValueError as exc:
            raise IngestError(
                f"pixel row {row_index}: non-integer value {tok!r} at position {j}"
            ) from exc
        if not 0 <= v <= 255:
            raise IngestError(f"pixel row {row_index}: value {v} at position {j} not in [0, 255]")
        out[j] = v
    return out.reshape(48, 48)


_FER_SPLITS = {"Training": "train", "PublicTest": "train", "PrivateTest": "test"}


def ingest_ferplus(pixel_csv, votes_csv, min_vote_share=0.5):
    """FER+ ingestion: majority-vote labels over 8 emotions, 50% filter.

    Training and the public test fold become the train split; the private
    fold is the test split.  Vote ties at the threshold are kept; argmax
    ties resolve to the lowest class index.
    """
    pixel_rows = _read_csv_rows(pixel_csv)
    vote_rows = _read_csv_rows(votes_csv)
    if pixel_rows and pixel_rows[0][:1] == ["emotion"]:
        pixel_rows = pixel_rows[1:]
    if vote_rows and vote_rows[0][:1] == ["Usage"]:
        vote_rows = vote_rows[1:]
    if len(pixel_rows) != len(vote_rows):
        raise IngestError(
            f"row-count mismatch: {len(pixel_rows)} pixel rows vs {len(vote_rows)} vote rows"
        )
    faces = []
    for i, (prow, vrow) in enumerate(zip(pixel_rows, vote_rows)):
        if len(prow) < 3:
            raise IngestError(f"pixel row {i}: expected emotion,pixels,usage columns")
        if len(vrow) < 2 + len(FERPLUS_CLASSES):
            raise IngestError(f"vote row {i}: expected usage,name plus 8 emotion columns")
        usage = prow[2].strip()
        vote_usage = vrow[0].strip()
        if usage != vote_usage:
            raise IngestError(f"row {i}: usage mismatch {usage!r} vs {vote_usage!r}")
        split = _FER_SPLITS.get(usage)
        if split is None:
            raise IngestError(f"row {i}: unknown usage {usage!r}")
        try:
            votes = [int(v) for v in vrow[2 : 2 + len(FERPLUS_CLASSES)]]
        except ValueError as exc:
            raise IngestError(f"vote row {i}: non-integer vote") from exc
        total = sum(votes)  # unknown/NF columns are excluded from the total
        best = max(votes) if votes else 0
        if total == 0 or best * 2 < total * (min_vote_share * 2):
            continue  # winner holds less than the required vote share
        label = votes.index(best)
        faces.append(
            LabeledFace(
                image=_parse_pixels(prow[1], i),
                label=label,
                class_names=FERPLUS_CLASSES,
                split=split,
                source_id=f"fer{i:05d}",
            )
        )
    manifest = DatasetManifest(
        name="ferplus",
        class_names=FERPLUS_CLASSES,
        counts=_count_matrix(faces, FERPLUS_CLASSES),
        filter_params={"min_vote_share": min_vote_share},
    )
    _check_expected_totals(manifest)
    manifest.validate()
    return Dataset(faces, manifest)


# ---------------------------------------------------------------------------
# RAF-DB

def ingest_rafdb(image_dir, label_list):
    """RAF-DB single-label subset: faithful pass-through of the official split."""
    try:
        with open(label_list, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise IngestError(f"cannot read {label_list}: {exc}") from exc
    entries = []
    missing = []
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) != 2:
            raise IngestError(f"{label_list}:{i + 1}: expected 'name label', got {line!r}")
        name, label_text = parts
        try:
            official = int(label_text)
        except ValueError as exc:
            raise IngestError(f"{label_list}:{i + 1}: non-integer label {label_text!r}") from exc
        if official not in RAF_LABEL_TO_CANONICAL:
            raise IngestError(f"{label_list}:{i + 1}: label {official} not in 1..7")
        if name.startswith("train_"):
            split = "train"
        elif name.startswith("test_"):
            split = "test"
        else:
            raise IngestError(f"{label_list}:{i + 1}: name {name!r} lacks train_/test_ prefix")
        path = os.path.join(str(image_dir), name)
        if not os.path.isfile(path):
            missing.append(name)
            continue
        entries.append((name, path, RAF_LABEL_TO_CANONICAL[official], split))
    if missing:
        raise IngestError(
            f"{len(missing)} listed images absent from {image_dir}: "
            + ", ".join(missing[:10])
            + ("..." if len(missing) > 10 else "")
        )
    faces = [
        LabeledFace(
            image=imageio.read_image_gray(path),
            label=label,
            class_names=BASIC7_CLASSES,
            split=split,
            source_id=name,
        )
        for name, path, label, split in entries
    ]
    manifest = DatasetManifest(
        name="rafdb",
        class_names=BASIC7_CLASSES,
        counts=_count_matrix(faces, BASIC7_CLASSES),
        filter_params={"subset": "single-label"},
    )
    _check_expected_totals(manifest)
    manifest.validate()
    return Dataset(faces, manifest)


# ---------------------------------------------------------------------------
# ExpW

def stratified_split_counts(count):
    """ExpW 4:1 rule: per-class test size is count/5 rounded to nearest."""
    test = int(round(count / 5.0))
    return count - test, test


def ingest_expw(image_dir, label_file, split_seed=0, confidence_threshold=60.0):
    """ExpW ingestion: strict confidence filter, face-box crops, 4:1 split.

    Rows are ``name face_id top left right bottom confidence label``; only
    faces with confidence strictly greater than the threshold are kept.
    The split is stratified per class under ``split_seed``.
    """
    try:
        with open(label_file, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise IngestError(f"cannot read {label_file}: {exc}") from exc
    kept = []
    image_cache = {}
    for lineno, line in enumerate(lines, start=1):
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise IngestError(f"{label_file}:{lineno}: expected 8 fields, got {len(parts)}")
        name, face_id = parts[0], parts[1]
        try:
            top, left, right, bottom = (int(float(v)) for v in parts[2:6])
            confidence = float(parts[6])
            official = int(parts[7])
        except ValueError as exc:
            raise IngestError(f"{label_file}:{lineno}: malformed numeric field") from exc
        if official not in EXPW_LABEL_TO_CANONICAL:
            raise IngestError(f"{label_file}:{lineno}: label {official} not in 0..6")
        if not confidence > confidence_threshold:  # strictly greater
            continue
        if name not in image_cache:
            path = os.path.join(str(image_dir), name)
            if not os.path.isfile(path):
                raise IngestError(f"{label_file}:{lineno}: image {name!r} absent from {image_dir}")
            image_cache[name] = imageio.read_image_gray(path)
        img = image_cache[name]
        h, w = img.shape
        t, b = max(0, top), min(h, bottom)
        l, r = max(0, left), min(w, right)
        if b <= t or r <= l:
            raise IngestError(f"{label_file}:{lineno}: face box has no area after clipping")
        kept.append(
            LabeledFace(
                image=img[t:b, l:r].copy(),
                label=EXPW_LABEL_TO_CANONICAL[official],
                class_names=BASIC7_CLASSES,
                split="train",  # assigned below
                source_id=f"{name}#{face_id}",
            )
        )
    rng = np.random.default_rng(split_seed)
    for label in range(len(BASIC7_CLASSES)):
        members = [f for f in kept if f.label == label]
        order = rng.permutation(len(members))
        _, test_count = stratified_split_counts(len(members))
        test_positions = set(order[len(members) - test_count :].tolist()) if members else set()
        for pos, face in enumerate(members):
            face.split = "test" if pos in test_positions else "train"
    manifest = DatasetManifest(
        name="expw",
        class_names=BASIC7_CLASSES,
        counts=_count_matrix(kept, BASIC7_CLASSES),
        filter_params={"confidence_threshold": confidence_threshold},
        split_seed=split_seed,
    )
    _check_expected_totals(manifest)
    manifest.validate()
    return Dataset(kept, manifest)


# ---------------------------------------------------------------------------
# synthetic faces

def _landmark_template():
    """Schematic 68-point layout for a 64x64 face, dlib index conventions."""
    pts = np.zeros((68, 2))
    for i in range(17):  # jaw, left temple over the chin to the right temple
        theta = np.deg2rad(170.0 - 10.0 * i)
        pts[i] = (32 + 24 * np.cos(theta), 30 + 28 * np.sin(theta))
    for i in range(5):  # eyebrows with a slight arch
        t = i / 4.0
        arch = 20.0 - 2.0 * np.sin(np.pi * t)
        pts[17 + i] = (14 + 14 * t, arch)
        pts[22 + i] = (36 + 14 * t, arch)
    for i in range(4):  # nose bridge
        pts[27 + i] = (32, 24 + 4 * i)
    nose_x = (26, 29, 32, 35, 38)
    nose_y = (40, 41, 42, 41, 40)
    for i in range(5):  # nose bottom
        pts[31 + i] = (nose_x[i], nose_y[i])
    left_eye = ((15, 26), (19, 24), (23, 24), (27, 26), (23, 28), (19, 28))
    right_eye = ((37, 26), (41, 24), (45, 24), (49, 26), (45, 28), (41, 28))
    for i in range(6):
        pts[36 + i] = left_eye[i]
        pts[42 + i] = right_eye[i]
    for j in range(12):  # outer lip ellipse
        th = np.deg2rad(180.0 - 30.0 * j)
        pts[48 + j] = (32 + 10 * np.cos(th), 48 - 5 * np.sin(th))
    for j in range(8):  # inner lip ellipse
        th = np.deg2rad(180.0 - 45.0 * j)
        pts[60 + j] = (32 + 6 * np.cos(th), 48 - 2.5 * np.sin(th))
    return pts


LANDMARK_TEMPLATE_64 = _landmark_template()


def _ellipse_mask(shape, cx, cy, rx, ry):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def _stamp(img, x, y, value, size=1):
    h, w = img.shape
    y0, y1 = max(0, int(y) - size), min(h, int(y) + size + 1)
    x0, x1 = max(0, int(x) - size), min(w, int(x) + size + 1)
    img[y0:y1, x0:x1] = value


# pattern kinds cycled over class indices: oriented bars, a blob, a ring
def _pattern_mask(kind, height, width):
    vv, uu = np.mgrid[0:height, 0:width]
    u = (uu + 0.5) / width
    v = (vv + 0.5) / height
    if kind == 0:  # horizontal bar
        return np.abs(v - 0.5) <= 0.18
    if kind == 1:  # blob
        return (2 * (u - 0.5)) ** 2 + (2 * (v - 0.5)) ** 2 <= 0.7**2
    if kind == 2:  # ring
        d = np.sqrt((2 * (u - 0.5)) ** 2 + (2 * (v - 0.5)) ** 2)
        return (d >= 0.5) & (d <= 0.9)
    if kind == 3:  # vertical bar
        return np.abs(u - 0.5) <= 0.18
    if kind == 4:  # diagonal bar
        return np.abs(u - v) <= 0.18
    return np.abs(u + v - 1.0) <= 0.18  # anti-diagonal bar


def _render_schematic_face(pts, class_index, signal_box, rng, noise_sigma=8.0):
    img = np.full((64, 64), 40.0)
    xmin, xmax = pts[:, 0].min(), pts[:, 0].max()
    chin_y = pts[8, 1]
    top_y = pts[:, 1].min() - 6.0  # a little forehead above the eyebrows
    face_cx = (xmin + xmax) / 2.0
    face_cy = (top_y + chin_y) / 2.0
    img[_ellipse_mask(img.shape, face_cx, face_cy, (xmax - xmin) / 2 + 2, (chin_y - top_y) / 2 + 2)] = 130.0

    for eye in (pts[36:42], pts[42:48]):
        cx, cy = eye[:, 0].mean(), eye[:, 1].mean()
        rx = (eye[:, 0].max() - eye[:, 0].min()) / 2 + 1
        ry = (eye[:, 1].max() - eye[:, 1].min()) / 2 + 1
        img[_ellipse_mask(img.shape, cx, cy, rx, ry)] = 60.0
    for x, y in pts[17:27]:  # eyebrows
        _stamp(img, x, y, 70.0)
    for x, y in pts[27:31]:  # nose bridge
        _stamp(img, x, y, 95.0, size=0)
    for x, y in pts[31:36]:  # nose bottom
        _stamp(img, x, y, 95.0, size=0)
    mouth = pts[48:60]
    mcx, mcy = mouth[:, 0].mean(), mouth[:, 1].mean()
    mrx = (mouth[:, 0].max() - mouth[:, 0].min()) / 2
    mry = (mouth[:, 1].max() - mouth[:, 1].min()) / 2
    lips = _ellipse_mask(img.shape, mcx, mcy, mrx, mry) & ~_ellipse_mask(
        img.shape, mcx, mcy, max(mrx - 2, 1), max(mry - 2, 1)
    )
    img[lips] = 75.0

    x0, y0, x1, y1 = signal_box
    if x1 > x0 and y1 > y0:
        mask = _pattern_mask(class_index % 6, y1 - y0, x1 - x0)
        value = 235.0 - 45.0 * ((class_index // 6) % 3)
        region = img[y0:y1, x0:x1]
        region[mask] = value
    img += rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_synthetic(classes, per_class, signal_region="mouth", seed=0):
    """Schematic 64x64 faces whose class pattern lives only in one region.

    Landmarks come from a fixed template with small per-sample jitter; the
    class-discriminative pattern is painted strictly inside the signal
    region's (slightly inset) landmark bounding box, so crops of any other
    region carry no class information.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_class < 1:
        raise ValueError(f"need at least 1 sample per class, got {per_class}")
    region_name = signal_region if isinstance(signal_region, str) else signal_region.name
    signal_idx = np.asarray(R.region_indices(region_name, extended=True))
    rng = np.random.default_rng(seed)
    class_names = tuple(f"class{c}" for c in range(classes))
    train_count, _ = stratified_split_counts(per_class)
    faces = []
    for c in range(classes):
        for i in range(per_class):
            shift = rng.uniform(-2.0, 2.0, size=2)
            jitter = rng.uniform(-1.0, 1.0, size=(68, 2))
            pts = LANDMARK_TEMPLATE_64 + shift + jitter
            sel = pts[signal_idx - 1]
            box = (
                int(np.floor(sel[:, 0].min())) + 1,
                int(np.floor(sel[:, 1].min())) + 1,
                int(np.ceil(sel[:, 0].max())) - 1,
                int(np.ceil(sel[:, 1].max())) - 1,
            )
            img = _render_schematic_face(pts, c, box, rng)
            faces.append(
                LabeledFace(
                    image=img,
                    label=c,
                    class_names=class_names,
                    landmarks=R.LandmarkSet68(points=pts, image_size=(64, 64)),
                    split="train" if i < train_count else "test",
                    source_id=f"syn_c{c}_{i:04d}",
                )
            )
    manifest = DatasetManifest(
        name="synthetic",
        class_names=class_names,
        counts=_count_matrix(faces, class_names),
        filter_params={"signal_region": region_name, "per_class": per_class},
        split_seed=seed,
    )
    manifest.validate()
    return Dataset(faces, manifest)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _soft_box(ch, cw, cy, cx, half_h, half_w, edge):
    """Soft-edged rectangle evaluated on pixel centers; all units relative."""
    v = (np.arange(ch) + 0.5) / ch
    u = (np.arange(cw) + 0.5) / cw
    fy = _smoothstep((half_h - np.abs(v - cy)) / edge + 0.5)
    fx = _smoothstep((half_w - np.abs(u - cx)) / edge + 0.5)
    return fy[:, None] * fx[None, :]


def generate_aspect_synthetic(per_class, seed=0):
    """Deliberately non-square crops (|w - h| >= 20) whose classes collide
    under distortion-to-square but separate cleanly when padded first.

    A wide bar in a wide canvas and a tall bar in a tall canvas become the
    same square blob once each canvas is stretched square, so only aspect-
    preserving preprocessing can tell them apart.  Everything in the image
    is defined in canvas-relative units with soft edges, and the noise is a
    canvas-relative coarse field, so the distortion leaves (nearly) no
    side-channel for the baseline to exploit.
    """
    if per_class < 1:
        raise ValueError(f"need at least 1 sample per class, got {per_class}")
    class_names = ("wide_bar", "tall_bar", "cross")
    layouts = (((40, 80), "bar"), ((80, 40), "bar"), ((40, 80), "cross"))
    rng = np.random.default_rng(seed)
    train_count, _ = stratified_split_counts(per_class)
    faces = []
    for c, ((ch, cw), kind) in enumerate(layouts):
        for i in range(per_class):
            cy = 0.5 + rng.uniform(-0.06, 0.06)
            cx = 0.5 + rng.uniform(-0.06, 0.06)
            if kind == "bar":
                shape = _soft_box(ch, cw, cy, cx, 0.25, 0.25, 0.04)
            else:
                shape = np.maximum(
                    _soft_box(ch, cw, cy, cx, 0.06, 0.25, 0.04),
                    _soft_box(ch, cw, cy, cx, 0.25, 0.06, 0.04),
                )
            img = 30.0 + 190.0 * shape
            img += imageio.bilinear_resize(rng.normal(0.0, 8.0, size=(12, 12)), ch, cw)
            img += rng.normal(0.0, 2.0, size=img.shape)
            faces.append(
                LabeledFace(
                    image=np.clip(img, 0, 255).astype(np.uint8),
                    label=c,
                    class_names=class_names,
                    split="train" if i < train_count else "test",
                    source_id=f"asp_c{c}_{i:04d}",
                )
            )
    manifest = DatasetManifest(
        name="aspect_synthetic",
        class_names=class_names,
        counts=_count_matrix(faces, class_names),
        filter_params={"per_class": per_class},
        split_seed=seed,
    )
    manifest.validate()
    return Dataset(faces, manifest)


# ---------------------------------------------------------------------------
# prepared stores

_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]+")


def write_store(dataset, out_dir, force=False):
    """Write a dataset as PGM images + .lmk sidecars + index + manifest."""
    out = str(out_dir)
    manifest_path = os.path.join(out, "manifest.json")
    if os.path.exists(manifest_path) and not force:
        raise FileExistsError(f"{manifest_path} already exists (use force to overwrite)")
    images_dir = os.path.join(out, "images")
    os.makedirs(images_dir, exist_ok=True)
    rows = []
    used = set()
    for idx, face in enumerate(dataset.faces):
        stem = _SAFE_ID.sub("_", face.source_id) or f"sample{idx:06d}"
        if stem in used:
            stem = f"{stem}_{idx:06d}"
        used.add(stem)
        imageio.write_pgm(os.path.join(images_dir, stem + ".pgm"), face.image)
        if face.landmarks is not None:
            R.save_landmarks(os.path.join(images_dir, stem + ".lmk"), face.landmarks)
        rows.append((stem, face.source_id, face.split, face.label))
    with open(os.path.join(out, "samples.tsv"), "w", encoding="utf-8") as fh:
        fh.write("file\tsource_id\tsplit\tlabel\n")
        for stem, source_id, split, label in rows:
            fh.write(f"{stem}\t{source_id}\t{split}\t{label}\n")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(dataset.manifest.to_json() + "\n")
    return out


def load_store(store_dir):
    """Load a prepared store back into memory, in samples.tsv order."""
    store = str(store_dir)
    manifest_path = os.path.join(store, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise IngestError(f"{store} is not a prepared store (missing manifest.json)")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = DatasetManifest.from_json(fh.read())
    faces = []
    with open(os.path.join(store, "samples.tsv"), "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["file", "source_id", "split", "label"]:
            raise IngestError(f"{store}: unexpected samples.tsv header {header}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise IngestError(f"{store}/samples.tsv:{lineno}: expected 4 columns")
            stem, source_id, split, label_text = parts
            img_path = os.path.join(store, "images", stem + ".pgm")
            lmk_path = os.path.join(store, "images", stem + ".lmk")
            image = imageio.read_pgm(img_path)
            landmarks = None
            if os.path.isfile(lmk_path):
                h, w = image.shape
                landmarks = R.load_landmarks(lmk_path, image_size=(w, h))
            faces.append(
                LabeledFace(
                    image=image,
                    label=int(label_text),
                    class_names=manifest.class_names,
                    landmarks=landmarks,
                    split=split,
                    source_id=source_id,
                )
            )
    manifest.validate()
    return Dataset(faces, manifest)

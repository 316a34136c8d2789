"""Dataset ingestion, stratified folding, preprocessing, and a synthetic
fundus-style generator for desk-scale experiments.

Manifests are CSV files with header ``filename,label`` (optional third
column ``fold`` to pin official splits). Only PNG and PPM images are
accepted; the real benchmark sets must be converted first (their licenses
prevent bundling). A relabeling helper maps ordinal grades onto the
referable / non-referable binary task (grade >= 2 is referable).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .imageops import resize_bilinear
from .seeding import rng_for


@dataclass
class ManifestRecord:
    path: str  # relative to the manifest root
    label: int
    fold: int | None = None


@dataclass
class DatasetManifest:
    root: str
    records: list
    num_classes: int

    def __len__(self):
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.asarray([r.label for r in self.records], dtype=np.int64)

    def absolute_path(self, index: int) -> Path:
        return Path(self.root) / self.records[index].path

    def binarize_referable(self) -> "DatasetManifest":
        """Grades 0-1 -> class 0 (non-referable), grades >= 2 -> class 1."""
        recs = [ManifestRecord(r.path, int(r.label >= 2), r.fold) for r in self.records]
        return DatasetManifest(self.root, recs, 2)


def load_manifest(csv_path, root=None) -> DatasetManifest:
    """Read and validate a manifest CSV. All referenced files must exist;
    missing ones are aggregated into a single error. Duplicate filenames
    are rejected. The class count is max label + 1."""
    csv_path = Path(csv_path)
    root = Path(root) if root is not None else csv_path.parent
    if not csv_path.exists():
        raise DataError(f"manifest not found: {csv_path}")

    records: list[ManifestRecord] = []
    seen: set[str] = set()
    missing: list[str] = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["filename", "label"]:
            raise DataError(f"{csv_path}: expected header 'filename,label'")
        has_fold = len(header) >= 3 and header[2].strip() == "fold"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise DataError(f"{csv_path}:{lineno}: expected at least 2 columns")
            fname = row[0].strip()
            try:
                label = int(row[1])
            except ValueError:
                raise DataError(f"{csv_path}:{lineno}: bad label {row[1]!r}") from None
            if label < 0:
                raise DataError(f"{csv_path}:{lineno}: negative label {label}")
            fold = None
            if has_fold and len(row) >= 3 and row[2].strip():
                try:
                    fold = int(row[2])
                except ValueError:
                    raise DataError(f"{csv_path}:{lineno}: bad fold {row[2]!r}") from None
            if fname in seen:
                raise DataError(f"{csv_path}:{lineno}: duplicate filename {fname!r}")
            seen.add(fname)
            if not (root / fname).exists():
                missing.append(fname)
            records.append(ManifestRecord(fname, label, fold))
    if missing:
        shown = ", ".join(missing[:5]) + (", ..." if len(missing) > 5 else "")
        raise DataError(f"{len(missing)} manifest file(s) missing under {root}: {shown}")
    if not records:
        raise DataError(f"{csv_path}: empty manifest")
    num_classes = max(r.label for r in records) + 1
    return DatasetManifest(str(root), records, num_classes)


@dataclass
class FoldPlan:
    k: int
    seed: int
    assignment: np.ndarray  # fold id per manifest record

    def indices(self, fold: int, train: bool) -> np.ndarray:
        mask = self.assignment != fold if train else self.assignment == fold
        return np.nonzero(mask)[0]


def stratified_kfold(manifest: DatasetManifest, k: int, seed: int) -> FoldPlan:
    """Within each class: seeded shuffle, then round-robin assignment, so
    per-class fold sizes differ by at most one."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    labels = manifest.labels()
    assignment = np.zeros(len(manifest), dtype=np.int64)
    rng = rng_for(seed, "kfold", k)
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        if idx.size < k:
            warnings.warn(f"class {cls} has only {idx.size} samples for {k} folds; "
                          "some folds will miss it")
        shuffled = rng.permutation(idx)
        for pos, record_idx in enumerate(shuffled):
            assignment[record_idx] = pos % k
    return FoldPlan(k, seed, assignment)


@dataclass
class NormStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32).reshape(3)
        self.std = np.asarray(self.std, dtype=np.float32).reshape(3)
        if np.any(self.std <= 0):
            raise ConfigError("normalization std must be positive")

    def normalize(self, img: np.ndarray) -> np.ndarray:
        return (img - self.mean[:, None, None]) / self.std[:, None, None]

    def denormalize(self, img: np.ndarray) -> np.ndarray:
        return img * self.std[:, None, None] + self.mean[:, None, None]

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(3), np.ones(3))


SUPPORTED_SUFFIXES = {".png", ".ppm"}


def decode_image(path) -> np.ndarray:
    """Decode a PNG or PPM file to a (3, H, W) float32 array in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise DataError(f"unsupported image format {path.suffix!r}: {path}")
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except (OSError, ValueError) as err:
        raise DataError(f"cannot decode {path}: {err}") from None
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def decode_and_preprocess(path, target_size: int, stats: NormStats) -> np.ndarray:
    """Decode, resize (bilinear) to target_size x target_size, normalize."""
    img = decode_image(path)
    img = resize_bilinear(img, target_size, target_size)
    return stats.normalize(img).astype(np.float32)


def compute_norm_stats(manifest: DatasetManifest, indices=None,
                       target_size: int = 64) -> NormStats:
    """One pass over the (resized) images; per-channel mean and std."""
    if indices is None:
        indices = range(len(manifest))
    sums = np.zeros(3, dtype=np.float64)
    sqsums = np.zeros(3, dtype=np.float64)
    count = 0
    for i in indices:
        img = resize_bilinear(decode_image(manifest.absolute_path(i)),
                              target_size, target_size).astype(np.float64)
        sums += img.sum(axis=(1, 2))
        sqsums += (img ** 2).sum(axis=(1, 2))
        count += img.shape[1] * img.shape[2]
    mean = sums / count
    var = np.maximum(sqsums / count - mean ** 2, 1e-8)
    return NormStats(mean, np.sqrt(var))


# ---------------------------------------------------------------------------
# synthetic fundus-style data
# ---------------------------------------------------------------------------


def _disk_mask(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    ys, xs = np.ogrid[:size, :size]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius ** 2


def _synth_image(size: int, grade: int, rng: np.random.Generator) -> np.ndarray:
    """One synthetic fundus: a warm disk on a dark background, a bright
    optic-disc spot, and ``5 * grade`` small bright red lesions. Class
    evidence is deliberately channel-dependent: mean red intensity grows
    with the grade."""
    img = np.full((3, size, size), 0.02, dtype=np.float32)
    center = size / 2.0
    radius = size * (0.44 + rng.uniform(-0.01, 0.01))
    disk = _disk_mask(size, center, center, radius)

    base = np.array([0.50, 0.27, 0.10], dtype=np.float32) + rng.uniform(-0.01, 0.01, 3).astype(np.float32)
    for c in range(3):
        img[c][disk] = base[c]
    # gentle radial shading
    ys, xs = np.ogrid[:size, :size]
    dist = np.sqrt((ys - center) ** 2 + (xs - center) ** 2) / radius
    shade = np.clip(1.0 - 0.25 * dist ** 2, 0.0, None).astype(np.float32)
    img[:, disk] *= shade[disk]

    # optic disc: small bright spot off-center
    od_angle = rng.uniform(0, 2 * np.pi)
    od_r = radius * 0.55
    od = _disk_mask(size, center + od_r * np.sin(od_angle),
                    center + od_r * np.cos(od_angle), size * 0.06)
    od &= disk
    img[0][od] = 0.85
    img[1][od] = 0.72
    img[2][od] = 0.40

    # lesions: count scales strictly with grade, red channel dominant
    for _ in range(5 * grade):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0, 0.75) * radius
        ly = center + rad * np.sin(ang)
        lx = center + rad * np.cos(ang)
        lesion = _disk_mask(size, ly, lx, size * 0.05) & disk
        img[0][lesion] = 0.95
        img[1][lesion] = np.maximum(img[1][lesion], 0.25)
        img[2][lesion] = np.maximum(img[2][lesion], 0.08)

    noise = rng.normal(0.0, 0.004, img.shape).astype(np.float32)
    return np.clip(img + noise, 0.0, 1.0)


def synth_generate(out_dir, n_per_class: int, num_classes: int = 5,
                   image_size: int = 64, seed: int = 0) -> DatasetManifest:
    """Write a fully seeded synthetic dataset (PNG files + manifest CSV)
    under ``out_dir`` and return the loaded manifest."""
    if n_per_class < 1 or num_classes < 2:
        raise ConfigError("need n_per_class >= 1 and num_classes >= 2")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for grade in range(num_classes):
        for i in range(n_per_class):
            rng = rng_for(seed, "synth", grade, i)
            img = _synth_image(image_size, grade, rng)
            name = f"synth_g{grade}_{i:03d}.png"
            arr = (img.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
            Image.fromarray(arr).save(out_dir / name)
            rows.append((name, grade))
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filename", "label"])
        writer.writerows(rows)
    return load_manifest(manifest_path, out_dir)

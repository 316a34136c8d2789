"""Data augmentation recipes.

Three recipes of increasing strength, each a superset of the previous:

  I    resize, random square crop (area-scaled), horizontal flip,
       brightness jitter -- the light pipeline customary for fundus work.
  II   recipe I plus batch-level Mixup/CutMix with soft labels.
  III  recipe II plus RandAugment and Random Erasing (the heavy
       ImageNet-style pipeline).

Everything operates on channel-first float images in [0, 1]; every
photometric op clamps back into that range. Geometric ops use bilinear
interpolation and fill borders with the per-channel image mean. All
randomness comes from the caller's rng stream.

RandAugment magnitude mapping (magnitude m in [0, 10], sampled per op from
N(M, std) and clipped): rotate +-3m degrees, shear +-0.03m, translate
+-0.045m of the smaller extent, brightness/contrast factor 1 +- 0.09m,
solarize threshold 1 - m/10, posterize 8 - floor(0.4m) bits. Equalize and
autocontrast take no magnitude. Invert and color-balance ops are excluded:
they are ill-posed for single-modality medical images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .imageops import (affine_warp, resize_bilinear, rotation_matrix,
                       shear_matrix, translation_matrix)

RECIPES = ("I", "II", "III")


@dataclass
class AugPolicy:
    recipe: str = "III"
    resize_to: int = 256
    crop_size: int = 224
    crop_scale: tuple = (0.8, 1.0)
    hflip_prob: float = 0.5
    brightness_jitter: float = 0.2
    # RandAugment (recipe III)
    randaugment: bool = False
    ra_num_ops: int = 2
    ra_magnitude: float = 9.0
    ra_magnitude_std: float = 0.5
    # Random Erasing (recipe III)
    erase_prob: float = 0.0
    erase_area: tuple = (0.02, 1.0 / 3.0)
    erase_aspect: tuple = (0.3, 3.3)
    erase_fill: str = "random"  # random | mean | zero
    # batch-level mixing (recipes II and III)
    mix_prob: float = 0.0
    mix_switch_prob: float = 0.5
    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0

    def validate(self):
        if self.recipe not in RECIPES:
            raise ConfigError(f"unknown recipe {self.recipe!r}")
        for name in ("hflip_prob", "erase_prob", "mix_prob", "mix_switch_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.mix_prob > 0 and (self.mixup_alpha <= 0 or self.cutmix_alpha <= 0):
            raise ConfigError("mix alphas must be positive when mixing is enabled")
        if not 0 < self.crop_scale[0] <= self.crop_scale[1] <= 1.0:
            raise ConfigError(f"bad crop scale range {self.crop_scale}")
        if self.erase_fill not in ("random", "mean", "zero"):
            raise ConfigError(f"unknown erase fill mode {self.erase_fill!r}")

    @classmethod
    def for_recipe(cls, recipe: str, crop_size: int = 224,
                   resize_to: int | None = None) -> "AugPolicy":
        if resize_to is None:
            resize_to = max(crop_size + crop_size // 7, crop_size)  # 224 -> 256
        policy = cls(recipe=recipe, resize_to=resize_to, crop_size=crop_size)
        if recipe in ("II", "III"):
            policy.mix_prob = 1.0
        if recipe == "III":
            policy.randaugment = True
            policy.erase_prob = 0.25
        policy.validate()
        return policy

    def enabled_ops(self) -> frozenset:
        ops = {"resize", "random_crop", "hflip", "brightness_jitter"}
        if self.mix_prob > 0:
            ops |= {"mixup", "cutmix"}
        if self.randaugment:
            ops.add("randaugment")
        if self.erase_prob > 0:
            ops.add("random_erasing")
        return frozenset(ops)


# ---------------------------------------------------------------------------
# photometric primitives
# ---------------------------------------------------------------------------


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return _clamp(img * factor)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = img.mean()
    return _clamp(mean + (img - mean) * factor)


def solarize(img: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(img < threshold, img, 1.0 - img)


def posterize(img: np.ndarray, bits: int) -> np.ndarray:
    levels = 2 ** int(bits)
    return np.clip(np.floor(img * levels) / levels, 0.0, 1.0)


def equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization over 256 bins."""
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        chan = img[c]
        hist, edges = np.histogram(chan, bins=256, range=(0.0, 1.0))
        cdf = hist.cumsum().astype(np.float64)
        if cdf[-1] == 0:
            out[c] = chan
            continue
        cdf = cdf / cdf[-1]
        bin_idx = np.clip((chan * 256).astype(np.int64), 0, 255)
        out[c] = cdf[bin_idx].astype(img.dtype)
    return _clamp(out)


def autocontrast(img: np.ndarray) -> np.ndarray:
    """Per-channel min-max stretch to the full [0, 1] range."""
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        lo, hi = img[c].min(), img[c].max()
        out[c] = (img[c] - lo) / (hi - lo) if hi > lo else img[c]
    return _clamp(out)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


# ---------------------------------------------------------------------------
# RandAugment
# ---------------------------------------------------------------------------


def _ra_rotate(img, m, rng):
    deg = 3.0 * m * (1 if rng.random() < 0.5 else -1)
    h, w = img.shape[1:]
    return affine_warp(img, rotation_matrix(deg, w, h))


def _ra_shear_x(img, m, rng):
    s = 0.03 * m * (1 if rng.random() < 0.5 else -1)
    h, w = img.shape[1:]
    return affine_warp(img, shear_matrix(s, 0.0, w, h))


def _ra_shear_y(img, m, rng):
    s = 0.03 * m * (1 if rng.random() < 0.5 else -1)
    h, w = img.shape[1:]
    return affine_warp(img, shear_matrix(0.0, s, w, h))


def _ra_translate_x(img, m, rng):
    px = 0.045 * m * min(img.shape[1:]) * (1 if rng.random() < 0.5 else -1)
    return affine_warp(img, translation_matrix(px, 0.0))


def _ra_translate_y(img, m, rng):
    px = 0.045 * m * min(img.shape[1:]) * (1 if rng.random() < 0.5 else -1)
    return affine_warp(img, translation_matrix(0.0, px))


def _ra_brightness(img, m, rng):
    f = 1.0 + 0.09 * m * (1 if rng.random() < 0.5 else -1)
    return adjust_brightness(img, max(f, 0.0))


def _ra_contrast(img, m, rng):
    f = 1.0 + 0.09 * m * (1 if rng.random() < 0.5 else -1)
    return adjust_contrast(img, max(f, 0.0))


def _ra_solarize(img, m, rng):
    return solarize(img, 1.0 - m / 10.0)


def _ra_posterize(img, m, rng):
    return posterize(img, 8 - int(0.4 * m))


def _ra_equalize(img, m, rng):
    return equalize(img)


def _ra_autocontrast(img, m, rng):
    return autocontrast(img)


RANDAUGMENT_OPS = (
    ("rotate", _ra_rotate),
    ("shear_x", _ra_shear_x),
    ("shear_y", _ra_shear_y),
    ("translate_x", _ra_translate_x),
    ("translate_y", _ra_translate_y),
    ("brightness", _ra_brightness),
    ("contrast", _ra_contrast),
    ("solarize", _ra_solarize),
    ("posterize", _ra_posterize),
    ("equalize", _ra_equalize),
    ("autocontrast", _ra_autocontrast),
)


def randaugment(img: np.ndarray, num_ops: int, magnitude: float,
                magnitude_std: float, rng: np.random.Generator) -> np.ndarray:
    for _ in range(num_ops):
        idx = int(rng.integers(len(RANDAUGMENT_OPS)))
        m = magnitude if magnitude_std == 0 else rng.normal(magnitude, magnitude_std)
        m = float(np.clip(m, 0.0, 10.0))
        img = RANDAUGMENT_OPS[idx][1](img, m, rng)
    return _clamp(img)


def random_erasing(img: np.ndarray, rng: np.random.Generator,
                   area_range=(0.02, 1.0 / 3.0), aspect_range=(0.3, 3.3),
                   fill: str = "random", max_attempts: int = 50) -> np.ndarray:
    """Overwrite one axis-aligned rectangle whose integer pixel area lands
    inside ``area_range`` of the image. Returns the input unchanged only if
    no admissible rectangle is found within ``max_attempts`` draws."""
    c, h, w = img.shape
    total = h * w
    log_lo, log_hi = np.log(aspect_range[0]), np.log(aspect_range[1])
    for _ in range(max_attempts):
        target = rng.uniform(*area_range) * total
        aspect = np.exp(rng.uniform(log_lo, log_hi))
        rh = int(round(np.sqrt(target * aspect)))
        rw = int(round(np.sqrt(target / aspect)))
        if rh < 1 or rw < 1 or rh > h or rw > w:
            continue
        if not (area_range[0] * total <= rh * rw <= area_range[1] * total):
            continue
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        out = img.copy()
        if fill == "random":
            patch = rng.random((c, rh, rw)).astype(img.dtype)
        elif fill == "mean":
            patch = np.broadcast_to(img.mean(axis=(1, 2))[:, None, None], (c, rh, rw))
        else:
            patch = np.zeros((c, rh, rw), dtype=img.dtype)
        out[:, top:top + rh, left:left + rw] = patch
        return out
    return img


# ---------------------------------------------------------------------------
# per-sample pipeline
# ---------------------------------------------------------------------------


def _random_resized_crop(img: np.ndarray, policy: AugPolicy,
                         rng: np.random.Generator) -> np.ndarray:
    img = resize_bilinear(img, policy.resize_to, policy.resize_to)
    side = policy.resize_to
    frac = rng.uniform(*policy.crop_scale)
    crop = int(round(np.sqrt(frac) * side))
    crop = max(1, min(crop, side))
    top = int(rng.integers(0, side - crop + 1))
    left = int(rng.integers(0, side - crop + 1))
    window = img[:, top:top + crop, left:left + crop]
    return resize_bilinear(window, policy.crop_size, policy.crop_size)


def apply_sample_augs(img: np.ndarray, policy: AugPolicy,
                      rng: np.random.Generator) -> np.ndarray:
    """Run the per-sample part of the recipe (everything except the
    batch-level mixes). Deterministic given the rng stream."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError("expected a (3, H, W) image")
    policy.validate()
    out = _random_resized_crop(img, policy, rng)
    if rng.random() < policy.hflip_prob:
        out = hflip(out)
    if policy.brightness_jitter > 0:
        out = adjust_brightness(out, 1.0 + rng.uniform(-policy.brightness_jitter,
                                                       policy.brightness_jitter))
    if policy.randaugment:
        out = randaugment(out, policy.ra_num_ops, policy.ra_magnitude,
                          policy.ra_magnitude_std, rng)
    if policy.erase_prob > 0 and rng.random() < policy.erase_prob:
        out = random_erasing(out, rng, policy.erase_area, policy.erase_aspect,
                             policy.erase_fill)
    return _clamp(out)


# ---------------------------------------------------------------------------
# batch-level mixes
# ---------------------------------------------------------------------------


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class MixedBatch:
    """Mixed images with soft labels and the provenance of the mix."""

    images: np.ndarray
    soft_labels: np.ndarray
    lam: float = 1.0
    perm: np.ndarray | None = None
    mode: str = "none"


def mixup(images: np.ndarray, labels_onehot: np.ndarray, alpha: float,
          rng: np.random.Generator, lam: float | None = None) -> MixedBatch:
    """Convex pixel mix against a random pairing permutation; labels mix
    with the same coefficient. ``lam`` can be forced for testing."""
    n = images.shape[0]
    if n < 2:
        return MixedBatch(images, labels_onehot.copy(), 1.0, None, "none")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)
    mixed = lam * images + (1.0 - lam) * images[perm]
    soft = lam * labels_onehot + (1.0 - lam) * labels_onehot[perm]
    return MixedBatch(mixed.astype(images.dtype), soft, lam, perm, "mixup")


def cutmix(images: np.ndarray, labels_onehot: np.ndarray, alpha: float,
           rng: np.random.Generator, lam: float | None = None) -> MixedBatch:
    """Paste a partner rectangle of target area (1 - lam) * H * W, then
    re-derive the label weight from the exact pasted-pixel count."""
    n = images.shape[0]
    if n < 2:
        return MixedBatch(images, labels_onehot.copy(), 1.0, None, "none")
    h, w = images.shape[2], images.shape[3]
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)

    cut_ratio = np.sqrt(1.0 - lam)
    cut_h = int(round(h * cut_ratio))
    cut_w = int(round(w * cut_ratio))
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0 = max(cy - cut_h // 2, 0)
    y1 = min(cy + (cut_h + 1) // 2, h)
    x0 = max(cx - cut_w // 2, 0)
    x1 = min(cx + (cut_w + 1) // 2, w)

    mixed = images.copy()
    if y1 > y0 and x1 > x0:
        mixed[:, :, y0:y1, x0:x1] = images[perm][:, :, y0:y1, x0:x1]
        lam_exact = 1.0 - ((y1 - y0) * (x1 - x0)) / (h * w)
    else:
        lam_exact = 1.0  # degenerate box: nothing pasted
    soft = lam_exact * labels_onehot + (1.0 - lam_exact) * labels_onehot[perm]
    return MixedBatch(mixed, soft, float(lam_exact), perm, "cutmix")


def mix_dispatch(images: np.ndarray, labels_onehot: np.ndarray,
                 policy: AugPolicy, rng: np.random.Generator) -> MixedBatch:
    """Apply a mix with probability ``mix_prob``; when mixing, choose
    CutMix with probability ``mix_switch_prob``, otherwise Mixup."""
    policy.validate()
    if policy.mix_prob > 0 and rng.random() < policy.mix_prob:
        if rng.random() < policy.mix_switch_prob:
            return cutmix(images, labels_onehot, policy.cutmix_alpha, rng)
        return mixup(images, labels_onehot, policy.mixup_alpha, rng)
    return MixedBatch(images, labels_onehot.copy(), 1.0, None, "none")

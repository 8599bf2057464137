"""Stochastic two-view image augmentation.

Three policies are supported.  ``none`` is the identity.  ``weak`` is the
crop / flip / color-distortion / blur / solarize sequence standard in
contrastive self-supervision: a random patch is selected and resized back
to the native resolution, followed by per-image brightness/contrast (and,
for RGB inputs, saturation/hue) adjustments in random order, an optional
grayscale conversion, Gaussian blur and solarization.  ``strong`` layers
two randomly chosen heavier ops plus cutout on top of crop and flip.

All strengths and probabilities below are configurable policy fields with
conventional defaults; they are artifact choices, recorded in the
experiment config.  Crops happen at the native 28x28 / 32x32 resolution so
the fixed architectures keep their documented feature dimensions.

Everything operates on float arrays in [0, 1] (NHWC); outputs stay in
[0, 1].  Per-dataset channel normalization is a separate, deterministic
step (:func:`normalize`) applied downstream by training and evaluation.
Given one rng, results are fully deterministic; batch and single-image
entry points share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

POLICY_KINDS = ("none", "weak", "strong")


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str
    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    flip_probability: float = 0.0
    color_jitter_strengths: tuple[float, float, float, float] = (0.4, 0.4, 0.2, 0.1)
    grayscale_probability: float = 0.2
    blur_probability: float = 0.1
    solarize_probability: float = 0.1

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale_range must lie within (0, 1], got {self.crop_scale_range}")
        for label, p in [("flip", self.flip_probability),
                         ("grayscale", self.grayscale_probability),
                         ("blur", self.blur_probability),
                         ("solarize", self.solarize_probability)]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{label} probability must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class ViewPair:
    view1: np.ndarray
    view2: np.ndarray


def none_policy() -> AugmentPolicy:
    return AugmentPolicy(kind="none")


def weak_policy(dataset: str = "mnist") -> AugmentPolicy:
    # Horizontal flips would change digit identity, so they are reserved for
    # natural images.
    flip = 0.5 if dataset == "cifar10" else 0.0
    return AugmentPolicy(kind="weak", flip_probability=flip)


def strong_policy(dataset: str = "mnist") -> AugmentPolicy:
    flip = 0.5 if dataset == "cifar10" else 0.0
    return AugmentPolicy(kind="strong", crop_scale_range=(0.4, 1.0), flip_probability=flip)


def normalize(images: np.ndarray, mean, std) -> np.ndarray:
    """Per-channel standardization; the only preprocessing used at eval time."""
    mean = np.asarray(mean, dtype=images.dtype)
    std = np.asarray(std, dtype=images.dtype)
    return (images - mean) / std


# -- geometric ops ----------------------------------------------------------


def _random_resized_crop(images: np.ndarray, scale_range, rng: np.random.Generator) -> np.ndarray:
    b, h, w, _ = images.shape
    area = rng.uniform(scale_range[0], scale_range[1], size=b)
    log_ratio = rng.uniform(np.log(3 / 4), np.log(4 / 3), size=b)
    aspect = np.exp(log_ratio)
    ch = np.clip(np.round(np.sqrt(area * h * w / aspect)), 1, h).astype(np.int64)
    cw = np.clip(np.round(np.sqrt(area * h * w * aspect)), 1, w).astype(np.int64)
    y0 = (rng.random(b) * (h - ch + 1)).astype(np.int64)
    x0 = (rng.random(b) * (w - cw + 1)).astype(np.int64)
    return _resize_crops(images, y0, x0, ch, cw)


def _axis_coords(starts, sizes, out_len):
    """Bilinear source coordinates for each output position, per image."""
    grid = np.arange(out_len, dtype=np.float64)
    coords = starts[:, None] + (grid[None, :] + 0.5) * (sizes[:, None] / out_len) - 0.5
    lower = starts[:, None].astype(np.float64)
    upper = (starts + sizes - 1)[:, None].astype(np.float64)
    coords = np.clip(coords, lower, upper)
    i0 = np.floor(coords).astype(np.int64)
    i1 = np.minimum(i0 + 1, upper.astype(np.int64))
    frac = (coords - i0).astype(np.float32)
    return i0, i1, frac


def _resize_crops(images, y0, x0, ch, cw) -> np.ndarray:
    b, h, w, _ = images.shape
    ry0, ry1, ty = _axis_coords(y0, ch, h)
    rx0, rx1, tx = _axis_coords(x0, cw, w)
    bi = np.arange(b)[:, None, None]
    ty = ty[:, :, None, None]
    tx = tx[:, None, :, None]
    g00 = images[bi, ry0[:, :, None], rx0[:, None, :], :]
    g01 = images[bi, ry0[:, :, None], rx1[:, None, :], :]
    g10 = images[bi, ry1[:, :, None], rx0[:, None, :], :]
    g11 = images[bi, ry1[:, :, None], rx1[:, None, :], :]
    top = g00 * (1 - tx) + g01 * tx
    bottom = g10 * (1 - tx) + g11 * tx
    return (top * (1 - ty) + bottom * ty).astype(images.dtype)


def _horizontal_flip(images: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if p <= 0.0:
        return images
    mask = rng.random(len(images)) < p
    if mask.any():
        images = images.copy()
        images[mask] = images[mask, :, ::-1, :]
    return images


# -- photometric ops --------------------------------------------------------


def _luma(images: np.ndarray) -> np.ndarray:
    return (0.299 * images[..., 0] + 0.587 * images[..., 1] + 0.114 * images[..., 2])[..., None]


def _apply_brightness(images, factors):
    return np.clip(images * factors[:, None, None, None], 0.0, 1.0)


def _apply_contrast(images, factors):
    if images.shape[-1] == 3:
        anchor = _luma(images).mean(axis=(1, 2), keepdims=True)
    else:
        anchor = images.mean(axis=(1, 2, 3), keepdims=True)
    f = factors[:, None, None, None]
    return np.clip(anchor + (images - anchor) * f, 0.0, 1.0)


def _apply_saturation(images, factors):
    gray = _luma(images)
    f = factors[:, None, None, None]
    return np.clip(gray + (images - gray) * f, 0.0, 1.0)


def _rgb_to_hsv(images):
    r, g, b = images[..., 0], images[..., 1], images[..., 2]
    maxc = images.max(axis=-1)
    minc = images.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(delta, 1e-12)
    hr = np.mod((g - b) / safe, 6.0)
    hg = (b - r) / safe + 2.0
    hb = (r - g) / safe + 4.0
    hue = np.where(maxc == r, hr, np.where(maxc == g, hg, hb))
    hue = np.where(delta == 0, 0.0, hue) / 6.0
    return hue, s, v


def _hsv_to_rgb(hue, s, v):
    h6 = hue * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _apply_hue(images, shifts):
    hue, s, v = _rgb_to_hsv(images)
    hue = np.mod(hue + shifts[:, None, None], 1.0)
    return np.clip(_hsv_to_rgb(hue, s, v), 0.0, 1.0).astype(images.dtype)


def _color_jitter(images: np.ndarray, strengths, rng: np.random.Generator) -> np.ndarray:
    sb, sc, ss, sh = strengths
    b = len(images)
    rgb = images.shape[-1] == 3
    ops = []
    if sb > 0:
        ops.append(("brightness", rng.uniform(max(0.0, 1 - sb), 1 + sb, b)))
    if sc > 0:
        ops.append(("contrast", rng.uniform(max(0.0, 1 - sc), 1 + sc, b)))
    if rgb and ss > 0:
        ops.append(("saturation", rng.uniform(max(0.0, 1 - ss), 1 + ss, b)))
    if rgb and sh > 0:
        ops.append(("hue", rng.uniform(-sh, sh, b)))
    if not ops:
        return images
    apply = {"brightness": _apply_brightness, "contrast": _apply_contrast,
             "saturation": _apply_saturation, "hue": _apply_hue}
    # Random per-image op order: at each position, apply every op to the
    # subset of images whose permutation chose it there.
    order = np.argsort(rng.random((b, len(ops))), axis=1)
    out = images
    for position in range(len(ops)):
        chosen = order[:, position]
        for op_index, (op_name, factors) in enumerate(ops):
            mask = chosen == op_index
            if mask.any():
                out = out.copy() if out is images else out
                out[mask] = apply[op_name](out[mask], factors[mask])
    return out


def _random_grayscale(images, p, rng):
    if images.shape[-1] != 3 or p <= 0:
        return images
    mask = rng.random(len(images)) < p
    if mask.any():
        images = images.copy()
        images[mask] = np.repeat(_luma(images[mask]), 3, axis=-1)
    return images


def _random_blur(images, p, rng):
    if p <= 0:
        return images
    mask = rng.random(len(images)) < p
    sigmas = rng.uniform(0.1, 2.0, len(images))
    if mask.any():
        images = images.copy()
        for i in np.flatnonzero(mask):
            images[i] = ndimage.gaussian_filter(images[i], sigma=(sigmas[i], sigmas[i], 0),
                                                mode="nearest")
    return images


def _random_solarize(images, p, rng, threshold=0.5):
    if p <= 0:
        return images
    mask = rng.random(len(images)) < p
    if mask.any():
        images = images.copy()
        sel = images[mask]
        images[mask] = np.where(sel >= threshold, 1.0 - sel, sel)
    return images


# -- strong-policy extras ---------------------------------------------------


def _translate(image, rng):
    h, w, _ = image.shape
    dy = int(rng.integers(-h // 4, h // 4 + 1))
    dx = int(rng.integers(-w // 4, w // 4 + 1))
    out = np.zeros_like(image)
    out[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)] = \
        image[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    return out


def _posterize(image, rng):
    bits = int(rng.integers(3, 7))
    levels = 2 ** bits
    return np.floor(image * (levels - 1) + 0.5) / (levels - 1)


def _invert(image, rng):
    return 1.0 - image

def _strong_brightness(image, rng):
    return np.clip(image * rng.uniform(0.4, 1.6), 0.0, 1.0)


def _strong_contrast(image, rng):
    anchor = image.mean()
    return np.clip(anchor + (image - anchor) * rng.uniform(0.4, 1.6), 0.0, 1.0)


def _strong_solarize(image, rng):
    threshold = rng.uniform(0.3, 0.7)
    return np.where(image >= threshold, 1.0 - image, image)


_STRONG_OPS = [_translate, _posterize, _invert, _strong_brightness,
               _strong_contrast, _strong_solarize]


def _cutout(images, rng):
    b, h, w, _ = images.shape
    sizes = rng.integers(h // 4, h // 2 + 1, size=b)
    ys = rng.integers(0, h, size=b)
    xs = rng.integers(0, w, size=b)
    images = images.copy()
    for i in range(b):
        y1, y2 = max(0, ys[i] - sizes[i] // 2), min(h, ys[i] + sizes[i] // 2)
        x1, x2 = max(0, xs[i] - sizes[i] // 2), min(w, xs[i] + sizes[i] // 2)
        images[i, y1:y2, x1:x2, :] = 0.5
    return images


def _strong_ops(images, rng):
    images = images.copy()
    for i in range(len(images)):
        picks = rng.choice(len(_STRONG_OPS), size=2, replace=False)
        for op_index in picks:
            images[i] = np.clip(_STRONG_OPS[op_index](images[i], rng), 0.0, 1.0)
    return _cutout(images, rng)


# -- entry points -----------------------------------------------------------


def augment_batch(images: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """One stochastic view per input image; identity under the none policy."""
    if images.ndim != 4:
        raise ValueError(f"expected (batch, H, W, C) images, got shape {images.shape}")
    if policy.kind == "none":
        return images
    out = _random_resized_crop(images, policy.crop_scale_range, rng)
    out = _horizontal_flip(out, policy.flip_probability, rng)
    if policy.kind == "weak":
        out = _color_jitter(out, policy.color_jitter_strengths, rng)
        out = _random_grayscale(out, policy.grayscale_probability, rng)
        out = _random_blur(out, policy.blur_probability, rng)
        out = _random_solarize(out, policy.solarize_probability, rng)
    else:
        out = _strong_ops(out, rng)
    return out


def augment(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Single-image convenience wrapper over :func:`augment_batch`."""
    return augment_batch(image[None], policy, rng)[0]


def make_view_pair(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> ViewPair:
    """Two independent draws from the same policy; equal under none."""
    if policy.kind == "none":
        return ViewPair(view1=image, view2=image)
    return ViewPair(view1=augment(image, policy, rng), view2=augment(image, policy, rng))


def make_view_batch(images: np.ndarray, policy: AugmentPolicy,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Batched two-view generation used by the training loops."""
    if policy.kind == "none":
        return images, images
    return augment_batch(images, policy, rng), augment_batch(images, policy, rng)

"""Random crop, resampling and photometric distortion for training views."""

import math

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

MODES = ("bilinear", "bicubic", "area", "nearest")

MIN_AREA = 0.8
ASPECT_RANGE = (0.8, 1.2)
BRIGHTNESS_DELTA = 0.125
CONTRAST_RANGE = (0.5, 1.5)
SATURATION_RANGE = (0.5, 1.5)
HUE_DELTA = 0.1


def _cubic(x, a=-0.5):
    x = np.abs(x)
    return np.where(x <= 1, (a + 2) * x**3 - (a + 3) * x**2 + 1,
                    np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0))


def resample_matrix(n_in, n_out, mode):
    """(n_out, n_in) weights mapping a source axis to a target axis (half-pixel centers)."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if mode == "nearest":
        src = np.minimum(np.floor((rows + 0.5) * scale).astype(int), n_in - 1)
        m[rows, src] = 1.0
    elif mode == "bilinear":
        pos = (rows + 0.5) * scale - 0.5
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        for off, w in ((0, 1 - frac), (1, frac)):
            np.add.at(m, (rows, np.clip(i0 + off, 0, n_in - 1)), w)
    elif mode == "bicubic":
        pos = (rows + 0.5) * scale - 0.5
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        for off in (-1, 0, 1, 2):
            np.add.at(m, (rows, np.clip(i0 + off, 0, n_in - 1)), _cubic(frac - off))
    elif mode == "area":
        for r in rows:
            lo, hi = r * scale, (r + 1) * scale
            for k in range(int(math.floor(lo)), min(int(math.ceil(hi)), n_in)):
                overlap = min(hi, k + 1) - max(lo, k)
                if overlap > 0:
                    m[r, k] = overlap / scale
    else:
        raise ValueError(f"unknown interpolation {mode!r}")
    return m


def resize(image, dims, mode="bilinear"):
    """Resample an H×W×C (or H×W) image to ``dims`` = (new_h, new_w)."""
    img = np.asarray(image)
    nh, nw = dims
    if nh < 1 or nw < 1:
        raise ValueError(f"target dims must be positive, got {dims}")
    h, w = img.shape[:2]
    if mode == "nearest":
        ys = np.minimum(np.floor((np.arange(nh) + 0.5) * h / nh).astype(int), h - 1)
        xs = np.minimum(np.floor((np.arange(nw) + 0.5) * w / nw).astype(int), w - 1)
        return img[ys][:, xs].copy()
    my = resample_matrix(h, nh, mode)
    mx = resample_matrix(w, nw, mode)
    out = np.tensordot(my, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(mx, out, axes=(1, 1)), 0, 1)
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float64)


def sample_crop(height, width, rng, min_area=MIN_AREA, aspect=ASPECT_RANGE, attempts=100):
    """(top, left, crop_h, crop_w) covering >= min_area of the frame.

    Aspect ratio is measured relative to the frame's own aspect, so square and
    non-square views get the same treatment.
    """
    for _ in range(attempts):
        area = rng.uniform(min_area, 1.0)
        ratio = math.exp(rng.uniform(math.log(aspect[0]), math.log(aspect[1])))
        ch = int(round(height * math.sqrt(area / ratio)))
        cw = int(round(width * math.sqrt(area * ratio)))
        if not (1 <= ch <= height and 1 <= cw <= width):
            continue
        if ch * cw < min_area * height * width:
            continue
        rel = (cw / ch) / (width / height)
        if not aspect[0] <= rel <= aspect[1]:
            continue
        top = int(rng.integers(0, height - ch + 1))
        left = int(rng.integers(0, width - cw + 1))
        return top, left, ch, cw
    return 0, 0, height, width


def distort_color(image, rng):
    """Brightness, contrast, saturation, hue, in that order; clamped to [0, 1]."""
    x = image + rng.uniform(-BRIGHTNESS_DELTA, BRIGHTNESS_DELTA)
    x = np.clip(x, 0.0, 1.0)
    mean = x.mean(axis=(0, 1), keepdims=True)
    x = np.clip((x - mean) * rng.uniform(*CONTRAST_RANGE) + mean, 0.0, 1.0)
    hsv = rgb_to_hsv(x)
    hsv[..., 1] = np.clip(hsv[..., 1] * rng.uniform(*SATURATION_RANGE), 0.0, 1.0)
    hsv[..., 0] = np.mod(hsv[..., 0] + rng.uniform(-HUE_DELTA, HUE_DELTA), 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def augment_view(view, rng):
    """Random crop, resize back with a random interpolation, then color distortion."""
    h, w = view.shape[:2]
    top, left, ch, cw = sample_crop(h, w, rng)
    mode = MODES[int(rng.integers(len(MODES)))]
    out = resize(view[top:top + ch, left:left + cw], (h, w), mode)
    out = distort_color(np.clip(out, 0.0, 1.0), rng)
    return out.astype(view.dtype)

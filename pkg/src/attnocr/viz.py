"""Saliency maps, upsampled attention masks and overlay rendering."""

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dataset.io import to_uint8, write_ppm


@dataclass
class Heatmap:
    """Nonnegative map at input resolution, scaled so its max is 1.

    ``max_value`` is the pre-normalization maximum; an all-zero map keeps
    zeros and sets ``flagged_zero``.
    """

    values: np.ndarray
    max_value: float
    flagged_zero: bool = False

    @classmethod
    def from_raw(cls, raw):
        raw = np.asarray(raw, dtype=np.float64)
        if np.any(raw < 0):
            raise ValueError("heatmap entries must be nonnegative")
        peak = float(raw.max()) if raw.size else 0.0
        if peak <= 0.0:
            return cls(np.zeros_like(raw), 0.0, True)
        return cls(raw / peak, peak, False)

    def raw(self):
        return self.values * self.max_value


def noise_averaged_saliency(score_fn, image, noise_sigma=0.05, n_noise=16, rng=None):
    """Mean over noisy copies of the per-pixel channel L2 norm of d score / d image.

    ``score_fn`` maps a (N, ...) input tensor to N independent scalar scores
    stacked as a (N,) tensor. ``image`` is one input without the batch axis;
    the last axis holds color channels. Returns the raw averaged map.
    """
    if n_noise < 1:
        raise ValueError("n_noise must be at least 1")
    image = np.asarray(image, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    noisy = np.broadcast_to(image, (n_noise,) + image.shape).copy()
    if noise_sigma > 0:
        noisy += rng.normal(0.0, noise_sigma, noisy.shape)
    x = ad.Tensor(noisy, requires_grad=True)
    # copies are independent, so one backward of the summed scores yields every per-copy gradient
    ad.sum(score_fn(x)).backward()
    return np.sqrt((x.grad ** 2).sum(axis=-1)).mean(axis=0)


def _f64(model):
    return model if model.dtype == np.float64 else model.with_values({k: p.data for k, p in model.params.items()})


def saliency(model, views, t, noise_sigma=0.05, n_noise=16, rng=None, history=None):
    """Per-view saliency Heatmaps for decoder step ``t`` (1-based).

    The score is the pre-softmax logit of the symbol predicted at step t.
    Decoder history is the clean greedy prediction (or ``history``) so every
    noisy copy is scored against the same symbol sequence.
    """
    views = np.asarray(views, dtype=np.float64)
    steps = model.config.max_len
    if not 1 <= t <= steps:
        raise ValueError(f"step {t} outside [1, {steps}]")
    model = _f64(model)
    if history is None:
        with ad.no_grad():
            history = model.decode(views[None])[0].symbols[0]
    history = np.asarray(history)
    k = int(history[t - 1])

    def score(x):
        res, _ = model.decode(x, "teacher", np.broadcast_to(history, (x.shape[0], steps)))
        return res.logits[t - 1][:, k]

    raw = noise_averaged_saliency(score, views, noise_sigma, n_noise, rng)
    return [Heatmap.from_raw(r) for r in raw]


def saliency_all_steps(model, views, noise_sigma=0.05, n_noise=16, rng=None, steps=None):
    """Saliency for several steps sharing one clean decode; returns ({t: heatmaps}, history)."""
    model = _f64(model)
    views = np.asarray(views, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    with ad.no_grad():
        history = model.decode(views[None])[0].symbols[0]
    steps = steps or range(1, model.config.max_len + 1)
    return {t: saliency(model, views, t, noise_sigma, n_noise, rng, history) for t in steps}, history


def upsample_attention(alpha, dims):
    """Nearest-neighbor upsample of an I×J mask to ``dims`` (H, W); raw block-filled values."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ValueError(f"alpha must be I×J, got shape {alpha.shape}")
    gi, gj = alpha.shape
    h, w = dims
    if h < gi or w < gj:
        raise ValueError(f"input dims {dims} smaller than grid {alpha.shape}")
    rows = (np.arange(h) * gi) // h
    cols = (np.arange(w) * gj) // w
    return alpha[np.ix_(rows, cols)]


def attention_maps(alpha, views, view_dims):
    """Split a concatenated (I, V·J) mask by view and upsample each piece.

    Maps share one scale (the step's largest cell weight) so a view the
    decoder ignores stays dark next to the view it reads.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    gi, total = alpha.shape
    if total % views:
        raise ValueError(f"{total} columns do not split into {views} views")
    gj = total // views
    peak = float(alpha.max())
    out = []
    for v in range(views):
        up = upsample_attention(alpha[:, v * gj:(v + 1) * gj], view_dims)
        if peak > 0:
            out.append(Heatmap(up / peak, peak, False))
        else:
            out.append(Heatmap(np.zeros_like(up), 0.0, True))
    return out


def _maps(maps, n, dims):
    if maps is None:
        return [np.zeros(dims)] * n
    arrs = [m.values if isinstance(m, Heatmap) else np.asarray(m, dtype=np.float64) for m in maps]
    if len(arrs) != n or any(a.shape != dims for a in arrs):
        raise ValueError(f"expected {n} maps of shape {dims}")
    return arrs


def composite(views, sal=None, att=None):
    """One step's overlay: grayscale views side by side, saliency in red, attention in green."""
    views = np.asarray(views, dtype=np.float64)
    n, h, w, _ = views.shape
    gray = views @ np.array([0.299, 0.587, 0.114])
    s, a = _maps(sal, n, (h, w)), _maps(att, n, (h, w))
    panels = []
    for v in range(n):
        rgb = np.repeat(gray[v][..., None], 3, axis=-1)
        rgb[..., 0] += s[v]
        rgb[..., 1] += a[v]
        panels.append(np.clip(rgb, 0.0, 1.0))
    return np.concatenate(panels, axis=1)


def render_overlay(views, saliency_maps, attention_maps_, out_dir, sample_id):
    """Write ``<id>_t<step>.ppm`` per step and ``<id>_sheet.ppm``; returns the uint8 images.

    ``saliency_maps`` and ``attention_maps_`` map step -> per-view maps
    (either may be None). Steps are stacked vertically on the sheet.
    """
    steps = sorted(set(saliency_maps or {}) | set(attention_maps_ or {}))
    if not steps:
        raise ValueError("nothing to render")
    os.makedirs(out_dir, exist_ok=True)
    frames = {}
    for t in steps:
        img = to_uint8(composite(views, (saliency_maps or {}).get(t), (attention_maps_ or {}).get(t)))
        write_ppm(os.path.join(out_dir, f"{sample_id}_t{t}.ppm"), img)
        frames[t] = img
    sheet = np.concatenate([frames[t] for t in steps], axis=0)
    write_ppm(os.path.join(out_dir, f"{sample_id}_sheet.ppm"), sheet)
    frames["sheet"] = sheet
    return frames


def box_contrast(heatmap, box):
    """(mean inside, mean outside) of a map for an end-exclusive (x0, y0, x1, y1) box."""
    vals = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    x0, y0, x1, y1 = box
    inside = np.zeros(vals.shape, dtype=bool)
    inside[y0:y1, x0:x1] = True
    return float(vals[inside].mean()), float(vals[~inside].mean())


def attention_centroids(alphas, views):
    """Per-step attention-weighted column within a view, for (T, I, V·J) masks."""
    alphas = np.asarray(alphas, dtype=np.float64)
    gj = alphas.shape[-1] // views
    local = np.arange(alphas.shape[-1]) % gj
    return (alphas.sum(axis=-2) * local).sum(axis=-1) / alphas.sum(axis=(-2, -1))


def carriage_return_report(model, dataset, split="test", limit=None):
    """Median centroid column at line 1's last char and at line 2's first char.

    Only two-line samples the model transcribes correctly are used.
    """
    recs = [r for r in dataset.split(split) if " " in r.text.strip()]
    if limit is not None:
        recs = recs[:limit]
    last, first = [], []
    for r in recs:
        views = dataset.views(r)
        with ad.no_grad():
            res, _ = model.decode(views[None])
        if model.alphabet.decode(res.symbols[0]) != r.text:
            continue
        cent = attention_centroids(np.stack([a.data[0] for a in res.alphas]), model.config.views)
        split_at = r.text.index(" ")
        last.append(cent[split_at - 1])
        first.append(cent[split_at + 1])
    if not last:
        return {"samples": 0, "line1_last": float("nan"), "line2_first": float("nan"), "returns": False}
    l1, l2 = float(np.median(last)), float(np.median(first))
    return {"samples": len(last), "line1_last": l1, "line2_first": l2, "returns": l2 < l1}

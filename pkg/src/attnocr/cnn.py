"""Configurable conv/pool feature extractor and multi-view concatenation."""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff.nn import same_padding


@dataclass(frozen=True)
class Conv:
    kh: int
    kw: int
    cout: int
    stride: int = 1


@dataclass(frozen=True)
class Pool:
    window: int = 2
    stride: int = 2


@dataclass(frozen=True)
class ExtractorConfig:
    blocks: tuple
    input_size: tuple = (64, 64)
    in_channels: int = 3
    name: str = "custom"

    @property
    def depth(self):
        return sum(isinstance(b, Conv) for b in self.blocks)

    def output_shape(self):
        h, w = self.input_size
        c = self.in_channels
        for b in self.blocks:
            if isinstance(b, Conv):
                h, _, _ = same_padding(h, b.kh, b.stride)
                w, _, _ = same_padding(w, b.kw, b.stride)
                c = b.cout
            else:
                if b.window > h or b.window > w:
                    raise ValueError(f"{self.name}: pool window {b.window} exceeds map {(h, w)}")
                h = (h - b.window) // b.stride + 1
                w = (w - b.window) // b.stride + 1
        return h, w, c

    def validate(self):
        h, w, _ = self.output_shape()
        if h < 2 or w < 2:
            raise ValueError(f"extractor {self.name!r} yields a {h}x{w} grid on {self.input_size} input; "
                             "attention needs at least 2x2")
        return self


def _c(cout):
    return Conv(3, 3, cout)


# Channel widths climb 32 -> 64 -> 128 and stay at 128.
_PRESET_BLOCKS = {
    "tiny-2": (_c(32), Pool(), _c(64), Pool()),
    "small-4": (_c(32), Pool(), _c(64), Pool(), _c(128), _c(128)),
    "mid-6": (_c(32), Pool(), _c(64), Pool(), _c(128), _c(128), _c(128), _c(128)),
    "deep-8": (_c(32), Pool(), _c(64), Pool(), _c(128), _c(128), Pool(), _c(128), _c(128), _c(128), _c(128)),
}
PRESETS = tuple(_PRESET_BLOCKS)


def preset(name, input_size=(64, 64)):
    try:
        blocks = _PRESET_BLOCKS[name]
    except KeyError:
        raise ValueError(f"unknown extractor preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return ExtractorConfig(blocks, tuple(input_size), 3, name)


@dataclass
class FeatureMap:
    """An I×J×C feature cube, optionally with a leading batch axis."""

    data: ad.Tensor

    @property
    def height(self):
        return self.data.shape[-3]

    @property
    def width(self):
        return self.data.shape[-2]

    @property
    def channels(self):
        return self.data.shape[-1]


def init_params(config, rng, std=0.1, dtype=np.float32, cap_fan_in=False):
    """Truncated-normal kernels and zero biases.

    With ``cap_fan_in`` each kernel's std is min(std, sqrt(2 / fan_in)), which
    keeps relu activations from growing layer over layer in the deep presets.
    """
    params = {}
    cin = config.in_channels
    k = 0
    for b in config.blocks:
        if isinstance(b, Conv):
            s = min(std, np.sqrt(2.0 / (b.kh * b.kw * cin))) if cap_fan_in else std
            params[f"cnn/conv{k}/w"] = ad.parameter(ad.truncated_normal(rng, (b.kh, b.kw, cin, b.cout), s, dtype))
            params[f"cnn/conv{k}/b"] = ad.parameter(np.zeros(b.cout, dtype=dtype))
            cin = b.cout
            k += 1
    return params


def extract_features(view, config, params):
    """Run the block list over one view (H×W×3) or a batch of views; relu after each conv."""
    x = ad.as_tensor(view)
    if x.shape[-3:-1] != tuple(config.input_size) or x.shape[-1] != config.in_channels:
        raise ValueError(f"input {x.shape} does not match extractor input "
                         f"{tuple(config.input_size) + (config.in_channels,)}")
    k = 0
    for b in config.blocks:
        if isinstance(b, Conv):
            x = ad.relu(ad.conv2d(x, params[f"cnn/conv{k}/w"], b.stride, "same", params[f"cnn/conv{k}/b"]))
            k += 1
        else:
            x = ad.maxpool2d(x, b.window, b.stride)
    return FeatureMap(x)


def concat_views(maps):
    """Place the views side by side along the width axis, in order."""
    if not maps:
        raise ValueError("concat_views needs at least one map")
    first = maps[0]
    for m in maps[1:]:
        if m.height != first.height or m.channels != first.channels:
            raise ValueError(f"view maps disagree: {first.data.shape} vs {m.data.shape}")
    if len(maps) == 1:
        return first
    return FeatureMap(ad.concat([m.data for m in maps], axis=-2))


def receptive_field(config):
    r, jump = 1, 1
    for b in config.blocks:
        k, s = (b.kh, b.stride) if isinstance(b, Conv) else (b.window, b.stride)
        r += (k - 1) * jump
        jump *= s
    return r


def footprint_extent(config, draws=256, seed=0):
    """Measure the receptive field empirically from input gradients.

    Uses single-channel copies of the blocks with nonnegative weights on
    positive inputs, so relus stay open, and unions the nonzero input
    gradient of the central output cell over many random inputs so that
    max-pool routing covers every window position.
    """
    rf = receptive_field(config)
    size = 2 * rf + 8
    blocks = tuple(replace(b, cout=1) if isinstance(b, Conv) else b for b in config.blocks)
    probe = ExtractorConfig(blocks, (size, size), 1, config.name + "-probe")
    rng = np.random.default_rng(seed)
    params = init_params(probe, rng, dtype=np.float64)
    for name, p in params.items():
        p.data = np.abs(p.data) + 0.1 if name.endswith("/w") else np.full_like(p.data, 0.1)
    x = ad.parameter(rng.uniform(0.5, 1.5, size=(draws, size, size, 1)))
    out = extract_features(x, probe, params).data
    oh, ow = out.shape[1:3]
    loss = ad.sum(out[:, oh // 2, ow // 2, :])
    loss.backward()
    hit = np.abs(x.grad).sum(axis=(0, 3)) > 0
    rows = np.flatnonzero(hit.any(axis=1))
    cols = np.flatnonzero(hit.any(axis=0))
    return int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1)

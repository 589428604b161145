"""Synthetic multi-view street-sign renderer."""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..decoder import Alphabet
from . import font
from .io import Record, to_uint8, write_manifest, write_ppm

LINE_GAP = 2  # blank rows between lines, in glyph pixels
MARGIN = 1


@dataclass
class GenSpec:
    charset: str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    min_len: int = 1
    max_len: int = 8          # per line
    lines: int = 1
    views: int = 4
    view_size: tuple = (64, 64)
    scale: int | None = None  # None: largest scale that fits max_len
    clutter: float = 0.3
    jitter: int | None = None  # per-view offset bound in pixels; None: anywhere that fits
    blur_prob: float = 0.0
    noise: float = 0.02

    def __post_init__(self):
        self.view_size = tuple(self.view_size)
        if self.lines not in (1, 2):
            raise ValueError("lines must be 1 or 2")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"bad length range [{self.min_len}, {self.max_len}]")
        for ch in self.charset:
            font.glyph(ch)
        if self.charset.strip() == "":
            raise ValueError("charset needs at least one visible symbol")
        if self.lines == 2 and " " in self.charset:
            raise ValueError("two-line specs use the space as the line break; drop it from the charset")

    def block_size(self, scale):
        """Pixel (height, width) of the largest possible text block."""
        w = self.max_len * (font.GLYPH_W + 1) * scale - scale
        h = self.lines * font.GLYPH_H * scale + (self.lines - 1) * LINE_GAP * scale
        return h, w

    def resolved_scale(self):
        vh, vw = self.view_size
        if self.scale is not None:
            bh, bw = self.block_size(self.scale)
            if bh > vh - 2 * MARGIN or bw > vw - 2 * MARGIN:
                raise ValueError(f"text of {self.max_len} chars x {self.lines} lines at scale {self.scale} "
                                 f"({bh}x{bw}px) is too large for a {vh}x{vw} view")
            return self.scale
        s = 1
        while True:
            bh, bw = self.block_size(s + 1)
            if bh > vh - 2 * MARGIN or bw > vw - 2 * MARGIN:
                break
            s += 1
        bh, bw = self.block_size(s)
        if bh > vh - 2 * MARGIN or bw > vw - 2 * MARGIN:
            raise ValueError(f"text of {self.max_len} chars x {self.lines} lines ({bh}x{bw}px) "
                             f"is too large for a {vh}x{vw} view")
        return s

    def max_transcription(self):
        return self.lines * self.max_len + (self.lines - 1)

    def to_dict(self):
        d = asdict(self)
        d["view_size"] = list(self.view_size)
        return d


@dataclass
class Sample:
    id: str
    views: np.ndarray                   # (V, H, W, 3) float in [0, 1]
    transcription: str
    boxes: list = field(default_factory=list)  # (view, char_index, x0, y0, x1, y1), end-exclusive
    blurred_view: int | None = None


def sample_text(spec, rng):
    """One or two lines joined by a space; no leading/trailing blanks within a line."""
    visible = [c for c in spec.charset if c != " "]
    lines = []
    for _ in range(spec.lines):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        chars = [spec.charset[int(i)] for i in rng.integers(0, len(spec.charset), n)]
        for pos in {0, n - 1}:
            if chars[pos] == " ":
                chars[pos] = visible[int(rng.integers(len(visible)))]
        lines.append("".join(chars))
    return " ".join(lines)


def _luma(rgb):
    return float(np.dot(rgb, [0.299, 0.587, 0.114]))


def _colors(rng):
    while True:
        bg = rng.uniform(0, 1, 3)
        fg = rng.uniform(0, 1, 3)
        if abs(_luma(bg) - _luma(fg)) >= 0.4:
            return bg, fg


def _clutter(canvas, level, rng):
    h, w, _ = canvas.shape
    for _ in range(int(round(level * 8))):
        y0, x0 = int(rng.integers(0, h)), int(rng.integers(0, w))
        y1 = min(h, y0 + int(rng.integers(2, max(3, h // 2))))
        x1 = min(w, x0 + int(rng.integers(2, max(3, w // 2))))
        color = rng.uniform(0, 1, 3)
        canvas[y0:y1, x0:x1] = 0.75 * canvas[y0:y1, x0:x1] + 0.25 * color


def render_sample(spec, text, rng, sample_id="sample"):
    """Draw ``text`` into every view with per-view offsets, colors and clutter."""
    scale = spec.resolved_scale()
    vh, vw = spec.view_size
    line_texts = text.split(" ", 1) if spec.lines == 2 else [text]
    if spec.lines == 2 and len(line_texts) != 2:
        raise ValueError(f"two-line text needs a space separator: {text!r}")
    cell = (font.GLYPH_W + 1) * scale
    line_h = font.GLYPH_H * scale
    block_w = max(len(t) * cell - scale for t in line_texts)
    block_h = len(line_texts) * line_h + (len(line_texts) - 1) * LINE_GAP * scale
    if block_w > vw - 2 * MARGIN or block_h > vh - 2 * MARGIN:
        raise ValueError(f"text {text!r} is too large for a {vh}x{vw} view")

    bg, fg = _colors(rng)
    slack_y, slack_x = vh - 2 * MARGIN - block_h, vw - 2 * MARGIN - block_w
    views, boxes = [], []
    for v in range(spec.views):
        if spec.jitter is None:
            oy, ox = int(rng.integers(0, slack_y + 1)), int(rng.integers(0, slack_x + 1))
        else:
            oy = int(np.clip(slack_y // 2 + rng.integers(-spec.jitter, spec.jitter + 1), 0, slack_y))
            ox = int(np.clip(slack_x // 2 + rng.integers(-spec.jitter, spec.jitter + 1), 0, slack_x))
        top, left = MARGIN + oy, MARGIN + ox
        vbg = np.clip(bg + rng.normal(0, 0.04, 3), 0, 1)
        vfg = np.clip(fg + rng.normal(0, 0.04, 3), 0, 1)
        canvas = np.broadcast_to(vbg, (vh, vw, 3)).copy()
        _clutter(canvas, spec.clutter, rng)
        char_index = 0
        for li, line in enumerate(line_texts):
            y = top + li * (line_h + LINE_GAP * scale)
            mask = font.render_line(line, scale)
            region = canvas[y:y + mask.shape[0], left:left + mask.shape[1]]
            region[mask] = vfg
            for k, ch in enumerate(line):
                if ch != " ":
                    x0 = left + k * cell
                    boxes.append((v, char_index + k, x0, y, x0 + font.GLYPH_W * scale, y + line_h))
            char_index += len(line) + 1
        if spec.noise:
            canvas += rng.normal(0, spec.noise, canvas.shape)
        views.append(np.clip(canvas, 0, 1))
    views = np.stack(views)
    blurred = None
    if spec.views >= 2 and spec.blur_prob > 0 and rng.uniform() < spec.blur_prob:
        blurred = int(rng.integers(spec.views))
        views[blurred] = gaussian_filter(views[blurred], sigma=(1.5 * scale, 1.5 * scale, 0))
    return Sample(sample_id, views, text, boxes, blurred)


def generate(spec, n, seed, out_dir, alphabet=None):
    """Write ``n`` samples under ``out_dir``; output bytes depend only on (spec, n, seed)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    alphabet = alphabet or Alphabet.desk()
    for ch in spec.charset:
        if ch not in alphabet:
            raise ValueError(f"charset symbol {ch!r} is not in the alphabet")
    spec.resolved_scale()
    os.makedirs(os.path.join(out_dir, "imgs"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "boxes"), exist_ok=True)
    rng = np.random.default_rng(seed)
    width = max(6, len(str(n - 1)))
    records = []
    for i in range(n):
        sid = f"{i:0{width}d}"
        text = sample_text(spec, rng)
        s = render_sample(spec, text, rng, sid)
        for v in range(spec.views):
            write_ppm(os.path.join(out_dir, "imgs", f"{sid}_v{v}.ppm"), to_uint8(s.views[v]))
        with open(os.path.join(out_dir, "boxes", f"{sid}.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for b in s.boxes:
                f.write("\t".join(str(x) for x in b) + "\n")
        records.append(Record(sid, text, spec.views, i + 1))
    write_manifest(out_dir, records)
    alphabet.save(os.path.join(out_dir, "alphabet.txt"))
    with open(os.path.join(out_dir, "genspec.json"), "w", encoding="utf-8") as f:
        json.dump({"spec": spec.to_dict(), "n": n, "seed": seed}, f, indent=2, sort_keys=True)
    return out_dir

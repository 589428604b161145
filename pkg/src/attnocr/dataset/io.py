"""On-disk dataset layout: manifest, PPM images, glyph boxes, split hashing, batching."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..decoder import Alphabet

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
SPLITS = ("train", "val", "test")


class DatasetError(Exception):
    pass


def fnv1a64(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def split_of(sample_id):
    bucket = fnv1a64(sample_id) % 100
    if bucket < 80:
        return "train"
    return "val" if bucket < 90 else "test"


def write_ppm(path, image):
    """Write an H×W×3 image as binary P6; floats are taken as [0, 1]."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs H×W×3, got {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr).tobytes())


def to_uint8(image):
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_ppm(path):
    """Parse a binary P6 file with maxval 255 into uint8 H×W×3."""
    with open(path, "rb") as f:
        blob = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).copy()


def encode_target(transcription, alphabet, steps):
    """Symbols of ``transcription`` padded with nulls to exactly ``steps``."""
    if len(transcription) >= steps:
        raise ValueError(f"transcription of {len(transcription)} chars does not fit {steps} steps")
    idx = alphabet.encode(transcription)
    return idx + [alphabet.null_index] * (steps - len(idx))


@dataclass
class Record:
    id: str
    text: str
    view_count: int
    line: int


@dataclass
class Batch:
    ids: list
    texts: list
    views: np.ndarray     # (B, V, H, W, 3) float32 in [0, 1]
    targets: np.ndarray   # (B, T) int, or None when no T was given


def read_manifest(path):
    records = []
    with open(os.path.join(path, "manifest.tsv"), encoding="utf-8", newline="\n") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"manifest.tsv line {lineno}: expected 3 tab-separated fields")
            records.append(Record(parts[0], parts[1], int(parts[2]), lineno))
    return records


def write_manifest(path, records):
    with open(os.path.join(path, "manifest.tsv"), "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            if "\t" in r.text or "\n" in r.text:
                raise ValueError(f"transcription for {r.id} contains a tab or newline")
            f.write(f"{r.id}\t{r.text}\t{r.view_count}\n")


def read_boxes(path, sample_id):
    p = os.path.join(path, "boxes", f"{sample_id}.tsv")
    if not os.path.exists(p):
        return None
    boxes = []
    with open(p, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                boxes.append(tuple(int(v) for v in line.split("\t")))
    return boxes


class Dataset:
    """A generated dataset directory, with images cached in memory on first use."""

    def __init__(self, path):
        self.path = path
        if not os.path.exists(os.path.join(path, "manifest.tsv")):
            raise DatasetError(f"{path}: no manifest.tsv")
        self.records = read_manifest(path)
        alpha_path = os.path.join(path, "alphabet.txt")
        self.alphabet = Alphabet.load(alpha_path) if os.path.exists(alpha_path) else None
        self._cache = {}

    def __len__(self):
        return len(self.records)

    def split(self, name):
        if name == "all":
            return list(self.records)
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [r for r in self.records if split_of(r.id) == name]

    def views(self, record):
        """uint8 (V, H, W, 3) for one record."""
        if record.id not in self._cache:
            imgs = []
            for k in range(record.view_count):
                p = os.path.join(self.path, "imgs", f"{record.id}_v{k}.ppm")
                if not os.path.exists(p):
                    raise DatasetError(f"manifest.tsv line {record.line} (id {record.id}): missing {p}")
                imgs.append(read_ppm(p))
            self._cache[record.id] = np.stack(imgs)
        return self._cache[record.id]

    def boxes(self, record):
        return read_boxes(self.path, record.id)

    def arrays(self, split="all", steps=None, alphabet=None):
        """Whole split as one Batch, in manifest order."""
        recs = self.split(split)
        return self._batch(recs, steps, alphabet or self.alphabet, False, None)

    def _batch(self, recs, steps, alphabet, augment, rng):
        views = np.stack([self.views(r) for r in recs]).astype(np.float32) / 255.0
        if augment:
            from .augment import augment_view
            for b in range(views.shape[0]):
                for v in range(views.shape[1]):
                    views[b, v] = augment_view(views[b, v], rng)
        targets = None
        if steps is not None:
            targets = np.array([encode_target(r.text, alphabet, steps) for r in recs], dtype=np.int64)
        return Batch([r.id for r in recs], [r.text for r in recs], views, targets)

    def batches(self, split, batch_size, augment=False, rng=None, steps=None, alphabet=None,
                shuffle=True, workers=0):
        """One epoch of batches. Shuffling and augmentation draw only from ``rng``.

        Each batch augments with its own generator seeded from a base drawn
        once per epoch, so results do not depend on ``workers``.
        """
        recs = self.split(split)
        if not recs:
            raise DatasetError(f"{self.path}: split {split!r} is empty")
        alphabet = alphabet or self.alphabet
        rng = rng if rng is not None else np.random.default_rng(0)
        order = rng.permutation(len(recs)) if shuffle else np.arange(len(recs))
        base = int(rng.integers(2**63)) if augment else 0
        chunks = [[recs[i] for i in order[s:s + batch_size]] for s in range(0, len(recs), batch_size)]

        def make(k):
            sub = np.random.default_rng([base, k]) if augment else None
            return self._batch(chunks[k], steps, alphabet, augment, sub)

        if workers and workers > 0:
            for c in chunks:  # populate the cache before threads touch it
                for r in c:
                    self.views(r)
            with ThreadPoolExecutor(workers) as pool:
                yield from pool.map(make, range(len(chunks)))
        else:
            for k in range(len(chunks)):
                yield make(k)


def load_iter(path, split, batch_size, augment, rng, steps=None, alphabet=None, workers=0):
    """Stream one shuffled epoch of batches from a dataset directory."""
    ds = path if isinstance(path, Dataset) else Dataset(path)
    return ds.batches(split, batch_size, augment, rng, steps, alphabet, True, workers)

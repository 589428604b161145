"""Synthetic scene-text data: rendering, storage, loading and augmentation."""

from .augment import MODES, augment_view, distort_color, resize, sample_crop
from .io import (Batch, Dataset, DatasetError, Record, encode_target, fnv1a64, load_iter, read_boxes,
                 read_manifest, read_ppm, split_of, to_uint8, write_ppm)
from .render import GenSpec, Sample, generate, render_sample, sample_text

__all__ = [
    "MODES", "Batch", "Dataset", "DatasetError", "GenSpec", "Record", "Sample", "augment_view",
    "distort_color", "encode_target", "fnv1a64", "generate", "load_iter", "read_boxes", "read_manifest",
    "read_ppm", "render_sample", "resize", "sample_crop", "sample_text", "split_of", "to_uint8", "write_ppm",
]

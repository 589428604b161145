"""Depth sweep: accuracy, latency and receptive field per extractor preset."""

import csv
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import cnn
from .dataset import Dataset
from .model import ModelConfig
from .trainer import evaluate, train

log = logging.getLogger(__name__)

CSV_HEADER = ("preset", "fh", "fw", "fc", "depth", "rf", "acc", "ms_per_image")


@dataclass
class SweepRow:
    preset: str
    fh: int
    fw: int
    fc: int
    depth: int
    rf: int
    acc: float
    ms_per_image: float
    seed_accs: list = field(default_factory=list)

    def as_csv(self):
        return [self.preset, self.fh, self.fw, self.fc, self.depth, self.rf, repr(float(self.acc)),
                repr(float(self.ms_per_image))]


@dataclass
class SweepResult:
    rows: list

    def sorted(self):
        return SweepResult(sorted(self.rows, key=lambda r: (r.depth, r.preset)))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for r in self.sorted().rows:
                w.writerow(r.as_csv())
        return path

    @classmethod
    def read_csv(cls, path):
        rows = []
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                rows.append(SweepRow(rec["preset"], int(rec["fh"]), int(rec["fw"]), int(rec["fc"]),
                                     int(rec["depth"]), int(rec["rf"]), float(rec["acc"]),
                                     float(rec["ms_per_image"])))
        return cls(rows)

    def timing_monotone(self):
        """True when ms/image never drops with depth among presets sharing a feature resolution."""
        groups = {}
        for r in self.sorted().rows:
            groups.setdefault((r.fh, r.fw), []).append(r)
        for rows in groups.values():
            for a, b in zip(rows, rows[1:]):
                if b.depth > a.depth and b.ms_per_image < a.ms_per_image:
                    return False
        return True

    def best(self):
        """Most accurate preset; ties go to the deeper one."""
        return max(self.rows, key=lambda r: (r.acc, r.depth))

    def deepest(self):
        return max(self.rows, key=lambda r: r.depth)

    def plot(self, path):
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        rows = self.sorted().rows
        depth = [r.depth for r in rows]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(depth, [r.acc for r in rows], "o-", color="tab:blue")
        ax.set_xlabel("conv blocks")
        ax.set_ylabel("full-sequence accuracy", color="tab:blue")
        for r in rows:
            ax.annotate(r.preset, (r.depth, r.acc), textcoords="offset points", xytext=(4, 4), fontsize=8)
        ax2 = ax.twinx()
        ax2.plot(depth, [r.ms_per_image for r in rows], "s--", color="tab:red")
        ax2.set_ylabel("ms / image", color="tab:red")
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        return path


def _probe(model, views):
    with ad.no_grad():
        model.decode(views)


def timing(models, views, runs=100, warmup=10):
    """Median ms per batch-1 inference for each model.

    Runs are interleaved across models so slow drifts in machine load hit
    every model alike.
    """
    if runs < 1:
        raise ValueError("runs must be positive")
    views = np.asarray(views)[None]
    inputs = [views.astype(m.dtype) for m in models]
    for _ in range(warmup):
        for m, x in zip(models, inputs):
            _probe(m, x)
    samples = [[] for _ in models]
    for _ in range(runs):
        for k, (m, x) in enumerate(zip(models, inputs)):
            t0 = time.perf_counter()
            _probe(m, x)
            samples[k].append(time.perf_counter() - t0)
    return [1000.0 * float(np.median(s)) for s in samples]


def check_presets(presets, view_size):
    """Resolve preset names, rejecting any whose output grid is below 2×2."""
    if len(presets) < 2:
        raise ValueError("a sweep needs at least two presets")
    out = []
    for name in presets:
        ex = cnn.preset(name, view_size)
        h, w, _ = ex.output_shape()
        if h < 2 or w < 2:
            raise ValueError(f"preset {name!r} yields a {h}x{w} grid on {view_size} views; need at least 2x2")
        out.append(ex)
    return out


def run_sweep(presets, data, model_config, train_config, seeds=(0,), eval_split="test", out_csv=None,
              curve=None, timing_runs=100, warmup=10, progress=None):
    """Train every preset with shared decoder/training settings and tabulate the results.

    Accuracy is the median over ``seeds``; latency is timed on the first
    seed's model. Writes the CSV (sorted by depth) and the curve when paths
    are given.
    """
    ds = data if isinstance(data, Dataset) else Dataset(data)
    extractors = check_presets(presets, model_config.view_size)
    if not seeds:
        raise ValueError("need at least one seed")
    models, rows = [], []
    for name, ex in zip(presets, extractors):
        cfg = ModelConfig.from_dict({**model_config.to_dict(), "preset": name})
        accs, first = [], None
        for seed in seeds:
            res = train(cfg, ds, replace(train_config, seed=seed))
            _, acc = evaluate(res.model, ds, eval_split, train_config.label_smoothing)
            accs.append(acc)
            first = first or res.model
            log.info("preset %s seed %d acc %.4f", name, seed, acc)
            if progress:
                progress(name, seed, acc)
        fh, fw, fc = ex.output_shape()
        rows.append(SweepRow(name, fh, fw, fc, ex.depth, cnn.receptive_field(ex), float(np.median(accs)),
                             0.0, accs))
        models.append(first)
    probe = ds.views(ds.split(eval_split)[0] if ds.split(eval_split) else ds.split("all")[0])
    for row, ms in zip(rows, timing(models, probe, timing_runs, warmup)):
        row.ms_per_image = ms
    result = SweepResult(rows).sorted()
    if out_csv:
        os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
        result.write_csv(out_csv)
    if curve:
        result.plot(curve)
    return result

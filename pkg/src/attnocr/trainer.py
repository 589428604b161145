"""Penalized maximum-likelihood training: SGD with momentum, step decay, Polyak averaging."""

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint
from .dataset import Dataset
from .decoder import sequence_loss
from .model import AttentionOCR, ModelConfig

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "lr", "train_loss", "eval_loss", "eval_fullseq_acc")


@dataclass
class TrainConfig:
    total_steps: int = 10000
    base_lr: float = 0.002
    lr_decay_factor: float = 0.1
    decay_at: float = 0.6
    momentum: float = 0.75
    weight_decay: float = 0.00004
    label_smoothing: float = 0.9
    clip: float = 10.0
    polyak_decay: float | None = None   # None: 0.99 below 10k steps, else 0.9999
    batch_size: int = 32
    seed: int = 0
    augment: bool = True
    train_split: str = "train"
    eval_split: str = "val"
    eval_every: int | None = None       # None: max(100, total_steps // 100)
    eval_limit: int | None = None
    workers: int = 0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.decay_at < 1:
            raise ValueError("decay_at must lie in (0, 1)")
        if self.polyak_decay is not None and not 0 <= self.polyak_decay < 1:
            raise ValueError("polyak_decay must lie in [0, 1)")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be positive")

    @property
    def resolved_polyak(self):
        if self.polyak_decay is not None:
            return self.polyak_decay
        return 0.99 if self.total_steps < 10000 else 0.9999

    @property
    def resolved_eval_every(self):
        return self.eval_every or max(100, self.total_steps // 100)


def lr_at(step, config):
    """Single step decay: base_lr until decay_at·total_steps, then base_lr·decay_factor."""
    if step < config.decay_at * config.total_steps:
        return config.base_lr
    return config.base_lr * config.lr_decay_factor


def sgd_momentum_step(params, grads, velocity, lr, momentum, weight_decay):
    """In place: v <- m·v + (g + wd·w);  w <- w - lr·v."""
    if params.keys() != grads.keys() or params.keys() != velocity.keys():
        raise KeyError("params, grads and velocity must share keys")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    for name, w in params.items():
        v = velocity[name]
        g = grads[name]
        if w.shape != g.shape or w.shape != v.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        dt = w.dtype.type
        v *= dt(momentum)
        v += g
        if weight_decay:
            v += dt(weight_decay) * w
        w -= dt(lr) * v


def polyak_update(shadow, params, decay):
    """In place exponential moving average: shadow <- d·shadow + (1-d)·params."""
    for name, s in shadow.items():
        dt = s.dtype.type
        s *= dt(decay)
        s += dt(1.0 - decay) * params[name]


def full_sequence_accuracy(predictions, targets):
    """Fraction of samples whose whole padded sequence matches."""
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions for {len(targets)} targets")
    if len(targets) == 0:
        return 0.0
    hits = sum(np.array_equal(np.asarray(p), np.asarray(t)) for p, t in zip(predictions, targets))
    return hits / len(targets)


def evaluate(model, data, split="val", smoothing=0.9, limit=None, batch_size=64):
    """(teacher-forced loss, greedy full-sequence accuracy) on a split."""
    ds = data if isinstance(data, Dataset) else Dataset(data)
    batch = ds.arrays(split, model.config.max_len, model.alphabet)
    views, targets = batch.views, batch.targets
    if limit is not None:
        views, targets = views[:limit], targets[:limit]
    if len(views) == 0:
        return float("nan"), 0.0
    total, preds = 0.0, []
    with ad.no_grad():
        for s in range(0, len(views), batch_size):
            v, t = views[s:s + batch_size], targets[s:s + batch_size]
            res, _ = model.decode(v, "teacher", t)
            total += float(sequence_loss(res.logits, t, smoothing).data) * len(v)
            greedy, _ = model.decode(v)
            preds.extend(greedy.symbols)
    return total / len(views), full_sequence_accuracy(preds, list(targets))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: AttentionOCR          # Polyak weights
    raw_model: AttentionOCR
    metrics: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


def _batches_forever(ds, cfg, rng, steps, alphabet):
    while True:
        yield from ds.batches(cfg.train_split, cfg.batch_size, cfg.augment, rng, steps, alphabet,
                              True, cfg.workers)


def train(model_config, data, config, out_dir=None, progress=None):
    """Teacher-forced training for ``config.total_steps`` steps.

    Writes ``metrics.csv`` and ``model.ckpt`` into ``out_dir`` when given.
    The returned model carries the Polyak-averaged weights.
    """
    ds = data if isinstance(data, Dataset) else Dataset(data)
    if not ds.split(config.train_split):
        raise ValueError(f"no samples in split {config.train_split!r}")
    model_config = ModelConfig.from_dict({**model_config.to_dict(), "clip": config.clip})
    init_seq, data_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = AttentionOCR.create(model_config, int(init_seq.generate_state(1)[0]))
    alphabet = model.alphabet
    if ds.alphabet is not None and ds.alphabet != alphabet:
        raise ValueError("dataset alphabet differs from the model alphabet")
    rng = np.random.default_rng(data_seq)
    values = {k: p.data for k, p in model.params.items()}
    velocity = {k: np.zeros_like(v) for k, v in values.items()}
    shadow = {k: v.copy() for k, v in values.items()}
    decay = config.resolved_polyak
    every = config.resolved_eval_every
    stream = _batches_forever(ds, config, rng, model_config.max_len, alphabet)

    metrics, step_losses, window = [], [], []
    for step in range(config.total_steps):
        batch = next(stream)
        lr = lr_at(step, config)
        model.zero_grad()
        loss = model.loss(batch.views, batch.targets, config.label_smoothing)
        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step} (lr={lr})")
        loss.backward()
        grads = {k: p.grad for k, p in model.params.items()}
        sgd_momentum_step(values, grads, velocity, lr, config.momentum, config.weight_decay)
        polyak_update(shadow, values, decay)
        step_losses.append(value)
        window.append(value)
        done = step + 1
        if done % every == 0 or done == config.total_steps:
            ev = model.with_values(shadow)
            eval_loss, acc = evaluate(ev, ds, config.eval_split, config.label_smoothing, config.eval_limit) \
                if ds.split(config.eval_split) else (float("nan"), float("nan"))
            row = {"step": done, "lr": lr, "train_loss": float(np.mean(window)),
                   "eval_loss": eval_loss, "eval_fullseq_acc": acc}
            metrics.append(row)
            window = []
            log.info("step %d lr %.4g train %.4f eval %.4f acc %.4f", done, lr, row["train_loss"], eval_loss, acc)
            if progress:
                progress(row)

    ck = Checkpoint({k: v.copy() for k, v in values.items()}, velocity, shadow, config.total_steps,
                    model_config.digest(), model_config.to_dict(), asdict(config))
    result = TrainResult(ck, model.with_values(shadow), model.with_values(values), metrics, step_losses)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics(os.path.join(out_dir, "metrics.csv"), metrics)
        ck.save(os.path.join(out_dir, "model.ckpt"))
    return result


def write_metrics(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in METRICS_HEADER[1:]])


def load_model(path, weights="polyak"):
    """Rebuild a model from a checkpoint; inference uses Polyak weights by default."""
    ck = Checkpoint.load(path)
    if ck.model_config is None:
        raise ValueError(f"{path}: missing {path}.json sidecar with the model config")
    config = ModelConfig.from_dict(ck.model_config)
    if ck.config_hash and config.digest() != ck.config_hash:
        raise ValueError(f"{path}: config hash mismatch between checkpoint and sidecar")
    values = ck.weights(weights)
    params = {k: ad.parameter(np.array(v, dtype=np.float32)) for k, v in values.items()}
    return AttentionOCR(config, params)


def dump_config(path, **sections):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(sections, f, indent=2, sort_keys=True, default=str, ensure_ascii=False)

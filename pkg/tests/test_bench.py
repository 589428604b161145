import csv

import numpy as np
import pytest

from attnocr import bench
from attnocr.bench import CSV_HEADER, SweepResult, SweepRow
from attnocr.model import AttentionOCR, ModelConfig
from attnocr.trainer import TrainConfig


def _row(preset, depth, acc, ms, fh=8, fw=16):
    return SweepRow(preset, fh, fw, 64, depth, 10 + depth, acc, ms)


def test_csv_roundtrip_sorted_by_depth(tmp_path):
    res = SweepResult([_row("b", 4, 0.5, 2.0), _row("a", 2, 0.25, 1.0)])
    p = tmp_path / "s.csv"
    res.write_csv(p)
    with open(p) as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == CSV_HEADER
    assert [r[0] for r in rows[1:]] == ["a", "b"]
    back = SweepResult.read_csv(p)
    assert [(r.preset, r.depth, r.acc, r.ms_per_image) for r in back.rows] == [("a", 2, 0.25, 1.0), ("b", 4, 0.5, 2.0)]


def test_timing_monotone_per_resolution():
    ok = SweepResult([_row("a", 2, 0, 1.0), _row("b", 4, 0, 2.0), _row("c", 6, 0, 3.0),
                      _row("d", 8, 0, 0.5, fh=4, fw=8)])
    assert ok.timing_monotone()
    bad = SweepResult([_row("a", 2, 0, 2.0), _row("b", 4, 0, 1.0)])
    assert not bad.timing_monotone()


def test_best_prefers_deeper_on_ties():
    res = SweepResult([_row("a", 2, 0.5, 1), _row("b", 4, 0.7, 1), _row("c", 6, 0.7, 1), _row("d", 8, 0.1, 1)])
    assert res.best().preset == "c"
    assert res.deepest().preset == "d"


def test_plot_writes_png(tmp_path):
    p = SweepResult([_row("a", 2, 0.5, 1.0), _row("b", 4, 0.6, 2.0)]).plot(str(tmp_path / "c.png"))
    assert open(p, "rb").read(8) == b"\x89PNG\r\n\x1a\n"


def test_check_presets():
    exs = bench.check_presets(["tiny-2", "deep-8"], (32, 64))
    assert [e.depth for e in exs] == [2, 8]
    with pytest.raises(ValueError, match="2x2"):
        bench.check_presets(["tiny-2", "deep-8"], (8, 8))
    with pytest.raises(ValueError):
        bench.check_presets(["tiny-2"], (32, 64))
    with pytest.raises(ValueError):
        bench.check_presets(["tiny-2", "huge-99"], (32, 64))


def test_timing_returns_one_median_per_model():
    cfg = ModelConfig(max_len=2, views=1, view_size=(16, 16), lstm_width=8, attn_width=4)
    models = [AttentionOCR.create(cfg, s) for s in (0, 1)]
    ms = bench.timing(models, np.zeros((1, 16, 16, 3), np.float32), runs=3, warmup=1)
    assert len(ms) == 2 and all(m > 0 for m in ms)
    with pytest.raises(ValueError):
        bench.timing(models, np.zeros((1, 16, 16, 3)), runs=0)


def test_run_sweep_small(tiny_ds, tmp_path):
    mc = ModelConfig(max_len=4, views=2, view_size=(16, 32), lstm_width=8, attn_width=4)
    tc = TrainConfig(total_steps=3, base_lr=0.01, batch_size=4, augment=False, eval_every=3, eval_limit=4)
    seen = []
    res = bench.run_sweep(["small-4", "tiny-2"], tiny_ds, mc, tc, seeds=(0, 1), eval_split="val",
                          out_csv=str(tmp_path / "s.csv"), curve=str(tmp_path / "s.png"), timing_runs=2, warmup=1,
                          progress=lambda *a: seen.append(a))
    assert [r.preset for r in res.rows] == ["tiny-2", "small-4"]
    assert len(seen) == 4
    for r in res.rows:
        assert r.acc == float(np.median(r.seed_accs)) and r.ms_per_image > 0
        assert (r.fh, r.fw) == (4, 8)
    assert (tmp_path / "s.csv").exists() and (tmp_path / "s.png").exists()

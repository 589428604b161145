import filecmp

import pytest

from attnocr import cli
from attnocr.dataset import Dataset
from attnocr.trainer import evaluate, load_model

GEN = ["generate", "--n", "30", "--charset", "ABC", "--max-len", "3", "--views", "2", "--view-size", "16x32",
       "--clutter", "0"]
TRAIN = ["--steps", "6", "--batch-size", "4", "--lr", "0.02", "--lstm-width", "8", "--attn-width", "4",
         "--max-len", "4", "--augment", "false", "--eval-every", "3", "--eval-limit", "4"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, out = str(root / "data"), str(root / "run")
    assert cli.main(GEN + ["--out", data, "--seed", "4"]) == 0
    assert cli.main(["train", "--data", data, "--out", out] + TRAIN) == 0
    return data, out


def test_no_args_prints_usage(capsys):
    code, out, err = run(capsys)
    assert code == 1 and "usage" in err.lower()


def test_unknown_command_and_flag(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "generate", "--out", "x", "--bogus", "1")[0] == 1
    assert run(capsys, "generate", "--view-size", "64")[0] == 1


def test_missing_required_is_usage_error(capsys):
    code, _, err = run(capsys, "train", "--data", "somewhere")
    assert code == 1 and "--out" in err


def test_runtime_failure_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--data", str(tmp_path))
    assert code == 2 and err.strip()


def test_config_echo_and_sidecar(capsys, tmp_path):
    out = tmp_path / "d"
    code, stdout, _ = run(capsys, *GEN, "--out", str(out), "--seed", "9")
    assert code == 0
    echoed = [line[2:] for line in stdout.splitlines() if line.startswith("# ")]
    assert "command=generate" in echoed and "seed=9" in echoed and "view_size=16x32" in echoed
    side = (out / "generate_config.txt").read_text().splitlines()
    assert side == echoed[1:]


def test_config_file_precedence(capsys, tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# comment\nn = 5\nseed=3\ncharset=AB\nmax-len=2\nviews=1\nview_size=16x16\n")
    code, stdout, _ = run(capsys, "generate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--n", "7")
    assert code == 0
    assert "# n=7" in stdout and "# seed=3" in stdout and "# charset=AB" in stdout
    assert len(Dataset(str(tmp_path / "o")).records) == 7
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense=1\n")
    assert run(capsys, "generate", "--config", str(bad), "--out", str(tmp_path / "p"))[0] == 1


def test_generate_reproducible(capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, *GEN, "--out", str(tmp_path / name), "--seed", "2")[0] == 0
    for rel in ("manifest.tsv", "imgs/000007_v1.ppm", "boxes/000007.tsv"):
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False)


def test_train_reproducible(capsys, trained, tmp_path):
    data, first = trained
    assert run(capsys, "train", "--data", data, "--out", str(tmp_path / "again"), *TRAIN)[0] == 0
    assert filecmp.cmp(f"{first}/model.ckpt", tmp_path / "again" / "model.ckpt", shallow=False)
    assert filecmp.cmp(f"{first}/metrics.csv", tmp_path / "again" / "metrics.csv", shallow=False)


def test_eval_matches_trainer_metric(capsys, trained):
    data, out = trained
    code, stdout, _ = run(capsys, "eval", "--checkpoint", f"{out}/model.ckpt", "--data", data, "--split", "val")
    assert code == 0
    loss, acc = evaluate(load_model(f"{out}/model.ckpt"), Dataset(data), "val")
    assert f"fullseq_acc={acc!r}" in stdout.splitlines()
    assert f"loss={loss!r}" in stdout.splitlines()


def test_infer_one_line_per_sample(capsys, trained):
    data, out = trained
    code, stdout, _ = run(capsys, "infer", "--checkpoint", f"{out}/model.ckpt", "--data", data, "--split", "val")
    assert code == 0
    lines = [line for line in stdout.splitlines() if not line.startswith("# ")]
    ds = Dataset(data)
    model = load_model(f"{out}/model.ckpt")
    assert lines == model.transcribe(ds.arrays("val").views)


def test_infer_from_image_paths(capsys, trained):
    data, out = trained
    ds = Dataset(data)
    rec = ds.records[0]
    imgs = [f"{data}/imgs/{rec.id}_v{k}.ppm" for k in range(2)]
    code, stdout, _ = run(capsys, "infer", "--checkpoint", f"{out}/model.ckpt", *imgs)
    assert code == 0
    lines = [line for line in stdout.splitlines() if not line.startswith("# ")]
    assert lines == load_model(f"{out}/model.ckpt").transcribe(ds.views(rec)[None] / 255.0)
    assert run(capsys, "infer", "--checkpoint", f"{out}/model.ckpt", imgs[0])[0] == 1


def test_visualize_writes_sheets(capsys, trained, tmp_path):
    data, out = trained
    ds = Dataset(data)
    rid = ds.records[1].id
    code, stdout, _ = run(capsys, "visualize", "--checkpoint", f"{out}/model.ckpt", "--data", data,
                          "--out", str(tmp_path), "--ids", rid, "--n-noise", "2")
    assert code == 0
    assert (tmp_path / f"{rid}_sheet.ppm").exists()
    assert run(capsys, "visualize", "--checkpoint", f"{out}/model.ckpt", "--data", data,
               "--out", str(tmp_path), "--ids", "nope")[0] == 2


def test_sweep_writes_csv_and_curve(capsys, trained, tmp_path):
    data, _ = trained
    code, stdout, _ = run(capsys, "sweep", "--data", data, "--out", str(tmp_path), "--presets", "tiny-2,small-4",
                          "--split", "val", "--timing-runs", "2", *TRAIN)
    assert code == 0
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "sweep.png").exists()
    assert sum(1 for line in stdout.splitlines() if line.startswith(("tiny-2", "small-4"))) == 2


def test_gradcheck_subset(capsys, tmp_path):
    code, stdout, _ = run(capsys, "gradcheck", "--ops", "matmul,tanh", "--seeds", "2",
                          "--sidecar", str(tmp_path / "g.txt"))
    assert code == 0
    rows = [line for line in stdout.splitlines() if not line.startswith("# ")]
    assert [r.split("\t")[0] for r in rows] == ["matmul", "tanh"] and all(r.endswith("ok") for r in rows)
    assert run(capsys, "gradcheck", "--ops", "nope", "--sidecar", str(tmp_path / "g.txt"))[0] == 1

"""Command-line interface: generate, train, eval, infer, visualize, sweep, gradcheck."""

import argparse
import logging
import os
import sys

import numpy as np

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _dims(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got {text!r}")
    return (h, w)


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


def _csv_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _int_list(text):
    return [int(t) for t in _csv_list(text)]


# (flag, type, default, help) per command; shared groups are merged below
MODEL_FLAGS = [
    ("--preset", str, "tiny-2", "CNN extractor preset (tiny-2, small-4, mid-6, deep-8)"),
    ("--attention", str, "location", "attention variant: standard or location"),
    ("--max-len", int, 12, "decoder steps T (transcriptions must be shorter)"),
    ("--lstm-width", int, 256, "LSTM hidden width"),
    ("--attn-width", int, 128, "attention hidden width"),
    ("--views", _opt_int, None, "views per sample (default: from the dataset)"),
    ("--view-size", _dims, None, "view size HxW (default: from the dataset)"),
    ("--conv-init", str, "fixed", "conv kernel init: fixed (std 0.1) or fan_in (std capped at sqrt(2/fan_in))"),
]

TRAIN_FLAGS = [
    ("--steps", int, 10000, "total training steps"),
    ("--lr", float, 0.002, "base learning rate"),
    ("--lr-decay-factor", float, 0.1, "learning rate multiplier after the decay point"),
    ("--decay-at", float, 0.6, "decay point as a fraction of total steps"),
    ("--momentum", float, 0.75, "SGD momentum"),
    ("--weight-decay", float, 0.00004, "L2 weight decay"),
    ("--label-smoothing", float, 0.9, "weight on the true symbol in the smoothed target"),
    ("--clip", float, 10.0, "LSTM cell/hidden clipping bound"),
    ("--polyak-decay", _opt_float, None, "Polyak decay (default 0.99 under 10k steps, else 0.9999)"),
    ("--batch-size", int, 32, "batch size"),
    ("--augment", _bool, True, "random crop/resize/color augmentation"),
    ("--eval-every", _opt_int, None, "eval cadence in steps (default max(100, steps/100))"),
    ("--eval-limit", _opt_int, None, "cap on eval samples"),
    ("--workers", int, 0, "augmentation worker threads"),
    ("--train-split", str, "train", "split to train on (train, val, test, all)"),
    ("--eval-split", str, "val", "split for periodic eval"),
]

COMMANDS = {
    "generate": ("write a synthetic multi-view dataset", [
        ("--out", str, None, "output directory (required)"),
        ("--n", int, 1000, "number of samples"),
        ("--seed", int, 0, "RNG seed"),
        ("--charset", str, "ABCDEFGHIJKLMNOPQRSTUVWXYZ", "symbols to draw from"),
        ("--min-len", int, 1, "minimum characters per line"),
        ("--max-len", int, 8, "maximum characters per line"),
        ("--lines", int, 1, "text lines (1 or 2)"),
        ("--views", int, 4, "views per sample"),
        ("--view-size", _dims, (64, 64), "view size HxW"),
        ("--scale", _opt_int, None, "glyph scale (default: largest that fits)"),
        ("--clutter", float, 0.3, "background clutter level"),
        ("--jitter", _opt_int, None, "per-view offset bound in pixels (default: anywhere)"),
        ("--blur-prob", float, 0.0, "probability of blurring one view"),
        ("--noise", float, 0.02, "pixel noise sigma"),
    ]),
    "train": ("train a model on a dataset", [
        ("--data", str, None, "dataset directory (required)"),
        ("--out", str, None, "output directory for model.ckpt and metrics.csv (required)"),
        ("--seed", int, 0, "RNG seed"),
    ] + MODEL_FLAGS + TRAIN_FLAGS),
    "eval": ("full-sequence accuracy of a checkpoint on a split", [
        ("--checkpoint", str, None, "checkpoint path (required)"),
        ("--data", str, None, "dataset directory (required)"),
        ("--split", str, "test", "split to evaluate"),
        ("--weights", str, "polyak", "weight set: polyak or raw"),
        ("--label-smoothing", float, 0.9, "smoothing used for the reported loss"),
        ("--limit", _opt_int, None, "cap on samples"),
    ]),
    "infer": ("print the transcription of each sample", [
        ("--checkpoint", str, None, "checkpoint path (required)"),
        ("--data", str, None, "dataset directory (or give image paths)"),
        ("--split", str, "all", "split to transcribe when --data is used"),
        ("--weights", str, "polyak", "weight set: polyak or raw"),
    ]),
    "visualize": ("write saliency/attention overlays", [
        ("--checkpoint", str, None, "checkpoint path (required)"),
        ("--data", str, None, "dataset directory (required)"),
        ("--out", str, None, "output directory (required)"),
        ("--split", str, "test", "split to draw samples from"),
        ("--ids", _csv_list, None, "comma-separated sample ids (default: first --limit of the split)"),
        ("--limit", int, 2, "number of samples when --ids is not given"),
        ("--noise-sigma", float, 0.05, "saliency noise sigma"),
        ("--n-noise", int, 16, "noisy copies per saliency map"),
        ("--seed", int, 0, "RNG seed for the saliency noise"),
    ]),
    "sweep": ("train and time several extractor presets", [
        ("--data", str, None, "dataset directory (required)"),
        ("--out", str, None, "output directory for sweep.csv and sweep.png (required)"),
        ("--presets", _csv_list, ["tiny-2", "small-4", "mid-6", "deep-8"], "comma-separated presets"),
        ("--seeds", _int_list, [0], "comma-separated training seeds"),
        ("--split", str, "test", "split for the accuracy column"),
        ("--timing-runs", int, 100, "timed batch-1 inferences per preset"),
        ("--seed", int, 0, "unused by sweep itself; recorded for reproducibility"),
    ] + [f for f in MODEL_FLAGS if f[0] != "--preset"] + TRAIN_FLAGS),
    "gradcheck": ("finite-difference check of every op", [
        ("--seeds", int, 10, "random draws per op"),
        ("--eps", _opt_float, None, "finite-difference step (default: per-op)"),
        ("--ops", _csv_list, None, "comma-separated subset of ops"),
        ("--seed", int, 0, "base seed"),
    ]),
}

REQUIRED = {
    "generate": ["out"], "train": ["data", "out"], "eval": ["checkpoint", "data"], "infer": ["checkpoint"],
    "visualize": ["checkpoint", "data", "out"], "sweep": ["data", "out"],
}


def _dest(flag):
    return flag.lstrip("-").replace("-", "_")


def build_parser():
    parser = Parser(prog="attnocr", description="Attention-based multi-view OCR on synthetic street signs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=Parser, metavar="COMMAND")
    for name, (help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key=value file; command-line flags take precedence")
        p.add_argument("--sidecar", help="where to write the resolved config (default: next to the outputs)")
        for flag, typ, default, text in flags:
            shown = "" if default is None else f" [default: {default}]"
            p.add_argument(flag, type=typ, default=argparse.SUPPRESS, help=text + shown)
        if name == "infer":
            p.add_argument("images", nargs="*", help="view images, --views consecutive paths per sample")
    return parser


def read_config_file(path):
    """Flat ``key=value`` lines; blank lines and '#' comments are ignored."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for num, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{num}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve(command, ns):
    """Merge defaults < config file < flags into one dict."""
    flags = COMMANDS[command][1]
    types = {_dest(f): t for f, t, _, _ in flags}
    cfg = {_dest(f): d for f, _, d, _ in flags}
    if getattr(ns, "config", None):
        for key, value in read_config_file(ns.config).items():
            if key not in types:
                raise UsageError(f"{ns.config}: unknown key {key!r} for {command}")
            try:
                cfg[key] = types[key](value)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as e:
                raise UsageError(f"{ns.config}: bad value for {key}: {e}") from None
    for key in types:
        if hasattr(ns, key):
            cfg[key] = getattr(ns, key)
    missing = [k for k in REQUIRED.get(command, []) if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-")
                                                                              for m in missing))
    return cfg


def _fmt(value):
    if isinstance(value, (list, tuple)):
        if len(value) == 2 and all(isinstance(v, int) for v in value) and not isinstance(value, list):
            return f"{value[0]}x{value[1]}"
        return ",".join(str(v) for v in value)
    return "none" if value is None else str(value)


def echo_config(command, cfg, sidecar):
    lines = [f"command={command}"] + [f"{k}={_fmt(v)}" for k, v in sorted(cfg.items())]
    # comment-prefixed so result lines on stdout stay machine-readable
    for line in lines:
        print(f"# {line}")
    os.makedirs(os.path.dirname(os.path.abspath(sidecar)), exist_ok=True)
    with open(sidecar, "w", encoding="utf-8") as f:
        f.write("\n".join(lines[1:]) + "\n")


def _default_sidecar(command, cfg):
    if cfg.get("out"):
        return os.path.join(cfg["out"], f"{command}_config.txt")
    if cfg.get("checkpoint"):
        return os.path.join(os.path.dirname(os.path.abspath(cfg["checkpoint"])), f"{command}_config.txt")
    return f"{command}_config.txt"


def _model_config(cfg, ds, **override):
    from .model import ModelConfig

    views = cfg.get("views")
    size = cfg.get("view_size")
    records = ds.split("all")
    if views is None:
        views = records[0].view_count
    if size is None:
        size = ds.views(records[0]).shape[1:3]
    alphabet = ds.alphabet.symbols if ds.alphabet is not None else None
    kw = dict(max_len=cfg["max_len"], views=int(views), view_size=tuple(int(s) for s in size),
              preset=cfg.get("preset", "tiny-2"), attention=cfg["attention"], lstm_width=cfg["lstm_width"],
              attn_width=cfg["attn_width"], clip=cfg["clip"], conv_init=cfg["conv_init"])
    if alphabet:
        kw["alphabet"] = alphabet
    kw.update(override)
    return ModelConfig(**kw)


def _train_config(cfg):
    from .trainer import TrainConfig

    return TrainConfig(total_steps=cfg["steps"], base_lr=cfg["lr"], lr_decay_factor=cfg["lr_decay_factor"],
                       decay_at=cfg["decay_at"], momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
                       label_smoothing=cfg["label_smoothing"], clip=cfg["clip"],
                       polyak_decay=cfg["polyak_decay"], batch_size=cfg["batch_size"], seed=cfg["seed"],
                       augment=cfg["augment"], train_split=cfg["train_split"], eval_split=cfg["eval_split"],
                       eval_every=cfg["eval_every"], eval_limit=cfg["eval_limit"], workers=cfg["workers"])


def cmd_generate(cfg):
    from .dataset import GenSpec, generate

    spec = GenSpec(charset=cfg["charset"], min_len=cfg["min_len"], max_len=cfg["max_len"], lines=cfg["lines"],
                   views=cfg["views"], view_size=cfg["view_size"], scale=cfg["scale"], clutter=cfg["clutter"],
                   jitter=cfg["jitter"], blur_prob=cfg["blur_prob"], noise=cfg["noise"])
    generate(spec, cfg["n"], cfg["seed"], cfg["out"])
    print(f"wrote {cfg['n']} samples to {cfg['out']}")


def cmd_train(cfg):
    from .dataset import Dataset
    from .trainer import train

    ds = Dataset(cfg["data"])
    res = train(_model_config(cfg, ds), ds, _train_config(cfg), cfg["out"])
    last = res.metrics[-1] if res.metrics else {}
    print(f"checkpoint={os.path.join(cfg['out'], 'model.ckpt')}")
    if last:
        print(f"eval_loss={last['eval_loss']!r} eval_fullseq_acc={last['eval_fullseq_acc']!r}")


def cmd_eval(cfg):
    from .dataset import Dataset
    from .trainer import evaluate, load_model

    model = load_model(cfg["checkpoint"], cfg["weights"])
    ds = Dataset(cfg["data"])
    if not ds.split(cfg["split"]):
        raise ValueError(f"split {cfg['split']!r} of {cfg['data']} is empty")
    loss, acc = evaluate(model, ds, cfg["split"], cfg["label_smoothing"], cfg["limit"])
    print(f"loss={loss!r}")
    print(f"fullseq_acc={acc!r}")


def cmd_infer(cfg, images):
    from .dataset import Dataset, read_ppm
    from .trainer import load_model

    model = load_model(cfg["checkpoint"], cfg["weights"])
    v = model.config.views
    if images:
        if cfg.get("data"):
            raise UsageError("give either --data or image paths, not both")
        if len(images) % v:
            raise UsageError(f"{len(images)} images do not group into samples of {v} views")
        arrs = np.stack([read_ppm(p) for p in images]).astype(np.float32) / 255.0
        samples = arrs.reshape((-1, v) + arrs.shape[1:])
    elif cfg.get("data"):
        ds = Dataset(cfg["data"])
        samples = ds.arrays(cfg["split"], model.config.max_len, model.alphabet).views
    else:
        raise UsageError("infer needs --data or image paths")
    for text in model.transcribe(samples):
        print(text)


def cmd_visualize(cfg):
    from .dataset import Dataset
    from .trainer import load_model
    from .viz import attention_maps, render_overlay, saliency_all_steps

    model = load_model(cfg["checkpoint"])
    ds = Dataset(cfg["data"])
    recs = ds.split("all") if cfg["ids"] else ds.split(cfg["split"])
    if cfg["ids"]:
        wanted = set(cfg["ids"])
        recs = [r for r in recs if r.id in wanted]
        missing = wanted - {r.id for r in recs}
        if missing:
            raise ValueError(f"unknown sample id(s): {', '.join(sorted(missing))}")
    else:
        recs = recs[:cfg["limit"]]
    rng = np.random.default_rng(cfg["seed"])
    from . import autodiff as ad
    for r in recs:
        views = ds.views(r)
        with ad.no_grad():
            res, _ = model.decode(views[None])
        text = model.alphabet.decode(res.symbols[0])
        steps = range(1, max(len(text), 1) + 1)
        sal, _ = saliency_all_steps(model, views, cfg["noise_sigma"], cfg["n_noise"], rng, steps)
        att = {t: attention_maps(res.alphas[t - 1].data[0], model.config.views, views.shape[1:3]) for t in steps}
        render_overlay(views, sal, att, cfg["out"], r.id)
        print(f"{r.id}\t{text}\t{os.path.join(cfg['out'], r.id + '_sheet.ppm')}")


def cmd_sweep(cfg):
    from .bench import run_sweep
    from .dataset import Dataset

    ds = Dataset(cfg["data"])
    mc = _model_config(cfg, ds, preset=cfg["presets"][0])
    out = cfg["out"]
    res = run_sweep(cfg["presets"], ds, mc, _train_config(cfg), cfg["seeds"], cfg["split"],
                    os.path.join(out, "sweep.csv"), os.path.join(out, "sweep.png"), cfg["timing_runs"])
    for r in res.rows:
        print(f"{r.preset}\tdepth={r.depth}\trf={r.rf}\tgrid={r.fh}x{r.fw}x{r.fc}\tacc={r.acc:.4f}\t"
              f"ms={r.ms_per_image:.3f}")


def cmd_gradcheck(cfg):
    from .gradsuite import CASES, run_suite

    names = cfg["ops"] or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown op(s): {', '.join(unknown)}")
    seeds = range(cfg["seed"], cfg["seed"] + cfg["seeds"])
    failed = []
    for r in run_suite(names, seeds, cfg["eps"]):
        print(f"{r.op}\tmax_rel_err={r.max_rel_err:.3e}\tbound={r.bound:.0e}\t{'ok' if r.ok else 'FAIL'}")
        if not r.ok:
            failed.append(r.op)
    if failed:
        raise RuntimeError(f"gradient check failed for: {', '.join(failed)}")


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "visualize": cmd_visualize,
            "sweep": cmd_sweep, "gradcheck": cmd_gradcheck}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return USAGE_ERROR
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else USAGE_ERROR
    if ns.command is None:
        parser.print_help(sys.stderr)
        return USAGE_ERROR
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(ns.command, ns)
        echo_config(ns.command, cfg, ns.sidecar or _default_sidecar(ns.command, cfg))
        if ns.command == "infer":
            cmd_infer(cfg, ns.images)
        else:
            HANDLERS[ns.command](cfg)
    except UsageError as e:
        print(f"attnocr: error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"attnocr {ns.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


def run():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()

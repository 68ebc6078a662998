"""Command-line entry point: gen-data, train, evaluate, ablate, predict-seq, plot.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import generate_corpus, load_corpus, save_corpus
from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import EvalReport

log = logging.getLogger("tgan")

LOSS_CHOICES = {"adv": ("adv",), "adv+asp": ("adv", "asp"), "adv+dm": ("adv", "dm"), "all": ("adv", "asp", "dm")}
ASP_CHOICES = {"cos": "literal", "one-minus-cos": "complement"}
TARGET_CHOICES = {"paper-literal": "paper_literal", "target": "target"}
PRESETS = ("full", "desk")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- manifest


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class RunManifest:
    """Provenance record written atomically at command start and refreshed at the end."""

    def __init__(self, out_dir: Path, command: str, argv: list[str], config: dict, corpus_hash: str | None,
                 seed: int | None):
        self.path = out_dir / "manifest.json"
        self.data = {"command": command, "argv": argv, "config": config, "corpus_hash": corpus_hash,
                     "seed": seed, "artifacts": {}, "started_at": _now(), "finished_at": None, "status": "running"}
        self._write()

    def _write(self) -> None:
        _atomic_write(self.path, json.dumps(self.data, indent=2, sort_keys=True, default=str))

    def finish(self, artifacts: dict, status: str = "ok") -> None:
        self.data["artifacts"] = {k: str(v) for k, v in artifacts.items()}
        self.data["finished_at"] = _now()
        self.data["status"] = status
        self._write()


# --------------------------------------------------------------------------- helpers


def _resolve(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"{path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _choice(value, table: dict, flag: str):
    if value is None:
        return None
    if value not in table:
        raise UsageError(f"{flag}: expected one of {', '.join(table)}, got {value!r}")
    return table[value]


def _train_config(args):
    from .networks import ModelConfig
    from .training import TrainConfig, apply_overrides, desk_model_config, parse_config_text

    if args.preset not in PRESETS:
        raise UsageError(f"--preset: expected one of {', '.join(PRESETS)}, got {args.preset!r}")
    cfg = TrainConfig(model=desk_model_config() if args.preset == "desk" else ModelConfig())
    if args.config:
        path = _resolve(args, args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = apply_overrides(cfg, parse_config_text(text))
    flags = {
        "loss_set": _choice(args.loss, LOSS_CHOICES, "--loss"),
        "asp_mode": _choice(args.asp_mode, ASP_CHOICES, "--asp-mode"),
        "target_mode": _choice(args.target_mode, TARGET_CHOICES, "--target-mode"),
        "indicators": args.indicators,
        "epochs": args.epochs,
        "lr_init": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "fold_id": args.fold,
    }
    return replace(cfg, **{k: v for k, v in flags.items() if v is not None})


def _load(args, path):
    return load_corpus(_resolve(args, path))


# --------------------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    if args.subjects < 1:
        raise UsageError(f"--subjects must be >= 1, got {args.subjects}")
    out = _prepare_out(_resolve(args, args.out), args.force)
    corpus = generate_corpus(args.subjects, args.image_size, args.missing_rate, args.seed,
                             n_extra_noise=args.extra_noise)
    save_corpus(corpus, out)
    h = corpus.content_hash()
    (out / "corpus.sha256").write_text(h + "\n")
    print(f"subjects={len(corpus.subjects)} visits={sum(1 for _ in corpus.visits())} "
          f"short_term_fraction={corpus.short_term_fraction():.4f} "
          f"missing_rate={corpus.missing_fraction():.4f} hash={h[:16]}")
    return 0


def cmd_train(args) -> int:
    from .training import train

    cfg = _train_config(args)
    corpus = _load(args, args.data)
    out = _prepare_out(_resolve(args, args.out), args.force)
    man = RunManifest(out, "train", args.argv, cfg.to_dict(), corpus.content_hash(), cfg.seed)
    art = train(cfg, corpus, out)
    man.data["config"] = art.config.to_dict()
    man.finish({"ckpt_best": art.ckpt_best, "ckpt_last": art.ckpt_last, "log": art.log_path,
                "config": out / "config.resolved"})
    print(f"best epoch {art.best_epoch} val_ssim={art.best_val_ssim:.4f} -> {art.ckpt_best}")
    return 0


def cmd_evaluate(args) -> int:
    from .data import split_folds
    from .training import evaluate, load_checkpoint, write_report

    corpus = _load(args, args.data)
    out = _prepare_out(_resolve(args, args.out), args.force)
    if args.checkpoint == "identity":
        folds = split_folds(corpus, seed=args.split_seed)
        target, seed, meta = "identity", None, {"model": "identity"}
    else:
        ck_path = _resolve(args, args.checkpoint)
        if not ck_path.exists():
            raise DataError(f"checkpoint not found: {ck_path}")
        target = load_checkpoint(ck_path)
        folds, seed = None, target.train_config.seed
        meta = {"model": str(ck_path)}
    man = RunManifest(out, "evaluate", args.argv, {**meta, "split": args.split}, corpus.content_hash(), seed)
    rep = evaluate(target, corpus, args.split, dfd_elementwise=args.dfd_elementwise, dfd_logits=args.dfd_logits,
                   out_dir=out, folds=folds)
    if target != "identity":
        rep.extra["checkpoint"] = str(ck_path)
        rep.extra["run_dir"] = str(ck_path.parent)
        write_report(rep, out)  # refresh json/txt with provenance; samples.npz is kept
    man.finish({"report": out / "report.json", "table": out / "report.txt", "samples": out / "samples.npz"})
    print(rep.table())
    return 0


def cmd_ablate(args) -> int:
    from .training import indicator_grid, loss_grid, run_ablation

    cfg = _train_config(args)
    if args.grid == "loss":
        grid = loss_grid()
    elif args.grid == "indicators":
        specs = tuple(s for s in (args.specs or "top:1,top:5,top:10,random:5").split(",") if s)
        grid = indicator_grid(specs)
    else:
        raise UsageError(f"--grid: expected one of loss, indicators, got {args.grid!r}")
    corpus = _load(args, args.data)
    out = _prepare_out(_resolve(args, args.out), args.force)
    man = RunManifest(out, "ablate", args.argv, {**cfg.to_dict(), "grid": [g[0] for g in grid]},
                      corpus.content_hash(), cfg.seed)
    res = run_ablation(corpus, grid, cfg, out)
    man.finish({"json": out / "ablation.json", "table": out / "ablation.txt"})
    print(res.table())
    return 0


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc


def cmd_predict_seq(args) -> int:
    from PIL import Image

    from .training import load_checkpoint, predict_sequence

    try:
        ages = [float(a) for a in args.ages.split(",") if a.strip()]
    except ValueError as exc:
        raise UsageError(f"--ages: expected comma-separated numbers, got {args.ages!r}") from exc
    if not ages:
        raise UsageError("--ages is empty")
    ck_path = _resolve(args, args.checkpoint)
    if not ck_path.exists():
        raise DataError(f"checkpoint not found: {ck_path}")
    ck = load_checkpoint(ck_path)
    x = _read_png(_resolve(args, args.image))
    if x.shape != (ck.model_config.image_size,) * 2:
        raise DataError(f"input image is {x.shape}, model expects {ck.model_config.image_size}px")
    out = _prepare_out(_resolve(args, args.out), args.force)
    man = RunManifest(out, "predict-seq", args.argv, {"checkpoint": str(ck_path), "age": args.age, "ages": ages},
                      None, ck.train_config.seed)
    try:
        images = predict_sequence(ck, x, args.age, ages)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    artifacts = {}
    for k, (age, img) in enumerate(zip(ages, images)):
        stem = f"{k:02d}_age{age:.1f}"
        Image.fromarray(img).save(out / f"{stem}.png")
        diff = np.abs(img.astype(np.int16) - x.astype(np.int16)).astype(np.uint8)
        Image.fromarray(diff).save(out / f"{stem}_diff.png")
        artifacts[stem] = out / f"{stem}.png"
        artifacts[stem + "_diff"] = out / f"{stem}_diff.png"
    man.finish(artifacts)
    print(f"wrote {len(images)} images and difference maps to {out}")
    return 0


def cmd_plot(args) -> int:
    from . import plots

    reports = []
    for p in args.report:
        path = _resolve(args, p)
        try:
            reports.append((path, EvalReport.from_dict(json.loads(path.read_text()))))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed report ({exc})") from exc
    out = _prepare_out(_resolve(args, args.out), args.force)
    log_path = _resolve(args, args.log) if args.log else None
    files = plots.plot_reports(reports, out, log_path)
    for f in files:
        print(f)
    return 0


# --------------------------------------------------------------------------- parser


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--preset", default="desk", help="network widths: full | desk (default desk)")
    p.add_argument("--loss", help="adv | adv+asp | adv+dm | all")
    p.add_argument("--asp-mode", help="cos | one-minus-cos")
    p.add_argument("--target-mode", help="paper-literal | target")
    p.add_argument("--indicators", help="all | top:K | random:K")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int)
    p.add_argument("--force", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgan", description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default=".", help="base for relative paths")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic longitudinal corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=200)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--missing-rate", type=float, default=0.3348)
    g.add_argument("--image-size", type=int, default=64)
    g.add_argument("--extra-noise", type=int, default=0, help="additional pure-noise indicators")
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train one fold")
    _train_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint (or 'identity') on a split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--split-seed", type=int, default=0, help="fold seed for the identity baseline")
    e.add_argument("--out", required=True)
    e.add_argument("--dfd-elementwise", action="store_true")
    e.add_argument("--dfd-logits", action="store_true")
    e.add_argument("--force", action="store_true")
    e.set_defaults(fn=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    _train_flags(a)
    a.add_argument("--grid", default="loss", help="loss | indicators")
    a.add_argument("--specs", help="indicator specs for --grid indicators, comma-separated")
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("predict-seq", help="predict future images from one input")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True, help="grayscale PNG")
    s.add_argument("--age", type=float, required=True)
    s.add_argument("--ages", required=True, help="comma-separated target ages")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(fn=cmd_predict_seq)

    pl = sub.add_parser("plot", help="render figures from report.json files")
    pl.add_argument("--report", action="append", required=True)
    pl.add_argument("--log", help="log.csv for loss curves (default: from the report's run)")
    pl.add_argument("--out", required=True)
    pl.add_argument("--force", action="store_true")
    pl.set_defaults(fn=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``mman <command>``.

Exit codes: 0 success, 1 gradient check failed, 2 input or configuration
error, 3 numerical failure.
"""
import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .autodiff import clear_adjoint_faults, set_adjoint_fault
from .backtest import report_csv, report_text, run_backtest, trades_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .config import read_config_file, resolve, write_config
from .data import NameEmbeddings
from .errors import ConfigError, ContractError, DataError, NumericalError, TrainingDiverged
from .io import (load_archive, load_industry_map, load_posts, load_predictions, load_prices,
                 save_archive, write_json)
from .model import ModelConfig, forward
from .modelcheck import format_report, model_grad_check
from .prep import build_dataset
from .synthetic import bayes_accuracy, generate_synthetic_dataset
from .text import load_word_list
from .train import ablation_table, evaluate, metrics_csv, run_ablation_suite, train

log = logging.getLogger("mman")

EXIT_OK, EXIT_GRADCHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test", "all")


class CommandError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _out_dir(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    write_config(os.path.join(args.out, "config.toml"), cfg)
    return args.out


def _load_dataset(cfg, path):
    path = path or cfg.data
    if not path:
        raise CommandError("no dataset archive given (--data or data = ... in the config)")
    ds, manifest = load_archive(path)
    return ds, manifest


def _model_config(cfg, ds):
    """Model settings from the config, with post/token extents taken from the archive."""
    mc = cfg.model_config()
    if ds.n != mc.n or ds.s != mc.s:
        log.info("using archive extents n=%d s=%d", ds.n, ds.s)
        mc = ModelConfig(**{**mc.to_dict(), "n": ds.n, "s": ds.s})
    if ds.vocab is not None and len(ds.vocab) > mc.vocab_size:
        raise CommandError(f"archive vocabulary has {len(ds.vocab)} entries but vocab_size is "
                           f"{mc.vocab_size}")
    if len(ds) and int(ds.tokens.max()) >= mc.vocab_size:
        raise CommandError("archive token ids exceed vocab_size")
    return mc


def _split(ds, name):
    if name == "all":
        return ds
    tr, va, te = ds.split_chronological()
    return ds.subset({"train": tr, "val": va, "test": te}[name])


# ------------------------------------------------------------------ commands

def cmd_prep(args, cfg):
    posts = load_posts(args.posts)
    prices = load_prices(args.prices)
    stop = load_word_list(cfg.stopwords or None)
    emb = NameEmbeddings.load(cfg.name_vectors) if cfg.name_vectors else None
    ds, stats = build_dataset(posts, prices, cfg.n, cfg.s, cfg.vocab_size, stop,
                              cfg.entropy_threshold, cfg.top_k, cfg.min_tokens, cfg.lookback_days,
                              cfg.threshold, emb)
    out = _out_dir(args, cfg)
    save_archive(out, ds, {"source": "prep"})
    write_json(os.path.join(out, "stats.json"), stats.to_dict())
    _write(os.path.join(out, "stats.txt"), stats.report())
    print(stats.report(), end="")
    return EXIT_OK


def cmd_datagen(args, cfg):
    if cfg.samples < 1:
        raise CommandError(f"samples must be at least 1, got {cfg.samples}")
    if not 0.0 <= cfg.signal <= 1.0:
        raise CommandError(f"signal must lie in [0, 1], got {cfg.signal}")
    ds, manifest = generate_synthetic_dataset(cfg.seed, cfg.samples, cfg.signal, cfg.channel_list(),
                                              max_posts=cfg.n, max_tokens=cfg.s,
                                              vocab_size=cfg.vocab_size)
    out = _out_dir(args, cfg)
    acc = bayes_accuracy(manifest)
    save_archive(out, ds, {"source": "synthetic", "seed": cfg.seed, "signal": cfg.signal,
                           "channels": list(cfg.channel_list()), "bayes_accuracy": acc})
    write_json(os.path.join(out, "plants.json"), manifest)
    print(f"samples: {len(ds)}  rise: {int(ds.labels.sum())}  fall: {int(len(ds) - ds.labels.sum())}")
    print(f"bayes accuracy (manifest oracle): {acc:.4f}")
    return EXIT_OK


def cmd_train(args, cfg):
    ds, _ = _load_dataset(cfg, args.data)
    mc = _model_config(cfg, ds)
    tc = cfg.train_config()
    tr, va, te = ds.split_chronological()
    train_ds = ds.subset(tr)
    if len(train_ds) == 0:
        raise CommandError("training split is empty")
    out = _out_dir(args, cfg)
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    meta = {"model": mc.to_dict(), "seed": cfg.seed}

    def on_epoch(epoch, params, stats):
        save_checkpoint(os.path.join(ckpt_dir, f"epoch_{epoch:03d}.ckpt"), params,
                        {**meta, "epoch": epoch})
        msg = "  ".join(f"{s.split} loss {s.loss:.4f} acc {s.accuracy:.4f}" for s in stats)
        log.info("epoch %d  %s", epoch, msg)

    try:
        res = train(train_ds, mc, tc, eval_sets={"val": ds.subset(va), "test": ds.subset(te)},
                    on_epoch=on_epoch)
    except TrainingDiverged as exc:
        save_checkpoint(os.path.join(out, "last_good.ckpt"), exc.last_good,
                        {**meta, "epoch": exc.epoch - 1})
        raise CommandError(f"training diverged: {exc}; last good parameters saved to "
                           f"{os.path.join(out, 'last_good.ckpt')}", EXIT_NUMERIC) from None
    save_checkpoint(os.path.join(out, "model.ckpt"), res.params, {**meta, "epoch": tc.epochs})
    _write(os.path.join(out, "metrics.csv"), metrics_csv(res.history))
    final = res.curve("train")
    if final:
        print(f"final train accuracy: {final[-1].accuracy:.4f}  mcc: {final[-1].mcc:.4f}")
    for split in ("val", "test"):
        curve = res.curve(split)
        if curve:
            print(f"final {split} accuracy: {curve[-1].accuracy:.4f}  mcc: {curve[-1].mcc:.4f}")
    return EXIT_OK


def _dump_activations(path, params, ds, mc):
    os.makedirs(path, exist_ok=True)
    trace = {}
    batch = ds.batch(np.arange(min(len(ds), 64)))
    forward(batch, params, mc, mode="eval", trace=trace)
    for name in sorted(trace):
        if name == "FM" or name.endswith(".weights"):
            arr = trace[name]
            flat = arr.reshape(arr.shape[0], -1)
            header = "sample," + ",".join("_".join(map(str, idx)) for idx in np.ndindex(arr.shape[1:]))
            lines = [header] + [f"{i}," + ",".join(f"{v:.10g}" for v in row) for i, row in enumerate(flat)]
            _write(os.path.join(path, f"{name}.csv"), "\n".join(lines) + "\n")


def cmd_eval(args, cfg):
    ds, _ = _load_dataset(cfg, args.data)
    ckpt = args.checkpoint or cfg.checkpoint
    if not ckpt:
        raise CommandError("no checkpoint given (--checkpoint or checkpoint = ... in the config)")
    params, meta = load_checkpoint(ckpt)
    mc = ModelConfig(**meta["model"]) if "model" in meta else _model_config(cfg, ds)
    part = _split(ds, args.split)
    out = _out_dir(args, cfg)
    rep = evaluate(params, part, mc)
    lines = [f"split: {args.split}", f"samples: {rep.total}", f"accuracy: {rep.accuracy:.6f}",
             f"mcc: {rep.mcc:.6f}", f"tp: {rep.tp}", f"fp: {rep.fp}", f"tn: {rep.tn}", f"fn: {rep.fn}"]
    _write(os.path.join(out, "eval.txt"), "\n".join(lines) + "\n")
    if len(part):
        out_probs = []
        for lo in range(0, len(part), 256):
            b = part.batch(np.arange(lo, min(len(part), lo + 256)))
            out_probs.append(forward(b, params, mc, mode="eval").probs.data)
        probs = np.concatenate(out_probs)
        rows = ["date,stock,direction,confidence"]
        for i in range(len(part)):
            k = int(np.argmax(probs[i]))
            rows.append(f"{part.ref_dates[i].isoformat()},{part.stocks[i]},"
                        f"{'rise' if k == 1 else 'fall'},{probs[i, k]:.6f}")
        _write(os.path.join(out, "predictions.csv"), "\n".join(rows) + "\n")
    if args.dump_activations and len(part):
        _dump_activations(os.path.join(out, "activations"), params, part, mc)
    print(f"accuracy: {rep.accuracy:.4f}  mcc: {rep.mcc:.4f}  (n={rep.total})")
    return EXIT_OK


def cmd_ablate(args, cfg):
    ds, _ = _load_dataset(cfg, args.data)
    mc = _model_config(cfg, ds)
    try:
        results = run_ablation_suite(ds, mc, cfg.train_config())
    except TrainingDiverged as exc:
        raise CommandError(f"training diverged: {exc}", EXIT_NUMERIC) from None
    text, csv = ablation_table(results)
    out = _out_dir(args, cfg)
    _write(os.path.join(out, "ablation.txt"), text)
    _write(os.path.join(out, "ablation.csv"), csv)
    print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    mc = ModelConfig.desk(ablation=cfg.ablation)
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else [cfg.seed]
    out = _out_dir(args, cfg)
    if args.corrupt_adjoint:
        set_adjoint_fault(args.corrupt_adjoint, 1.5)
    try:
        reports = []
        for seed in seeds:
            start = time.perf_counter()
            reports.append(model_grad_check(mc, seed, eps=cfg.gradcheck_eps))
            log.info("seed %d checked in %.1fs", seed, time.perf_counter() - start)
    finally:
        clear_adjoint_faults()
    # timings go to the log only, so the report is byte-identical across runs
    text = "\n".join(format_report(r, cfg.gradcheck_tol, timing=False) for r in reports)
    worst = max(reports, key=lambda r: r.max_error)
    summary = (f"max relative error {worst.max_error:.3e} at {worst.worst_path} (seed {worst.seed}); "
               f"tolerance {cfg.gradcheck_tol:.0e}: {'PASS' if worst.passed(cfg.gradcheck_tol) else 'FAIL'}")
    _write(os.path.join(out, "gradcheck.txt"), text + "\n" + summary + "\n")
    print(text)
    print(summary)
    return EXIT_OK if worst.passed(cfg.gradcheck_tol) else EXIT_GRADCHECK


def cmd_backtest(args, cfg):
    preds = load_predictions(args.predictions)
    prices = load_prices(args.prices)
    industries = load_industry_map(args.industries) if args.industries else {}
    res = run_backtest(preds, prices, industries)
    out = _out_dir(args, cfg)
    _write(os.path.join(out, "trades.csv"), trades_csv(res))
    _write(os.path.join(out, "report.txt"), report_text(res))
    _write(os.path.join(out, "report.csv"), report_csv(res))
    print(report_text(res), end="")
    print(f"trades: {len(res.trades)}  skipped: {len(res.skipped)}  total profit: {res.total:,.2f}")
    return EXIT_OK


COMMANDS = {
    "prep": cmd_prep, "datagen": cmd_datagen, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "backtest": cmd_backtest,
}


# ------------------------------------------------------------------ parser

def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="flat TOML config file")
    parser.add_argument("--seed", type=int, metavar="N", default=default, help="random seed")
    parser.add_argument("--out", metavar="DIR", default=default, help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                        default=default, help="override a config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true", default=default,
                        help="log progress to stderr")


def build_parser():
    parser = argparse.ArgumentParser(prog="mman", description="Multi-modality attention network for "
                                     "stock movement prediction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("prep", help="preprocess raw posts and prices into a dataset archive")
    p.add_argument("--posts", required=True, help="posts JSON-lines file")
    p.add_argument("--prices", required=True, help="directory of <stock>.csv price files")

    p = sub.add_parser("datagen", help="generate a synthetic dataset with planted signal")
    p.add_argument("--samples", type=int, help="number of samples")
    p.add_argument("--signal", type=float, help="signal strength in [0, 1]")
    p.add_argument("--channels", help="planted channels, e.g. text,price")

    p = sub.add_parser("train", help="train a model on a dataset archive")
    p.add_argument("--data", help="dataset archive directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", help="dataset archive directory")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--dump-activations", action="store_true",
                   help="write FM and attention maps as CSV files")

    p = sub.add_parser("ablate", help="train and compare the five model variants")
    p.add_argument("--data", help="dataset archive directory")

    p = sub.add_parser("gradcheck", help="finite-difference check of every model gradient")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--corrupt-adjoint", metavar="OP", help=argparse.SUPPRESS)

    p = sub.add_parser("backtest", help="simulate trades from predictions")
    p.add_argument("--predictions", required=True, help="CSV: date,stock,direction,confidence")
    p.add_argument("--prices", required=True, help="directory of <stock>.csv price files")
    p.add_argument("--industries", help="CSV: stock,industry")

    for sp in sub.choices.values():
        _global_options(sp, suppress=True)
    return parser


def _resolve(args):
    file_values = read_config_file(args.config) if args.config else {}
    flags = {"seed": args.seed}
    if args.command == "datagen":
        flags.update(samples=args.samples, signal=args.signal, channels=args.channels)
    return resolve(file_values, args.overrides or (), **flags)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None:
        args.out = os.path.join("out", args.command)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](args, cfg)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, ConfigError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


__all__ = ["main", "build_parser"]

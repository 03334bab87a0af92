"""File formats: posts JSON-lines, price CSVs, industry maps, predictions, dataset archives."""
import csv
import datetime as dt
import json
import os
from collections import Counter

import numpy as np

from .data import UNK_ID, Dataset, Post, PriceBar
from .errors import DataError

POST_FIELDS = frozenset(("stock", "time", "text", "fans", "followers", "posted", "concerned",
                         "profits", "likes", "retweets", "replies"))
COUNT_FIELDS = ("fans", "followers", "posted", "likes", "retweets", "replies")
PRICE_HEADER = ["date", "open", "high", "low", "close", "adj_close", "volume"]
ARCHIVE_ARRAYS = ("tokens", "windows", "social", "ages", "mask", "labels", "ratios")
ARCHIVE_VERSION = 1


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _count(rec, name, where):
    v = rec[name]
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise DataError(f"{where}: field {name!r} must be a nonnegative integer")
    return v


def parse_post(rec, where):
    if not isinstance(rec, dict):
        raise DataError(f"{where}: expected a JSON object")
    keys = set(rec)
    if keys != POST_FIELDS:
        missing = sorted(POST_FIELDS - keys)
        extra = sorted(keys - POST_FIELDS)
        raise DataError(f"{where}: bad fields (missing {missing}, unexpected {extra})")
    if not isinstance(rec["stock"], str) or not rec["stock"]:
        raise DataError(f"{where}: 'stock' must be a non-empty string")
    if not _is_number(rec["time"]):
        raise DataError(f"{where}: 'time' must be epoch seconds")
    if not isinstance(rec["text"], str):
        raise DataError(f"{where}: 'text' must be a string")
    concerned = rec["concerned"]
    if not isinstance(concerned, list) or not all(isinstance(c, str) for c in concerned):
        raise DataError(f"{where}: 'concerned' must be a list of names")
    profits = rec["profits"]
    if not isinstance(profits, dict) or not all(
            isinstance(k, str) and _is_number(v) and np.isfinite(v) for k, v in profits.items()):
        raise DataError(f"{where}: 'profits' must map names to finite numbers")
    counts = {name: _count(rec, name, where) for name in COUNT_FIELDS}
    return Post(stock=rec["stock"], release_time=int(rec["time"]), text=rec["text"],
                concerned=list(concerned), profits={k: float(v) for k, v in profits.items()},
                **counts)


def load_posts(path):
    """Read a posts file; errors name the offending line.  Blank lines are skipped."""
    posts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: malformed JSON ({exc.msg})") from None
            posts.append(parse_post(rec, where))
    if not posts:
        raise DataError(f"{path}: no posts")
    return posts


def load_price_file(path):
    bars = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PRICE_HEADER:
            raise DataError(f"{path}:1: header must be {','.join(PRICE_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row or not any(c.strip() for c in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(PRICE_HEADER):
                raise DataError(f"{where}: expected {len(PRICE_HEADER)} columns, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0].strip())
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{where}: non-finite value")
            try:
                bars.append(PriceBar(date, *vals))
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from None
    bars.sort(key=lambda b: b.date)
    for a, b in zip(bars, bars[1:]):
        if a.date == b.date:
            raise DataError(f"{path}: duplicate date {a.date}")
    return bars


def load_prices(prices_dir):
    """``{stock: bars}`` from ``<stock>.csv`` files in ``prices_dir``."""
    if not os.path.isdir(prices_dir):
        raise DataError(f"{prices_dir}: not a directory")
    out = {}
    for name in sorted(os.listdir(prices_dir)):
        if name.endswith(".csv"):
            out[name[:-4]] = load_price_file(os.path.join(prices_dir, name))
    return out


def load_industry_map(path):
    """``{stock: industry}`` from a two-column CSV with header ``stock,industry``."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["stock", "industry"]:
            raise DataError(f"{path}:1: header must be stock,industry")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns")
            out[row[0].strip()] = row[1].strip()
    return out


def load_predictions(path):
    """Rows ``(date, stock, direction, confidence)``; direction is Rise/Fall (or Long/Short)."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "stock", "direction", "confidence"]:
            raise DataError(f"{path}:1: header must be date,stock,direction,confidence")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != 4:
                raise DataError(f"{where}: expected 4 columns")
            try:
                date = dt.date.fromisoformat(row[0].strip())
                conf = float(row[3]) if row[3].strip() else float("nan")
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from None
            direction = row[2].strip().lower()
            if direction not in ("rise", "fall", "long", "short", "1", "0"):
                raise DataError(f"{where}: unknown direction {row[2]!r}")
            out.append((date, row[1].strip(), "rise" if direction in ("rise", "long", "1") else "fall",
                        conf))
    return out


# ------------------------------------------------------------------ vocabulary

def build_vocab(token_lists, max_size):
    """PAD, UNK, then tokens by descending frequency (ties alphabetical)."""
    counts = Counter(t for toks in token_lists for t in toks)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = ["<pad>", "<unk>"] + [w for w, _ in ranked if w not in ("<pad>", "<unk>")]
    return words[:max(2, max_size)]


def encode_tokens(tokens, index):
    return [index.get(t, UNK_ID) for t in tokens]


def write_vocab(path, vocab):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in vocab:
            fh.write(w + "\n")


def read_vocab(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


# ------------------------------------------------------------------ archive

def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def save_archive(out_dir, dataset, info=None):
    """Write ``dataset`` as a directory of .npy blobs, samples.jsonl, vocab.txt and manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    for name in ARCHIVE_ARRAYS:
        np.save(os.path.join(out_dir, f"{name}.npy"), np.ascontiguousarray(getattr(dataset, name)),
                allow_pickle=False)
    with open(os.path.join(out_dir, "samples.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(dataset)):
            rec = {"index": i, "stock": dataset.stocks[i], "ref_date": dataset.ref_dates[i].isoformat(),
                   "label": int(dataset.labels[i]), "ratio": float(dataset.ratios[i]),
                   "posts": int(dataset.mask[i].sum())}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if dataset.vocab is not None:
        write_vocab(os.path.join(out_dir, "vocab.txt"), dataset.vocab)
    manifest = {"format": "mman-archive", "version": ARCHIVE_VERSION, "samples": len(dataset),
                "n": int(dataset.tokens.shape[1]), "s": int(dataset.tokens.shape[2]),
                "vocab_size": len(dataset.vocab) if dataset.vocab is not None else None}
    if info:
        manifest["info"] = info
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def load_archive(path):
    """Read an archive written by :func:`save_archive`; returns ``(dataset, manifest)``."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.isfile(mpath):
        raise DataError(f"{path}: no dataset archive (manifest.json missing)")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "mman-archive" or manifest.get("version") != ARCHIVE_VERSION:
        raise DataError(f"{path}: unsupported archive format")
    arrays = {}
    for name in ARCHIVE_ARRAYS:
        fpath = os.path.join(path, f"{name}.npy")
        if not os.path.isfile(fpath):
            raise DataError(f"{path}: missing {name}.npy")
        arrays[name] = np.load(fpath, allow_pickle=False)
    stocks, dates = [], []
    with open(os.path.join(path, "samples.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            stocks.append(rec["stock"])
            dates.append(dt.date.fromisoformat(rec["ref_date"]))
    vpath = os.path.join(path, "vocab.txt")
    vocab = read_vocab(vpath) if os.path.isfile(vpath) else None
    ds = Dataset(arrays["tokens"], arrays["windows"], arrays["social"], arrays["ages"], arrays["mask"],
                 arrays["labels"], arrays["ratios"], stocks, dates, vocab)
    if len(ds) != manifest["samples"] or len(stocks) != len(ds):
        raise DataError(f"{path}: sample count does not match manifest")
    return ds, manifest


__all__ = ["load_posts", "load_prices", "load_price_file", "load_industry_map", "load_predictions",
           "build_vocab", "encode_tokens", "save_archive", "load_archive", "write_json",
           "write_vocab", "read_vocab"]

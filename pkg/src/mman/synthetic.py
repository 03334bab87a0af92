"""Synthetic data with planted, recoverable signal.

Each sample carries three plants:

* a text motif: every post holds one motif token with a direction (bull or
  bear) and a strength (strong or mild).  Posts by high-fan posters carry
  the true motif; posts by low-fan posters carry the opposite direction at
  the same strength.  Credible posts outnumber the others only with
  probability ``credible_majority``, so counting motifs without looking at
  the poster is an unreliable guide;
* a price trend: the log price drifts up or down over the history window;
* label noise: the clean label is kept with probability
  ``(1 + signal_strength) / 2`` and flipped otherwise.

With both channels the clean label is ``sign(3 * text + 2 * price)`` for a
strong motif and ``sign(1 * text + 2 * price)`` for a mild one: strong text
overrides price, price overrides mild text.  The manifest records every
plant so :func:`oracle_predict` can replay the clean label exactly.
"""
import datetime as dt
import json
import math
import os

import numpy as np

from .data import (HORIZON, PAD_ID, UNK_ID, WINDOW_DAYS, AssemblyConfig, Dataset, Dropped,
                   Post, PriceBar, assemble_sample, day_end)
from .errors import ContractError

CHANNELS = ("text", "price")
MOTIFS = {
    ("bull", "strong"): ("soaring", "breakout"),
    ("bull", "mild"): ("uptick", "steady"),
    ("bear", "strong"): ("plunging", "collapse"),
    ("bear", "mild"): ("softer", "dip"),
}
TEXT_WEIGHT = {"strong": 3, "mild": 1}
PRICE_WEIGHT = 2
PRICE_DRIFT = 0.004  # daily log drift of the planted trend
PRICE_NOISE = 0.01
HISTORY_DAYS = WINDOW_DAYS + 30  # business days of bars before the reference day
START_DATE = dt.date(2018, 1, 1)


def synthetic_vocab(vocab_size=64):
    """Token list: PAD, UNK, the motif words, then filler words."""
    words = ["<pad>", "<unk>"]
    for key in sorted(MOTIFS):
        words.extend(MOTIFS[key])
    if vocab_size < len(words) + 4:
        raise ContractError(f"vocab_size must be at least {len(words) + 4}")
    words.extend(f"w{i:03d}" for i in range(vocab_size - len(words)))
    return words


def _business_days(end, count):
    """``count`` weekdays ending at ``end`` (inclusive)."""
    out = []
    d = end
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d -= dt.timedelta(days=1)
    return out[::-1]


def _next_business_days(start, count):
    out = []
    d = start
    while len(out) < count:
        d += dt.timedelta(days=1)
        if d.weekday() < 5:
            out.append(d)
    return out


def _bars(rng, dates, drift, ref_index, label, noise=PRICE_NOISE):
    """Daily bars following a drifting random walk; the closes after ``ref_index`` fix the label."""
    logp = math.log(rng.uniform(20.0, 200.0))
    closes = []
    for _ in range(ref_index + 1):
        logp += drift + rng.normal(0.0, noise)
        closes.append(math.exp(logp))
    p_t = closes[-1]
    r = rng.uniform(0.01, 0.03) * (1 if label == 1 else -1)
    for _ in range(len(dates) - ref_index - 1):
        closes.append(p_t * (1.0 + r) * (1.0 + rng.uniform(-0.002, 0.002)))
    bars = []
    prev = closes[0]
    for date, close in zip(dates, closes):
        close = round(close, 4)
        opn = round(prev * math.exp(rng.normal(0.0, 0.003)), 4)
        high = round(max(opn, close) * (1.0 + rng.uniform(0.0, 0.01)), 4)
        low = round(min(opn, close) * (1.0 - rng.uniform(0.0, 0.01)), 4)
        vol = float(rng.integers(100_000, 1_000_000))
        bars.append(PriceBar(date, opn, high, low, close, close, vol))
        prev = close
    return bars


def _post_counts(rng, max_posts, credible_majority):
    k = int(rng.choice([c for c in (3, 5, 7) if c <= max_posts] or [max_posts]))
    if k < 2:
        return k, 0
    big = int(rng.integers(k // 2 + 1, k)) if k > 2 else 1
    if rng.random() < credible_majority:
        return big, k - big
    return k - big, big


def _post_tokens(rng, motif_id, s, filler, copies=1):
    length = int(rng.integers(max(copies + 2, s // 2), s + 1))
    ids = list(rng.choice(filler, size=length))
    for pos in rng.choice(length, size=copies, replace=False):
        ids[int(pos)] = motif_id
    return ids


def clean_label(text_dir, text_strength, price_dir, channels=CHANNELS):
    """Label implied by the plants alone (1 = rise)."""
    score = 0
    if "text" in channels:
        score += TEXT_WEIGHT[text_strength] * text_dir
    if "price" in channels:
        score += PRICE_WEIGHT * price_dir
    return 1 if score > 0 else 0


def generate_synthetic_dataset(seed, n_samples, signal_strength=1.0, channels=CHANNELS,
                               max_posts=8, max_tokens=12, vocab_size=64, n_stocks=20,
                               mild_fraction=0.3, credible_majority=0.85, filler_words=16,
                               motif_copies=2):
    """Build a :class:`~mman.data.Dataset` and its plant manifest.

    The pipeline is exercised end to end: posts and bars are synthesized,
    then :func:`~mman.data.assemble_sample` builds windows, social vectors
    and labels.  Returns ``(dataset, manifest)``.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be at least 1")
    if not 0.0 <= signal_strength <= 1.0:
        raise ContractError("signal_strength must lie in [0, 1]")
    channels = tuple(c for c in CHANNELS if c in channels)
    if not channels:
        raise ContractError(f"channels must include one of {CHANNELS}")
    rng = np.random.default_rng(seed)
    vocab = synthetic_vocab(vocab_size)
    word_id = {w: i for i, w in enumerate(vocab)}
    filler = np.array([i for i, w in enumerate(vocab) if w.startswith("w")], dtype=np.int64)
    if filler_words is not None:
        filler = filler[:filler_words]
    stocks = [f"SYN{i:03d}" for i in range(n_stocks)]
    config = AssemblyConfig(max_posts=max_posts, max_tokens=max_tokens)
    keep = (1.0 + signal_strength) / 2.0

    samples, records = [], []
    for idx in range(n_samples):
        stock = stocks[idx % n_stocks]
        slot = idx // n_stocks
        ref_date = _next_business_days(START_DATE, 7 * slot + 1)[-1]
        text_dir = 1 if rng.random() < 0.5 else -1
        strength = "mild" if rng.random() < mild_fraction else "strong"
        price_dir = 1 if rng.random() < 0.5 else -1
        bayes = clean_label(text_dir, strength, price_dir, channels)
        label = bayes if rng.random() < keep else 1 - bayes
        drift = PRICE_DRIFT * price_dir if "price" in channels else 0.0

        dates = _business_days(ref_date, HISTORY_DAYS) + _next_business_days(ref_date, HORIZON)
        bars = _bars(rng, dates, drift, HISTORY_DAYS - 1, label)

        n_cred, n_other = _post_counts(rng, max_posts, credible_majority)
        flags = [True] * n_cred + [False] * n_other
        rng.shuffle(flags)
        posts, post_meta = [], []
        ref_end = day_end(ref_date)
        for credible in flags:
            direction = text_dir if credible else -text_dir
            words = MOTIFS[("bull" if direction > 0 else "bear", strength)]
            motif = words[int(rng.integers(0, len(words)))]
            age = int(rng.integers(3600, 13 * 86400))
            fans = int(math.exp(rng.uniform(8.0, 11.0))) if credible else int(rng.integers(0, 20))
            concerned = sorted(rng.choice(stocks, size=int(rng.integers(0, 4)), replace=False).tolist())
            profits = {name: round(float(rng.normal(0.0, 0.05)), 4) for name in concerned}
            posts.append(Post(
                stock=stock, release_time=ref_end - age,
                tokens=_post_tokens(rng, word_id[motif], max_tokens, filler, motif_copies),
                fans=fans, followers=int(rng.integers(0, 500)), posted=int(rng.integers(1, 2000)),
                concerned=concerned, profits=profits, likes=int(rng.integers(0, 50)),
                retweets=int(rng.integers(0, 20)), replies=int(rng.integers(0, 30)),
            ))
            post_meta.append({"release_time": ref_end - age, "credible": credible, "motif": motif})
        smp = assemble_sample(posts, bars, stock, ref_date, config)
        if isinstance(smp, Dropped):  # construction guarantees this cannot happen
            raise ContractError(f"synthetic sample {idx} dropped: {smp.reason}")
        if smp.label != label:
            raise ContractError(f"synthetic sample {idx}: label mismatch")
        post_meta.sort(key=lambda m: m["release_time"])
        samples.append(smp)
        records.append({
            "index": idx, "stock": stock, "ref_date": ref_date.isoformat(),
            "text_direction": text_dir, "text_strength": strength, "price_direction": price_dir,
            "credible": [m["credible"] for m in post_meta], "motifs": [m["motif"] for m in post_meta],
            "bayes_label": bayes, "label": label,
        })
    dataset = Dataset.from_samples(samples, max_posts, max_tokens, vocab)
    manifest = {
        "seed": seed, "n_samples": n_samples, "signal_strength": signal_strength,
        "channels": list(channels), "max_posts": max_posts, "max_tokens": max_tokens,
        "vocab_size": vocab_size, "mild_fraction": mild_fraction,
        "credible_majority": credible_majority, "samples": records,
    }
    return dataset, manifest


def oracle_predict(manifest):
    """Replay the clean label of every sample from its recorded plants."""
    channels = tuple(manifest["channels"])
    out = []
    for rec in manifest["samples"]:
        out.append(clean_label(rec["text_direction"], rec["text_strength"], rec["price_direction"],
                               channels))
    return np.array(out, dtype=np.int64)


def bayes_accuracy(manifest):
    """Accuracy of the plant-replaying oracle against the (noisy) labels."""
    pred = oracle_predict(manifest)
    labels = np.array([rec["label"] for rec in manifest["samples"]], dtype=np.int64)
    return float(np.mean(pred == labels)) if len(labels) else 0.0


# ------------------------------------------------------------------ new-word corpus

def generate_collocation_corpus(seed, n_tokens=50_000, n_words=50, alphabet=800,
                                plant_rate=0.08, stray_rate=0.1):
    """Character-level texts with planted two-character words.

    Filler characters follow a Zipf-like law over ``alphabet`` CJK
    characters.  Each planted word is a pair of characters reserved for it;
    with probability ``stray_rate`` a reserved character also appears on
    its own.  Returns ``(texts, planted_words)``.
    """
    rng = np.random.default_rng(seed)
    chars = [chr(0x4E00 + i) for i in range(alphabet + 2 * n_words)]
    filler = chars[:alphabet]
    reserved = chars[alphabet:]
    planted = [reserved[2 * i] + reserved[2 * i + 1] for i in range(n_words)]
    weights = 1.0 / (np.arange(alphabet) + 10.0)
    weights /= weights.sum()
    texts, count = [], 0
    while count < n_tokens:
        sentences = []
        for _ in range(int(rng.integers(1, 4))):
            sent = []
            for _ in range(int(rng.integers(8, 21))):
                u = rng.random()
                if u < plant_rate:
                    sent.append(planted[int(rng.integers(0, n_words))])
                elif u < plant_rate * (1.0 + stray_rate):
                    sent.append(reserved[int(rng.integers(0, 2 * n_words))])
                else:
                    sent.append(filler[int(rng.choice(alphabet, p=weights))])
            count += sum(len(t) for t in sent)
            sentences.append("".join(sent))
        texts.append("。".join(sentences) + "。")
    return texts, planted


# ------------------------------------------------------------------ raw fixture files

def write_raw_fixture(out_dir, seed=0, n_stocks=2, days=100, posts_per_day=2):
    """Write a small posts.jsonl + prices/<stock>.csv tree for the preprocessing command.

    Returns a dict with the written paths and the reference dates that
    carry posts, for use as an expected-count oracle.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "prices"), exist_ok=True)
    stocks = [f"STK{i}" for i in range(n_stocks)]
    dates = _next_business_days(START_DATE, days)
    bull = ["shares soaring after strong earnings", "analysts see a breakout soon"]
    bear = ["shares plunging on weak guidance", "fears of a collapse in demand"]
    fillers = ["the market opened today", "volume was heavy this morning",
               "traders discussed the quarterly report", "management held a call"]
    post_lines = []
    for stock in stocks:
        logp = math.log(50.0)
        path = os.path.join(out_dir, "prices", f"{stock}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("date,open,high,low,close,adj_close,volume\n")
            prev = 50.0
            for d in dates:
                logp += rng.normal(0.0, 0.02)
                close = round(math.exp(logp), 2)
                opn = round(prev, 2)
                high = round(max(opn, close) * 1.005, 2)
                low = round(min(opn, close) * 0.995, 2)
                fh.write(f"{d.isoformat()},{opn},{high},{low},{close},{close},{int(rng.integers(1e5, 1e6))}\n")
                prev = close
        for d in dates[WINDOW_DAYS:]:
            for _ in range(posts_per_day):
                mood = bull if rng.random() < 0.5 else bear
                text = f"{mood[int(rng.integers(0, 2))]}. {fillers[int(rng.integers(0, 4))]}."
                t = day_end(d) - int(rng.integers(3600, 80000))
                post_lines.append({
                    "stock": stock, "time": t, "text": text,
                    "fans": int(rng.integers(0, 10000)), "followers": int(rng.integers(0, 100)),
                    "posted": int(rng.integers(1, 500)), "concerned": [stock],
                    "profits": {stock: round(float(rng.normal(0, 0.05)), 4)},
                    "likes": int(rng.integers(0, 10)), "retweets": int(rng.integers(0, 5)),
                    "replies": int(rng.integers(0, 5)),
                })
    posts_path = os.path.join(out_dir, "posts.jsonl")
    with open(posts_path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in post_lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return {"posts": posts_path, "prices": os.path.join(out_dir, "prices"), "stocks": stocks,
            "dates": [d.isoformat() for d in dates]}


__all__ = ["generate_synthetic_dataset", "oracle_predict", "bayes_accuracy", "clean_label",
           "synthetic_vocab", "generate_collocation_corpus", "write_raw_fixture",
           "PAD_ID", "UNK_ID"]

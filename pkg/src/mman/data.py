"""Posts, price bars and the per-sample feature tensors fed to the model."""
import datetime as dt
import enum
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractError, DataError

WINDOW_DAYS = 64
N_CHANNELS = 7
N_SOCIAL = 12
HORIZON = 5
THRESHOLD = 0.0075
LOOKBACK_DAYS = 14
MAX_POSTS = 96
PAD_ID = 0
UNK_ID = 1

SOCIAL_FIELDS = (
    "log_fans", "log_followers", "log_posted", "log_concerned",
    "log_likes", "log_retweets", "log_replies", "stock_similarity",
    "profit_mean", "profit_max", "profit_min", "profit_target",
)


class Movement(enum.Enum):
    FALL = 0
    RISE = 1
    DROPPED = -1


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def __post_init__(self):
        lo, hi = min(self.open, self.close), max(self.open, self.close)
        if not (self.low <= lo and hi <= self.high):
            raise DataError(f"inconsistent bar on {self.date}: low/open/close/high out of order")
        if self.volume < 0:
            raise DataError(f"negative volume on {self.date}")


@dataclass
class Post:
    stock: str
    release_time: int  # epoch seconds, UTC
    tokens: list = field(default_factory=list)  # token ids
    fans: int = 0
    followers: int = 0
    posted: int = 0
    concerned: list = field(default_factory=list)
    profits: dict = field(default_factory=dict)
    likes: int = 0
    retweets: int = 0
    replies: int = 0
    text: str = ""

    @property
    def date(self):
        return dt.datetime.fromtimestamp(self.release_time, dt.timezone.utc).date()


@dataclass
class Sample:
    """One aligned (texts, price windows, social vectors) triple with its label."""

    stock: str
    ref_date: dt.date
    ref_time: int
    tokens: np.ndarray  # (k, s) int
    windows: np.ndarray  # (k, 64, 7)
    social: np.ndarray  # (k, 12)
    ages: np.ndarray  # (k,) hours
    label: int
    ratio: float

    def __post_init__(self):
        k = len(self.tokens)
        if not (len(self.windows) == len(self.social) == len(self.ages) == k):
            raise ContractError("sample parts are not aligned")

    @property
    def n_posts(self):
        return len(self.tokens)


@dataclass(frozen=True)
class Dropped:
    reason: str


def day_end(date):
    """Epoch seconds of the midnight (UTC) that closes ``date``."""
    return int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp()) + 86400


# ------------------------------------------------------------------ labeling

def movement_label(p_t, future_closes, threshold=THRESHOLD):
    """Label the move from ``p_t`` to the mean of the next five closes.

    Returns ``(Movement, r)``.  Comparisons are done in exact rational
    arithmetic so ``r == threshold`` is a rise and ``r == -threshold`` a fall.
    """
    if not p_t > 0:
        raise ContractError(f"reference price must be positive, got {p_t}")
    if len(future_closes) != HORIZON:
        raise ContractError(f"expected {HORIZON} future closes, got {len(future_closes)}")
    p = Fraction(p_t)
    mean = sum((Fraction(c) for c in future_closes), Fraction(0)) / HORIZON
    r = (mean - p) / p
    theta = Fraction(str(threshold))
    if r >= theta:
        move = Movement.RISE
    elif r <= -theta:
        move = Movement.FALL
    else:
        move = Movement.DROPPED
    return move, float(r)


# ------------------------------------------------------------------ price window

def build_price_window(bars):
    """Normalized 64x7 history map from the last 64 bars.

    Channels: open, close, high, low, volume, high-low, open-close.  Price
    channels and both spreads are divided by the last close; volume is
    ``log1p`` then z-scored inside the window (zeros when constant).
    """
    if len(bars) < WINDOW_DAYS:
        raise DataError(f"need {WINDOW_DAYS} bars of history, got {len(bars)}")
    bars = bars[-WINDOW_DAYS:]
    raw = np.array([[b.open, b.close, b.high, b.low] for b in bars], dtype=np.float64)
    vol = np.log1p(np.array([b.volume for b in bars], dtype=np.float64))
    last = raw[-1, 1]
    if not last > 0:
        raise DataError("last close must be positive")
    out = np.empty((WINDOW_DAYS, N_CHANNELS))
    out[:, 0:4] = raw / last
    if np.all(vol == vol[0]):  # std of a constant series is not exactly 0 in floats
        out[:, 4] = 0.0
    else:
        out[:, 4] = (vol - vol.mean()) / vol.std()
    out[:, 5] = (raw[:, 2] - raw[:, 3]) / last
    out[:, 6] = (raw[:, 0] - raw[:, 1]) / last
    return out


# ------------------------------------------------------------------ social

class NameEmbeddings:
    """Word vectors for stock names.

    Loaded vectors take precedence; unknown names get a fixed pseudo-random
    vector derived from the name, so a name is always identical to itself.
    """

    def __init__(self, vectors=None, dim=16):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in (vectors or {}).items()}
        if self.vectors:
            dim = len(next(iter(self.vectors.values())))
        self.dim = dim

    def __call__(self, name):
        v = self.vectors.get(name)
        if v is None:
            seed = int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")
            v = np.random.default_rng(seed).normal(size=self.dim)
        return v

    @classmethod
    def load(cls, path):
        """Read ``name v1 v2 ...`` lines (word2vec text format, header optional)."""
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) < 3:
                    continue
                vectors[parts[0]] = [float(x) for x in parts[1:]]
        return cls(vectors)


def _cosine(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def stock_similarity(concerned, target, embeddings=None):
    """Best cosine similarity between ``target`` and a concerned stock, mapped to [0, 1]."""
    if not concerned:
        return 0.0
    emb = embeddings or NameEmbeddings()
    tv = emb(target)
    best = max(_cosine(emb(name), tv) for name in concerned)
    return min(1.0, max(0.0, (best + 1.0) / 2.0))


def social_vector(post, target, embeddings=None):
    counts = [post.fans, post.followers, post.posted, len(post.concerned),
              post.likes, post.retweets, post.replies]
    if any(c < 0 for c in counts):
        raise DataError("social counts must be nonnegative")
    profits = list(post.profits.values())
    out = [math.log1p(c) for c in counts]
    out.append(stock_similarity(post.concerned, target, embeddings))
    if profits:
        out += [sum(profits) / len(profits), max(profits), min(profits)]
    else:
        out += [0.0, 0.0, 0.0]
    out.append(float(post.profits.get(target, 0.0)))
    vec = np.array(out, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise DataError("non-finite social feature")
    return vec


# ------------------------------------------------------------------ assembly

@dataclass
class AssemblyConfig:
    max_posts: int = MAX_POSTS
    max_tokens: int = 64
    lookback_days: int = LOOKBACK_DAYS
    threshold: float = THRESHOLD
    age_cap_hours: float = LOOKBACK_DAYS * 24.0


def pad_tokens(ids, s):
    row = np.full(s, PAD_ID, dtype=np.int64)
    ids = list(ids)[:s]
    row[:len(ids)] = ids
    return row


def assemble_sample(posts, bars, target, ref_date, config=None, embeddings=None, counters=None):
    """Build a :class:`Sample` for ``target`` at ``ref_date`` or return :class:`Dropped`.

    ``bars`` are the target's daily bars in date order.  Posts released in
    the ``lookback_days`` calendar days ending at ``ref_date`` are kept,
    the most recent ``max_posts`` of them, in chronological order.
    """
    cfg = config or AssemblyConfig()
    counters = counters if counters is not None else {}
    start = ref_date - dt.timedelta(days=cfg.lookback_days - 1)
    ref_time = day_end(ref_date)
    window = [(p.release_time, i, p) for i, p in enumerate(posts)
              if p.stock == target and start <= p.date <= ref_date and p.release_time < ref_time]
    if not window:
        return Dropped("no_posts")
    window.sort(key=lambda x: (x[0], x[1]))
    window = window[-cfg.max_posts:]

    dates = [b.date for b in bars]
    try:
        idx = dates.index(ref_date)
    except ValueError:
        return Dropped("no_price")
    if idx + HORIZON >= len(bars):
        return Dropped("no_future")
    move, r = movement_label(bars[idx].adj_close, [b.adj_close for b in bars[idx + 1:idx + 1 + HORIZON]],
                             cfg.threshold)
    if move is Movement.DROPPED:
        return Dropped("dead_zone")

    toks, wins, socs, ages = [], [], [], []
    for rt, _, post in window:
        hist = [b for b in bars[:idx + 1] if b.date <= post.date]
        try:
            win = build_price_window(hist)
        except DataError:
            counters["short_history"] = counters.get("short_history", 0) + 1
            continue
        tau = (ref_time - rt) / 3600.0
        if tau < 0:
            raise ContractError("post released after the reference time")
        toks.append(pad_tokens(post.tokens, cfg.max_tokens))
        wins.append(win)
        socs.append(social_vector(post, target, embeddings))
        ages.append(min(tau, cfg.age_cap_hours))
    if not toks:
        return Dropped("no_history")
    return Sample(target, ref_date, ref_time, np.stack(toks), np.stack(wins), np.stack(socs),
                  np.array(ages, dtype=np.float64), move.value, r)


# ------------------------------------------------------------------ batches

@dataclass
class Batch:
    tokens: np.ndarray  # (B, n, s) int64
    windows: np.ndarray  # (B, n, 64, 7)
    social: np.ndarray  # (B, n, 12)
    ages: np.ndarray  # (B, n)
    mask: np.ndarray  # (B, n) float, 1 for real posts
    labels: np.ndarray  # (B,) int

    def __len__(self):
        return len(self.labels)


class Dataset:
    """Fixed-shape arrays for a list of samples (posts padded to ``n``)."""

    def __init__(self, tokens, windows, social, ages, mask, labels, ratios, stocks, ref_dates,
                 vocab=None):
        self.tokens = tokens
        self.windows = windows
        self.social = social
        self.ages = ages
        self.mask = mask
        self.labels = labels
        self.ratios = ratios
        self.stocks = list(stocks)
        self.ref_dates = list(ref_dates)
        self.vocab = list(vocab) if vocab is not None else None

    def __len__(self):
        return len(self.labels)

    @property
    def n(self):
        return self.tokens.shape[1]

    @property
    def s(self):
        return self.tokens.shape[2]

    @classmethod
    def from_samples(cls, samples, n, s, vocab=None):
        count = len(samples)
        tokens = np.zeros((count, n, s), dtype=np.int64)
        windows = np.zeros((count, n, WINDOW_DAYS, N_CHANNELS))
        social = np.zeros((count, n, N_SOCIAL))
        ages = np.zeros((count, n))
        mask = np.zeros((count, n))
        for i, smp in enumerate(samples):
            k = min(smp.n_posts, n)
            sl = slice(smp.n_posts - k, smp.n_posts)  # keep the most recent
            w = min(s, smp.tokens.shape[1])
            tokens[i, :k, :w] = smp.tokens[sl, :w]
            windows[i, :k] = smp.windows[sl]
            social[i, :k] = smp.social[sl]
            ages[i, :k] = smp.ages[sl]
            mask[i, :k] = 1.0
        labels = np.array([smp.label for smp in samples], dtype=np.int64)
        ratios = np.array([smp.ratio for smp in samples], dtype=np.float64)
        return cls(tokens, windows, social, ages, mask, labels, ratios,
                   [smp.stock for smp in samples], [smp.ref_date for smp in samples], vocab)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.tokens[idx], self.windows[idx], self.social[idx], self.ages[idx],
                       self.mask[idx], self.labels[idx], self.ratios[idx],
                       [self.stocks[i] for i in idx], [self.ref_dates[i] for i in idx], self.vocab)

    def batch(self, idx=None):
        if idx is None:
            idx = np.arange(len(self))
        return Batch(self.tokens[idx], self.windows[idx], self.social[idx], self.ages[idx],
                     self.mask[idx], self.labels[idx])

    def split_chronological(self, fractions=(0.7, 0.1, 0.2)):
        """Split by reference date within each stock; returns three index arrays."""
        parts = ([], [], [])
        by_stock = {}
        for i, st in enumerate(self.stocks):
            by_stock.setdefault(st, []).append(i)
        for st in sorted(by_stock):
            idx = sorted(by_stock[st], key=lambda i: (self.ref_dates[i], i))
            m = len(idx)
            a = int(round(fractions[0] * m))
            b = int(round((fractions[0] + fractions[1]) * m))
            parts[0].extend(idx[:a])
            parts[1].extend(idx[a:b])
            parts[2].extend(idx[b:])
        return tuple(np.array(sorted(p), dtype=np.int64) for p in parts)

"""Raw posts + price files -> labeled dataset.

Steps: new-word discovery over all post texts, tokenization, stop-word
removal, key-sentence extraction, vocabulary building, then one sample per
(stock, trading day) that has posts in its look-back window.
"""
from collections import Counter
from dataclasses import dataclass, field

from .data import AssemblyConfig, Dataset, Dropped, assemble_sample
from .io import build_vocab, encode_tokens
from .text import prepare_texts


@dataclass
class PrepStats:
    posts: int = 0
    posts_rejected: int = 0  # too short after extraction
    candidates: int = 0
    samples: int = 0
    dropped: Counter = field(default_factory=Counter)
    warnings: Counter = field(default_factory=Counter)
    new_words: list = field(default_factory=list)

    def to_dict(self):
        return {"posts": self.posts, "posts_rejected": self.posts_rejected,
                "candidates": self.candidates, "samples": self.samples,
                "dropped": dict(sorted(self.dropped.items())),
                "warnings": dict(sorted(self.warnings.items())),
                "new_words": list(self.new_words)}

    def report(self):
        lines = [f"posts read: {self.posts}", f"posts rejected (too short): {self.posts_rejected}",
                 f"candidate samples: {self.candidates}", f"samples kept: {self.samples}"]
        if self.candidates and self.samples == 0:
            lines.append("dropped: all")
        for reason, count in sorted(self.dropped.items()):
            lines.append(f"dropped {reason}: {count}")
        for reason, count in sorted(self.warnings.items()):
            lines.append(f"warning {reason}: {count}")
        lines.append(f"lexicon additions: {len(self.new_words)}")
        lines.extend(f"  {w}" for w in self.new_words)
        return "\n".join(lines) + "\n"


def build_dataset(posts, prices, n, s, vocab_size, stopwords=(), entropy_threshold=0.5, top_k=500,
                  min_tokens=5, lookback_days=14, threshold=0.0075, embeddings=None):
    """Returns ``(Dataset, PrepStats)``.  ``posts`` have raw ``text``; their tokens are filled in."""
    stats = PrepStats(posts=len(posts))
    token_lists, new_words = prepare_texts([p.text for p in posts], stopwords, entropy_threshold,
                                           top_k, max_tokens=s, min_tokens=min_tokens)
    stats.new_words = new_words
    kept = []
    for post, toks in zip(posts, token_lists):
        if toks is None:
            stats.posts_rejected += 1
            continue
        post.tokens = toks
        kept.append(post)
    vocab = build_vocab([p.tokens for p in kept], vocab_size)
    index = {w: i for i, w in enumerate(vocab)}
    for post in kept:
        post.tokens = encode_tokens(post.tokens, index)

    config = AssemblyConfig(max_posts=n, max_tokens=s, lookback_days=lookback_days,
                            threshold=threshold)
    by_stock = {}
    for post in kept:
        by_stock.setdefault(post.stock, []).append(post)
    samples = []
    for stock in sorted(by_stock):
        bars = prices.get(stock)
        stock_posts = by_stock[stock]
        if not bars:
            stats.dropped["no_price"] += len({p.date for p in stock_posts})
            continue
        post_dates = sorted({p.date for p in stock_posts})
        for bar in bars:
            lo = bar.date.toordinal() - lookback_days + 1
            if not any(lo <= d.toordinal() <= bar.date.toordinal() for d in post_dates):
                continue
            stats.candidates += 1
            smp = assemble_sample(stock_posts, bars, stock, bar.date, config, embeddings,
                                  stats.warnings)
            if isinstance(smp, Dropped):
                stats.dropped[smp.reason] += 1
            else:
                samples.append(smp)
    stats.samples = len(samples)
    return Dataset.from_samples(samples, n, s, vocab), stats

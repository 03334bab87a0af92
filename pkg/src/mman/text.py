"""Text preprocessing: new-word discovery, tokenization, key-sentence extraction.

Base tokens are unicode words for space-delimited scripts and single
characters for scripts written without spaces (CJK, kana, hangul).
"""
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .errors import ContractError

BOUNDARY = "\x00"
DEFAULT_ENTROPY_THRESHOLD = 0.5
DEFAULT_TOP_K = 500
BM25_K1 = 1.2
BM25_B = 0.75

_CJK = (
    "぀-ヿ"  # kana
    "㐀-䶿一-鿿豈-﫿"  # han
    "가-힯"  # hangul
)
_TOKEN_RE = re.compile(rf"[{_CJK}]|[^\W{_CJK}]+", re.UNICODE)
_SENTENCE_RE = re.compile(r"[.!?;\n。！？；]+")


def base_tokens(text):
    """Split a sentence into base tokens."""
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def split_sentences(text):
    """Split raw text into sentences of base tokens; empty sentences are dropped."""
    out = []
    for chunk in _SENTENCE_RE.split(text):
        toks = base_tokens(chunk)
        if toks:
            out.append(toks)
    return out


def load_word_list(path=None):
    """Read a one-word-per-line UTF-8 file.  ``None`` loads the bundled stop words."""
    if path is None:
        raw = resources.files("mman").joinpath("resources/stopwords.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    return [w.strip() for w in raw.splitlines() if w.strip() and not w.startswith("#")]


# ----------------------------------------------------------------- new words

@dataclass
class Candidate:
    """An adjacent base-token pair considered as a new word."""

    a: str
    b: str
    count: int = 0
    left: Counter = field(default_factory=Counter)
    right: Counter = field(default_factory=Counter)

    @property
    def joint(self):
        return self.a + self.b


@dataclass
class CorpusStats:
    unigrams: Counter
    candidates: dict  # (a, b) -> Candidate
    total: int  # base-token positions

    def p(self, token):
        return self.unigrams[token] / self.total

    def p_pair(self, cand):
        return cand.count / self.total


def corpus_stats(corpus):
    """Count unigrams and adjacent pairs with their neighbor histograms.

    ``corpus`` is a sequence of documents, each a sequence of sentences,
    each a sequence of base tokens.  Pairs never cross sentence boundaries.
    """
    unigrams = Counter()
    cands = {}
    for doc in corpus:
        for sent in doc:
            unigrams.update(sent)
            n = len(sent)
            for i in range(n - 1):
                key = (sent[i], sent[i + 1])
                c = cands.get(key)
                if c is None:
                    c = cands[key] = Candidate(sent[i], sent[i + 1])
                c.count += 1
                c.left[sent[i - 1] if i > 0 else BOUNDARY] += 1
                c.right[sent[i + 2] if i + 2 < n else BOUNDARY] += 1
    total = sum(unigrams.values())
    return CorpusStats(unigrams, cands, total)


def entropy(histogram):
    """Shannon entropy (nats) of a count histogram."""
    counts = [c for c in histogram.values() if c > 0] if hasattr(histogram, "values") else [
        c for c in histogram if c > 0]
    total = sum(counts)
    if total <= 0:
        raise ContractError("entropy of an empty histogram")
    h = 0.0
    for c in counts:
        p = c / total
        h -= p * math.log(p)
    return h


def side_entropy(candidate, side):
    """Entropy of the left or right neighbor distribution of ``candidate``."""
    if side == "left":
        return entropy(candidate.left)
    if side == "right":
        return entropy(candidate.right)
    raise ContractError(f"side must be 'left' or 'right', got {side!r}")


def mutual_information(p_ab, p_a, p_b):
    """Pointwise term ``p(a,b) * ln(p(a,b) / (p(a) p(b)))``."""
    if p_a <= 0 or p_b <= 0 or p_ab <= 0:
        raise ContractError("mutual_information needs positive probabilities")
    return p_ab * math.log(p_ab / (p_a * p_b))


def candidate_mi(cand, stats):
    return mutual_information(stats.p_pair(cand), stats.p(cand.a), stats.p(cand.b))


def discover_new_words(corpus, entropy_threshold=DEFAULT_ENTROPY_THRESHOLD, top_k=DEFAULT_TOP_K,
                       stats=None):
    """Return up to ``top_k`` joined pairs ranked by mutual information.

    Pairs survive when the smaller of their two side entropies reaches
    ``entropy_threshold``.  Ties rank by count (descending), then by the
    joined form.
    """
    if top_k <= 0:
        return []
    stats = stats or corpus_stats(corpus)
    scored = []
    for cand in stats.candidates.values():
        if min(side_entropy(cand, "left"), side_entropy(cand, "right")) < entropy_threshold:
            continue
        scored.append((-candidate_mi(cand, stats), -cand.count, cand.joint, cand.a, cand.b))
    scored.sort()
    seen = set()
    out = []
    for _, _, joint, _, _ in scored:
        if joint in seen:
            continue
        seen.add(joint)
        out.append(joint)
        if len(out) == top_k:
            break
    return out


# ------------------------------------------------------------------ tokenizer

class Tokenizer:
    """Greedy longest-match over base tokens against a lexicon.

    A lexicon entry matches a run of consecutive base tokens whose
    concatenation equals the entry.  Unmatched spans fall back to single
    base tokens.
    """

    def __init__(self, lexicon=(), max_parts=4):
        self.lexicon = set(lexicon)
        self.max_parts = max_parts

    def add(self, words):
        self.lexicon.update(words)

    def split(self, tokens):
        out = []
        i, n = 0, len(tokens)
        while i < n:
            best = 1
            joined = tokens[i]
            for k in range(2, min(self.max_parts, n - i) + 1):
                joined += tokens[i + k - 1]
                if joined in self.lexicon:
                    best = k
            out.append("".join(tokens[i:i + best]))
            i += best
        return out

    def __call__(self, text):
        return self.split(base_tokens(text))


def tokenize(text, lexicon):
    """Tokenize ``text`` (a string or a list of base tokens) by greedy longest match.

    With character-level base tokens the lexicon ``{"ab", "a", "b"}`` turns
    ``["a", "b", "a"]`` into ``["ab", "a"]``.
    """
    tok = lexicon if isinstance(lexicon, Tokenizer) else Tokenizer(lexicon)
    toks = base_tokens(text) if isinstance(text, str) else list(text)
    return tok.split(toks)


def filter_stopwords(tokens, stopwords):
    return [t for t in tokens if t not in stopwords]


# ------------------------------------------------------------------ BM25

@dataclass
class BM25Stats:
    n_docs: int
    doc_freq: Counter
    avgdl: float

    @classmethod
    def from_docs(cls, docs):
        df = Counter()
        total = 0
        for d in docs:
            df.update(set(d))
            total += len(d)
        n = len(docs)
        return cls(n, df, total / n if n else 0.0)

    def idf(self, term):
        df = self.doc_freq.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25(query, doc, stats, k1=BM25_K1, b=BM25_B):
    """Okapi BM25 of ``doc`` for the distinct terms of ``query``."""
    if not doc or stats.avgdl <= 0:
        return 0.0
    tf = Counter(doc)
    norm = k1 * (1.0 - b + b * len(doc) / stats.avgdl)
    score = 0.0
    for term in sorted(set(query)):
        f = tf.get(term, 0)
        if f:
            score += stats.idf(term) * f * (k1 + 1.0) / (f + norm)
    return score


def extract_key_sentences(sentences, max_tokens=64, min_tokens=5, k1=BM25_K1, b=BM25_B):
    """Shorten a text to its highest-BM25 sentences.

    ``sentences`` is a list of token lists (stop words already removed).
    Returns ``None`` when the text has fewer than ``min_tokens`` tokens,
    otherwise the kept sentences in their original order.  Sentences are
    taken in score order until the next one would overflow ``max_tokens``;
    the best sentence is always kept.
    """
    sentences = [s for s in sentences if s]
    total = sum(len(s) for s in sentences)
    if total < min_tokens:
        return None
    if total <= max_tokens:
        return [list(s) for s in sentences]
    stats = BM25Stats.from_docs(sentences)
    query = [t for s in sentences for t in s]
    scores = [bm25(query, s, stats, k1, b) for s in sentences]
    order = sorted(range(len(sentences)), key=lambda i: (-scores[i], i))
    kept = [order[0]]
    used = len(sentences[order[0]])
    for i in order[1:]:
        if used + len(sentences[i]) > max_tokens:
            break
        kept.append(i)
        used += len(sentences[i])
    return [list(sentences[i]) for i in sorted(kept)]


# ------------------------------------------------------------------ pipeline

def prepare_texts(texts, stopwords=(), entropy_threshold=DEFAULT_ENTROPY_THRESHOLD,
                  top_k=DEFAULT_TOP_K, max_tokens=64, min_tokens=5, base_lexicon=()):
    """Run discovery, tokenization, stop-word removal and extraction over raw texts.

    Returns ``(token_lists, new_words)`` where rejected texts are ``None``.
    """
    stop = set(stopwords)
    corpus = [split_sentences(t) for t in texts]
    new_words = discover_new_words([d for d in corpus if d], entropy_threshold, top_k)
    tok = Tokenizer(base_lexicon)
    tok.add(new_words)
    out = []
    for doc in corpus:
        sents = [filter_stopwords(tok.split(s), stop) for s in doc]
        kept = extract_key_sentences(sents, max_tokens=max_tokens, min_tokens=min_tokens)
        out.append(None if kept is None else [t for s in kept for t in s])
    return out, new_words

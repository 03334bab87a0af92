"""The multi-modality attention network.

Forward pipeline (per batch of samples, posts padded to ``n``):

    tokens --DAN--> C^s (+time PE) --encoder--> C^e
    social --affine--> A^e ;  C = decoder(q,k from A^e, v from C^e)
    windows --CNNpred--> H
    (H, C) --inter attention--> (H^itd, C^itd) --gates + intra attention--> (H^ind, C^ind)
    FM = masked mean(H^ind * C^ind) --conv head--> two class capsules

Ablations: ``oC`` text only, ``oH`` history only, ``nA`` no social
decoder, ``nH`` no history (FM is the pooled decoder output).
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import N_CHANNELS, N_SOCIAL, PAD_ID, WINDOW_DAYS
from .errors import ConfigError, ContractError

ABLATIONS = ("full", "nA", "nH", "oC", "oH")
MASK_NEG = -1e9
M_PLUS, M_MINUS, LAMBDA_NEG = 0.9, 0.1, 0.5
RECON_WEIGHT = 0.0005


@dataclass
class ModelConfig:
    d: int = 512
    s: int = 64
    n: int = 96
    heads: int = 8
    encoder_layers: int = 2
    decoder_layers: int = 1
    ff_dim: int = 0  # 0 -> 2 * d
    dropout: float = 0.2
    vocab_size: int = 5000
    cnn_channels: int = 8
    head_channels: int = 16
    capsule_dim: int = 8
    recon_hidden: int = 64
    pe_base: float = 10000.0
    age_cap_hours: float = 336.0
    ablation: str = "full"

    def __post_init__(self):
        self.validate()

    @classmethod
    def desk(cls, **kw):
        base = dict(d=32, heads=4, n=8, s=12, vocab_size=64)
        base.update(kw)
        return cls(**base)

    @property
    def head_dim(self):
        return self.d // self.heads

    @property
    def ff(self):
        return self.ff_dim or 2 * self.d

    def validate(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.d <= 0 or self.heads <= 0 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.d % 2:
            raise ConfigError("d must be even for the sinusoidal time encoding")
        h = self.head_dim
        if (h - 2) // 2 - 2 < 1:
            raise ConfigError(f"head length {h} too small for the inference conv stack (need >= 8)")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover PAD and UNK")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        for name in ("s", "n", "encoder_layers", "decoder_layers", "capsule_dim"):
            if getattr(self, name) < (0 if name.endswith("layers") else 1):
                raise ConfigError(f"{name} out of range")

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ parameters

def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Init:
    def __init__(self, rng):
        self.rng = rng
        self.params = {}

    def weight(self, path, shape, fan_in):
        self.params[path] = Tensor(_uniform(self.rng, shape, fan_in), requires_grad=True, name=path)

    def zeros(self, path, shape):
        self.params[path] = Tensor(np.zeros(shape), requires_grad=True, name=path)

    def ones(self, path, shape):
        self.params[path] = Tensor(np.ones(shape), requires_grad=True, name=path)

    def linear(self, path, p, q):
        self.weight(f"{path}.w", (p, q), p)
        self.zeros(f"{path}.b", (q,))

    def norm(self, path, d):
        self.ones(f"{path}.g", (d,))
        self.zeros(f"{path}.b", (d,))

    def attention(self, path, d):
        for nm in ("q", "k", "v", "o"):
            self.linear(f"{path}.{nm}", d, d)

    def ff(self, path, d, hidden):
        self.linear(f"{path}.fc1", d, hidden)
        self.linear(f"{path}.fc2", hidden, d)


def uses(cfg):
    """Which parameter groups the configured ablation needs."""
    a = cfg.ablation
    return {
        "text": a != "oH",
        "encoder": a != "oH",
        "social": a in ("full", "nH"),
        "decoder": a in ("full", "nH"),
        "history": a in ("full", "nA", "oH"),
        "fusion": a in ("full", "nA"),
    }


def init_params(cfg, seed=0):
    """Fan-in uniform weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    it = _Init(rng)
    d, h, m = cfg.d, cfg.head_dim, cfg.heads
    use = uses(cfg)
    if use["text"]:
        it.weight("text.emb", (cfg.vocab_size, d), 1)
        it.linear("text.fc1", cfg.s * d, d)
        it.linear("text.fc2", d, d)
    if use["encoder"]:
        for i in range(cfg.encoder_layers):
            it.norm(f"enc.{i}.ln1", d)
            it.attention(f"enc.{i}.attn", d)
            it.norm(f"enc.{i}.ln2", d)
            it.ff(f"enc.{i}.ff", d, cfg.ff)
        it.norm("enc.ln", d)
    if use["social"]:
        it.linear("social", N_SOCIAL, d)
    if use["decoder"]:
        for i in range(cfg.decoder_layers):
            it.norm(f"dec.{i}.ln_a", d)
            it.attention(f"dec.{i}.attn", d)
            it.norm(f"dec.{i}.ln2", d)
            it.ff(f"dec.{i}.ff", d, cfg.ff)
    if use["history"]:
        c = cfg.cnn_channels
        it.weight("hist.conv0.w", (c, 1, 1, N_CHANNELS), N_CHANNELS)
        it.zeros("hist.conv0.b", (c,))
        it.weight("hist.conv1.w", (c, c, 3), 3 * c)
        it.zeros("hist.conv1.b", (c,))
        it.weight("hist.conv2.w", (c, c, 3), 3 * c)
        it.zeros("hist.conv2.b", (c,))
        it.linear("hist.fc", c * _hist_len(), d)
    if use["fusion"]:
        for mod in ("h", "c"):
            for nm in ("q", "k", "v"):
                it.linear(f"inter.{mod}{nm}", d, d)
            it.linear(f"inter.{mod}cat", 2 * d, d)
            it.linear(f"gate.{mod}", d, d)
            for nm in ("q", "k", "v"):
                it.linear(f"intra.{mod}{nm}", d, d)
            it.weight(f"intra.{mod}out.w", (m, h, h), h)
            it.zeros(f"intra.{mod}out.b", (m, h))
    hc = cfg.head_channels
    it.norm("infer.ln", m * h)
    it.weight("infer.conv1.w", (hc, m, 3), 3 * m)
    it.zeros("infer.conv1.b", (hc,))
    it.weight("infer.conv2.w", (hc, hc, 3), 3 * hc)
    it.zeros("infer.conv2.b", (hc,))
    it.linear("infer.fc", hc, 2 * cfg.capsule_dim)
    it.linear("recon.fc1", 2 * cfg.capsule_dim, cfg.recon_hidden)
    it.linear("recon.fc2", cfg.recon_hidden, m * h)
    return it.params


def decays(path):
    """Weight decay applies to weight matrices and kernels, not biases or gains."""
    return path.endswith(".w") or path.endswith(".emb")


def _hist_len():
    length = WINDOW_DAYS
    for _ in range(2):
        length = (length - 2) // 2
    return length


# ------------------------------------------------------------------ building blocks

def time_positional_encoding(ages, d, base=10000.0, cap=None):
    """Sinusoidal encoding of post age in hours: sin on even, cos on odd channels."""
    tau = np.asarray(ages, dtype=np.float64)
    if np.any(tau < 0):
        raise ContractError("post age must be nonnegative")
    if cap is not None:
        tau = np.minimum(tau, cap)
    i = np.arange(d // 2, dtype=np.float64)
    freq = base ** (2.0 * i / d)
    arg = tau[..., None] / freq
    pe = np.empty(tau.shape + (d,))
    pe[..., 0::2] = np.sin(arg)
    pe[..., 1::2] = np.cos(arg)
    return pe


# A parameter may carry one extra leading axis matching the batch axis: each
# sample then sees its own copy.  The batched finite-difference check uses
# this to evaluate many perturbed coordinates in one forward pass.

def _per_sample(v, nominal_ndim, out_ndim):
    """Reshape a batched bias/gain (B, ..., q) to broadcast against (B, ..., q) activations."""
    v = ad.as_tensor(v)
    if v.ndim == nominal_ndim:
        return v
    return ad.reshape(v, (v.shape[0],) + (1,) * (out_ndim - v.ndim) + v.shape[1:])


def _lin(x, p, path):
    w, b = p[f"{path}.w"], p[f"{path}.b"]
    if w.ndim == 2 and b.ndim == 1:
        return ad.linear(x, w, b)
    x = ad.as_tensor(x)
    lead = x.shape[:-1]
    if w.ndim == 3:
        y = ad.matmul(ad.reshape(x, (x.shape[0], -1, x.shape[-1])), w)
        y = ad.reshape(y, lead + (w.shape[-1],))
    else:
        y = ad.matmul(x, w)
    return y + _per_sample(b, 1, y.ndim)


def _ln(x, p, path):
    g, b = p[f"{path}.g"], p[f"{path}.b"]
    if g.ndim == 1 and b.ndim == 1:
        return ad.layer_norm(x, g, b)
    d = x.shape[-1]
    y = ad.layer_norm(x, np.ones(d), np.zeros(d))
    return y * _per_sample(g, 1, y.ndim) + _per_sample(b, 1, y.ndim)


def _rows(x, start, stop):
    return ad.index(x, (slice(start, stop),))


def _conv(x, w, per, conv):
    """Apply ``conv`` with a shared kernel, or with per-sample kernels in groups of ``per`` rows."""
    w = ad.as_tensor(w)
    if w.ndim == (4 if conv is ad.conv2d else 3):
        return conv(x, w)
    outs = [conv(_rows(x, i * per, (i + 1) * per), ad.index(w, (i,))) for i in range(w.shape[0])]
    return ad.concat(outs, axis=0)


def _conv_bias(x, b, per):
    """Add a channel bias to (N, c, L) activations; batched biases cover ``per`` rows each."""
    b = ad.as_tensor(b)
    if b.ndim == 1:
        return x + ad.reshape(b, (-1, 1))
    n, c, length = x.shape
    y = ad.reshape(x, (b.shape[0], per, c, length)) + ad.reshape(b, (b.shape[0], 1, c, 1))
    return ad.reshape(y, (n, c, length))


def _split_heads(x, heads):
    b, n, d = x.shape
    return ad.transpose(ad.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, m, n, h = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, m * h))


def _key_bias(mask):
    """Additive score bias (B, 1, 1, n): 0 for real posts, large negative for padding."""
    return np.where(mask > 0, 0.0, MASK_NEG)[:, None, None, :]


def multihead_attention(q_src, k_src, v_src, p, path, heads, bias, trace=None):
    q = _split_heads(_lin(q_src, p, f"{path}.q"), heads)
    k = _split_heads(_lin(k_src, p, f"{path}.k"), heads)
    v = _split_heads(_lin(v_src, p, f"{path}.v"), heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    att = ad.softmax_lastdim(ad.matmul(q, ad.transpose(k)) * scale + bias)
    if trace is not None:
        trace[f"{path}.weights"] = att.data
    return _lin(_merge_heads(ad.matmul(att, v)), p, f"{path}.o")


def _ff(x, p, path):
    return _lin(ad.gelu(_lin(x, p, f"{path}.fc1")), p, f"{path}.fc2")


def embed_texts(tokens, p, cfg):
    """DAN with flatten: look up, zero PAD rows, flatten, two dense layers."""
    tokens = np.asarray(tokens)
    lead = tokens.shape[:-1]
    table = p["text.emb"]
    if table.ndim == 3:  # per-sample tables: offset ids into the stacked table
        bsz, vocab = table.shape[0], table.shape[1]
        if np.any(tokens < 0) or np.any(tokens >= vocab):
            raise ContractError("token id out of range")
        offs = (np.arange(bsz) * vocab).reshape((bsz,) + (1,) * (tokens.ndim - 1))
        e = ad.embedding(tokens + offs, ad.reshape(table, (bsz * vocab, table.shape[2])))
    else:
        e = ad.embedding(tokens, table)
    e = e * (tokens != PAD_ID)[..., None].astype(np.float64)
    flat = ad.reshape(e, lead + (cfg.s * cfg.d,))
    return _lin(ad.gelu(_lin(flat, p, "text.fc1")), p, "text.fc2")


def embed_social(social, p):
    return _lin(ad.as_tensor(social), p, "social")


def embed_history(windows, p, cfg):
    """CNNpred-style: 1x7 feature-mixing conv, then two conv(3)+pool(2) stages."""
    windows = np.asarray(windows, dtype=np.float64)
    lead = windows.shape[:-2]
    per = int(np.prod(lead[1:], dtype=np.int64))  # rows per sample
    x = ad.as_tensor(windows.reshape((-1, 1, WINDOW_DAYS, N_CHANNELS)))
    c = cfg.cnn_channels
    x = _conv(x, p["hist.conv0.w"], per, ad.conv2d)  # (N, c, 64, 1)
    x = ad.reshape(x, (x.shape[0], c, WINDOW_DAYS))
    x = ad.gelu(_conv_bias(x, p["hist.conv0.b"], per))
    for i in (1, 2):
        x = _conv_bias(_conv(x, p[f"hist.conv{i}.w"], per, ad.conv1d), p[f"hist.conv{i}.b"], per)
        x = ad.maxpool1d(ad.gelu(x), 2)
    x = ad.reshape(x, lead + (c * x.shape[-1],))
    return _lin(x, p, "hist.fc")


def encode(x, p, cfg, bias, trace=None):
    """Pre-norm transformer encoder stack with a final normalization."""
    for i in range(cfg.encoder_layers):
        y = _ln(x, p, f"enc.{i}.ln1")
        x = x + multihead_attention(y, y, y, p, f"enc.{i}.attn", cfg.heads, bias, trace)
        x = x + _ff(_ln(x, p, f"enc.{i}.ln2"), p, f"enc.{i}.ff")
    return _ln(x, p, "enc.ln")


def fuse_decode(a_e, c_e, p, cfg, bias, trace=None):
    """Cross attention: queries and keys from social features, values from text."""
    x = c_e
    for i in range(cfg.decoder_layers):
        a = _ln(a_e, p, f"dec.{i}.ln_a")
        x = x + multihead_attention(a, a, x, p, f"dec.{i}.attn", cfg.heads, bias, trace)
        x = x + _ff(_ln(x, p, f"dec.{i}.ln2"), p, f"dec.{i}.ff")
    return x


def _single_head(q, k, v, bias, d):
    scores = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(d)) + bias[:, 0]
    att = ad.softmax_lastdim(scores)
    return ad.matmul(att, v), att


def inter_attention(h, c, p, cfg, bias, trace=None):
    """Transfer values across modalities, then project ``[x, transfer]`` back to d."""
    d = cfg.d
    hq, hk, hv = (_lin(h, p, f"inter.h{nm}") for nm in "qkv")
    cq, ck, cv = (_lin(c, p, f"inter.c{nm}") for nm in "qkv")
    h_itv, att_h = _single_head(hq, ck, cv, bias, d)
    c_itv, att_c = _single_head(cq, hk, hv, bias, d)
    if trace is not None:
        trace["inter.h.weights"] = att_h.data
        trace["inter.c.weights"] = att_c.data
    h_itd = _lin(ad.concat([h, h_itv], axis=-1), p, "inter.hcat")
    c_itd = _lin(ad.concat([c, c_itv], axis=-1), p, "inter.ccat")
    return h_itd, c_itd


def conditioning_gates(h_itd, c_itd, p, mask):
    """Sigmoid channel gates from the pooled other modality, shape (B, 1, d)."""
    m = mask[:, :, None]
    g_h = ad.sigmoid(_lin(ad.masked_mean(c_itd, m, axis=1), p, "gate.h"))
    g_c = ad.sigmoid(_lin(ad.masked_mean(h_itd, m, axis=1), p, "gate.c"))
    b = g_h.shape[0]
    return ad.reshape(g_h, (b, 1, -1)), ad.reshape(g_c, (b, 1, -1))


def intra_attention(x_itd, gate, p, cfg, bias, mod, trace=None):
    """Gated per-head self attention; output stays head-separated (B, n, m, h)."""
    one_plus = gate + 1.0
    q = _split_heads(_lin(x_itd, p, f"intra.{mod}q") * one_plus, cfg.heads)
    k = _split_heads(_lin(x_itd, p, f"intra.{mod}k") * one_plus, cfg.heads)
    v = _split_heads(_lin(x_itd, p, f"intra.{mod}v"), cfg.heads)
    scores = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(cfg.d)) + bias
    att = ad.softmax_lastdim(scores)
    if trace is not None:
        trace[f"intra.{mod}.weights"] = att.data
    upd = ad.matmul(att, v)  # (B, m, n, h)
    summed = _split_heads(x_itd, cfg.heads) + upd
    w = p[f"intra.{mod}out.w"]
    b = p[f"intra.{mod}out.b"]
    b = ad.reshape(b, b.shape[:-1] + (1, cfg.head_dim))
    out = ad.matmul(summed, w) + b
    return ad.transpose(out, (0, 2, 1, 3))


def final_fusion(h_ind, c_ind, mask):
    """Masked sequence mean of the elementwise product, (B, m, h)."""
    return ad.masked_mean(h_ind * c_ind, mask[:, :, None, None], axis=1)


def squash(v):
    n2 = ad.sum(v * v, axis=-1, keepdims=True)
    return v * (ad.sqrt(n2) / (n2 + 1.0))


def infer(fm, p, cfg):
    """Normalize FM, two conv(3) layers with a max-pool between, global mean, affine, squash."""
    bsz, m, h = fm.shape
    x = ad.reshape(_ln(ad.reshape(fm, (bsz, m * h)), p, "infer.ln"), (bsz, m, h))
    x = _conv_bias(_conv(x, p["infer.conv1.w"], 1, ad.conv1d), p["infer.conv1.b"], 1)
    x = ad.maxpool1d(ad.gelu(x), 2)
    x = _conv_bias(_conv(x, p["infer.conv2.w"], 1, ad.conv1d), p["infer.conv2.b"], 1)
    x = ad.mean(ad.gelu(x), axis=-1)
    caps = _lin(x, p, "infer.fc")
    return squash(ad.reshape(caps, (caps.shape[0], 2, cfg.capsule_dim)))


# ------------------------------------------------------------------ forward and losses

@dataclass
class Output:
    capsules: Tensor  # (B, 2, capsule_dim); index 0 = fall, 1 = rise
    probs: Tensor  # (B, 2) capsule norms
    fm: Tensor  # (B, m, h)
    trace: dict = field(default_factory=dict)

    def predictions(self):
        return np.argmax(self.probs.data, axis=1)


STAGES = ("C_s", "C_e", "A_e", "C", "H", "FM")

# parameter groups each stage depends on
STAGE_DEPS = {
    "C_s": {"text"},
    "C_e": {"text", "encoder"},
    "A_e": {"social"},
    "C": {"text", "encoder", "social", "decoder"},
    "H": {"history"},
    "FM": {"text", "encoder", "social", "decoder", "history", "fusion"},
}

_GROUP_PREFIXES = (
    ("text.", "text"), ("enc.", "encoder"), ("social.", "social"), ("dec.", "decoder"),
    ("hist.", "history"), ("inter.", "fusion"), ("gate.", "fusion"), ("intra.", "fusion"),
    ("infer.", "head"), ("recon.", "head"),
)


def param_group(path):
    for prefix, group in _GROUP_PREFIXES:
        if path.startswith(prefix):
            return group
    raise ContractError(f"unknown parameter path {path!r}")


def forward(batch, params, cfg, mode="eval", rng=None, trace=None, given=None):
    """Run the network on a :class:`~mman.data.Batch`.

    ``given`` optionally maps stage names (see ``STAGES``) to precomputed
    activations; those stages are taken as constants instead of recomputed.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    mask = np.asarray(batch.mask, dtype=np.float64)
    if np.any(mask.sum(axis=1) == 0):
        raise ContractError("every sample needs at least one real post")
    training = mode == "train"
    rate = cfg.dropout
    if training and rng is None:
        raise ContractError("train mode needs an rng for dropout")
    given = given or {}
    p = params
    use = uses(cfg)
    bias = _key_bias(mask)
    bsz = mask.shape[0]
    m, h = cfg.heads, cfg.head_dim

    def drop(x):
        return ad.dropout(x, rate, rng, training)

    def stage(name, compute):
        if name in given:
            return ad.as_tensor(given[name])
        out = compute()
        if trace is not None:
            trace[name] = out.data
        return out

    def text_stages():
        c_s = stage("C_s", lambda: drop(embed_texts(batch.tokens, p, cfg)))
        pe = time_positional_encoding(batch.ages, cfg.d, cfg.pe_base, cfg.age_cap_hours)
        return encode(c_s + pe, p, cfg, bias, trace)

    def fused_text():
        c_e = stage("C_e", text_stages)
        if not use["decoder"]:
            return c_e
        a_e = stage("A_e", lambda: drop(embed_social(batch.social, p)))
        return fuse_decode(a_e, c_e, p, cfg, bias, trace)

    def fusion():
        a = cfg.ablation
        if a == "oC":
            c_e = stage("C_e", text_stages)
            return ad.reshape(ad.masked_mean(c_e, mask[:, :, None], axis=1), (bsz, m, h))
        if a in ("full", "nA", "nH"):
            c = stage("C", fused_text)
            if a == "nH":
                return ad.reshape(ad.masked_mean(c, mask[:, :, None], axis=1), (bsz, m, h))
        hist = stage("H", lambda: drop(embed_history(batch.windows, p, cfg)))
        if a == "oH":
            return ad.reshape(ad.masked_mean(hist, mask[:, :, None], axis=1), (bsz, m, h))
        h_itd, c_itd = inter_attention(hist, c, p, cfg, bias, trace)
        g_h, g_c = conditioning_gates(h_itd, c_itd, p, mask)
        h_ind = intra_attention(h_itd, g_h, p, cfg, bias, "h", trace)
        c_ind = intra_attention(c_itd, g_c, p, cfg, bias, "c", trace)
        if trace is not None:
            trace.update(H_itd=h_itd.data, C_itd=c_itd.data, G_H=g_h.data, G_C=g_c.data,
                         H_ind=h_ind.data, C_ind=c_ind.data)
        return final_fusion(h_ind, c_ind, mask)

    fm = stage("FM", fusion)
    caps = infer(fm, p, cfg)
    probs = ad.norm_lastdim(caps)
    if trace is not None:
        trace["capsules"] = caps.data
    return Output(caps, probs, fm, trace if trace is not None else {})


def margin_loss(probs, labels):
    """Per-sample capsule margin loss summed over both classes, shape (B,)."""
    y = np.zeros(probs.shape)
    y[np.arange(len(labels)), np.asarray(labels)] = 1.0
    pos = ad.relu(M_PLUS - probs)
    neg = ad.relu(probs - M_MINUS)
    per_class = pos * pos * y + neg * neg * (LAMBDA_NEG * (1.0 - y))
    return ad.sum(per_class, axis=-1)


def reconstruct(capsules, labels, p):
    """Decode the target capsule (the other one zeroed) back to flattened FM."""
    y = np.zeros(capsules.shape[:2])
    y[np.arange(len(labels)), np.asarray(labels)] = 1.0
    masked = capsules * y[:, :, None]
    flat = ad.reshape(masked, (capsules.shape[0], -1))
    return _lin(ad.gelu(_lin(flat, p, "recon.fc1")), p, "recon.fc2")


def sample_losses(out, labels, params):
    """Per-sample margin loss plus scaled reconstruction error, shape (B,)."""
    margin = margin_loss(out.probs, labels)
    bsz = out.fm.shape[0]
    diff = ad.reshape(out.fm, (bsz, -1)) - reconstruct(out.capsules, labels, params)
    recon = ad.sum(diff * diff, axis=-1)
    return margin + recon * RECON_WEIGHT, margin, recon


def total_loss(out, labels, params):
    """Batch mean of margin loss plus the scaled reconstruction error."""
    per, margin, recon = sample_losses(out, labels, params)
    return ad.mean(per), {"margin": float(margin.data.mean()), "recon": float(recon.data.mean())}


def shape_table(cfg, batch_size):
    """Expected shapes of the traced intermediates for a full-model forward."""
    b, n, d, m, h = batch_size, cfg.n, cfg.d, cfg.heads, cfg.head_dim
    return {
        "C_s": (b, n, d), "C_e": (b, n, d), "A_e": (b, n, d), "C": (b, n, d), "H": (b, n, d),
        "H_itd": (b, n, d), "C_itd": (b, n, d), "G_H": (b, 1, d), "G_C": (b, 1, d),
        "H_ind": (b, n, m, h), "C_ind": (b, n, m, h), "FM": (b, m, h),
        "capsules": (b, 2, cfg.capsule_dim),
        "inter.h.weights": (b, n, n), "inter.c.weights": (b, n, n),
        "intra.h.weights": (b, m, n, n), "intra.c.weights": (b, m, n, n),
        **{f"enc.{i}.attn.weights": (b, m, n, n) for i in range(cfg.encoder_layers)},
        **{f"dec.{i}.attn.weights": (b, m, n, n) for i in range(cfg.decoder_layers)},
    }

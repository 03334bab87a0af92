import math
from dataclasses import replace

import numpy as np
import pytest

from mman import autodiff as ad
from mman.autodiff import Tape, Tensor, check_gradients
from mman.data import Batch
from mman.errors import ConfigError, ContractError
from mman.model import (
    ABLATIONS, RECON_WEIGHT, ModelConfig, Output, _hist_len, _key_bias, conditioning_gates,
    embed_history, embed_social, embed_texts, encode, final_fusion, forward, init_params,
    inter_attention, intra_attention, margin_loss, param_group, sample_losses, shape_table, squash,
    time_positional_encoding, total_loss,
)
from mman.modelcheck import format_report, model_grad_check, probe_batch

TINY = dict(d=16, heads=2, n=3, s=4, vocab_size=10, cnn_channels=4, head_channels=4,
            capsule_dim=4, recon_hidden=8)


def tiny(**kw):
    return ModelConfig(**{**TINY, **kw})


def desk_batch(cfg, size=2, seed=0, real=None):
    rng = np.random.default_rng(seed)
    parts = [probe_batch(cfg, seed + i, real_posts=real) for i in range(size)]
    return Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                   ("tokens", "windows", "social", "ages", "mask", "labels")))


# ------------------------------------------------------------------ config

def test_config_validation():
    assert ModelConfig.desk().head_dim == 8
    with pytest.raises(ConfigError):
        ModelConfig.desk(heads=5)
    with pytest.raises(ConfigError):
        ModelConfig.desk(ablation="xx")
    with pytest.raises(ConfigError):
        ModelConfig(d=8, heads=2)  # head length 4 too short for the inference convs


def test_init_is_fan_in_uniform_with_zero_biases():
    cfg = ModelConfig.desk()
    params = init_params(cfg, 0)
    w = params["enc.0.attn.q.w"].data
    assert np.max(np.abs(w)) <= 1 / math.sqrt(cfg.d)
    assert np.all(params["enc.0.attn.q.b"].data == 0)
    assert np.all(params["enc.0.ln1.g"].data == 1)
    for path in params:
        param_group(path)


# ------------------------------------------------------------------ positional encoding

def test_positional_encoding_values():
    pe = time_positional_encoding(np.array([0.0, 1.0, 5000.0]), 32)
    assert np.all(np.abs(pe) <= 1.0)
    assert pe[0].tolist() == [0.0, 1.0] * 16
    assert abs(pe[1, 0] - math.sin(1.0)) <= 1e-12 and abs(pe[1, 1] - math.cos(1.0)) <= 1e-12
    i = 5
    arg = 5000.0 / 10000 ** (2 * i / 32)
    assert abs(pe[2, 2 * i] - math.sin(arg)) <= 1e-12
    assert abs(pe[2, 2 * i + 1] - math.cos(arg)) <= 1e-12
    with pytest.raises(ContractError):
        time_positional_encoding(np.array([-1.0]), 8)


# ------------------------------------------------------------------ embeddings

def test_embed_texts_examples():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 0)
    rng = np.random.default_rng(0)
    tokens = rng.integers(2, cfg.vocab_size, size=(cfg.n, cfg.s))
    tokens[2] = 0
    tokens[5] = 0
    tokens[6] = tokens[1]
    out = embed_texts(tokens, p, cfg).data
    assert out.shape == (8, 32)
    assert np.array_equal(out[2], out[5])
    assert np.array_equal(out[1], out[6])
    with pytest.raises(ContractError):
        embed_texts(np.full((1, cfg.s), cfg.vocab_size), p, cfg)


def test_embed_social_affine():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 0)
    a = np.random.default_rng(1).normal(size=(cfg.n, 12))
    zero = embed_social(np.zeros((cfg.n, 12)), p).data
    assert np.allclose(zero, p["social.b"].data[None, :], atol=0)
    one, two = embed_social(a, p).data, embed_social(2 * a, p).data
    assert embed_social(a, p).shape == (8, 32)
    assert np.max(np.abs((two - one) - (one - zero))) <= 1e-12


def test_embed_history_shape():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 0)
    assert _hist_len() == 14
    assert p["hist.fc.w"].shape == (8 * 14, 32)
    w = np.random.default_rng(2).normal(size=(cfg.n, 64, 7))
    assert embed_history(w, p, cfg).shape == (8, 32)


# ------------------------------------------------------------------ encoder and fusion blocks

def test_encoder_permutation_equivariant():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 3)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, cfg.n, cfg.d))
    perm = rng.permutation(cfg.n)
    bias = _key_bias(np.ones((1, cfg.n)))
    a = encode(Tensor(x), p, cfg, bias).data
    b = encode(Tensor(x[:, perm]), p, cfg, bias).data
    assert np.max(np.abs(b - a[:, perm])) <= 1e-12


def test_social_features_move_decoder_attention():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 4)
    batch = desk_batch(cfg, size=1, seed=4, real=cfg.n)
    t1 = {}
    forward(batch, p, cfg, trace=t1)
    social = batch.social.copy()
    fans = math.expm1(abs(social[0, 3, 0]) + 3.0)
    social[0, 3, 0] = math.log1p(fans)
    base = Batch(batch.tokens, batch.windows, social, batch.ages, batch.mask, batch.labels)
    doubled = Batch(batch.tokens, batch.windows, social.copy(), batch.ages, batch.mask, batch.labels)
    doubled.social[0, 3, 0] = math.log1p(2 * fans)
    ta, tb = {}, {}
    forward(base, p, cfg, trace=ta)
    forward(doubled, p, cfg, trace=tb)
    assert not np.array_equal(ta["A_e"][0, 3], tb["A_e"][0, 3])
    assert np.array_equal(ta["A_e"][0, 2], tb["A_e"][0, 2])
    wa, wb = ta["dec.0.attn.weights"], tb["dec.0.attn.weights"]
    assert np.max(np.abs(wa - wb)) > 1e-9
    assert np.all(wa[..., :cfg.n] > 0)


def test_concat_projection_identity_passes_history_through():
    cfg = ModelConfig.desk()
    p = dict(init_params(cfg, 5))
    d = cfg.d
    p["inter.hcat.w"] = Tensor(np.vstack([np.eye(d), np.zeros((d, d))]))
    p["inter.hcat.b"] = Tensor(np.zeros(d))
    rng = np.random.default_rng(5)
    h, c = rng.normal(size=(2, cfg.n, d)), rng.normal(size=(2, cfg.n, d))
    h_itd, _ = inter_attention(Tensor(h), Tensor(c), p, cfg, _key_bias(np.ones((2, cfg.n))))
    assert np.array_equal(h_itd.data, h)


def test_gate_closed_form():
    cfg = ModelConfig.desk()
    p = dict(init_params(cfg, 6))
    d = cfg.d
    for mod in "hc":
        p[f"gate.{mod}.w"] = Tensor(np.zeros((d, d)))
        p[f"gate.{mod}.b"] = Tensor(np.full(d, math.log(3)))
    x = Tensor(np.random.default_rng(6).normal(size=(2, cfg.n, d)))
    g_h, g_c = conditioning_gates(x, x, p, np.ones((2, cfg.n)))
    assert np.max(np.abs(g_h.data - 0.75)) <= 1e-15
    assert np.max(np.abs((g_c.data + 1.0) - 1.75)) <= 1e-15


def test_intra_attention_identity_output():
    cfg = ModelConfig.desk()
    p = dict(init_params(cfg, 7))
    d, m, h = cfg.d, cfg.heads, cfg.head_dim
    p["intra.hv.w"] = Tensor(np.zeros((d, d)))
    p["intra.hv.b"] = Tensor(np.zeros(d))
    p["intra.hout.w"] = Tensor(np.stack([np.eye(h)] * m))
    p["intra.hout.b"] = Tensor(np.zeros((m, h)))
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, cfg.n, d))
    gate = Tensor(rng.uniform(size=(2, 1, d)))
    out = intra_attention(Tensor(x), gate, p, cfg, _key_bias(np.ones((2, cfg.n))), "h")
    assert np.array_equal(out.data, x.reshape(2, cfg.n, m, h))


def test_final_fusion_matches_loops():
    rng = np.random.default_rng(8)
    b, n, m, h = 2, 3, 4, 5
    hi, ci = rng.normal(size=(b, n, m, h)), rng.normal(size=(b, n, m, h))
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 1.0]])
    got = final_fusion(Tensor(hi), Tensor(ci), mask).data
    for s in range(b):
        real = [i for i in range(n) if mask[s, i]]
        for a in range(m):
            for k in range(h):
                want = math.fsum(hi[s, i, a, k] * ci[s, i, a, k] for i in real) / len(real)
                assert abs(got[s, a, k] - want) <= 1e-12


def test_squash_unit_vector():
    v = np.zeros((1, 8))
    v[0, 3] = 1.0
    assert abs(np.linalg.norm(squash(Tensor(v)).data) - 0.5) <= 1e-15
    big = squash(Tensor(np.full((3, 8), 100.0))).data
    assert np.all(np.linalg.norm(big, axis=-1) < 1)


def test_margin_loss_examples():
    assert margin_loss(Tensor([[0.1, 0.5]]), [1]).data.tolist() == pytest.approx([0.16], abs=1e-15)
    assert margin_loss(Tensor([[0.5, 0.9]]), [1]).data.tolist() == pytest.approx([0.08], abs=1e-15)


def test_reconstruction_term():
    m, h, cap = 4, 32, 8
    params = {
        "recon.fc1.w": Tensor(np.zeros((2 * cap, 16))), "recon.fc1.b": Tensor(np.zeros(16)),
        "recon.fc2.w": Tensor(np.zeros((16, m * h))), "recon.fc2.b": Tensor(-np.ones(m * h)),
    }
    out = Output(Tensor(np.zeros((1, 2, cap))), Tensor([[0.05, 0.95]]), Tensor(np.zeros((1, m, h))))
    per, margin, recon = sample_losses(out, np.array([1]), params)
    assert margin.data.tolist() == [0.0]
    assert recon.data.tolist() == [128.0]
    assert abs(per.data[0] - 0.064) <= 1e-15
    assert RECON_WEIGHT == 0.0005


# ------------------------------------------------------------------ whole forward

def test_shape_audit():
    cfg = ModelConfig.desk()
    batch = desk_batch(cfg, size=3)
    trace = {}
    out = forward(batch, init_params(cfg, 0), cfg, trace=trace)
    for name, shape in shape_table(cfg, 3).items():
        assert trace[name].shape == shape, name
    probs = out.probs.data
    assert probs.shape == (3, 2) and np.all((probs >= 0) & (probs < 1))


def test_padding_is_masked():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 1)
    batch = desk_batch(cfg, size=2, seed=1, real=5)
    a = forward(batch, p, cfg).capsules.data
    rng = np.random.default_rng(9)
    noisy = Batch(batch.tokens.copy(), batch.windows.copy(), batch.social.copy(), batch.ages.copy(),
                  batch.mask, batch.labels)
    noisy.tokens[:, 5:] = rng.integers(2, cfg.vocab_size, size=noisy.tokens[:, 5:].shape)
    noisy.windows[:, 5:] = rng.normal(size=noisy.windows[:, 5:].shape)
    noisy.social[:, 5:] = rng.normal(size=noisy.social[:, 5:].shape)
    noisy.ages[:, 5:] = rng.uniform(0, 300, size=noisy.ages[:, 5:].shape)
    b = forward(noisy, p, cfg).capsules.data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_forward_rejects_empty_sample():
    cfg = ModelConfig.desk()
    batch = desk_batch(cfg, size=1)
    batch.mask[:] = 0
    with pytest.raises(ContractError):
        forward(batch, init_params(cfg, 0), cfg)


def test_train_mode_dropout_reproducible():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 0)
    batch = desk_batch(cfg)
    a = forward(batch, p, cfg, mode="train", rng=np.random.default_rng(5)).probs.data
    b = forward(batch, p, cfg, mode="train", rng=np.random.default_rng(5)).probs.data
    c = forward(batch, p, cfg, mode="eval").probs.data
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)
    with pytest.raises(ContractError):
        forward(batch, p, cfg, mode="train")


def _changed(batch, field, rng):
    arrs = {f: getattr(batch, f).copy() for f in ("tokens", "windows", "social", "ages", "mask", "labels")}
    if field == "tokens":
        arrs[field] = rng.integers(2, 64, size=arrs[field].shape)
    else:
        arrs[field] = rng.normal(size=arrs[field].shape) + 5
    return Batch(**arrs)


@pytest.mark.parametrize("variant,ignored,used", [
    ("oH", ["tokens", "social"], "windows"),
    ("oC", ["windows", "social"], "tokens"),
    ("nA", ["social"], "windows"),
    ("nH", ["windows"], "social"),
    ("full", [], "social"),
])
def test_ablation_inputs(variant, ignored, used):
    cfg = ModelConfig.desk(ablation=variant)
    p = init_params(cfg, 2)
    batch = desk_batch(cfg)
    rng = np.random.default_rng(2)
    base = forward(batch, p, cfg).capsules.data
    for field in ignored:
        assert np.array_equal(forward(_changed(batch, field, rng), p, cfg).capsules.data, base)
    assert not np.array_equal(forward(_changed(batch, used, rng), p, cfg).capsules.data, base)


def test_full_equals_nA_with_pass_through_decoder():
    full = ModelConfig.desk()
    p = dict(init_params(full, 3))
    for i in range(full.decoder_layers):
        for path in (f"dec.{i}.attn.o", f"dec.{i}.ff.fc2"):
            p[f"{path}.w"] = Tensor(np.zeros_like(p[f"{path}.w"].data))
            p[f"{path}.b"] = Tensor(np.zeros_like(p[f"{path}.b"].data))
    batch = desk_batch(full)
    batch.social[:] = 0.0
    na = replace(full, ablation="nA")
    q = {k: v for k, v in p.items() if param_group(k) not in ("social", "decoder")}
    assert set(q) == set(init_params(na, 0))
    a = forward(batch, p, full).capsules.data
    b = forward(batch, q, na).capsules.data
    assert np.array_equal(a, b)


# ------------------------------------------------------------------ gradients

@pytest.mark.parametrize("variant", ABLATIONS)
def test_model_gradients_tiny(variant):
    cfg = tiny(ablation=variant)
    rep = model_grad_check(cfg, seed=1)
    assert rep.passed(1e-4), format_report(rep)
    assert rep.checked == sum(p.data.size for p in init_params(cfg, 1).values())


def test_batched_and_per_coordinate_checks_agree():
    cfg = tiny()
    params = init_params(cfg, 2)
    batch = probe_batch(cfg, 2)

    def f():
        return total_loss(forward(batch, params, cfg), batch.labels, params)[0]

    coords = {k: range(0, v.data.size, max(1, v.data.size // 3)) for k, v in params.items()}
    slow = check_gradients(f, params, coords=coords)
    fast = model_grad_check(cfg, seed=2, params=params, batch=batch)
    assert slow.passed() and fast.passed()
    assert set(slow.per_param) == set(fast.per_param)


def test_model_gradcheck_catches_corrupted_adjoint():
    cfg = tiny()
    ad.set_adjoint_fault("layer_norm", 1.5)
    try:
        rep = model_grad_check(cfg, seed=0)
    finally:
        ad.clear_adjoint_faults()
    assert not rep.passed(1e-4)


def test_report_lists_every_group():
    rep = model_grad_check(tiny(), seed=3)
    text = format_report(rep)
    for group in ("text", "encoder", "social", "decoder", "history", "fusion", "head"):
        assert f"group {group}" in text


def test_loss_gradient_reaches_every_parameter():
    cfg = ModelConfig.desk()
    params = init_params(cfg, 0)
    batch = desk_batch(cfg)
    with Tape() as tape:
        loss, _ = total_loss(forward(batch, params, cfg), batch.labels, params)
    grads = tape.gradient(loss, list(params.values()))
    for (path, _), g in zip(params.items(), grads):
        assert np.any(g != 0), path


def test_attention_rows_are_distributions():
    cfg = ModelConfig.desk()
    batch = desk_batch(cfg, size=3, seed=5, real=6)
    trace = {}
    forward(batch, init_params(cfg, 5), cfg, trace=trace)
    maps = [k for k in trace if k.endswith(".weights")]
    assert {"enc.0.attn.weights", "enc.1.attn.weights", "dec.0.attn.weights", "inter.h.weights",
            "inter.c.weights", "intra.h.weights", "intra.c.weights"} <= set(maps)
    for k in maps:
        w = trace[k]
        assert np.all(w >= 0), k
        assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-10, k


def test_appending_a_pad_post_keeps_capsules():
    cfg = ModelConfig.desk()
    wide = replace(cfg, n=cfg.n + 1)
    p = init_params(cfg, 6)
    assert {k: v.shape for k, v in p.items()} == {k: v.shape for k, v in init_params(wide, 6).items()}
    b = desk_batch(cfg, size=2, seed=6, real=5)

    def pad(a, value=0.0):
        extra = np.full(a.shape[:1] + (1,) + a.shape[2:], value, dtype=a.dtype)
        return np.concatenate([a, extra], axis=1)

    bw = Batch(pad(b.tokens), pad(b.windows), pad(b.social), pad(b.ages), pad(b.mask), b.labels)
    a = forward(b, p, cfg).capsules.data
    w = forward(bw, p, wide).capsules.data
    assert np.max(np.abs(a - w)) <= 1e-10


def test_eval_forward_is_pure():
    cfg = ModelConfig.desk()
    p = init_params(cfg, 7)
    b = desk_batch(cfg, seed=7)
    before = {k: v.data.copy() for k, v in p.items()}
    x = forward(b, p, cfg).capsules.data
    y = forward(b, p, cfg).capsules.data
    assert x.tobytes() == y.tobytes()
    assert all(np.array_equal(before[k], p[k].data) for k in p)

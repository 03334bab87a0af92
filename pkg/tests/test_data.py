import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from mman.data import (
    AssemblyConfig, Dataset, Dropped, Movement, NameEmbeddings, Post, PriceBar, Sample,
    assemble_sample, build_price_window, day_end, movement_label, social_vector, stock_similarity,
)
from mman.errors import ContractError, DataError
from mman.synthetic import bayes_accuracy, generate_synthetic_dataset, oracle_predict


# ------------------------------------------------------------------ labeling

def test_movement_label_examples():
    move, r = movement_label(100.0, [101.0] * 5)
    assert move is Movement.RISE and r == pytest.approx(0.01, abs=1e-15)
    move, r = movement_label(100.0, [100.5] * 5)
    assert move is Movement.DROPPED and r == pytest.approx(0.005, abs=1e-15)
    assert movement_label(100.0, [100.0] * 5) == (Movement.DROPPED, 0.0)
    with pytest.raises(ContractError):
        movement_label(0.0, [1.0] * 5)
    with pytest.raises(ContractError):
        movement_label(1.0, [1.0] * 4)


def test_movement_label_thresholds_closed_on_action_side():
    assert movement_label(400, [403] * 5)[0] is Movement.RISE
    assert movement_label(400, [397] * 5)[0] is Movement.FALL
    assert movement_label(400, [402.99] * 5)[0] is Movement.DROPPED


@given(st.floats(1.0, 1000.0), st.lists(st.floats(-0.05, 0.05), min_size=5, max_size=5))
def test_movement_label_antisymmetric(p, moves):
    up = [p * (1 + m) for m in moves]
    down = [2 * p - c for c in up]  # negates r exactly in rationals
    a, ra = movement_label(p, up)
    b, rb = movement_label(p, down)
    flip = {Movement.RISE: Movement.FALL, Movement.FALL: Movement.RISE,
            Movement.DROPPED: Movement.DROPPED}
    want = oracles.movement_label(p, down)
    assert b.value == want
    if oracles.movement_label(p, up) != -1 and oracles.movement_label(p, down) != -1:
        assert flip[a] is b
    assert ra == pytest.approx(-rb, abs=1e-12)


def test_movement_label_matches_rational_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        p = float(rng.uniform(1, 500))
        fut = [float(p * (1 + rng.normal(0, 0.01))) for _ in range(5)]
        assert movement_label(p, fut)[0].value == oracles.movement_label(p, fut)


# ------------------------------------------------------------------ price window

def _bars(closes, start=dt.date(2020, 1, 1), spread=0.0, volume=1000.0):
    out = []
    for i, c in enumerate(closes):
        out.append(PriceBar(start + dt.timedelta(days=i), c, c * (1 + spread), c * (1 - spread), c, c,
                            volume if np.isscalar(volume) else volume[i]))
    return out


def test_price_window_constant_series():
    win = build_price_window(_bars([42.0] * 64))
    assert win.shape == (64, 7)
    assert np.all(win[:, :4] == 1.0)
    assert np.all(win[:, 4] == 0.0)
    assert np.all(win[:, 5:] == 0.0)


def test_price_window_spread_channel():
    bars = _bars([200.0] * 64)
    bars[10] = PriceBar(bars[10].date, 200.0, 210.0, 190.0, 200.0, 200.0, 1000.0)
    assert build_price_window(bars)[10, 5] == pytest.approx(0.10, abs=1e-15)


def test_price_window_needs_64_bars():
    with pytest.raises(DataError):
        build_price_window(_bars([1.0] * 63))


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_price_window_scale_invariant(seed, k):
    rng = np.random.default_rng(seed)
    closes = 50 * np.exp(np.cumsum(rng.normal(0, 0.02, size=64)))
    vol = rng.uniform(1e3, 1e6, size=64)
    a = build_price_window(_bars(closes.tolist(), spread=0.01, volume=vol))
    b = build_price_window(_bars((closes * k).tolist(), spread=0.01, volume=vol))
    assert np.max(np.abs(a - b)) <= 1e-12
    assert np.all(a[:, 5] >= 0)


def test_price_bar_validation():
    with pytest.raises(DataError):
        PriceBar(dt.date(2020, 1, 1), 10, 9, 8, 10, 10, 0)
    with pytest.raises(DataError):
        PriceBar(dt.date(2020, 1, 1), 10, 11, 9, 10, 10, -1)


# ------------------------------------------------------------------ social features

def test_stock_similarity_examples():
    emb = NameEmbeddings()
    assert stock_similarity(["AAA", "BBB"], "AAA", emb) == 1.0
    assert stock_similarity([], "AAA", emb) == 0.0
    u = np.array([1.0, 0.0])
    v = np.array([0.2, np.sqrt(1 - 0.04)])
    fixed = NameEmbeddings({"u": u, "v": v})
    assert stock_similarity(["v"], "u", fixed) == pytest.approx(0.6, abs=1e-12)


def test_social_vector_layout():
    post = Post("AAA", 0, fans=9, followers=0, posted=3, concerned=["AAA", "BBB"],
                profits={"AAA": 0.1, "BBB": -0.3}, likes=1, retweets=2, replies=0)
    v = social_vector(post, "AAA")
    assert v.shape == (12,)
    assert v[0] == pytest.approx(np.log(10.0))
    assert v[3] == pytest.approx(np.log(3.0))
    assert v[7] == 1.0
    assert v[8:].tolist() == pytest.approx([-0.1, 0.1, -0.3, 0.1])


# ------------------------------------------------------------------ assembly

def _history(days=80, start=dt.date(2020, 1, 6)):
    dates, d = [], start
    while len(dates) < days:
        if d.weekday() < 5:
            dates.append(d)
        d += dt.timedelta(days=1)
    return dates


def _fixture(n_posts, future=101.0):
    dates = _history()
    ref_idx = 70
    closes = [100.0] * (ref_idx + 1) + [future] * (len(dates) - ref_idx - 1)
    bars = [PriceBar(d, c, c, c, c, c, 1000.0) for d, c in zip(dates, closes)]
    ref = dates[ref_idx]
    posts = [Post("AAA", day_end(ref) - 3600 * (i + 1), tokens=[2, 3, 4], fans=i) for i in range(n_posts)]
    return posts, bars, ref


def test_assemble_keeps_most_recent_posts():
    posts, bars, ref = _fixture(100)
    smp = assemble_sample(posts, bars, "AAA", ref, AssemblyConfig(max_posts=96))
    assert isinstance(smp, Sample)
    assert smp.n_posts == 96
    # chronological order, and the four oldest posts (largest fan index) are gone
    fans = smp.social[:, 0]
    assert np.all(np.diff(smp.ages) < 0)
    assert np.exp(fans.max()) - 1 == pytest.approx(95)


def test_assemble_examples():
    posts, bars, ref = _fixture(10)
    smp = assemble_sample(posts, bars, "AAA", ref)
    assert smp.n_posts == 10 and smp.windows.shape == (10, 64, 7) and smp.social.shape == (10, 12)
    assert smp.label == 1 and smp.ratio == pytest.approx(0.01)
    old = [Post("AAA", day_end(ref - dt.timedelta(days=30)), tokens=[2])]
    assert assemble_sample(old, bars, "AAA", ref) == Dropped("no_posts")
    posts, bars, ref = _fixture(3, future=100.2)
    assert assemble_sample(posts, bars, "AAA", ref) == Dropped("dead_zone")


def test_dataset_padding_and_split():
    posts, bars, ref = _fixture(3)
    smp = assemble_sample(posts, bars, "AAA", ref)
    ds = Dataset.from_samples([smp] * 10, n=8, s=5)
    assert ds.tokens.shape == (10, 8, 5)
    assert ds.mask[0].tolist() == [1, 1, 1, 0, 0, 0, 0, 0]
    tr, va, te = ds.split_chronological()
    assert (len(tr), len(va), len(te)) == (7, 1, 2)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(10))


# ------------------------------------------------------------------ synthetic data

def test_synthetic_reproducible():
    a, ma = generate_synthetic_dataset(7, 60)
    b, mb = generate_synthetic_dataset(7, 60)
    for name in ("tokens", "windows", "social", "ages", "mask", "labels", "ratios"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert ma == mb


def test_synthetic_bayes_accuracy():
    _, manifest = generate_synthetic_dataset(0, 2000, signal_strength=1.0)
    assert bayes_accuracy(manifest) >= 0.99
    labels = np.array([r["label"] for r in manifest["samples"]])
    assert np.mean(oracle_predict(manifest) == labels) >= 0.99


def test_synthetic_null_signal_labels_independent():
    _, manifest = generate_synthetic_dataset(0, 2000, signal_strength=0.0)
    assert abs(bayes_accuracy(manifest) - 0.5) < 0.05


def test_synthetic_plants_recorded():
    ds, manifest = generate_synthetic_dataset(3, 40)
    for i, rec in enumerate(manifest["samples"]):
        k = int(ds.mask[i].sum())
        assert len(rec["credible"]) == len(rec["motifs"]) == k
        assert sum(rec["credible"]) > 0 and not all(rec["credible"])
        assert rec["label"] == int(ds.labels[i])


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(ContractError):
        generate_synthetic_dataset(0, 0)
    with pytest.raises(ContractError):
        generate_synthetic_dataset(0, 10, signal_strength=1.5)

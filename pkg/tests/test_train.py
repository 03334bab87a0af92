import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from mman.autodiff import Tensor
from mman.errors import ContractError, NumericalError
from mman.model import ModelConfig, init_params
from mman.synthetic import generate_synthetic_dataset
from mman.train import (
    AdamState, EvalReport, TrainConfig, ablation_table, adam_step, evaluate, lr_at, mcc,
    metrics_csv, run_ablation_suite, train,
)


# ------------------------------------------------------------------ optimizer

def test_adam_first_step_moves_by_lr():
    p = {"w": Tensor(np.array([1.0, -2.0, 3.0]))}
    g = {"w": np.array([0.5, -4.0, 1e-3])}
    cfg = TrainConfig(lr0=0.001, weight_decay=0.0)
    lr = adam_step(p, g, AdamState(), 1, cfg, total_steps=1000)
    assert lr == pytest.approx(0.001 * (1 - 1 / 1000))
    step = np.array([1.0, -2.0, 3.0]) - p["w"].data
    assert np.allclose(np.abs(step), lr, rtol=1e-4)
    assert np.all(np.sign(step) == np.sign(g["w"]))


def test_adam_zero_gradient_without_decay_is_still():
    p = {"w": Tensor(np.array([1.0, 2.0]))}
    before = p["w"].data.copy()
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 1, TrainConfig(weight_decay=0.0), 10)
    assert np.array_equal(p["w"].data, before)


def test_adam_decoupled_decay_skips_biases():
    p = {"enc.0.attn.q.w": Tensor(np.ones(2)), "enc.0.attn.q.b": Tensor(np.ones(2))}
    g = {k: np.zeros(2) for k in p}
    adam_step(p, g, AdamState(), 1, TrainConfig(lr0=0.1, weight_decay=0.5), 10)
    assert p["enc.0.attn.q.w"].data[0] == pytest.approx(1 - 0.1 * 0.9 * 0.5)
    assert p["enc.0.attn.q.b"].data[0] == 1.0


def test_adam_last_step_has_zero_rate():
    p = {"w": Tensor(np.ones(3))}
    adam_step(p, {"w": np.ones(3)}, AdamState(), 5, TrainConfig(), 5)
    assert np.array_equal(p["w"].data, np.ones(3))


def test_adam_rejects_non_finite_gradient_by_name():
    p = {"dec.0.ff.fc1.w": Tensor(np.ones(2))}
    with pytest.raises(NumericalError, match="dec.0.ff.fc1.w"):
        adam_step(p, {"dec.0.ff.fc1.w": np.array([1.0, np.nan])}, AdamState(), 1, TrainConfig(), 10)


@given(st.integers(1, 10_000), st.floats(1e-5, 1.0))
def test_lr_schedule_is_affine(total, lr0):
    assert lr_at(0, total, lr0) == lr0
    assert lr_at(total, total, lr0) == 0.0
    mid = lr_at(total // 2, total, lr0)
    assert abs(mid - lr0 * (1 - (total // 2) / total)) <= 1e-15
    if total >= 2:
        d1 = lr_at(1, total, lr0) - lr_at(0, total, lr0)
        d2 = lr_at(total, total, lr0) - lr_at(total - 1, total, lr0)
        assert abs(d1 - d2) <= 1e-12


def test_lr_schedule_rejects_out_of_range():
    with pytest.raises(ContractError):
        lr_at(11, 10, 0.1)
    with pytest.raises(ContractError):
        lr_at(0, 0, 0.1)


# ------------------------------------------------------------------ metrics

def test_mcc_examples():
    assert mcc(10, 0, 10, 0) == 1.0
    assert mcc(0, 10, 0, 10) == -1.0
    assert mcc(5, 5, 0, 0) == 0.0
    assert abs(mcc(6, 4, 6, 4) - 0.2) <= 1e-15
    assert abs(mcc(3, 1, 2, 2) - 4 / math.sqrt(240)) <= 1e-15


def test_eval_report_counts():
    rep = EvalReport.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (2, 1, 1, 1)
    assert rep.accuracy == pytest.approx(0.6)
    assert rep.total == 5
    one_class = EvalReport.from_predictions([1] * 6, [1, 0, 1, 0, 1, 1])
    assert one_class.mcc == 0.0 and one_class.accuracy == pytest.approx(4 / 6)
    with pytest.raises(ContractError):
        EvalReport.from_predictions([1], [1, 0])


labels_and_preds = st.integers(1, 60).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@given(labels_and_preds)
def test_mcc_properties(pair):
    pred, labels = (np.array(x) for x in pair)
    a = EvalReport.from_predictions(pred, labels)
    assert -1.0 <= a.mcc <= 1.0
    assert abs(a.mcc - oracles.mcc_from_labels(pred, labels)) <= 1e-12
    # swapping the roles of prediction and label keeps the score
    assert abs(EvalReport.from_predictions(labels, pred).mcc - a.mcc) <= 1e-12
    # flipping the predictions negates it
    assert abs(EvalReport.from_predictions(1 - pred, labels).mcc + a.mcc) <= 1e-12
    assert a.tp + a.tn == int(np.sum(pred == labels))


# ------------------------------------------------------------------ training loop

@pytest.fixture(scope="module")
def small():
    ds, _ = generate_synthetic_dataset(11, 96)
    return ds


def test_training_is_deterministic(small):
    cfg = ModelConfig.desk()
    tc = TrainConfig(epochs=2, batch=16, seed=4)
    a = train(small, cfg, tc)
    b = train(small, cfg, tc)
    for path in a.params:
        assert a.params[path].data.tobytes() == b.params[path].data.tobytes(), path
    assert metrics_csv(a.history) == metrics_csv(b.history)
    c = train(small, cfg, TrainConfig(epochs=2, batch=16, seed=5))
    assert metrics_csv(c.history) != metrics_csv(a.history)


def test_training_reduces_loss(small):
    cfg = ModelConfig.desk()
    res = train(small, cfg, TrainConfig(epochs=6, batch=16, lr0=0.003))
    curve = [h.loss for h in res.curve("train")]
    assert curve[-1] < curve[0]
    assert res.steps == 6 * 6


def test_training_reports_eval_sets(small):
    cfg = ModelConfig.desk()
    res = train(small.subset(np.arange(64)), cfg, TrainConfig(epochs=1, batch=32),
                eval_sets={"val": small.subset(np.arange(64, 96)), "none": small.subset(np.arange(0))})
    assert [h.split for h in res.history] == ["train", "val"]
    text = metrics_csv(res.history)
    assert text.splitlines()[0] == "epoch,split,loss,accuracy,mcc"


def test_train_rejects_bad_config(small):
    with pytest.raises(ContractError):
        train(small, ModelConfig.desk(), TrainConfig(batch=0))
    with pytest.raises(ContractError):
        train(small.subset(np.arange(0)), ModelConfig.desk(), TrainConfig())


def test_evaluate_matches_recount(small):
    cfg = ModelConfig.desk()
    params = init_params(cfg, 0)
    rep = evaluate(params, small, cfg, batch=17)
    rep2 = evaluate(params, small, cfg, batch=96)
    assert rep == rep2 or (rep.accuracy == rep2.accuracy and abs(rep.loss - rep2.loss) <= 1e-12)
    assert rep.total == len(small)


def test_ablation_table_has_five_rows(small):
    tr, va, te = small.split_chronological()
    results = run_ablation_suite(small, ModelConfig.desk(), TrainConfig(epochs=1, batch=32),
                                 split=(tr, va, te))
    text, csv = ablation_table(results)
    assert len(text.strip().splitlines()) == 6
    assert len(csv.strip().splitlines()) == 6
    assert set(results) == {"full", "nA", "nH", "oC", "oH"}


def test_text_only_model_is_at_chance_on_price_only_data():
    train_ds, _ = generate_synthetic_dataset(21, 400, channels=("price",))
    test_ds, _ = generate_synthetic_dataset(22, 1000, channels=("price",))
    cfg = ModelConfig.desk(ablation="oC")
    res = train(train_ds, cfg, TrainConfig(epochs=4, batch=32, seed=0), eval_train=False)
    acc = evaluate(res.params, test_ds, cfg).accuracy
    assert abs(acc - 0.5) <= 0.08

"""Adam training, evaluation metrics and the ablation harness."""
import copy
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import ContractError, NumericalError, TrainingDiverged
from .model import ABLATIONS, decays, forward, init_params, total_loss


@dataclass
class TrainConfig:
    lr0: float = 0.001
    weight_decay: float = 0.001
    batch: int = 64
    epochs: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.batch < 1:
            raise ContractError("batch must be at least 1")
        if self.epochs < 0:
            raise ContractError("epochs must be nonnegative")
        if self.lr0 < 0 or self.weight_decay < 0:
            raise ContractError("lr0 and weight_decay must be nonnegative")


def lr_at(step, total_steps, lr0):
    """Linear decay: ``lr0 * (1 - step / total_steps)``, reaching zero at the last step."""
    if total_steps <= 0:
        raise ContractError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps)


class AdamState:
    def __init__(self):
        self.m = {}
        self.v = {}

    def state_dict(self):
        return {"m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}


def adam_step(params, grads, state, step, config, total_steps):
    """One decoupled-weight-decay Adam update, in place.

    ``params`` maps paths to tensors, ``grads`` paths to arrays, ``step``
    counts from 1.  Returns the learning rate used.
    """
    if step < 1:
        raise ContractError("step index starts at 1")
    lr = lr_at(step, total_steps, config.lr0)
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for path in sorted(params):
        g = grads[path]
        if g.shape != params[path].shape:
            raise ContractError(f"gradient shape {g.shape} does not match {path} {params[path].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {path}")
        w = params[path].data
        m = state.m.get(path)
        if m is None:
            m = state.m[path] = np.zeros_like(w)
            state.v[path] = np.zeros_like(w)
        v = state.v[path]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay and decays(path):
            w -= lr * config.weight_decay * w
        w -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return lr


# ------------------------------------------------------------------ metrics

def mcc(tp, fp, tn, fn):
    """Matthews correlation; 0 when any factor of the denominator is 0."""
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


@dataclass
class EvalReport:
    accuracy: float
    mcc: float
    tp: int
    fp: int
    tn: int
    fn: int
    loss: float = float("nan")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, pred, labels, loss=float("nan")):
        pred = np.asarray(pred, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if pred.shape != labels.shape:
            raise ContractError("predictions and labels differ in length")
        tp = int(np.sum((pred == 1) & (labels == 1)))
        fp = int(np.sum((pred == 1) & (labels == 0)))
        tn = int(np.sum((pred == 0) & (labels == 0)))
        fn = int(np.sum((pred == 0) & (labels == 1)))
        total = tp + fp + tn + fn
        acc = (tp + tn) / total if total else 0.0
        return cls(acc, mcc(tp, fp, tn, fn), tp, fp, tn, fn, loss)


def predict(params, dataset, cfg, batch=256):
    """Class predictions (argmax capsule norm) and mean loss over ``dataset``."""
    preds, losses = [], []
    for lo in range(0, len(dataset), batch):
        b = dataset.batch(np.arange(lo, min(len(dataset), lo + batch)))
        out = forward(b, params, cfg, mode="eval")
        loss, _ = total_loss(out, b.labels, params)
        preds.append(out.predictions())
        losses.append(float(loss.data) * len(b))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return pred, (sum(losses) / len(dataset) if len(dataset) else float("nan"))


def evaluate(params, dataset, cfg, batch=256):
    pred, loss = predict(params, dataset, cfg, batch)
    return EvalReport.from_predictions(pred, dataset.labels, loss)


# ------------------------------------------------------------------ training

@dataclass
class EpochStats:
    epoch: int
    split: str
    loss: float
    accuracy: float
    mcc: float


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)  # EpochStats
    steps: int = 0

    def curve(self, split="train"):
        return [h for h in self.history if h.split == split]


def _snapshot(params):
    return {k: ad.Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def train(dataset, cfg, tcfg, eval_sets=None, params=None, on_epoch=None, eval_train=True):
    """Train ``cfg.ablation`` on ``dataset`` with seeded shuffling and dropout.

    ``eval_sets`` maps split names to datasets evaluated after every epoch.
    ``on_epoch(epoch, params, stats)`` is called after each epoch.  Raises
    :class:`TrainingDiverged` carrying the last good parameters on NaN loss.
    """
    tcfg.validate()
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    params = params if params is not None else init_params(cfg, tcfg.seed)
    shuffle_rng = np.random.default_rng([tcfg.seed, 1])
    drop_rng = np.random.default_rng([tcfg.seed, 2])
    n = len(dataset)
    per_epoch = math.ceil(n / tcfg.batch)
    total = max(1, per_epoch * tcfg.epochs)
    state = AdamState()
    result = TrainResult(params)
    last_good = _snapshot(params)
    paths = sorted(params)
    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, tcfg.batch):
            idx = np.sort(order[lo:lo + tcfg.batch])
            b = dataset.batch(idx)
            with Tape() as tape:
                out = forward(b, params, cfg, mode="train", rng=drop_rng)
                loss, _ = total_loss(out, b.labels, params)
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainingDiverged(f"loss became {val} at epoch {epoch}, step {step + 1}",
                                       last_good, epoch)
            grads = dict(zip(paths, tape.gradient(loss, [params[p] for p in paths])))
            step += 1
            try:
                adam_step(params, grads, state, step, tcfg, total)
            except NumericalError as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}, step {step}", last_good, epoch) from exc
            loss_sum += val * len(idx)
        stats = []
        if eval_train:
            rep = evaluate(params, dataset, cfg)
            stats.append(EpochStats(epoch, "train", loss_sum / n, rep.accuracy, rep.mcc))
        else:
            stats.append(EpochStats(epoch, "train", loss_sum / n, float("nan"), float("nan")))
        for name, ds in (eval_sets or {}).items():
            if len(ds):
                rep = evaluate(params, ds, cfg)
                stats.append(EpochStats(epoch, name, rep.loss, rep.accuracy, rep.mcc))
        result.history.extend(stats)
        last_good = _snapshot(params)
        if on_epoch is not None:
            on_epoch(epoch, params, stats)
    result.steps = step
    return result


def metrics_csv(history):
    buf = io.StringIO()
    buf.write("epoch,split,loss,accuracy,mcc\n")
    for h in history:
        buf.write(f"{h.epoch},{h.split},{h.loss:.10g},{h.accuracy:.10g},{h.mcc:.10g}\n")
    return buf.getvalue()


# ------------------------------------------------------------------ ablations

ABLATION_LABELS = {
    "full": "MMAN",
    "nA": "MMAN-nA (no social)",
    "nH": "MMAN-nH (no history)",
    "oC": "MMAN-oC (text only)",
    "oH": "MMAN-oH (history only)",
}


def run_ablation_suite(dataset, cfg, tcfg, variants=ABLATIONS, split=None):
    """Train and test every variant on one chronological split; returns ``{variant: EvalReport}``."""
    train_idx, val_idx, test_idx = split if split is not None else dataset.split_chronological()
    train_ds, test_ds = dataset.subset(train_idx), dataset.subset(test_idx)
    out = {}
    for variant in variants:
        vcfg = replace(cfg, ablation=variant)
        res = train(train_ds, vcfg, copy.copy(tcfg), eval_train=False)
        out[variant] = evaluate(res.params, test_ds, vcfg)
    return out


def ablation_table(results):
    """Aligned text table and CSV, one row per variant."""
    rows = [(ABLATION_LABELS.get(v, v), r) for v, r in results.items()]
    width = max([len("Model")] + [len(name) for name, _ in rows])
    lines = [f"{'Model':<{width}}  {'Accuracy':>9}  {'MCC':>8}"]
    for name, r in rows:
        lines.append(f"{name:<{width}}  {100 * r.accuracy:>8.2f}%  {r.mcc:>8.4f}")
    csv = ["variant,accuracy,mcc,tp,fp,tn,fn"]
    for v, r in results.items():
        csv.append(f"{v},{r.accuracy:.10g},{r.mcc:.10g},{r.tp},{r.fp},{r.tn},{r.fn}")
    return "\n".join(lines) + "\n", "\n".join(csv) + "\n"

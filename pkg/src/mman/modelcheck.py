"""Whole-model gradient verification by batched central differences.

Checking every coordinate one forward pass at a time is far too slow for a
model with tens of thousands of parameters.  Two things make it tractable:

* the model helpers accept one parameter with an extra leading axis that
  matches the batch axis, so a single forward pass evaluates many
  perturbed copies of one sample (``+eps`` and ``-eps`` per coordinate);
* stages that do not depend on the perturbed parameter are fed back as
  constants from a reference pass instead of being recomputed.

The per-coordinate error is the same as in
:func:`mman.autodiff.check_gradients`:
``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .data import N_CHANNELS, N_SOCIAL, PAD_ID, WINDOW_DAYS, Batch
from .model import STAGE_DEPS, STAGES, forward, init_params, param_group, sample_losses, total_loss


@dataclass
class ModelCheckReport:
    seed: int
    max_error: float
    worst_path: str
    worst_index: tuple
    per_param: dict = field(default_factory=dict)  # path -> max error
    per_group: dict = field(default_factory=dict)  # group -> max error
    checked: int = 0
    seconds: float = 0.0

    def passed(self, tol=1e-4):
        return self.max_error <= tol


def probe_batch(cfg, seed, real_posts=None):
    """One random sample with some padded post slots, for gradient checks."""
    rng = np.random.default_rng(seed)
    n, s = cfg.n, cfg.s
    k = real_posts if real_posts is not None else max(1, n - max(1, n // 4))
    tokens = rng.integers(2, cfg.vocab_size, size=(1, n, s))
    for i in range(n):
        cut = rng.integers(max(1, s // 2), s + 1)
        tokens[0, i, cut:] = PAD_ID
    mask = np.zeros((1, n))
    mask[0, :k] = 1.0
    tokens[0, k:] = PAD_ID
    windows = rng.normal(size=(1, n, WINDOW_DAYS, N_CHANNELS))
    social = rng.normal(size=(1, n, N_SOCIAL))
    ages = rng.uniform(0.0, cfg.age_cap_hours, size=(1, n))
    labels = rng.integers(0, 2, size=1)
    return Batch(tokens, windows, social, ages, mask, labels)


def _repeat(batch, times):
    return Batch(*(np.repeat(np.asarray(a), times, axis=0) for a in
                   (batch.tokens, batch.windows, batch.social, batch.ages, batch.mask, batch.labels)))


def _reusable(trace, group, times):
    return {name: np.repeat(trace[name], times, axis=0) for name in STAGES
            if name in trace and group not in STAGE_DEPS[name]}


def model_grad_check(cfg, seed=0, eps=1e-5, chunk=128, params=None, batch=None):
    """Check tape gradients of the single-sample loss against central differences.

    Every coordinate of every parameter is perturbed.  Returns a
    :class:`ModelCheckReport`.
    """
    start = time.perf_counter()
    params = params if params is not None else init_params(cfg, seed)
    batch = batch if batch is not None else probe_batch(cfg, seed)
    paths = sorted(params)
    trace = {}
    with Tape() as tape:
        out = forward(batch, params, cfg, mode="eval", trace=trace)
        loss, _ = total_loss(out, batch.labels, params)
    grads = dict(zip(paths, tape.gradient(loss, [params[q] for q in paths])))

    per_param, per_group = {}, {}
    worst = (-1.0, "", ())
    checked = 0
    for path in paths:
        base = params[path]
        group = param_group(path)
        size = base.data.size
        g_ad = grads[path].reshape(-1)
        g_fd = np.empty(size)
        for lo in range(0, size, chunk):
            idx = np.arange(lo, min(size, lo + chunk))
            k = len(idx)
            stacked = np.repeat(base.data.reshape(1, -1), 2 * k, axis=0)
            stacked[2 * np.arange(k), idx] += eps
            stacked[2 * np.arange(k) + 1, idx] -= eps
            trial = dict(params)
            trial[path] = Tensor(stacked.reshape((2 * k,) + base.shape))
            rep = _repeat(batch, 2 * k)
            o = forward(rep, trial, cfg, mode="eval", given=_reusable(trace, group, 2 * k))
            f = sample_losses(o, rep.labels, trial)[0].data
            g_fd[idx] = (f[0::2] - f[1::2]) / (2.0 * eps)
        err = np.abs(g_ad - g_fd) / np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
        checked += size
        i = int(np.argmax(err))
        per_param[path] = float(err[i])
        per_group[group] = max(per_group.get(group, 0.0), float(err[i]))
        if err[i] > worst[0]:
            worst = (float(err[i]), path, tuple(int(j) for j in np.unravel_index(i, base.shape)))
    return ModelCheckReport(seed, max(worst[0], 0.0), worst[1], worst[2], per_param, per_group,
                            checked, time.perf_counter() - start)


def format_report(report, tol=1e-4, timing=True):
    """Text report: a summary line, then the max error per group and per parameter."""
    took = f", {report.seconds:.1f}s" if timing else ""
    lines = [f"seed {report.seed}: max relative error {report.max_error:.3e} "
             f"at {report.worst_path}{list(report.worst_index)} "
             f"({report.checked} coordinates{took}) "
             f"{'PASS' if report.passed(tol) else 'FAIL'}"]
    for group in sorted(report.per_group):
        lines.append(f"  group {group:<10} {report.per_group[group]:.3e}")
    for path in sorted(report.per_param):
        lines.append(f"  {path:<24} {report.per_param[path]:.3e}")
    return "\n".join(lines)


__all__ = ["ModelCheckReport", "model_grad_check", "probe_batch", "format_report"]

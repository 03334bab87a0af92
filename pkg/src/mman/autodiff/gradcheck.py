"""Central finite-difference verification of tape gradients."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tape


@dataclass
class GradCheckReport:
    max_error: float
    worst_path: str
    worst_index: tuple
    per_param: dict = field(default_factory=dict)  # path -> max relative error
    checked: int = 0

    def passed(self, tol=1e-4):
        return self.max_error <= tol


def _as_named(params):
    if isinstance(params, dict):
        return list(params.items())
    return [(f"p{i}", p) for i, p in enumerate(params)]


def _scalar(f):
    out = f()
    val = float(np.asarray(out.data).reshape(-1)[0]) if out.data.size == 1 else None
    if val is None:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(val):
        raise ContractError("grad_check: function value is not finite")
    return out, val


def check_gradients(f, params, eps=1e-5, coords=None):
    """Compare tape gradients of ``f()`` against central differences.

    ``params`` is a dict ``path -> Tensor`` or a sequence of tensors; they
    are perturbed in place and restored.  ``coords`` optionally maps a path
    to an iterable of flat indices to restrict the check.  The error of a
    coordinate is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    """
    named = _as_named(params)
    with Tape() as tape:
        loss, _ = _scalar(f)
    grads = tape.gradient(loss, [p for _, p in named])

    worst = (-1.0, "", ())
    per_param = {}
    checked = 0
    for (path, p), g_ad in zip(named, grads):
        flat = p.data.reshape(-1)
        g_flat = g_ad.reshape(-1)
        idxs = range(flat.size) if coords is None or path not in coords else coords[path]
        perr = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            _, fp = _scalar(f)
            flat[i] = orig - eps
            _, fm = _scalar(f)
            flat[i] = orig
            g_fd = (fp - fm) / (2.0 * eps)
            ga = g_flat[i]
            err = abs(ga - g_fd) / max(1.0, abs(ga), abs(g_fd))
            checked += 1
            if err > perr:
                perr = err
            if err > worst[0]:
                worst = (err, path, np.unravel_index(i, p.shape) if p.shape else ())
        per_param[path] = perr
    return GradCheckReport(max(worst[0], 0.0), worst[1], tuple(int(j) for j in worst[2]),
                           per_param, checked)


def grad_check(f, params, eps=1e-5):
    """Maximum relative error between tape and central-difference gradients."""
    return check_gradients(f, params, eps=eps).max_error

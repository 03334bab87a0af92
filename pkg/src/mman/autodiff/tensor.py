"""Tensor type and the gradient tape."""
import threading

import numpy as np

from ..errors import ContractError

_state = threading.local()

# op name -> multiplier applied to that op's input adjoints; test hook only
_ADJOINT_FAULTS = {}


def set_adjoint_fault(op_name, factor):
    """Scale the adjoints of ``op_name`` by ``factor`` (negative-control hook)."""
    _ADJOINT_FAULTS[op_name] = float(factor)


def clear_adjoint_faults():
    _ADJOINT_FAULTS.clear()


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array, optionally tracked by the active :class:`Tape`."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic sugar; the functions live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "vjp", "op")

    def __init__(self, out, inputs, vjp, op):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations whose inputs require gradients
    are appended while the tape is active.  Tapes are thread-confined.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, vjp, op):
        self.nodes.append(_Node(out, inputs, vjp, op))
        out._tape = self

    def _adjoints(self, loss):
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            factor = _ADJOINT_FAULTS.get(node.op)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if factor is not None:
                    gi = gi * factor
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        return grads

    def gradient(self, loss, wrt):
        """Gradients of scalar ``loss`` w.r.t. each tensor in ``wrt``.

        Tensors the loss does not reach get zeros.
        """
        grads = self._adjoints(loss)
        out = []
        for t in wrt:
            g = grads.get(id(t))
            out.append(np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape))
        return out

    def backward(self, loss, params=None):
        """Accumulate ``.grad`` on leaf tensors; returns ``{id: grad}``."""
        grads = self._adjoints(loss)
        if params is not None:
            for t in params:
                g = grads.get(id(t))
                t.grad = np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape)
        return grads


def backward(loss, params):
    """Run the adjoint pass of the tape that recorded ``loss``.

    Fills ``p.grad`` for every tensor in ``params``; unreachable ones get zeros.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    params = list(params)
    if tape is None:
        for p in params:
            g = np.ones_like(p.data) if p is loss else np.zeros_like(p.data)
            p.grad = g
        return {id(p): p.grad for p in params}
    grads = tape.backward(loss, params)
    return {id(p): p.grad for p in params} if grads is not None else {}

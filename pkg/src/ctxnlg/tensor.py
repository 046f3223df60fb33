"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation appends a closure to the :class:`Tape` that
owns its inputs; :func:`backward` replays the tape in reverse.  Arrays are
plain numpy ``float64`` so batched LSTM/attention graphs stay cheap.
"""
from __future__ import annotations

import numpy as np

Array = np.ndarray


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, value: Array) -> "Tensor":
        """Register a named trainable leaf on this tape."""
        if name in self.params:
            return self.params[name]
        t = Tensor(value, tape=self, name=name)
        self.params[name] = t
        return t

    def bind(self, params: dict[str, Array]) -> dict[str, "Tensor"]:
        return {name: self.param(name, value) for name, value in params.items()}

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("value", "grad", "tape", "name", "_backward")

    def __init__(self, value, tape: Tape | None = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.tape = tape
        self.name = name
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def _accumulate(self, g: Array):
        if self.tape is None:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def _grad_buffer(self) -> Array:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    # operator sugar; all of these route through the primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs: Tensor) -> Tape | None:
    tape = None
    for x in xs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = x.tape
    return tape


def _record(value: Array, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tape = _tape_of(*inputs)
    out = Tensor(value, tape=tape)
    if tape is not None:
        out._backward = backward
        tape.nodes.append(out)
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = None

    def backward():
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(out.grad, b.shape))

    out = _record(a.value + b.value, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = None

    def backward():
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(-out.grad, b.shape))

    out = _record(a.value - b.value, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = None

    def backward():
        if a.tape is not None:
            a._accumulate(_unbroadcast(out.grad * b.value, a.shape))
        if b.tape is not None:
            b._accumulate(_unbroadcast(out.grad * a.value, b.shape))

    out = _record(a.value * b.value, (a, b), backward)
    return out


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., n) and a 2-D ``b`` of shape (n, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.value.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = None

    def backward():
        g = out.grad
        if a.tape is not None:
            a._accumulate(g @ b.value.T)
        if b.tape is not None:
            n, m = b.shape
            b._accumulate(a.value.reshape(-1, n).T @ g.reshape(-1, m))

    out = _record(a.value @ b.value, (a, b), backward)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form avoids overflow warnings for large negative inputs
    y = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    out = None

    def backward():
        a._accumulate(out.grad * y * (1.0 - y))

    out = _record(y, (a,), backward)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    out = None

    def backward():
        a._accumulate(out.grad * (1.0 - y * y))

    out = _record(y, (a,), backward)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    out = None

    def backward():
        a._accumulate(out.grad * y)

    out = _record(y, (a,), backward)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = None

    def backward():
        a._accumulate(out.grad / a.value)

    out = _record(np.log(a.value), (a,), backward)
    return out


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = None

    def backward():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    out = _record(np.sum(a.value, axis=axis), (a,), backward)
    return out


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / count)


def take(a, index) -> Tensor:
    """Basic (slice) indexing."""
    a = as_tensor(a)
    out = None

    def backward():
        if a.tape is not None:
            a._grad_buffer()[index] += out.grad

    out = _record(a.value[index], (a,), backward)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = None

    def backward():
        a._accumulate(out.grad.reshape(a.shape))

    out = _record(a.value.reshape(shape), (a,), backward)
    return out


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]
    out = None

    def backward():
        for x, g in zip(xs, np.split(out.grad, bounds, axis=axis)):
            x._accumulate(g)

    out = _record(np.concatenate([x.value for x in xs], axis=axis), tuple(xs), backward)
    return out


def stack(xs, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = None

    def backward():
        for i, x in enumerate(xs):
            x._accumulate(np.take(out.grad, i, axis=axis))

    out = _record(np.stack([x.value for x in xs], axis=axis), tuple(xs), backward)
    return out


def embed(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer id array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = None

    def backward():
        if table.tape is not None:
            np.add.at(table._grad_buffer(), ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))

    out = _record(table.value[ids], (table,), backward)
    return out


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = None

    def backward():
        g = out.grad
        a._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    out = _record(y, (a,), backward)
    return out


def softmax_t(a, axis=-1) -> Tensor:
    """Differentiable softmax along ``axis``."""
    a = as_tensor(a)
    y = _softmax(a.value, axis)
    out = None

    def backward():
        g = out.grad
        a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out = _record(y, (a,), backward)
    return out


def pick(a, ids) -> Tensor:
    """Select ``a[..., ids[...]]`` along the last axis."""
    a = as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    value = np.take_along_axis(a.value, ids[..., None], axis=-1)[..., 0]
    out = None

    def backward():
        if a.tape is not None:
            g = a._grad_buffer()
            idx = ids[..., None]
            np.put_along_axis(g, idx, np.take_along_axis(g, idx, axis=-1) + out.grad[..., None], axis=-1)

    out = _record(value, (a,), backward)
    return out


def sigmoid_bce(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    x = logits.value
    value = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = None

    def backward():
        p = 0.5 * (np.tanh(0.5 * x) + 1.0)
        logits._accumulate(out.grad * (p - t))

    out = _record(value, (logits,), backward)
    return out


# ------------------------------------------------------------------- numerics


def _softmax(x: Array, axis=-1) -> Array:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits) -> Array:
    """Numerically stable softmax of a non-empty finite vector (or last axis)."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input must be finite")
    return _softmax(x)


def backward(tape: Tape, loss: Tensor) -> dict[str, Array]:
    """Propagate d(loss) through ``tape``; returns a gradient for every param.

    Parameters the loss does not depend on get an all-zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.tape is not tape and loss.tape is not None:
        raise ValueError("loss was not recorded on this tape")
    for node in tape.nodes:
        node.grad = None
    for p in tape.params.values():
        p.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward()
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.value))
        for name, p in tape.params.items()
    }


# ---------------------------------------------------------------------- LSTM


class LstmCellParams:
    """Gate weights for a single LSTM layer.

    Columns of ``Wx``/``Wh``/``b`` are laid out as four blocks of width
    ``hidden``: input, forget, output, candidate.
    """

    def __init__(self, Wx, Wh, b):
        self.Wx, self.Wh, self.b = Wx, Wh, b
        if self.Wx.shape[1] != 4 * self.hidden or self.b.shape != (4 * self.hidden,):
            raise ValueError("LSTM gate arrays are inconsistent")

    @property
    def input_width(self) -> int:
        return self.Wx.shape[0]

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @classmethod
    def from_params(cls, params: dict, prefix: str) -> "LstmCellParams":
        return cls(params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"])


def lstm_shapes(prefix: str, input_width: int, hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.Wx": (input_width, 4 * hidden),
        f"{prefix}.Wh": (hidden, 4 * hidden),
        f"{prefix}.b": (4 * hidden,),
    }


def lstm_step(x, h_prev, cell_prev, p: LstmCellParams) -> tuple[Tensor, Tensor]:
    """One LSTM update; accepts single vectors or batches of row vectors."""
    x, h_prev, cell_prev = as_tensor(x), as_tensor(h_prev), as_tensor(cell_prev)
    H = p.hidden
    if x.shape[-1] != p.input_width:
        raise ValueError(f"x has width {x.shape[-1]}, LSTM expects {p.input_width}")
    if h_prev.shape[-1] != H:
        raise ValueError(f"h_prev has width {h_prev.shape[-1]}, LSTM expects {H}")
    if cell_prev.shape[-1] != H:
        raise ValueError(f"cell_prev has width {cell_prev.shape[-1]}, LSTM expects {H}")
    gates = add(add(matmul(x, p.Wx), matmul(h_prev, p.Wh)), p.b)
    sig = sigmoid(take(gates, (Ellipsis, slice(0, 3 * H))))
    i = take(sig, (Ellipsis, slice(0, H)))
    f = take(sig, (Ellipsis, slice(H, 2 * H)))
    o = take(sig, (Ellipsis, slice(2 * H, 3 * H)))
    g = tanh(take(gates, (Ellipsis, slice(3 * H, 4 * H))))
    cell = add(mul(f, cell_prev), mul(i, g))
    h = mul(o, tanh(cell))
    return h, cell


# ---------------------------------------------------------------------- Adam


def init_uniform(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator, scale=0.1):
    """Seeded U(-scale, scale) init, drawn in sorted-name order for stability."""
    return {name: rng.uniform(-scale, scale, size=shapes[name]) for name in sorted(shapes)}


def new_adam_state(params: dict[str, Array]) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def clip_gradients(grads: dict[str, Array], max_norm: float) -> dict[str, Array]:
    total = np.sqrt(np.sum([np.sum(g * g) for g in grads.values()]))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def adam_update(params, grads, state, lr=0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam step.  Updates ``params`` and ``state`` in place
    and returns both."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {params[name].shape} for {name!r}")
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state

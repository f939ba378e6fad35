"""Minimal tape-based reverse-mode automatic differentiation on numpy arrays.

Every primitive applied while a :class:`Tape` is active is appended to that
tape together with a closure computing its vector-Jacobian product.  Because
records are appended in evaluation order the tape is already topologically
sorted, so :meth:`Tape.backward` is a single reverse sweep.

Example::

    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = sum_(mul(x, x))
    tape.backward(y)
    x.grad  # array([2., 4.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "integer_power",
    "power",
    "sqrt",
    "sum_",
    "mean",
    "gather_rows",
    "softmax_rows",
    "log",
    "relu",
    "reshape",
    "transpose",
    "concat",
    "take",
    "cross_entropy",
    "cross_entropy_rows",
    "backward",
    "grad_check",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar, all routed through the primitives below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered log of primitive applications.

    A tape is single-threaded.  Use it as a context manager; primitives called
    outside any active tape are evaluated but not recorded.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._live: set[int] = set()  # ids of recorded (gradient-carrying) outputs

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def carries_grad(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._live

    def backward(self, output: Tensor) -> None:
        """Populate ``.grad`` on every ``requires_grad`` tensor reachable from ``output``.

        Gradients accumulate (``+=``) into existing ``.grad`` arrays.
        """
        if output.data.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        if output.requires_grad and id(output) not in self._live:
            output.grad = np.ones_like(output.data) if output.grad is None else output.grad + 1.0
            return
        pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not self.carries_grad(inp):
                    continue
                if inp.requires_grad:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    pending[key] = pending[key] + gi if key in pending else gi


def backward(tape: Tape, output: Tensor) -> None:
    tape.backward(output)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, vjp: Callable) -> Tensor:
    out = Tensor(out_data)
    if _ACTIVE:
        tape = _ACTIVE[-1]
        if any(tape.carries_grad(t) for t in inputs):
            tape.records.append(_Record(tuple(inputs), out, vjp))
            tape._live.add(id(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out leading axes and axes that were broadcast from size 1
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        (a, b),
        ad * bd,
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _record((a,), a.data * c, lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D operands or stacks of matrices (numpy semantics)."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record((a, b), ad @ bd, vjp)


def integer_power(a, k: int) -> Tensor:
    if int(k) != k or k < 0:
        raise ValueError(f"integer_power needs an integer k >= 0, got {k}")
    k = int(k)
    a = _as_tensor(a)
    ad = a.data
    if k == 0:
        return _record((a,), np.ones_like(ad), lambda g: (np.zeros_like(ad),))
    return _record((a,), ad**k, lambda g: (g * k * ad ** (k - 1),))


def power(a, r: float) -> Tensor:
    """Real power of a nonnegative tensor; the derivative at 0 is taken as 0."""
    a = _as_tensor(a)
    ad = a.data
    if np.any(ad < 0):
        raise ValueError("power requires nonnegative input")
    out = ad**r

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(ad > 0, r * ad ** (r - 1), 0.0)
        return (g * d,)

    return _record((a,), out, vjp)


def sqrt(a) -> Tensor:
    """Square root with subgradient 0 at 0."""
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _record((a,), out, vjp)


def sum_(a, axis: int | tuple[int, ...] | None = None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record((a,), np.sum(a.data, axis=axis), vjp)


def mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def gather_rows(table, idx) -> Tensor:
    """Rows of a 2-D ``table`` selected by an integer index array."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.intp)
    if table.data.ndim != 2:
        raise ValueError("gather_rows needs a 2-D table")
    n_rows = table.shape[0]

    def vjp(g):
        flat = g.reshape(-1, table.shape[1])
        out = np.zeros_like(table.data)
        # one column at a time keeps bincount vectorised and order-deterministic
        ii = idx.reshape(-1)
        for c in range(table.shape[1]):
            out[:, c] = np.bincount(ii, weights=flat[:, c], minlength=n_rows)
        return (out,)

    return _record((table,), table.data[idx], vjp)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record((a,), s, vjp)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _record((a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _record((a,), np.log(ad), lambda g: (g / ad,))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _record((a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _record((a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(tensors, np.concatenate([t.data for t in tensors], axis=axis), vjp)


def take(a, index: int, axis: int) -> Tensor:
    """Slice out position ``index`` along ``axis`` (the axis is dropped)."""
    a = _as_tensor(a)
    shape = a.shape
    axis = axis % len(shape)

    def vjp(g):
        out = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _record((a,), np.take(a.data, index, axis=axis), vjp)


def cross_entropy_rows(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over rows (fused, log-sum-exp stable)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    x = logits.data
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ValueError("cross_entropy_rows needs (n, p) logits and n labels")
    p = x.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= p):
        raise ValueError("label out of range")
    n = x.shape[0]
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def vjp(g):
        s = np.exp(z - lse[:, None])
        s[rows, labels] -= 1.0
        return (s * (g / n),)

    return _record((logits,), np.asarray(loss), vjp)


def cross_entropy(logits, label: int) -> Tensor:
    """``-log softmax(logits)[label]`` for a single logit vector."""
    logits = _as_tensor(logits)
    p = logits.shape[-1]
    if not 0 <= label < p:
        raise ValueError(f"label {label} out of range for {p} classes")
    return cross_entropy_rows(reshape(logits, (1, p)), [label])


def grad_check(
    f: Callable[[np.ndarray], float],
    grad: np.ndarray,
    x0: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central differences.

    Returns ``max_i |g_i - fd_i| / max(|g|_inf, |fd|_inf)``, i.e. the error
    relative to the gradient's own scale (robust to near-zero components).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64).reshape(x0.shape)
    fd = np.zeros_like(x0)
    x = x0.copy()
    flat, fdf = x.reshape(-1), fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        fdf[i] = (fp - fm) / (2 * eps)
    scale_ = max(np.abs(grad).max(initial=0.0), np.abs(fd).max(initial=0.0))
    if scale_ == 0.0:
        return 0.0
    return float(np.abs(grad - fd).max() / scale_)

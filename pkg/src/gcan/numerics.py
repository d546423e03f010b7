"""Dense float64 tensors with tape-based reverse-mode gradients.

Every differentiable operation used by the model lives here, together with
the Adam optimizer and a central-difference gradient checker.  Arrays may
carry leading batch axes; operations broadcast over them the way numpy does
and gradients are summed back to the shape of each input.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "record",
    "constant",
    "add",
    "sub",
    "mul",
    "matmul",
    "elementwise",
    "tanh",
    "relu",
    "sigmoid",
    "softmax",
    "softmax_vector",
    "mean",
    "mean_columns",
    "total",
    "concat",
    "transpose",
    "reshape",
    "index",
    "gather_columns",
    "class_nll",
    "gru_sequence",
    "backward",
    "grad_check",
    "GradCheckReport",
    "adam_step",
    "glorot_uniform",
]


class Tensor:
    """An immutable float64 array that may take part in gradient recording."""

    __slots__ = ("value", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable tensor with its gradient buffer and Adam moment slots."""

    __slots__ = ("name", "grad", "m", "v", "step")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class Tape:
    """Ordered record of operations executed while the tape is active.

    Use as a context manager; operations executed inside the ``with`` block
    whose inputs require gradients are appended in execution order.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def record(value: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap ``value`` as the output of an operation over ``inputs``.

    ``grad_fn`` maps the output gradient to a tuple with one entry per input
    (``None`` where no gradient flows).  Nothing is recorded when no tape is
    active or no input requires gradients.
    """
    out = Tensor(value)
    stack = getattr(_local, "stack", None)
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        stack[-1].records.append((out, tuple(inputs), grad_fn))
    return out


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    return record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {av.shape} x {bv.shape}")

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            if av.ndim == 2 and bv.ndim > 2:
                # fold the batch into a single product instead of summing per-item outer products
                gt = np.swapaxes(g, -1, -2).reshape(-1, av.shape[0])
                bt = np.swapaxes(bv, -1, -2).reshape(-1, av.shape[1])
                ga = gt.T @ bt
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return record(np.matmul(av, bv), (a, b), grad_fn)


# -- pointwise ----------------------------------------------------------------


def tanh(a) -> Tensor:
    a = constant(a)
    y = np.tanh(a.value)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = constant(a)
    mask = a.value > 0.0  # derivative at exactly 0 is taken as 0
    return record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = constant(a)
    y = _sigmoid(a.value)
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


_POINTWISE = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid}


def elementwise(a, kind: str) -> Tensor:
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a)


# -- reductions and normalisation --------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = constant(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (a,), grad_fn)


def softmax_vector(z) -> Tensor:
    """Softmax of a ``1 x m`` row (or a batch of rows)."""
    z = constant(z)
    if z.value.ndim < 2 or z.shape[-2] != 1:
        raise ValueError(f"softmax_vector expects 1 x m rows, got {z.shape}")
    return softmax(z, axis=-1)


def mean(a, axis: int, keepdims: bool = True) -> Tensor:
    a = constant(a)
    shape = a.shape
    count = shape[axis]
    if count < 1:
        raise ValueError("mean over an empty axis")

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return record(a.value.mean(axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean_columns(a) -> Tensor:
    """Column-wise mean: ``d x n`` to ``d x 1``."""
    return mean(a, axis=-1, keepdims=True)


def total(a) -> Tensor:
    a = constant(a)
    shape = a.shape
    return record(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape),))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    if not parts:
        raise ValueError("concat of an empty list")
    parts = [constant(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([p.value for p in parts], axis=axis), parts, grad_fn)


# -- shape manipulation -------------------------------------------------------


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = constant(a)
    return record(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = constant(a)
    old = a.shape
    return record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def index(a, key) -> Tensor:
    """Basic (non-fancy) indexing, e.g. ``index(x, (..., slice(t, t + 1)))``."""
    a = constant(a)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return record(a.value[key], (a,), grad_fn)


def gather_columns(w, idx) -> Tensor:
    """Select columns of a ``d x V`` matrix.

    ``idx`` has shape ``(..., m)``; the result has shape ``(..., d, m)``, so
    column ``t`` is ``w[:, idx[..., t]]``.  Equivalent to multiplying ``w`` by
    a stack of one-hot columns.
    """
    w = constant(w)
    idx = np.asarray(idx, dtype=np.int64)
    vocab = w.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise ValueError(f"index out of range for {vocab} columns")
    out = np.moveaxis(w.value[:, idx], 0, -2)

    def grad_fn(g):
        full = np.zeros(w.shape)
        # g: (..., d, m) -> (d, ..., m) to line up with w[:, idx]
        np.add.at(full.T, idx, np.moveaxis(g, -2, -1))
        return (full,)

    return record(out, (w,), grad_fn)


def class_nll(probs, labels, floor: float = 1e-12) -> Tensor:
    """Mean negative log-probability of the true class.

    ``probs`` has shape ``(B, ..., C)`` and ``labels`` shape ``(B,)``.  The
    selected probability is clamped to ``[floor, 1 - floor]``; the gradient
    is zero where the clamp is active.
    """
    probs = constant(probs)
    p = probs.value.reshape(probs.shape[0], -1)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(p.shape[0])
    picked = p[rows, labels]
    clamped = np.clip(picked, floor, 1.0 - floor)
    value = np.asarray(-np.log(clamped).mean())

    def grad_fn(g):
        full = np.zeros_like(p)
        active = (picked > floor) & (picked < 1.0 - floor)
        full[rows, labels] = np.where(active, -1.0 / (clamped * p.shape[0]), 0.0)
        return ((g * full).reshape(probs.shape),)

    return record(value, (probs,), grad_fn)


# -- recurrences ----------------------------------------------------------------


def gru_sequence(xz, xr, xh, U_z, U_r, U_h) -> Tensor:
    """Fused GRU recurrence over precomputed input projections.

    ``xz``, ``xr``, ``xh`` are ``N x T x d`` (input projection plus bias for
    the update gate, reset gate and candidate); ``U_*`` are the ``d x d``
    recurrent matrices.  Starting from a zero state::

        z = sigmoid(xz_t + U_z h)        r = sigmoid(xr_t + U_r h)
        c = tanh(xh_t + U_h (r * h))     h = (1 - z) * h + z * c

    Returns all states, ``N x T x d``.  The backward pass is hand-written
    backpropagation through time, so the whole sequence is one tape entry.
    """
    xz, xr, xh = constant(xz), constant(xr), constant(xh)
    U_z, U_r, U_h = constant(U_z), constant(U_r), constant(U_h)
    rows, steps, d = xz.shape
    if xr.shape != xz.shape or xh.shape != xz.shape or any(u.shape != (d, d) for u in (U_z, U_r, U_h)):
        raise ValueError(
            f"gru_sequence shape mismatch: {xz.shape}, {xr.shape}, {xh.shape}, "
            f"{U_z.shape}, {U_r.shape}, {U_h.shape}"
        )
    Uz_t, Ur_t, Uh_t = U_z.value.T, U_r.value.T, U_h.value.T
    # time-major copies keep per-step slices contiguous
    ax, ar, ac = (np.ascontiguousarray(np.swapaxes(x.value, 0, 1)) for x in (xz, xr, xh))
    H, Z, R, C, P = (np.empty((steps, rows, d)) for _ in range(5))
    h = np.zeros((rows, d))
    for t in range(steps):
        P[t] = h
        Z[t] = z = _sigmoid(ax[t] + h @ Uz_t)
        R[t] = r = _sigmoid(ar[t] + h @ Ur_t)
        C[t] = c = np.tanh(ac[t] + (r * h) @ Uh_t)
        H[t] = h = h + z * (c - h)

    def grad_fn(g):
        g = np.swapaxes(g, 0, 1)
        dAz, dAr, dAc = (np.empty((steps, rows, d)) for _ in range(3))
        Uz, Ur, Uh = U_z.value, U_r.value, U_h.value
        carry = np.zeros((rows, d))
        for t in range(steps - 1, -1, -1):
            dh = g[t] + carry
            z, r, c, prev = Z[t], R[t], C[t], P[t]
            dAc[t] = da_c = dh * z * (1.0 - c * c)
            d_rh = da_c @ Uh
            dAr[t] = da_r = d_rh * prev * r * (1.0 - r)
            dAz[t] = da_z = dh * (c - prev) * z * (1.0 - z)
            carry = dh * (1.0 - z) + d_rh * r + da_r @ Ur + da_z @ Uz
        flat_prev = P.reshape(-1, d)
        flat_rh = (R * P).reshape(-1, d)
        return (
            np.swapaxes(dAz, 0, 1),
            np.swapaxes(dAr, 0, 1),
            np.swapaxes(dAc, 0, 1),
            dAz.reshape(-1, d).T @ flat_prev,
            dAr.reshape(-1, d).T @ flat_prev,
            dAc.reshape(-1, d).T @ flat_rh,
        )

    H = np.ascontiguousarray(np.swapaxes(H, 0, 1))
    return record(H, (xz, xr, xh, U_z, U_r, U_h), grad_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- reverse pass -------------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable ``Parameter.grad``."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if isinstance(loss, Parameter):
        loss.grad += 1.0
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for out, inputs, grad_fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, grad_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if isinstance(t, Parameter):
                t.grad += gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


# -- gradient verification ----------------------------------------------------


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    max_rel_error: float = 0.0
    entries: list[tuple[str, tuple[int, ...], float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self, k: int = 5):
        return sorted(self.entries, key=lambda e: -e[4])[:k]


def _scalar(x) -> float:
    v = x.value if isinstance(x, Tensor) else np.asarray(x)
    return float(np.asarray(v).reshape(()))


def grad_check(
    model_forward: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float | Sequence[float] = 1e-3,
    tolerance: float = 1e-4,
    samples_per_param: int | None = None,
    seed: int = 0,
    order: int = 2,
) -> GradCheckReport:
    """Compare taped gradients with central differences.

    ``model_forward`` must build the scalar loss from scratch on each call.
    Entries are sampled per parameter tensor (all entries when
    ``samples_per_param`` is None).  ``order`` selects the second- or
    fourth-order central stencil; the latter tolerates a larger ``step``,
    which keeps round-off small on tiny gradients.  Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``step`` may be a sequence: an entry that misses ``tolerance`` is retried
    with the next step and keeps its smallest error.  A difference that
    straddles a ReLU kink disagrees at one step size but not another, while a
    wrong analytic gradient disagrees at all of them.
    """
    steps = [float(s) for s in np.atleast_1d(step)]
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    first, second = _scalar(model_forward()), _scalar(model_forward())
    if first != second:
        raise ValueError(f"forward is not deterministic: {first!r} != {second!r}")

    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = model_forward()
    backward(tape, loss)
    analytic = {id(p): p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, step=steps[0])
    for p in params:
        flat = p.value.reshape(-1)
        if samples_per_param is None or samples_per_param >= flat.size:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, samples_per_param, replace=False))
        for i in picks:
            old = flat[i]

            def at(offset):
                flat[i] = old + offset
                return _scalar(model_forward())

            a = float(analytic[id(p)].reshape(-1)[i])
            rel = numeric = np.inf
            for h in steps:
                if order == 2:
                    n_h = (at(h) - at(-h)) / (2.0 * h)
                else:
                    n_h = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h)
                r_h = abs(a - n_h) / max(abs(a), abs(n_h), 1e-8)
                if r_h < rel:
                    rel, numeric = r_h, n_h
                if rel < tolerance:
                    break
            flat[i] = old
            pos = tuple(int(j) for j in np.unravel_index(i, p.shape))
            report.entries.append((p.name, pos, a, numeric, rel))
            report.max_rel_error = max(report.max_rel_error, rel)
    return report


# -- optimisation -------------------------------------------------------------


def adam_step(
    params: Sequence[Parameter],
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One bias-corrected Adam update per parameter; gradients are cleared."""
    for p in params:
        g = p.grad
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1**p.step)
        v_hat = p.v / (1.0 - beta2**p.step)
        p.value -= learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)
        p.zero_grad()


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_out, fan_in))

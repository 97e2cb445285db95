"""Dense float64 arrays with reverse-mode automatic differentiation.

Every operation computes its result eagerly with numpy and, when a Tape is
active, records a node holding the exact backward rule. Tapes are built fresh
for each optimization step and thrown away afterwards; gradients are obtained
by walking the recorded nodes once, in reverse order.

Broadcasting follows numpy's trailing-dimension rule but is restricted to
rank <= 3 so every gradient rule stays auditable by hand.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_uid_counter = itertools.count()

# Module-global active tape; training is single-threaded per step.
_ACTIVE_TAPE: Optional["Tape"] = None

_MAX_RANK = 3


def _check_finite(data: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {context}")


class Tensor:
    """Immutable-by-convention float64 array, optionally tracked on a tape.

    `data` may be mutated only by the optimizer (parameter updates happen
    between tapes, never inside one).
    """

    __slots__ = ("data", "requires_grad", "uid")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > _MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds supported rank {_MAX_RANK}")
        arr = np.ascontiguousarray(arr)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = requires_grad
        self.uid = next(_uid_counter)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; full rules live in the module-level functions
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)


@dataclass
class TapeNode:
    """One recorded operation: inputs, output, and its local backward rule."""

    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


class Tape:
    """Append-only record of operations, replayed in reverse by backward()."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.gradients: dict[int, np.ndarray] = {}
        self._prev: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        return backward(self, loss)

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward() w.r.t. `t`; zeros if unreachable."""
        g = self.gradients.get(t.uid)
        if g is None:
            return np.zeros_like(t.data)
        return g


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(tensor) for every tensor recorded on `tape`.

    The loss must be a scalar produced while `tape` was active. Nodes are
    visited exactly once, in reverse recording order.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not any(node.output is loss for node in tape.nodes):
        raise ContractError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g_out = grads.get(node.output.uid)
        if g_out is None:
            continue
        for inp, g_in in zip(node.inputs, node.backward(g_out)):
            if g_in is None:
                continue
            acc = grads.get(inp.uid)
            if acc is None:
                grads[inp.uid] = g_in
            else:
                grads[inp.uid] = acc + g_in
    tape.gradients = grads
    return grads


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: tuple, out: Tensor, backward_fn) -> Tensor:
    if _ACTIVE_TAPE is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE.nodes.append(TapeNode(inputs, out, backward_fn, op))
    else:
        out.requires_grad = any(i.requires_grad for i in inputs)
    return out


def _make(data: np.ndarray) -> Tensor:
    """Wrap an already-validated numpy result without re-copying."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.uid = next(_uid_counter)
    return t


def _broadcast_shape(sa: tuple, sb: tuple, op: str) -> tuple:
    out = []
    for da, db in itertools.zip_longest(reversed(sa), reversed(sb), fillvalue=1):
        if da == db or da == 1 or db == 1:
            out.append(max(da, db))
        else:
            raise DimensionError(f"{op}: shapes {sa} and {sb} do not broadcast")
    return tuple(reversed(out))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original input shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _normalize_axis(axis: int, rank: int, op: str) -> int:
    if axis < 0:
        axis += rank
    if not 0 <= axis < rank:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {rank}")
    return axis


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    with np.errstate(over="ignore", invalid="ignore"):
        out = _make(a.data + b.data)
    _check_finite(out.data, "add")

    def grad_fn(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _record("add", (a, b), out, grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    with np.errstate(over="ignore", invalid="ignore"):
        out = _make(a.data - b.data)
    _check_finite(out.data, "sub")

    def grad_fn(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _record("sub", (a, b), out, grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    with np.errstate(over="ignore", invalid="ignore"):
        out = _make(a.data * b.data)
    _check_finite(out.data, "mul")

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _record("mul", (a, b), out, grad_fn)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    _check_finite(data, "div (zero or overflowing denominator)")
    out = _make(data)

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None,
        )

    return _record("div", (a, b), out, grad_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = _make(-a.data)

    def grad_fn(g):
        return (-g if a.requires_grad else None,)

    return _record("neg", (a,), out, grad_fn)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    _check_finite(data, "exp (overflow)")
    out = _make(data)

    def grad_fn(g):
        return (g * out.data if a.requires_grad else None,)

    return _record("exp", (a,), out, grad_fn)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = _make(np.tanh(a.data))

    def grad_fn(g):
        return (g * (1.0 - out.data * out.data) if a.requires_grad else None,)

    return _record("tanh", (a,), out, grad_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = _make(np.maximum(a.data, 0.0))

    def grad_fn(g):
        return (g * (a.data > 0.0) if a.requires_grad else None,)

    return _record("relu", (a,), out, grad_fn)


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a constant exponent."""
    a = _as_tensor(a)
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        data = np.power(a.data, p)
    _check_finite(data, f"power(exponent={p})")
    out = _make(data)

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            local = p * np.power(a.data, p - 1.0)
        _check_finite(local, f"power(exponent={p}) gradient")
        return (g * local,)

    return _record("power", (a,), out, grad_fn)


# ---------------------------------------------------------------------------
# contraction and reduction ops


def matmul(a, b) -> Tensor:
    """a @ b with a of rank 2 or 3 and b a rank-2 matrix."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim not in (2, 3):
        raise DimensionError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    # collapse leading axes into one GEMM; numpy's stacked matmul would loop
    a2 = a.data.reshape(-1, a.shape[-1])
    out_shape = a.shape[:-1] + (b.shape[1],)
    with np.errstate(over="ignore", invalid="ignore"):
        data = (a2 @ b.data).reshape(out_shape)
    _check_finite(data, "matmul")
    out = _make(data)

    def grad_fn(g):
        g2 = g.reshape(-1, b.shape[1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return (ga, gb)

    return _record("matmul", (a, b), out, grad_fn)


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "sum_axis")
    out = _make(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum_axis", (a,), out, grad_fn)


def mean_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "mean_axis")
    n = a.shape[axis]
    out = _make(a.data.mean(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _record("mean_axis", (a,), out, grad_fn)


def var_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    """Biased (divide-by-N) variance along one axis."""
    a = _as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "var_axis")
    n = a.shape[axis]
    mu = a.data.mean(axis=axis, keepdims=True)
    out = _make(((a.data - mu) ** 2).mean(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axis)
        # d var / d x_i = 2 (x_i - mu) / N; the mu terms cancel exactly
        return (g * (2.0 / n) * (a.data - mu),)

    return _record("var_axis", (a,), out, grad_fn)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = _make(np.asarray(a.data.sum()))

    def grad_fn(g):
        return (np.broadcast_to(g, a.shape).copy() if a.requires_grad else None,)

    return _record("sum_all", (a,), out, grad_fn)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    out = _make(np.asarray(a.data.mean()))

    def grad_fn(g):
        return (np.broadcast_to(g / n, a.shape).copy() if a.requires_grad else None,)

    return _record("mean_all", (a,), out, grad_fn)


# ---------------------------------------------------------------------------
# shape ops


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "slice_axis")
    size = a.shape[axis]
    if not (0 <= start < stop <= size):
        raise DimensionError(
            f"slice_axis: bounds [{start}, {stop}) invalid for axis {axis} of size {size}"
        )
    index = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.ndim))
    out = _make(np.ascontiguousarray(a.data[index]))

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record("slice_axis", (a,), out, grad_fn)


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat: empty input list")
    axis = _normalize_axis(axis, ts[0].ndim, "concat")
    for t in ts[1:]:
        if t.ndim != ts[0].ndim:
            raise DimensionError(f"concat: mixed ranks {ts[0].shape} and {t.shape}")
    out = _make(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        pieces = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = tuple(
                    slice(None) if i != axis else slice(lo, hi) for i in range(t.ndim)
                )
                pieces.append(np.ascontiguousarray(g[index]))
            else:
                pieces.append(None)
        return pieces

    return _record("concat", tuple(ts), out, grad_fn)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: {a.shape} -> {shape}: {e}") from None
    out = _make(np.ascontiguousarray(data))

    def grad_fn(g):
        return (g.reshape(a.shape) if a.requires_grad else None,)

    return _record("reshape", (a,), out, grad_fn)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if _broadcast_shape(a.shape, shape, "broadcast_to") != shape:
        raise DimensionError(f"broadcast_to: {a.shape} does not expand to {shape}")
    out = _make(np.broadcast_to(a.data, shape).copy())

    def grad_fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,)

    return _record("broadcast_to", (a,), out, grad_fn)


def flip_axis(a, axis: int) -> Tensor:
    """Reverse element order along one axis; self-inverse."""
    a = _as_tensor(a)
    axis = _normalize_axis(axis, a.ndim, "flip_axis")
    out = _make(np.ascontiguousarray(np.flip(a.data, axis=axis)))

    def grad_fn(g):
        return (np.ascontiguousarray(np.flip(g, axis=axis)) if a.requires_grad else None,)

    return _record("flip_axis", (a,), out, grad_fn)


def swap_last_axes(a) -> Tensor:
    """Transpose the last two axes (rank 2 or 3). Its own inverse."""
    a = _as_tensor(a)
    if a.ndim not in (2, 3):
        raise DimensionError(f"swap_last_axes: rank {a.ndim} unsupported")
    out = _make(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)))

    def grad_fn(g):
        return (np.ascontiguousarray(np.swapaxes(g, -1, -2)) if a.requires_grad else None,)

    return _record("swap_last_axes", (a,), out, grad_fn)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Moment estimates and step counter for one parameter tensor."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            first_moment=np.zeros_like(param.data),
            second_moment=np.zeros_like(param.data),
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(state: AdamState, param: Tensor, grad: np.ndarray) -> None:
    """One bias-corrected Adam update, in place. Refuses non-finite gradients."""
    if grad.shape != param.data.shape:
        raise DimensionError(
            f"adam_step: grad shape {grad.shape} vs param shape {param.data.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError("adam_step: non-finite gradient, step refused")
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam over a named parameter group, one AdamState per tensor."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.states = {
            name: AdamState.for_param(p, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for name, p in self.params.items()
        }

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            adam_step(self.states[name], p, grads[name])

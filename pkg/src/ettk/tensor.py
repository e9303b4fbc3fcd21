"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable op is a plain function that computes its output with
numpy and, when a :class:`Tape` is active and some input requires a
gradient, records a closure mapping the output gradient to input gradients.
:func:`backward` replays the tape in reverse.

Two global switches exist:

* ``checked`` mode rejects NaN/Inf at op boundaries and the log of
  non-positive entries. Off by default (training hot path).
* ``row_stable`` mode routes matrix products through a non-BLAS kernel whose
  per-row result does not depend on how many rows are in the batch. Slower,
  used when bit-identical batching behaviour is required.

Float32 is the default precision; use ``precision(np.float64)`` for
gradient checks.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError, NonFiniteError


class _State:
    dtype = np.float32
    checked = False
    row_stable = False
    tapes: list = []


_STATE = _State()
_ids = itertools.count()


def get_default_dtype():
    return _STATE.dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    prev = _STATE.dtype
    _STATE.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE.dtype = prev


def set_checked(flag: bool) -> None:
    _STATE.checked = bool(flag)


def is_checked() -> bool:
    return _STATE.checked


@contextlib.contextmanager
def checked(flag: bool = True):
    prev = _STATE.checked
    _STATE.checked = bool(flag)
    try:
        yield
    finally:
        _STATE.checked = prev


def set_row_stable(flag: bool) -> None:
    _STATE.row_stable = bool(flag)


@contextlib.contextmanager
def row_stable(flag: bool = True):
    prev = _STATE.row_stable
    _STATE.row_stable = bool(flag)
    try:
        yield
    finally:
        _STATE.row_stable = prev


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw 2-D matrix product honouring the row-stable switch."""
    if _STATE.row_stable:
        return np.einsum("ik,kn->in", a, b, optimize=False)
    return a @ b


class Tensor:
    """An n-dimensional array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "uid")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        want = np.dtype(dtype or _STATE.dtype).type
        if arr.dtype.type is not want:
            arr = arr.astype(want)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside are appended in execution
    order, which is a valid topological order by construction.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _STATE.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _STATE.tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        self.nodes.append(_Node(tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> dict:
        return backward(self, loss)


def _active_tape() -> Tape | None:
    return _STATE.tapes[-1] if _STATE.tapes else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording (inference)."""
    saved = list(_STATE.tapes)
    _STATE.tapes.clear()
    try:
        yield
    finally:
        _STATE.tapes[:] = saved


def _check(arr: np.ndarray, what: str) -> None:
    if _STATE.checked and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {what}")


def _emit(inputs: Sequence[Tensor], out: np.ndarray, backward: Callable, what: str) -> Tensor:
    _check(out, what)
    result = Tensor(out, dtype=out.dtype.type)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.record(inputs, result, backward)
    return result


def backward(tape: Tape, loss: Tensor) -> dict:
    """Propagate d(loss)/d(.) through ``tape``.

    Populates ``.grad`` (accumulating with ``+=``) on every leaf tensor that
    requires a gradient and returns the full mapping ``uid -> gradient``,
    intermediates included.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {}
    produced = {node.output.uid for node in tape.nodes}
    for node in reversed(tape.nodes):
        g = grads.get(node.output.uid)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                gi = gi.reshape(inp.shape)
            prev = grads.get(inp.uid)
            grads[inp.uid] = gi if prev is None else prev + gi
            if inp.uid not in produced:
                seen[inp.uid] = inp
    for uid, t in seen.items():
        g = grads[uid].astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g
    return grads


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit((a, b), a.data + b.data, lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _emit((a, b), a.data - b.data, lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _emit((a, b), ad * bd, lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit((a,), a.data * c, lambda g: (g * c,), "scale")


def add_bias(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """``x + b`` with ``b`` broadcast along every axis except ``axis``."""
    x, b = as_tensor(x), as_tensor(b)
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit axis {axis} of {x.shape}")
    shape = [1] * x.ndim
    shape[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        return g, g.sum(axis=others)

    return _emit((x, b), x.data + b.data.reshape(shape), bw, "add_bias")


_POINTWISE = ("sigmoid", "tanh", "relu", "exp", "log")


def _sigmoid(v):
    # two-branch form avoids overflow of exp(-v) for large negative v
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_np(v: np.ndarray) -> np.ndarray:
    return _sigmoid(np.asarray(v))


def pointwise(x: Tensor, fn: str) -> Tensor:
    x = as_tensor(x)
    v = x.data
    if fn == "sigmoid":
        y = _sigmoid(v)
        return _emit((x,), y, lambda g: (g * y * (1 - y),), fn)
    if fn == "tanh":
        y = np.tanh(v)
        return _emit((x,), y, lambda g: (g * (1 - y * y),), fn)
    if fn == "relu":
        mask = v > 0
        return _emit((x,), np.where(mask, v, 0).astype(v.dtype), lambda g: (g * mask,), fn)
    if fn == "exp":
        y = np.exp(v)
        return _emit((x,), y, lambda g: (g * y,), fn)
    if fn == "log":
        if _STATE.checked and np.any(v <= 0):
            raise DomainError("log of non-positive entry")
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(v)
        return _emit((x,), y, lambda g: (g / v,), fn)
    raise ContractError(f"unknown pointwise function {fn!r}; expected one of {_POINTWISE}")


def sigmoid(x):
    return pointwise(x, "sigmoid")


def tanh(x):
    return pointwise(x, "tanh")


def relu(x):
    return pointwise(x, "relu")


def exp(x):
    return pointwise(x, "exp")


def log(x):
    return pointwise(x, "log")


# ------------------------------------------------------------------ reductions


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _emit((x,), np.asarray(x.data.sum(), dtype=x.dtype), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return _emit((x,), np.asarray(x.data.mean(), dtype=x.dtype), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


# --------------------------------------------------------------------- shapes


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _emit((x,), x.data.reshape(shape), lambda g: (g.reshape(old),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _emit((x,), np.ascontiguousarray(x.data.transpose(axes)), lambda g: (g.transpose(inv),), "permute")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return permute(x, (1, 0))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError(f"concat: incompatible shapes {[u.shape for u in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _emit(tensors, np.concatenate([t.data for t in tensors], axis=axis), bw, "concat")


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _emit((x,), x.data[idx].copy(), bw, "slice")


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list:
    bounds = np.cumsum([0, *sizes])
    if bounds[-1] != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    return [slice_axis(x, int(lo), int(hi), axis) for lo, hi in zip(bounds[:-1], bounds[1:])]


# ----------------------------------------------------------------- linear alg


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = mm(g, bd.T) if a.requires_grad else None
        gb = mm(ad.T, g) if b.requires_grad else None
        return ga, gb

    return _emit((a, b), mm(ad, bd), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape [N, D] and weight [K, D]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = mm(xd, wd.T)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = mm(g, wd) if x.requires_grad else None
        gw = mm(g.T, xd) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(inputs, out, bw, "linear")


# -------------------------------------------------------------------- softmax


def _softmax_np(v: np.ndarray, axis: int) -> np.ndarray:
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax_np(v: np.ndarray, axis: int) -> np.ndarray:
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    y = _softmax_np(x.data, axis)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit((x,), y, bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = _log_softmax_np(x.data, axis)

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _emit((x,), y, bw, "log_softmax")


# ---------------------------------------------------------------- convolution


def conv_output_size(size: int, kernel: int, stride: int, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, kernels: Tensor, stride=(1, 1), padding=(0, 0), bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of ``x`` [C,H,W] or [B,C,H,W] with ``kernels`` [F,C,kh,kw]."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise DimensionError(f"conv2d: input must be [C,H,W] or [B,C,H,W], got {x.shape}")
    xd = x.data if batched else x.data[None]
    wd = kernels.data
    if wd.ndim != 4 or wd.shape[1] != xd.shape[1]:
        raise DimensionError(f"conv2d: kernels {wd.shape} do not match input {x.shape}")
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1:
        raise ContractError(f"conv2d: stride must be >= 1, got {stride}")
    B, C, H, W = xd.shape
    F, _, kh, kw = wd.shape
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise DimensionError(f"conv2d: kernel {(kh, kw)} larger than padded input {(H + 2 * ph, W + 2 * pw)}")
    if bias is not None and bias.shape != (F,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {F} filters")
    Ho = conv_output_size(H, kh, sh, ph)
    Wo = conv_output_size(W, kw, sw, pw)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    wins = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    wmat = wd.reshape(F, -1)
    out = np.empty((B, F, Ho, Wo), dtype=xd.dtype)
    for b in range(B):
        cols = wins[b].transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, -1)
        out[b] = mm(cols, wmat.T).T.reshape(F, Ho, Wo)
    if bias is not None:
        out += bias.data.reshape(1, F, 1, 1)

    def bw(g):
        g4 = g if batched else g[None]
        gw = None
        if kernels.requires_grad:
            gw = np.zeros_like(wmat)
            for b in range(B):
                cols = wins[b].transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, -1)
                gw += mm(g4[b].reshape(F, -1), cols)
            gw = gw.reshape(wd.shape)
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for b in range(B):
                dcols = mm(g4[b].reshape(F, -1).T, wmat).reshape(Ho, Wo, C, kh, kw)
                for i in range(kh):
                    for j in range(kw):
                        gxp[b, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw] += dcols[:, :, :, i, j].transpose(2, 0, 1)
            gx = gxp[:, :, ph : ph + H, pw : pw + W]
            if not batched:
                gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _emit(inputs, out if batched else out[0], bw, "conv2d")


# ---------------------------------------------------------------- grad check


def grad_check(fn: Callable[..., Tensor], inputs: Iterable, epsilon: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps Tensors to a Tensor. Non-scalar outputs are reduced with a
    fixed random projection so every output entry participates. Runs in
    float64.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    proj = {}

    def scalar(out: Tensor) -> Tensor:
        if out.size == 1:
            return reshape(out, ())
        if "w" not in proj:
            proj["w"] = np.random.default_rng(seed).standard_normal(out.shape)
        return sum_all(mul(out, Tensor(proj["w"])))

    with precision(np.float64):
        params = [Tensor(a, requires_grad=True) for a in arrays]
        with Tape() as tape:
            loss = scalar(fn(*params))
        backward(tape, loss)
        analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

        def f(vals):
            with no_tape():
                return float(scalar(fn(*[Tensor(v) for v in vals])).data)

        worst = 0.0
        for k, a in enumerate(arrays):
            flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = f(arrays)
                flat[i] = orig - epsilon
                fm = f(arrays)
                flat[i] = orig
                num = (fp - fm) / (2 * epsilon)
                ana = float(analytic[k].reshape(-1)[i])
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst

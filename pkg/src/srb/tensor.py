"""Dense tensors with tape-based reverse-mode differentiation.

Every operation records itself on the innermost active :class:`Tape`. Outside a
tape, operations only compute values, which is what decoding and
finite-difference evaluation use.

    >>> x = param(np.array([1.0, 2.0, 3.0]))
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from srb.errors import DegenerateVectorError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32
COSINE_EPS = 1e-12

_active_tapes: list["Tape"] = []


class Tensor:
    """An immutable numeric array, optionally tracked for gradients."""

    __slots__ = ("values", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None and isinstance(values, np.ndarray) and values.dtype.kind == "f":
            arr = values
        else:
            arr = np.asarray(values, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def tensor(values, dtype=None) -> Tensor:
    """A constant (non-trainable) tensor."""
    return Tensor(values, requires_grad=False, dtype=dtype)


def param(values, name: str | None = None, dtype=None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(values, requires_grad=True, name=name, dtype=dtype)


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of the operations executed while the tape is active.

    Tapes nest; operations are recorded on the innermost one only. A tape is
    meant for a single forward pass and is cleared by :meth:`backward`.
    """

    records: list[_Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

        Leaves listed in ``params`` that the loss does not depend on get a
        zero gradient rather than ``None``.
        """
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        produced = {id(rec.output) for rec in self.records}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
                if key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = np.asarray(grads[key], dtype=leaf.dtype)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.values)
        self.records.clear()


def _record(out_values: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    # one float64 sum is cheaper than an elementwise test; it cannot overflow
    # for float32 data, so a non-finite sum means a non-finite element
    if not math.isfinite(out_values.sum(dtype=np.float64)) and not np.isfinite(out_values).all():
        raise NumericError("operation produced a non-finite value")
    track = bool(_active_tapes) and any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=track)
    if track:
        _active_tapes[-1].records.append(_Record(out, inputs, backward))
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _record(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _record(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    av, bv = a.values, b.values
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant."""
    c_arr = a.values.dtype.type(c)
    return _record(a.values * c_arr, (a,), lambda g: (g * c_arr,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # exp of minus the magnitude never overflows and keeps tiny outputs positive
    e = np.exp(-np.abs(v))
    one = v.dtype.type(1.0)
    return np.where(v >= 0, one / (one + e), e / (one + e))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.values)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.values)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    v = x.values
    if (v <= 0).any():
        raise NumericError("log of a non-positive value")
    return _record(np.log(v), (x,), lambda g: (g / v,))


_POINTWISE = {"sigmoid": sigmoid, "tanh": tanh, "mul": mul, "add": add, "sub": sub}


def pointwise(kind: str, *inputs: Tensor) -> Tensor:
    """Dispatch an elementwise op by name: sigmoid, tanh, mul, add or sub."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise kind {kind!r}") from None
    return fn(*inputs)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Scale each row of ``x`` ([B, D]) by the matching entry of ``s`` ([B, 1])."""
    if x.values.ndim != 2 or s.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows: cannot scale {x.shape} by {s.shape}")
    xv, sv = x.values, s.values
    return _record(
        xv * sv, (x, s), lambda g: (g * sv, (g * xv).sum(axis=1, keepdims=True))
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector ``b`` ([D]) to every row of ``x`` ([B, D])."""
    if b.values.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add {b.shape} to {x.shape}")
    return _record(x.values + b.values, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of [B, m, k] and [B, k, n]."""
    if (
        a.values.ndim != 3
        or b.values.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise ShapeError(f"bmm: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _record(
        av @ bv,
        (a, b),
        lambda g: (g @ bv.transpose(0, 2, 1), av.transpose(0, 2, 1) @ g),
    )


def cast(x: Tensor, dtype) -> Tensor:
    """Change precision; the gradient is cast back to the input's dtype."""
    dtype = np.dtype(dtype)
    if x.dtype == dtype:
        return x
    return _record(x.values.astype(dtype), (x,), lambda g: (g.astype(x.dtype),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _record(x.values.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    total = x.values.sum(dtype=np.float64).astype(x.dtype)
    return _record(
        np.asarray(total), (x,), lambda g: (np.broadcast_to(g, shape).astype(g.dtype),)
    )


def tmean(x: Tensor) -> Tensor:
    n = max(x.values.size, 1)
    return scale(tsum(x), 1.0 / n)


def sum_rows(x: Tensor) -> Tensor:
    """Sum a [B, D] tensor over its last axis, giving [B]."""
    shape = x.shape
    return _record(
        x.values.sum(axis=-1), (x,), lambda g: (np.broadcast_to(g[..., None], shape).copy(),)
    )


# ---------------------------------------------------------------------------
# normalisation


def _masked(v: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return v
    m = np.asarray(mask, dtype=bool)
    if m.shape != v.shape:
        raise ShapeError(f"mask shape {m.shape} does not match {v.shape}")
    if not m.any(axis=-1).all():
        raise ValueError("every position of a row is masked")
    return np.where(m, v, -np.inf)


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked-out positions get exactly zero weight."""
    if x.values.size == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax of an empty tensor")
    v = _masked(x.values, mask)
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), backward)


def log_softmax(x: Tensor, mask=None) -> Tensor:
    if x.values.size == 0 or x.shape[-1] == 0:
        raise ShapeError("log_softmax of an empty tensor")
    v = _masked(x.values, mask)
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    if mask is not None:
        # masked entries carry log(0); store a finite sentinel instead of -inf
        out = np.where(np.asarray(mask, dtype=bool), out, np.finfo(out.dtype).min)
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), backward)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity over the last axis ([D] -> scalar, [B, D] -> [B])."""
    _check_same(u, v, "cosine")
    uv = u.values.astype(np.float64)
    vv = v.values.astype(np.float64)
    nu = np.sqrt((uv * uv).sum(axis=-1))
    nv = np.sqrt((vv * vv).sum(axis=-1))
    if (nu < COSINE_EPS).any() or (nv < COSINE_EPS).any():
        raise DegenerateVectorError("cosine of a vector with (near) zero norm")
    nu = np.maximum(nu, COSINE_EPS)
    nv = np.maximum(nv, COSINE_EPS)
    dot = (uv * vv).sum(axis=-1)
    c = dot / (nu * nv)
    dtype = u.dtype

    def backward(g):
        gk = np.asarray(g, dtype=np.float64)[..., None]
        nuk, nvk, ck = nu[..., None], nv[..., None], c[..., None]
        gu = gk * (vv / (nuk * nvk) - ck * uv / (nuk * nuk))
        gv = gk * (uv / (nuk * nvk) - ck * vv / (nvk * nvk))
        return gu.astype(u.dtype), gv.astype(v.dtype)

    return _record(np.clip(c, -1.0, 1.0).astype(dtype), (u, v), backward)


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].values
    ax = axis % max(ref.ndim, 1)
    for t in tensors[1:]:
        if t.values.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.values for t in tensors], axis=ax)
    return _record(out, tuple(tensors), lambda g: np.split(g, bounds, axis=ax))


def lstm_cell(z: Tensor, c_prev: Tensor) -> Tensor:
    """Fused LSTM nonlinearity.

    ``z`` holds the [B, 4H] gate pre-activations in i, f, g, o order. Returns
    ``[h, c]`` concatenated along the last axis, shape [B, 2H].
    """
    H = c_prev.shape[-1]
    if z.shape[:-1] != c_prev.shape[:-1] or z.shape[-1] != 4 * H:
        raise ShapeError(f"lstm_cell: pre-activations {z.shape} do not fit cell state {c_prev.shape}")
    zv, cp = z.values, c_prev.values
    i, f, o = _sigmoid(zv[..., :H]), _sigmoid(zv[..., H:2 * H]), _sigmoid(zv[..., 3 * H:])
    g = np.tanh(zv[..., 2 * H:3 * H])
    c = f * cp + i * g
    tc = np.tanh(c)
    h = o * tc

    def backward(grad):
        gh, gc = grad[..., :H], grad[..., H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * cp * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        return dz, dc * f

    return _record(np.concatenate([h, c], axis=-1), (z, c_prev), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _record(x.values[..., start:stop], (x,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack of nothing")
    out = np.stack([t.values for t in tensors], axis=axis)
    n = len(tensors)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return _record(out, tuple(tensors), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _record(table.values[idx], (table,), backward)


def pick(x: Tensor, idx) -> Tensor:
    """``x[b, idx[b]]`` for a [B, V] tensor, giving [B]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[rows, idx] = g
        return (full,)

    return _record(x.values[rows, idx], (x,), backward)


def gather_time(x: Tensor, idx) -> Tensor:
    """``x[b, idx[b], :]`` for a [B, T, D] tensor, giving [B, D]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[rows, idx] = g
        return (full,)

    return _record(x.values[rows, idx], (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``rate`` is 0 or ``rng`` is None."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _record(x.values * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    """Moments and step counter for :func:`adam_step`."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params``.

    Moments are kept in float64; parameters are rounded back to their own dtype.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        g64 = np.asarray(g, dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g64
        v *= state.beta2
        v += (1.0 - state.beta2) * g64 * g64
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.values = (p.values.astype(np.float64) - update).astype(p.dtype)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> dict[str, np.ndarray]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads.values())
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {k: (g * factor).astype(g.dtype) for k, g in grads.items()}


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|, 1e-8)`` with ``|.|`` the L2 norm over the whole tensor."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), 1e-8)
    return float(np.linalg.norm(a - n)) / denom


def gradient_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-3,
    return_details: bool = False,
):
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` must be deterministic and read the current values of ``params``.
    Returns the largest :func:`relative_error` over the parameter tensors,
    and with ``return_details`` also the worst error per named tensor.
    """
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss, params.values())
    errors: dict[str, float] = {}
    for name, p in params.items():
        analytic = p.grad.astype(np.float64)
        numeric = np.zeros(p.shape, dtype=np.float64)
        flat = p.values.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = float(f().values)
            flat[i] = orig - h
            minus = float(f().values)
            flat[i] = orig
            num_flat[i] = (plus - minus) / (2.0 * h)
        errors[name] = relative_error(analytic, numeric)
    worst = max(errors.values(), default=0.0)
    if return_details:
        return worst, errors
    return worst
